"""
執行環境設定 - 從環境變數與 .env 讀取預設值
"""
import logging
from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

LOG_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class Settings(BaseSettings):
    """
    全域預設值，環境變數前綴 LATTICEWAVE_

    例如 LATTICEWAVE_LOG=debug、LATTICEWAVE_NEWTON_TOL=1e-12
    """
    model_config = SettingsConfigDict(
        env_prefix="LATTICEWAVE_",
        env_file=".env",
        extra="ignore",
    )

    log: Literal["error", "info", "debug"] = Field(default="info", description="日誌等級")
    newton_tol: float = Field(default=1e-10, gt=0, description="設定檔沒有 run.tol 時的 Newton 殘差門檻（sup norm）")
    newton_max_iter: int = Field(default=50, ge=1, description="設定檔沒有 run.max_iter 時的 Newton 迭代上限")
    step_tol: float = Field(default=1e-11, gt=0, description="時間步進每步的殘差門檻")
    nontrivial_threshold: float = Field(default=0.5, gt=0, description="第一分量振幅下限")
    delta0: float = Field(default=0.1, gt=0, description="預解式分解的 δ 上限")
    workers: int = Field(default=1, ge=1, description="sweep 平行 worker 數")
    output_dir: Path = Field(default=Path("runs"), description="設定檔沒有 run.output_dir 時的輸出目錄")


@lru_cache
def get_settings() -> Settings:
    return Settings()


def configure_logging(level: str | None = None) -> None:
    """
    設定根 logger（僅由 CLI 呼叫，函式庫本身不設定 handler）
    """
    name = (level or get_settings().log).lower()
    logging.basicConfig(
        level=LOG_LEVELS.get(name, logging.INFO),
        format=LOG_FORMAT,
        force=True,
    )
