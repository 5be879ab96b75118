"""
平行 Worker - 以行程池執行互相獨立的任務（sweep 欄、掃描點）

結果依任務索引合併，與 worker 數量無關。
"""
import logging
import signal
from concurrent.futures import FIRST_COMPLETED, Future, ProcessPoolExecutor, wait
from typing import Any, Callable, Optional, Sequence

from .errors import WorkerPoolError

logger = logging.getLogger(__name__)


class CellPool:
    """
    workers == 1 時在目前行程中依序執行；否則使用 ProcessPoolExecutor

    SIGINT / SIGTERM 只設定停止旗標：不再送出新任務、取消尚未開始的任務，
    已完成的結果保留（未完成的位置為 None）。
    """

    def __init__(self, workers: int = 1, max_errors: int = 3):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = workers
        self.max_errors = max_errors
        self.running = True
        self.error_count = 0
        self._previous_handlers: dict[int, Any] = {}
        # 最近一次 map 的結果（包含中途拋出 WorkerPoolError 時已完成的部分）
        self.results: list[Any] = []

    # ==========================================
    # 訊號處理
    # ==========================================
    def signal_handler(self, sig, frame):
        """處理 SIGINT 和 SIGTERM 訊號（優雅關閉）"""
        print(f"\n🛑 接收到訊號 {sig}，停止送出新任務...")
        logger.warning("received signal %s, stopping the pool", sig)
        self.running = False

    def install_signal_handlers(self) -> None:
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                self._previous_handlers[sig] = signal.signal(sig, self.signal_handler)
            except ValueError:
                # 非主執行緒無法設定訊號處理
                logger.debug("cannot install handler for %s outside the main thread", sig)

    def restore_signal_handlers(self) -> None:
        for sig, handler in self._previous_handlers.items():
            signal.signal(sig, handler)
        self._previous_handlers.clear()

    def __enter__(self) -> "CellPool":
        self.install_signal_handlers()
        return self

    def __exit__(self, *exc) -> None:
        self.restore_signal_handlers()

    # ==========================================
    # 執行
    # ==========================================
    def _record_failure(self, index: int, error: BaseException) -> None:
        self.error_count += 1
        print(f"❌ 任務 {index} 失敗: {error}")
        logger.error(f"Task {index} failed: {error}")
        print(f"⚠️ 錯誤次數: {self.error_count}/{self.max_errors}")
        if self.error_count >= self.max_errors:
            self.running = False
            raise WorkerPoolError(f"{self.error_count} consecutive task failures, last: {error}") from error

    def map(self, func: Callable[[Any], Any], tasks: Sequence[Any],
            on_result: Optional[Callable[[int, Any], None]] = None) -> list[Any]:
        """
        回傳與 tasks 等長的結果列表；崩潰或被取消的任務位置為 None
        """
        self.results = results = [None] * len(tasks)
        if not tasks:
            return results
        if self.workers == 1:
            for index, task in enumerate(tasks):
                if not self.running:
                    break
                try:
                    results[index] = func(task)
                    self.error_count = 0
                except Exception as e:
                    self._record_failure(index, e)
                    continue
                if on_result:
                    on_result(index, results[index])
            return results

        with ProcessPoolExecutor(max_workers=self.workers) as executor:
            pending: dict[Future, int] = {}
            queue = list(enumerate(tasks))
            try:
                while (queue or pending) and self.running:
                    while queue and len(pending) < self.workers and self.running:
                        index, task = queue.pop(0)
                        pending[executor.submit(func, task)] = index
                    done, _ = wait(list(pending), timeout=1.0, return_when=FIRST_COMPLETED)
                    for future in sorted(done, key=lambda f: pending[f]):
                        index = pending.pop(future)
                        try:
                            results[index] = future.result()
                            self.error_count = 0
                        except Exception as e:
                            self._record_failure(index, e)
                            continue
                        if on_result:
                            on_result(index, results[index])
            finally:
                for future in pending:
                    future.cancel()
                if pending:
                    logger.warning("cancelled %d pending tasks", len(pending))
        return results
