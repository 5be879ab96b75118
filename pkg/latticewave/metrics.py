# metrics.py
"""
Prometheus 指標模組 - 記錄求解器的迭代次數、耗時與結果

使用獨立的 CollectorRegistry，CLI 結束時以 write_to_textfile 輸出到執行目錄
"""
import functools
import os
import time
from pathlib import Path

import psutil
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

registry = CollectorRegistry()

# ==================== 求解器指標 ====================
newton_iterations_total = Counter(
    'latticewave_newton_iterations_total',
    'Total Newton iterations',
    ['solver'],  # semidiscrete, fullydiscrete, timestep
    registry=registry
)

solves_total = Counter(
    'latticewave_solves_total',
    'Total solver invocations',
    ['solver', 'status'],  # success, failed
    registry=registry
)

solve_duration_seconds = Histogram(
    'latticewave_solve_duration_seconds',
    'Solver wall time in seconds',
    ['solver'],
    buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0, 300.0),
    registry=registry
)

# ==================== Sweep 指標 ====================
sweep_cells_total = Counter(
    'latticewave_sweep_cells_total',
    'Total sweep cells processed',
    ['status'],  # converged, failed, trivial
    registry=registry
)

# ==================== 執行資訊 ====================
run_info = Gauge(
    'latticewave_run_info',
    'Run identity (value is always 1)',
    ['config_hash', 'command'],
    registry=registry
)

system_memory_usage_bytes = Gauge(
    'latticewave_system_memory_bytes',
    'System memory in bytes',
    ['type'],  # available, total
    registry=registry
)


# ==================== 裝飾器和輔助函數 ====================
def track_time(solver: str):
    """追蹤求解器耗時與成功/失敗次數的裝飾器"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.time()
            status = 'failed'
            try:
                result = func(*args, **kwargs)
                status = 'success'
                return result
            finally:
                solve_duration_seconds.labels(solver=solver).observe(time.time() - start_time)
                solves_total.labels(solver=solver, status=status).inc()
        return wrapper
    return decorator


def system_snapshot() -> dict[str, float]:
    """執行時的系統資源快照（寫入 run metadata）"""
    memory = psutil.virtual_memory()
    system_memory_usage_bytes.labels(type='available').set(memory.available)
    system_memory_usage_bytes.labels(type='total').set(memory.total)
    return {
        'cpu_count': float(psutil.cpu_count(logical=True) or 0),
        'cpu_percent': float(psutil.cpu_percent(interval=None)),
        'memory_total_bytes': float(memory.total),
        'memory_available_bytes': float(memory.available),
        'process_rss_bytes': float(psutil.Process(os.getpid()).memory_info().rss),
    }


def write_metrics(path: Path) -> Path:
    """輸出 Prometheus 文字格式"""
    path = Path(path)
    write_to_textfile(str(path), registry)
    return path
