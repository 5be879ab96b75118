"""
CellPool 測試
"""
import signal

import pytest

from latticewave.errors import WorkerPoolError
from latticewave.worker import CellPool


def _fail_on_odd(x):
    if x % 2:
        raise RuntimeError(f"odd task {x}")
    return x * 10


def test_serial_map_keeps_task_order():
    seen = []
    pool = CellPool(workers=1)
    results = pool.map(lambda x: x * x, [3, 1, 2], on_result=lambda i, r: seen.append((i, r)))
    assert results == [9, 1, 4]
    assert seen == [(0, 9), (1, 1), (2, 4)]


def test_isolated_failures_leave_holes():
    pool = CellPool(workers=1, max_errors=3)
    assert pool.map(_fail_on_odd, [0, 1, 2, 3, 4]) == [0, None, 20, None, 40]
    assert pool.error_count == 0


def test_consecutive_failures_stop_the_pool():
    pool = CellPool(workers=1, max_errors=2)
    with pytest.raises(WorkerPoolError):
        pool.map(_fail_on_odd, [1, 3, 4])
    assert not pool.running


def test_stop_flag_skips_remaining_tasks():
    pool = CellPool(workers=1)
    pool.signal_handler(signal.SIGTERM, None)
    assert pool.map(abs, [-1, -2]) == [None, None]


def test_process_pool_merges_by_index():
    with CellPool(workers=2) as pool:
        assert pool.map(abs, [-3, 4, -5, 6]) == [3, 4, 5, 6]


def test_handlers_restored_after_context():
    before = signal.getsignal(signal.SIGTERM)
    with CellPool(workers=1) as pool:
        assert signal.getsignal(signal.SIGTERM) == pool.signal_handler
    assert signal.getsignal(signal.SIGTERM) == before


def test_invalid_worker_count():
    with pytest.raises(ValueError):
        CellPool(workers=0)
