import threading

import pytest
from prometheus_client import REGISTRY

from utils.metrics import SystemMetrics, instrumented, record_samples


def _count(operation: str, status: str) -> float:
    return REGISTRY.get_sample_value("atomics_operations_total",
                                     {"operation": operation, "status": status}) or 0.0


@instrumented("toy_op")
def _toy_op(fail: bool = False):
    if fail:
        raise ValueError("boom")
    return 3


def test_instrumented_counts_status():
    ok, err = _count("toy_op", "success"), _count("toy_op", "error")
    assert _toy_op() == 3
    with pytest.raises(ValueError):
        _toy_op(fail=True)
    assert _count("toy_op", "success") == ok + 1
    assert _count("toy_op", "error") == err + 1
    assert REGISTRY.get_sample_value("atomics_operation_duration_seconds_count", {"operation": "toy_op"}) >= 2


def test_record_samples():
    before = REGISTRY.get_sample_value("atomics_mc_samples_total", {"operation": "toy_op"}) or 0.0
    record_samples("toy_op", 250)
    assert REGISTRY.get_sample_value("atomics_mc_samples_total", {"operation": "toy_op"}) == before + 250


class _StopAfterWait(threading.Event):
    def wait(self, timeout=None):
        self.set()
        return True


def test_system_metrics_single_pass():
    metrics = SystemMetrics("toy_op", _StopAfterWait(), interval=1)
    metrics.collect_metrics()
    labels = {"service_name": "toy_op", "hostname": metrics.hostname}
    assert REGISTRY.get_sample_value("worker_threads_running", labels) >= 1
    assert REGISTRY.get_sample_value("memory_usage_bytes", labels) > 0
