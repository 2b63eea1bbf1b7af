"""
Prometheus Metrics Utility
---------------------------
Operation counters/latency for the numerical entry points, plus process-level
gauges sampled with psutil.

The exporter is optional. When the CLI is started with `--metrics-port`
(or `ATOMICS_METRICS_PORT`), metrics are exposed at:
    http://<host>:<port>/metrics

Scrape job example (prometheus.yml):

scrape_configs:
  - job_name: 'atomics'
    static_configs:
      - targets: ['localhost:9518']

Keep label cardinality low: `operation` is a fixed set of function names,
never a parameter value or a seed.
"""

import functools
import logging
import os
import socket
import threading
import time

import psutil
from prometheus_client import start_http_server, Counter, Gauge, Histogram

logger = logging.getLogger(__name__)
_system_metrics_thread: threading.Thread | None = None

OPERATIONS_TOTAL = Counter(
    "atomics_operations_total",
    "Total numerical operations",
    ["operation", "status"],
)

OPERATION_LATENCY = Histogram(
    "atomics_operation_duration_seconds",
    "Numerical operation latency in seconds",
    ["operation"],
    buckets=(0.001, 0.01, 0.05, 0.1, 0.5, 1, 5, 10, 30, 60, 300),
)

MC_SAMPLES_TOTAL = Counter(
    "atomics_mc_samples_total",
    "Monte Carlo samples drawn",
    ["operation"],
)

CPU_PERCENT = Gauge(
    "cpu_usage_percentage",
    "CPU Usage in percentage",
    ["service_name", "hostname"],
)

MEMORY_USED = Gauge(
    "memory_usage_bytes",
    "Memory Usage in bytes",
    ["service_name", "hostname"],
)

MEMORY_PERCENT = Gauge(
    "memory_usage_percentage",
    "Memory Usage in percentage",
    ["service_name", "hostname"],
)

THREADS_RUNNING = Gauge(
    "worker_threads_running",
    "Number of live Python threads",
    ["service_name", "hostname"],
)


def record_samples(operation: str, n: int) -> None:
    MC_SAMPLES_TOTAL.labels(operation=operation).inc(n)


def instrumented(operation: str):
    """
    Decorator recording call status and latency for `operation`.

    The wrapped function's exceptions propagate unchanged; only the
    `status` label switches to "error".
    """

    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            status = "success"
            try:
                return fn(*args, **kwargs)
            except Exception:
                status = "error"
                raise
            finally:
                OPERATIONS_TOTAL.labels(operation=operation, status=status).inc()
                OPERATION_LATENCY.labels(operation=operation).observe(time.perf_counter() - start)

        return wrapper

    return decorator


class SystemMetrics:
    def __init__(self, service_name: str, stop_event: threading.Event, interval: int = 5):
        self.hostname = os.getenv("HOSTNAME") or socket.gethostname()
        self.service_name = service_name
        self.stop_event = stop_event
        self.interval = max(interval, 1)

    def collect_metrics(self):
        logger.info(
            "Started collecting metrics for %s on host %s",
            self.service_name,
            self.hostname,
        )

        while not self.stop_event.is_set():
            CPU_PERCENT.labels(self.service_name, self.hostname).set(
                psutil.cpu_percent(interval=None)
            )

            mem = psutil.virtual_memory()

            MEMORY_USED.labels(self.service_name, self.hostname).set(mem.used)
            MEMORY_PERCENT.labels(self.service_name, self.hostname).set(mem.percent)

            THREADS_RUNNING.labels(self.service_name, self.hostname).set(threading.active_count())

            self.stop_event.wait(self.interval)

        logger.info("Stopped metrics collection for %s", self.service_name)


def start_metrics_server(port: int, app_name: str, stop_event: threading.Event, interval: int = 5):
    global _system_metrics_thread
    if _system_metrics_thread is None:
        start_http_server(port)
        logger.info("Metrics server started on port %d", port)

        metrics = SystemMetrics(app_name, stop_event, interval)
        _system_metrics_thread = threading.Thread(
            target=metrics.collect_metrics, name="system-metrics", daemon=True
        )
        _system_metrics_thread.start()

    return _system_metrics_thread
