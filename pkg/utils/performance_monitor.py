import asyncio
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import psutil

from utils.run_log import log_message


@dataclass
class PerformanceMetrics:
    """Wall time, resident memory and file counts for one command"""
    started: float
    finished: Optional[float] = None
    rss_mb: float = 0.0
    cpu_percent: float = 0.0
    files_processed: int = 0
    failed_files: int = 0

    @property
    def elapsed_s(self) -> float:
        return (self.finished or time.time()) - self.started

    def to_dict(self) -> Dict[str, Any]:
        done = self.files_processed + self.failed_files
        return {
            "elapsed_s": round(self.elapsed_s, 3),
            "rss_mb": round(self.rss_mb, 1),
            "cpu_percent": self.cpu_percent,
            "files_processed": self.files_processed,
            "failed_files": self.failed_files,
            "seconds_per_file": round(self.elapsed_s / done, 3) if done else None,
        }


@dataclass
class PerformanceMonitor:
    metrics: PerformanceMetrics = field(default_factory=lambda: PerformanceMetrics(started=time.time()))
    _process: psutil.Process = field(default_factory=psutil.Process, repr=False)

    @property
    def files_processed(self) -> int:
        return self.metrics.files_processed

    @property
    def failed_files(self) -> int:
        return self.metrics.failed_files

    def record_file(self):
        self.metrics.files_processed += 1

    def record_failed_file(self):
        self.metrics.failed_files += 1

    def rss_mb(self) -> float:
        return self._process.memory_info().rss / (1024 * 1024)

    def finish(self) -> PerformanceMetrics:
        self.metrics.finished = time.time()
        self.metrics.rss_mb = self.rss_mb()
        self.metrics.cpu_percent = psutil.cpu_percent(interval=None)
        return self.metrics

    @contextmanager
    def monitor(self, operation_name: str = "operation"):
        """Logs time, memory growth and file counts of the wrapped block"""
        t0, rss0 = time.perf_counter(), self.rss_mb()
        try:
            yield self
        finally:
            log_message(f"📊 {operation_name}: {time.perf_counter() - t0:.2f}s, "
                        f"{self.rss_mb() - rss0:+.1f}MB, "
                        f"{self.files_processed} ok / {self.failed_files} failed", "metrics")


class BatchProcessor:
    """Bounded-concurrency file processing; results keep the input order"""

    def __init__(self, max_concurrent: int = 1):
        if max_concurrent < 1:
            raise ValueError(f"max_concurrent must be >= 1, got {max_concurrent}")
        self.max_concurrent = max_concurrent

    async def process_batch(self, items: Sequence[Any], processor_func: Callable[[Any], Any],
                            monitor: PerformanceMonitor,
                            on_error: Optional[Callable[[Any, Exception], Any]] = None) -> List[Any]:
        semaphore = asyncio.Semaphore(self.max_concurrent)
        loop = asyncio.get_running_loop()

        with ThreadPoolExecutor(max_workers=self.max_concurrent) as executor:
            async def process_item(item):
                async with semaphore:
                    try:
                        result = await loop.run_in_executor(executor, processor_func, item)
                        monitor.record_file()
                        return result
                    except Exception as e:
                        monitor.record_failed_file()
                        log_message(f"❌ Failed to process {item}: {e}", "error")
                        return on_error(item, e) if on_error else None

            # gather preserves input order whatever the completion order
            return list(await asyncio.gather(*[process_item(item) for item in items]))

    def run(self, items: Sequence[Any], processor_func: Callable[[Any], Any], monitor: PerformanceMonitor,
            on_error: Optional[Callable[[Any, Exception], Any]] = None) -> List[Any]:
        if self.max_concurrent == 1:
            results = []
            for item in items:
                try:
                    results.append(processor_func(item))
                    monitor.record_file()
                except Exception as e:
                    monitor.record_failed_file()
                    log_message(f"❌ Failed to process {item}: {e}", "error")
                    results.append(on_error(item, e) if on_error else None)
            return results
        return asyncio.run(self.process_batch(items, processor_func, monitor, on_error))
