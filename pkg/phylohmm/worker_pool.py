"""
Worker Pool: runs independent tasks on a bounded thread pool
============================================================
Used for pool weighting, per-draw ancestral sampling and simulation
replicates. Results come back in submission order, so output never depends
on the thread count. A failing task is logged and reported in its
TaskResult; it does not stop the other tasks.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterable, List, Optional

from errors import PhyloHmmError

logger = logging.getLogger(__name__)


@dataclass
class TaskResult:
    index: int
    value: Any = None
    error: Optional[BaseException] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _run_one(fn: Callable, index: int, task: Any, label: str) -> TaskResult:
    try:
        return TaskResult(index=index, value=fn(task))
    except PhyloHmmError as e:
        logger.warning(f"{label} task {index} failed: {e}")
        return TaskResult(index=index, error=e)
    except Exception as e:
        logger.error(f"{label} task {index} crashed: {e}", exc_info=True)
        return TaskResult(index=index, error=e)


def run_tasks(fn: Callable, tasks: Iterable[Any], threads: int = 1, label: str = "worker") -> List[TaskResult]:
    tasks = list(tasks)
    threads = max(1, int(threads))
    logger.info(f"Starting {len(tasks)} {label} tasks on {threads} thread(s)")
    if threads == 1 or len(tasks) <= 1:
        results = [_run_one(fn, k, task, label) for k, task in enumerate(tasks)]
    else:
        with ThreadPoolExecutor(max_workers=threads, thread_name_prefix=label) as pool:
            futures = [pool.submit(_run_one, fn, k, task, label) for k, task in enumerate(tasks)]
            results = [f.result() for f in futures]
    failed = sum(not r.ok for r in results)
    if failed:
        logger.warning(f"{label}: {failed} of {len(tasks)} tasks failed")
    else:
        logger.info(f"{label}: all {len(tasks)} tasks finished")
    return results


def values_or_raise(results: List[TaskResult]) -> List[Any]:
    """Unwrap results, re-raising the first failure."""
    for r in results:
        if not r.ok:
            raise r.error
    return [r.value for r in results]
