"""Per-sample worker pool whose output order never depends on the worker count."""

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Callable, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

_context: dict[str, Any] = {}


def _init_worker(context: Any) -> None:
    _context["value"] = context


def _run(fn: Callable[[Any, Any], R], index: int, item: Any) -> tuple[int, R]:
    return index, fn(item, _context["value"])


def map_samples(fn: Callable[[T, Any], R], items: Sequence[T], context: Any,
                workers: int = 1) -> list[R]:
    """``[fn(item, context) for item in items]``, optionally across processes.

    ``fn`` must be a module-level function; ``context`` is shipped once per worker.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(item, context) for item in items]
    results: list = [None] * len(items)
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(context,)) as executor:
        futures = [executor.submit(_run, fn, i, item) for i, item in enumerate(items)]
        for done, future in enumerate(as_completed(futures), 1):
            index, value = future.result()
            results[index] = value
            if done % 16 == 0 or done == len(items):
                logger.info("%d/%d samples done", done, len(items))
    return results
