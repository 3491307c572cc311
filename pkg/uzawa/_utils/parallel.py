from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def _ordered_map(func: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """
    Apply `func` to every item, concurrently when `workers > 1`.

    Results always come back in the order of `items`, so reductions over
    them do not depend on the number of workers.
    """
    if workers < 1:
        raise ValueError(f"`workers` must be at least 1, not {workers}")
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(func, items))
