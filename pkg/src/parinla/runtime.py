"""Two-level thread budgets and deterministic task dispatch.

Level 1 runs independent coarse tasks (objective evaluations, per-point
partial inversions) through :func:`run_batch`.  Level 2 runs the tasks a
sparse factorization or inversion schedules over its separator tree through
:func:`run_tree_tasks`.  Results are always collected in slot order, so the
floating-point arithmetic downstream never depends on scheduling.
"""

from __future__ import annotations

import os
import threading
from collections import deque
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import BatchError, BudgetError


@dataclass(frozen=True)
class ThreadBudget:
    """l1 concurrent outer tasks, each allowed l2 inner worker slots."""

    l1: int = 1
    l2: int = 1

    def __post_init__(self):
        if self.l1 < 1 or self.l2 < 1:
            raise BudgetError(f"budget must be at least 1:1, got {self.l1}:{self.l2}")

    def __str__(self) -> str:
        return f"{self.l1}:{self.l2}"


SERIAL = ThreadBudget(1, 1)


def parse_budget(text: str) -> ThreadBudget:
    """Parse an ``"A:B"`` budget string."""
    parts = text.strip().split(":")
    if len(parts) != 2 or not all(parts):
        raise BudgetError(f"expected 'A:B', got {text!r}")
    try:
        l1, l2 = int(parts[0]), int(parts[1])
    except ValueError:
        raise BudgetError(f"expected integer 'A:B', got {text!r}") from None
    return ThreadBudget(l1, l2)


def physical_cores() -> int:
    try:
        import psutil

        cores = psutil.cpu_count(logical=False)
        if cores:
            return int(cores)
    except Exception:
        pass
    return os.cpu_count() or 1


def default_budget(n_hyper: int, cores: int | None = None) -> ThreadBudget:
    """Split the physical cores: level 1 up to the gradient batch width
    (2d+1), the rest to level 2."""
    if cores is None:
        cores = physical_cores()
    l1 = max(1, min(2 * max(n_hyper, 1) + 1, cores))
    l2 = max(1, cores // l1)
    return ThreadBudget(l1, l2)


class _RuntimeStats:
    """Peak-concurrency and batch instrumentation, test-facing."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self):
        with getattr(self, "_lock", threading.Lock()):
            self.batch_active = 0
            self.batch_peak = 0
            self.tree_active = 0
            self.tree_peak = 0
            self.n_batches = 0
            self.batch_wall_s = 0.0

    def enter_batch_task(self):
        with self._lock:
            self.batch_active += 1
            self.batch_peak = max(self.batch_peak, self.batch_active)

    def exit_batch_task(self):
        with self._lock:
            self.batch_active -= 1

    def enter_tree_task(self):
        with self._lock:
            self.tree_active += 1
            self.tree_peak = max(self.tree_peak, self.tree_active)

    def exit_tree_task(self):
        with self._lock:
            self.tree_active -= 1

    def record_batch(self, wall_s: float):
        with self._lock:
            self.n_batches += 1
            self.batch_wall_s += wall_s

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "batch_peak": self.batch_peak,
                "tree_peak": self.tree_peak,
                "n_batches": self.n_batches,
                "batch_wall_s": self.batch_wall_s,
            }


_stats = _RuntimeStats()


def runtime_stats() -> dict:
    return _stats.snapshot()


def reset_runtime_stats():
    _stats.reset()


def run_batch(tasks: Sequence[Callable[[], object]], budget: ThreadBudget) -> list:
    """Run independent zero-argument tasks, at most ``budget.l1`` in flight.

    Results come back indexed by slot.  The tasks must not share mutable
    state (contract, not checked).  The first failing task cancels whatever
    has not started yet and is reported with its slot.
    """
    import time

    t0 = time.perf_counter()
    results = [None] * len(tasks)
    if budget.l1 == 1 or len(tasks) <= 1:
        for slot, task in enumerate(tasks):
            _stats.enter_batch_task()
            try:
                results[slot] = task()
            except BaseException as exc:
                raise BatchError(slot, exc) from exc
            finally:
                _stats.exit_batch_task()
        _stats.record_batch(time.perf_counter() - t0)
        return results

    def _wrapped(slot: int, task):
        _stats.enter_batch_task()
        try:
            return task()
        finally:
            _stats.exit_batch_task()

    with ThreadPoolExecutor(max_workers=budget.l1) as pool:
        futures = [pool.submit(_wrapped, slot, task) for slot, task in enumerate(tasks)]
        done, not_done = wait(futures, return_when=FIRST_EXCEPTION)
        failed = [i for i, f in enumerate(futures) if f in done and f.exception() is not None]
        if failed:
            for f in not_done:
                f.cancel()
            slot = min(failed)
            exc = futures[slot].exception()
            raise BatchError(slot, exc) from exc
        for slot, fut in enumerate(futures):
            results[slot] = fut.result()
    _stats.record_batch(time.perf_counter() - t0)
    return results


def run_tree_tasks(
    parents: Sequence[int],
    children: Sequence[Sequence[int]],
    run: Callable[[int, int], None],
    n_workers: int,
    root_first: bool = False,
) -> None:
    """Run one task per tree node respecting parent/child dependencies.

    ``root_first=False`` schedules children before their parent (numeric
    factorization); ``root_first=True`` schedules a parent before its
    children (selected inversion).  ``run(node, slot)`` executes a node on
    worker ``slot`` in ``0..n_workers-1``; the caller participates as slot
    0, so exactly ``n_workers`` threads touch the work.
    """
    n = len(parents)
    if n == 0:
        return
    if n_workers == 1:
        order = _serial_order(parents, children, root_first)
        for node in order:
            _stats.enter_tree_task()
            try:
                run(node, 0)
            finally:
                _stats.exit_tree_task()
        return

    pending = [0] * n
    ready: deque[int] = deque()
    if root_first:
        for i in range(n):
            pending[i] = 0 if parents[i] < 0 else 1
    else:
        for i in range(n):
            pending[i] = len(children[i])
    for i in range(n):
        if pending[i] == 0:
            ready.append(i)

    cond = threading.Condition()
    state = {"remaining": n, "error": None}

    def dependents(node: int):
        if root_first:
            return children[node]
        p = parents[node]
        return (p,) if p >= 0 else ()

    def worker(slot: int):
        while True:
            with cond:
                while not ready and state["remaining"] > 0 and state["error"] is None:
                    cond.wait()
                if state["error"] is not None or state["remaining"] == 0:
                    return
                node = ready.popleft()
            _stats.enter_tree_task()
            try:
                run(node, slot)
            except BaseException as exc:
                with cond:
                    if state["error"] is None:
                        state["error"] = exc
                    cond.notify_all()
                return
            finally:
                _stats.exit_tree_task()
            with cond:
                state["remaining"] -= 1
                for dep in dependents(node):
                    pending[dep] -= 1
                    if pending[dep] == 0:
                        ready.append(dep)
                cond.notify_all()
                if state["remaining"] == 0:
                    return

    helpers = [
        threading.Thread(target=worker, args=(slot,), name=f"tree-worker-{slot}")
        for slot in range(1, n_workers)
    ]
    for t in helpers:
        t.start()
    worker(0)
    for t in helpers:
        t.join()
    if state["error"] is not None:
        raise state["error"]


def _serial_order(parents, children, root_first: bool) -> list[int]:
    n = len(parents)
    roots = [i for i in range(n) if parents[i] < 0]
    preorder: list[int] = []
    stack = list(reversed(roots))
    while stack:
        node = stack.pop()
        preorder.append(node)
        stack.extend(reversed(children[node]))
    if not root_first:
        preorder.reverse()
    return preorder
