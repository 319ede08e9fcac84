"""Thread budget parsing and deterministic batch/tree dispatch."""

import threading
import time

import numpy as np
import pytest

from parinla.errors import BatchError, BudgetError
from parinla.runtime import (
    SERIAL,
    ThreadBudget,
    parse_budget,
    reset_runtime_stats,
    run_batch,
    run_tree_tasks,
    runtime_stats,
)


class TestParseBudget:
    def test_basic(self):
        b = parse_budget("4:2")
        assert (b.l1, b.l2) == (4, 2)
        assert str(b) == "4:2"

    def test_serial(self):
        assert parse_budget("1:1") == SERIAL

    def test_zero_rejected(self):
        with pytest.raises(BudgetError):
            parse_budget("0:2")

    @pytest.mark.parametrize("text", ["4", "a:b", "4:2:1", "-1:2", ""])
    def test_malformed(self, text):
        with pytest.raises(BudgetError):
            parse_budget(text)

    def test_direct_construction_validates(self):
        with pytest.raises(BudgetError):
            ThreadBudget(2, 0)


class TestRunBatch:
    def test_slot_order(self):
        tasks = [lambda: 1, lambda: 2, lambda: 3]
        for budget in (SERIAL, ThreadBudget(2, 1), ThreadBudget(8, 1)):
            assert run_batch(tasks, budget) == [1, 2, 3]

    def test_serial_budget_matches_sequential(self):
        rng = np.random.default_rng(3)
        data = [rng.standard_normal(64) for _ in range(6)]
        tasks = [lambda a=a: float(np.sum(np.sin(a))) for a in data]
        sequential = [t() for t in tasks]
        assert run_batch(tasks, SERIAL) == sequential

    def test_parallel_values_equal_serial(self):
        data = [np.full(100, i, dtype=float) for i in range(10)]
        tasks = [lambda a=a: float(a @ a) for a in data]
        assert run_batch(tasks, ThreadBudget(4, 1)) == run_batch(tasks, SERIAL)

    def test_error_reports_slot(self):
        def boom():
            raise ValueError("broken")

        tasks = [lambda: 1, boom, lambda: 3]
        with pytest.raises(BatchError) as info:
            run_batch(tasks, ThreadBudget(2, 1))
        assert info.value.slot == 1
        assert isinstance(info.value.task_error, ValueError)

    def test_error_reports_slot_serial(self):
        def boom():
            raise ValueError("broken")

        with pytest.raises(BatchError) as info:
            run_batch([lambda: 1, boom], SERIAL)
        assert info.value.slot == 1

    def test_concurrent_sleepers_overlap(self):
        t0 = time.perf_counter()
        run_batch([lambda: time.sleep(0.1) for _ in range(8)], ThreadBudget(8, 1))
        assert time.perf_counter() - t0 < 0.25

    def test_peak_concurrency_bounded(self):
        reset_runtime_stats()
        gate = threading.Barrier(4, timeout=5)

        def task():
            gate.wait()
            return 0

        run_batch([task] * 4, ThreadBudget(4, 1))
        stats = runtime_stats()
        assert stats["batch_peak"] == 4
        run_batch([lambda: 0] * 8, ThreadBudget(2, 1))
        assert runtime_stats()["batch_peak"] <= 4


class TestRunTree:
    def _chain(self, n):
        parents = [i + 1 if i + 1 < n else -1 for i in range(n)]
        children = [[] for _ in range(n)]
        for i, p in enumerate(parents):
            if p >= 0:
                children[p].append(i)
        return parents, children

    @pytest.mark.parametrize("workers", [1, 2, 4])
    def test_children_before_parent(self, workers):
        parents = [2, 2, 6, 5, 5, 6, -1]
        children = [[], [], [0, 1], [], [], [3, 4], [2, 5]]
        done = []
        lock = threading.Lock()

        def run(node, slot):
            with lock:
                done.append(node)
                for c in children[node]:
                    assert c in done

        run_tree_tasks(parents, children, run, workers)
        assert sorted(done) == list(range(7))

    @pytest.mark.parametrize("workers", [1, 2, 4])
    def test_parent_before_children(self, workers):
        parents = [2, 2, 6, 5, 5, 6, -1]
        children = [[], [], [0, 1], [], [], [3, 4], [2, 5]]
        done = []
        lock = threading.Lock()

        def run(node, slot):
            with lock:
                if parents[node] >= 0:
                    assert parents[node] in done
                done.append(node)

        run_tree_tasks(parents, children, run, workers, root_first=True)
        assert sorted(done) == list(range(7))

    def test_error_propagates(self):
        parents, children = self._chain(5)

        def run(node, slot):
            if node == 2:
                raise RuntimeError("node 2 broke")

        with pytest.raises(RuntimeError, match="node 2"):
            run_tree_tasks(parents, children, run, 2)

    def test_slots_within_worker_count(self):
        parents, children = self._chain(20)
        seen = set()
        lock = threading.Lock()

        def run(node, slot):
            with lock:
                seen.add(slot)

        run_tree_tasks(parents, children, run, 3)
        assert seen <= {0, 1, 2}


class TestNesting:
    def test_inner_task_observes_l2(self):
        """A level-1 task uses the budget its closure captured."""
        budget = ThreadBudget(3, 2)
        observed = []
        lock = threading.Lock()

        def task():
            with lock:
                observed.append(budget.l2)
            return None

        run_batch([task] * 3, budget)
        assert observed == [2, 2, 2]
