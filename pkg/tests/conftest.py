import sys
import numpy as np
import pytest

from saef.core import VisualPrototype
from saef.forest import TaskRecord


def make_task(task_id, params, visual, semantic=None):
    visual = np.asarray(visual, dtype=np.float64)
    return TaskRecord(
        task_id=task_id,
        class_ids=(task_id,),
        params=np.asarray(params, dtype=np.float64),
        semantic_prototype=visual if semantic is None else np.asarray(semantic, dtype=np.float64),
        visual_prototype=visual,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
