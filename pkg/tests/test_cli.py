import csv
import math
import subprocess
import sys

import pytest

from saef import bundle as bundle_io
from saef.cli import EVAL_HEADER, main

SMALL = ["--set", "T=4", "--set", "classes_per_task=2", "--set", "d_in=8", "--set", "d=8", "--set", "r=4",
         "--set", "samples_per_class=20", "--set", "epochs=6", "--set", "m_pseudo=16"]


def run(capsys, *args):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def summary(line):
    return {k: float(v) for k, v in (kv.split("=") for kv in line.split())}


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", *SMALL, "--out", str(d / "w.json")]) == 0
    assert main(["train", str(d / "w.json"), "--out", str(d / "t.json")]) == 0
    assert main(["build", str(d / "t.json"), "--out", str(d / "b.json")]) == 0
    return d


def test_generate_is_byte_identical(tmp_path, capsys):
    for name in ("a.json", "b.json"):
        assert run(capsys, "generate", *SMALL, "--seed", 3, "--out", tmp_path / name)[0] == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_generate_default_has_ten_tasks(tmp_path, capsys):
    assert run(capsys, "generate", "--out", tmp_path / "w.json")[0] == 0
    assert len(bundle_io.load(tmp_path / "w.json").tasks) == 10


def test_usage_errors_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "generate", "--set", "T=0", "--out", tmp_path / "w.json")
    assert code == 2 and "T must be" in err
    assert run(capsys, "generate", "--set", "bogus=1", "--out", tmp_path / "w.json")[0] == 2
    with pytest.raises(SystemExit) as e:
        main(["sweep", str(tmp_path / "w.json"), "--param", "depth", "--values", "1", "--out", "x.csv"])
    assert e.value.code == 2


def test_runtime_errors_exit_1(built, tmp_path, capsys):
    assert run(capsys, "generate", *SMALL, "--out", tmp_path / "missing" / "w.json")[0] == 1
    assert run(capsys, "train", tmp_path / "nope.json", "--out", tmp_path / "t.json")[0] == 1
    code, _, err = run(capsys, "evaluate", built / "t.json", "--out", tmp_path / "e.csv")
    assert code == 1 and "hierarchy" in err
    assert run(capsys, "build", built / "w.json", "--out", tmp_path / "b.json")[0] == 1
    (tmp_path / "junk.json").write_text("{}")
    assert run(capsys, "build", tmp_path / "junk.json", "--out", tmp_path / "b.json")[0] == 1


def test_train_is_reproducible_and_logs_orth(built, tmp_path, capsys):
    assert run(capsys, "train", built / "w.json", "--out", tmp_path / "t2.json")[0] == 0
    assert (tmp_path / "t2.json").read_bytes() == (built / "t.json").read_bytes()
    log = bundle_io.load(built / "t.json").train_log
    assert log[0]["orth_last"] == 0.0
    assert log[0]["cls_last"] < log[0]["cls_first"]


def test_lambda_changes_w_up(built, tmp_path, capsys):
    for lam in ("0", "0.1"):
        assert run(capsys, "train", built / "w.json", "--set", f"lam={lam}", "--out", tmp_path / f"l{lam}.json")[0] == 0
    a, b = bundle_io.load(tmp_path / "l0.json"), bundle_io.load(tmp_path / "l0.1.json")
    assert a.tasks[-1].w_up.tobytes() != b.tasks[-1].w_up.tobytes()


def test_build_policies(built, tmp_path, capsys):
    code, out, _ = run(capsys, "build", built / "t.json", "--out", tmp_path / "auto.json")
    assert code == 0 and "K*=2" in out and "silhouette k=2" in out
    run(capsys, "build", built / "t.json", "--k", "1", "--out", tmp_path / "one.json")
    h = bundle_io.load(tmp_path / "one.json").hierarchy
    assert h.k == 1 and len(h.nodes[h.roots[0]].source_tasks) == 4
    run(capsys, "build", built / "t.json", "--k", "flat", "--out", tmp_path / "flat.json")
    h = bundle_io.load(tmp_path / "flat.json").hierarchy
    assert h.k == 4 and all(h.nodes[r].is_leaf for r in h.roots)


def test_evaluate_outputs_and_determinism(built, tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "evaluate", built / "b.json", "--out", tmp_path / f"{name}.csv",
                           "--per-task", tmp_path / f"{name}_tasks.csv", "--traces", tmp_path / f"{name}_tr.csv")
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    for suffix in (".csv", "_tasks.csv", "_tr.csv"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == ",".join(EVAL_HEADER)
    s = summary(outs[0].strip().splitlines()[-1])
    assert set(s) == {"ABAR", "AT", "DEPTH", "SPEEDUP", "EVALS"}
    per_task = rows(tmp_path / "a_tasks.csv")
    assert len(per_task) == 5 and per_task[-1]["task_idx"] == "final"
    assert float(per_task[-1]["abar_running"]) == pytest.approx(s["ABAR"], abs=1e-4)
    traces = rows(tmp_path / "a_tr.csv")
    assert len(traces) > 0 and "depth_tree_1" in traces[0]


def test_flat_baseline_evaluates_every_expert(built, tmp_path, capsys):
    code, out, _ = run(capsys, "baseline-flat", built / "b.json", "--out", tmp_path / "f.csv")
    assert code == 0 and summary(out.strip())["EVALS"] == 4.0
    assert rows(tmp_path / "f.csv")[0]["method"] == "flat"


def test_large_threshold_gives_depth_one(built, tmp_path, capsys):
    code, out, _ = run(capsys, "evaluate", built / "b.json", "--tau-e", math.log(8) + 0.1, "--out", tmp_path / "e.csv")
    s = summary(out.strip())
    k = int(rows(tmp_path / "e.csv")[0]["K"])
    assert code == 0 and s["DEPTH"] == 1.0
    assert s["SPEEDUP"] == pytest.approx(4 / (1 + k), abs=1e-3)


def test_sweeps(built, tmp_path, capsys):
    assert run(capsys, "sweep", built / "b.json", "--param", "tau", "--values", "1.0,0.5,0.2,0.1", "--out", tmp_path / "tau.csv")[0] == 0
    assert [float(r["tau"]) for r in rows(tmp_path / "tau.csv")] == [1.0, 0.5, 0.2, 0.1]
    assert run(capsys, "sweep", built / "b.json", "--param", "tau_e", "--values", "0,1,2", "--out", tmp_path / "te.csv")[0] == 0
    depth = [float(r["mean_depth"]) for r in rows(tmp_path / "te.csv")]
    assert all(b <= a for a, b in zip(depth, depth[1:]))
    assert run(capsys, "sweep", built / "b.json", "--param", "k", "--values", "1,2,T", "--out", tmp_path / "k.csv")[0] == 0
    assert [r["K"] for r in rows(tmp_path / "k.csv")] == ["1", "2", "4"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "saef", "generate", *SMALL, "--out", str(tmp_path / "w.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
