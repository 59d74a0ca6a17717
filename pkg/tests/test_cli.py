import json
import os
import subprocess
import sys

import pytest

from conftest import canonical
from spase.cli import main
from spase.milp import build_milp, format_solution_text, plan_to_assignment
from spase.solver import brute_force
from spase.workload import Cluster, ConfigOption, Task, save_workload


@pytest.fixture
def canon_file(tmp_path):
    path = tmp_path / "canon.json"
    save_workload(path, *canonical())
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_canonical(capsys, canon_file, tmp_path):
    code, out, _ = run(capsys, "solve", "--workload", canon_file, "--timeout", 5, "--out", tmp_path / "m.csv",
                       "--plan-out", tmp_path / "plan.json", "--sample-rate", 1)
    assert code == 0
    assert out.splitlines()[0] == "makespan 10.000000"
    assert "status proven-optimal" in out and "mean_utilization 1.000000" in out
    assert (tmp_path / "m.csv").read_text().startswith("time_s,busy_gpus,total_gpus,utilization\n")
    assert len(json.loads((tmp_path / "plan.json").read_text())) == 2


def test_solve_baseline_and_brute_force(capsys, canon_file):
    code, out, _ = run(capsys, "solve", "--workload", canon_file, "--baseline", "max")
    assert code == 0 and out.startswith("makespan 12.000000") and "baseline-max" in out
    code, out, _ = run(capsys, "solve", "--workload", canon_file, "--brute-force")
    assert code == 0 and out.startswith("makespan 10.000000")


def test_gen_is_deterministic(capsys, tmp_path):
    run(capsys, "gen", "--tasks", 5, "--nodes", "8,4", "--seed", 3, "--out", tmp_path / "a.json")
    code, out, _ = run(capsys, "gen", "--tasks", 5, "--nodes", "8,4", "--seed", 3)
    assert code == 0 and out == (tmp_path / "a.json").read_text()
    assert [n["gpus"] for n in json.loads(out)["cluster"]] == [8, 4]


def test_check_solution(capsys, canon_file, tmp_path):
    tasks, cluster = canonical()
    model = build_milp(tasks, cluster)
    sol = plan_to_assignment(brute_force(tasks, cluster).plan, tasks, cluster)
    good = tmp_path / "good.sol"
    good.write_text(format_solution_text(model, sol))
    code, out, _ = run(capsys, "check-solution", "--workload", canon_file, "--solution", good)
    assert code == 0 and out == "ok objective 10.000000\n"
    lines = good.read_text().splitlines()
    tampered = tmp_path / "bad.sol"
    tampered.write_text("\n".join("C 1" if ln.startswith("C ") else ln for ln in lines) + "\n")
    code, out, _ = run(capsys, "check-solution", "--workload", canon_file, "--solution", tampered)
    assert code == 1 and out.startswith("violated ") and "makespan" in out
    garbage = tmp_path / "junk.sol"
    garbage.write_text("C\n")
    assert run(capsys, "check-solution", "--workload", canon_file, "--solution", garbage)[0] == 1


def test_exit_codes(capsys, tmp_path):
    wide = tmp_path / "wide.json"
    save_workload(wide, [Task("w", (ConfigOption("ddp", 4, 1.0),))], Cluster.of(2))
    code, _, err = run(capsys, "solve", "--workload", wide)
    assert code == 2 and "unschedulable" in err
    big = tmp_path / "big.json"
    cfgs = tuple(ConfigOption("ddp", g, 10.0 / g) for g in (1, 2))
    save_workload(big, [Task(f"t{i}", cfgs) for i in range(7)], Cluster.of(2))
    code, _, err = run(capsys, "solve", "--workload", big, "--brute-force")
    assert code == 3 and "refused" in err
    assert run(capsys, "solve", "--workload", tmp_path / "missing.json")[0] == 1
    (tmp_path / "bad.json").write_text("{}")
    assert run(capsys, "solve", "--workload", tmp_path / "bad.json")[0] == 1
    assert run(capsys, "nonsense")[0] == 1
    assert run(capsys, "gen", "--nodes", "0")[0] == 1


def test_export_lp_byte_stable(capsys, canon_file, tmp_path):
    run(capsys, "export-lp", "--workload", canon_file, "--out", tmp_path / "a.lp")
    run(capsys, "export-lp", "--workload", canon_file, "--out", tmp_path / "b.lp")
    assert (tmp_path / "a.lp").read_bytes() == (tmp_path / "b.lp").read_bytes()
    code, out, _ = run(capsys, "export-lp", "--workload", canon_file)
    assert code == 0 and out == (tmp_path / "a.lp").read_text()


def test_compare_and_sweep(capsys, tmp_path):
    path = tmp_path / "w.json"
    run(capsys, "gen", "--tasks", 4, "--nodes", "4", "--out", path)
    code, out, _ = run(capsys, "compare", "--workload", path, "--seeds", 2, "--timeout", 1, "--format", "csv")
    assert code == 0 and out.splitlines()[0].startswith("approach,mean_s")
    code, out, _ = run(capsys, "sweep-timeout", "--workload", path, "--ladder", "0.05,0.2,0.5", "--format", "csv")
    rows = [line.split(",") for line in out.splitlines()[1:]]
    assert code == 0 and len(rows) == 3
    ms = [float(r[1]) for r in rows]
    assert all(b <= a for a, b in zip(ms, ms[1:]))
    assert run(capsys, "sweep-timeout", "--workload", path, "--ladder", "0,-1")[0] == 1


def test_introspect(capsys, tmp_path):
    path = tmp_path / "w.json"
    run(capsys, "gen", "--tasks", 3, "--nodes", "4", "--out", path)
    events = tmp_path / "ev.json"
    events.write_text(json.dumps([{"round": 1, "action": "stop", "payload": "t00"}]))
    code, out, _ = run(capsys, "introspect", "--workload", path, "--threshold", 0, "--interval", 800,
                       "--overhead", 10, "--events", events, "--out", tmp_path / "s.json",
                       "--metrics", tmp_path / "u.csv", "--timeout", 5)
    assert code == 0 and out.startswith("makespan ")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["interval_s"] == 800.0
    assert (tmp_path / "u.csv").exists()
    events.write_text(json.dumps([{"round": 1, "action": "stop", "payload": "nobody"}]))
    assert run(capsys, "introspect", "--workload", path, "--events", events, "--timeout", 5)[0] == 1


def test_gantt(capsys, canon_file, tmp_path):
    code, _, _ = run(capsys, "gantt", "--workload", canon_file, "--out", tmp_path / "g.svg", "--timeout", 5)
    assert code == 0 and "<svg" in (tmp_path / "g.svg").read_text()
    run(capsys, "solve", "--workload", canon_file, "--plan-out", tmp_path / "p.json", "--baseline", "min")
    code, out, _ = run(capsys, "gantt", "--workload", canon_file, "--plan", tmp_path / "p.json")
    assert code == 0 and out.count("<rect") == 2
    bad = [{"task": "t0", "node": "n0", "gpus": [0], "config": 0, "start_s": 0.0},
           {"task": "t1", "node": "n0", "gpus": [0], "config": 0, "start_s": 1.0}]
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert run(capsys, "gantt", "--workload", canon_file, "--plan", tmp_path / "bad.json")[0] == 1


def test_outputs_are_atomic(capsys, canon_file, tmp_path, monkeypatch):
    target = tmp_path / "out.lp"
    target.write_text("previous")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    assert run(capsys, "export-lp", "--workload", canon_file, "--out", target)[0] == 1
    assert target.read_text() == "previous"
    assert [p.name for p in tmp_path.iterdir() if p.name.endswith(".tmp")] == []


def test_module_entry_point(canon_file):
    res = subprocess.run([sys.executable, "-m", "spase", "solve", "--workload", str(canon_file), "--timeout", "5"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("makespan 10.000000")
