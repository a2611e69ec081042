"""Builds the fedq_py extension and exercises it end to end.

Usage: python3 python/smoke_test.py
"""

import importlib
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "fedq-python"], cwd=ROOT, check=True
    )
    lib = ROOT / "target" / "release" / "libfedq_py.so"
    tmp = Path(tempfile.mkdtemp())
    shutil.copy(lib, tmp / "fedq_py.so")
    sys.path.insert(0, str(tmp))
    return importlib.import_module("fedq_py")


def main():
    fq = load_module()

    # Two states, one action, uniform next state: Q* = (0.5, 1.5).
    mdp = fq.Mdp(2, 1, 0.5, [0.0, 1.0], [[0.5, 0.5], [0.5, 0.5]])
    q = mdp.optimal_q()
    assert abs(q[0][0] - 0.5) < 1e-9 and abs(q[1][0] - 1.5) < 1e-9, q
    assert mdp.bellman_residual(q) < 1e-9
    assert fq.Mdp.from_json(mdp.to_json()).n_states == 2

    try:
        fq.Mdp(1, 1, 0.5, [0.0], [[0.7]])
    except ValueError:
        pass
    else:
        raise AssertionError("non-stochastic row accepted")

    stats = fq.analyze({"synthetic": {"m": 20}, "agents": 20, "seed": 1})
    assert stats["mu_min"] == 0.0 and stats["mu_avg"] > 0.0
    assert abs(stats["c_het"] - 20.0) < 1e-9

    sched = fq.schedule(
        {
            "algorithm": "async_importance",
            "epsilon": 0.1,
            "delta": 0.05,
            "agents": 20,
            "gamma": 0.9,
            "n_states": 2,
            "n_actions": 20,
            "coverage": {"mu_min": 0.0, "mu_avg": stats["mu_avg"], "c_het": 20.0, "t_mix_max": 2},
        }
    )
    assert sched["eta"] > 0 and sched["t_min"] % sched["tau_max"] == 0

    w = fq.importance_weights([[3, 0], [1, 0]], 0.5)
    assert abs(w[0][0] + w[1][0] - 1.0) < 1e-12 and w[0][0] > w[1][0]
    assert w[0][1] == w[1][1] == 0.5

    cfg = {
        "algorithm": "im_avg",
        "synthetic": {"m": 5},
        "agents": 10,
        "eta": 0.2,
        "tau": 10,
        "horizon": 200,
        "seed": 3,
        "n_runs": 2,
    }
    runs = fq.run(cfg)
    assert len(runs) == 2 and runs[0]["t"][-1] == 200
    assert runs == fq.run(cfg), "runs are not reproducible"
    assert all(0.0 <= e <= 1.0 for r in runs for e in r["normalized_error"])

    rows = fq.run_experiment(preset="fig3", sims=2)
    final = [r for r in rows if r["t"] == 1000 and r["metric_name"] == "normalized_error"]
    assert {r["algorithm"] for r in final} == {"eq_avg", "im_avg"}
    assert all(math.isfinite(r["mean"]) for r in final)

    print(f"fedq_py {fq.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
