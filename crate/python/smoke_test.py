"""Smoke test for the pywsched extension module.

Build and run from the repository root:

    cargo build -p wsched-py --features extension-module
    cp target/debug/libpywsched.so python/pywsched.so
    python3 python/smoke_test.py
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pywsched as ws  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def two_state():
    return ws.ChannelModel(
        [(0.5, [[2.0, 0.0], [0.0, 1.0]]), (0.5, [[1.0, 0.0], [0.0, 2.0]])],
        rate_bound=2.0,
    )


def main():
    cm = two_state()
    assert cm.dim == 2
    assert cm.ergodic_boundary_point([0.5, 0.5]) == [1.0, 1.0]
    x = cm.scale_to_boundary([1.0, 1.0])
    assert abs(x - 1.0) < 1e-9, x

    mwm = ws.Policy("mwm", cm)
    assert mwm.weights([3.0, 1.0]) == [0.75, 0.25]
    exp_rule = ws.Policy.from_json(json.dumps({"name": "exp_rule", "eta": 0.5}), cm)
    assert abs(sum(exp_rule.weights([10.0, 20.0])) - 1.0) < 1e-12

    arrivals = ws.ArrivalModel.bernoulli([0.9, 0.9], 2.0, 2.0)
    trace = ws.simulate(cm, arrivals, mwm, [0.0, 0.0], 50_000, seed=1)
    assert len(trace) == 50_000 and trace.replay_ok()
    again = ws.simulate(cm, arrivals, mwm, [0.0, 0.0], 50_000, seed=1)
    assert trace.to_csv() == again.to_csv()
    report = ws.classify_trace(trace)
    assert report["verdict"] == "stable", report["verdict"]

    stats = ws.necessity(trace)
    assert 0.0 <= stats["jump_fraction"] <= 1.0

    cond = ws.check_conditions(mwm, [1e2, 1e3], samples_per_level=200)
    assert cond["verdicts"]["condition1"] and cond["verdicts"]["condition2"]

    d = ws.drift(mwm, cm, ws.ArrivalModel.bernoulli([0.8, 0.8], 2.0, 2.0), [100.0, 100.0])
    assert d["mean"] < 0.0, d

    try:
        ws.build_grid(mwm, [0.0, 0.0], [20.0, 20.0])
    except RuntimeError as e:
        assert "grid construction failed" in str(e)
    else:
        raise AssertionError("maximum-weight grid should not balance")

    try:
        ws.ChannelModel([(0.9, [[1.0, 0.0]])], rate_bound=2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("probabilities that do not sum to one must be rejected")

    with tempfile.TemporaryDirectory() as out:
        summary = ws.run_scenario("simulate", os.path.join(ROOT, "scenarios", "mwm_load09.toml"), out, jobs=2, seed_override=0)
        assert summary["policy"] == "mwm"
        assert all(r["verdict"] == "stable" for r in summary["runs"]), summary["runs"]

    print("pywsched smoke test: ok")


if __name__ == "__main__":
    main()
