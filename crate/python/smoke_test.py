"""Smoke test for the zerosum_py extension.

Build and run from the repository root:

    maturin develop -m crates/python/Cargo.toml   # or see README for a plain cargo build
    python python/smoke_test.py
"""

import json
import math

import zerosum_py as zs


def close(a, b, tol=1e-6):
    return abs(a - b) <= tol


def main():
    ex = json.loads(zs.example())
    assert close(ex["single_honest"], -0.693147), ex
    assert close(ex["single_manipulated"], -0.562335), ex
    assert close(ex["zero_sum_scores"][0], 0.143841), ex
    assert close(ex["zero_sum_scores"][1], -0.143841), ex
    assert all(v["holds"] for v in ex["verdicts"])

    rule = zs.ZeroSumRule("log")
    s = rule.scores([[0.5, 0.5], [0.25, 0.75]], 0)
    assert close(s[0], math.log(0.5) - math.log(0.25)) and close(sum(s), 0.0)
    assert rule.expected_scores([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5]) == [0.0, 0.0]

    decision = zs.DecisionRule("optimistic_max")
    pi = decision.decide([[[0.5, 0.5], [0.25, 0.75]], [[0.4, 0.6], [0.8, 0.2]]], [1.0, 0.0])
    assert pi == [0.0, 1.0], pi

    inst = zs.Instance.two_action_example(2)
    assert inst.best_action == 0
    report = json.loads(inst.audit(decision, grid_resolution=4))
    assert report["honest_is_equilibrium"] and report["all_choose_a_star"]
    control = json.loads(inst.audit(decision, zero_sum=False, grid_resolution=4))
    assert control["counterexample"] is not None

    suite = json.loads(zs.run_default_suite())
    assert suite and all(e["passed"] for e in suite)

    trace = json.loads(zs.search(8, "binary", seed=1))
    assert trace["comparisons"] == 3 and len(trace["rounds"]) == 3

    rows = json.loads(zs.train(json.dumps({"steps": 4, "batch": 2, "eval_every": 2, "eval_contexts": 8})))
    assert [r["step"] for r in rows] == [0, 2, 4]

    try:
        zs.DecisionRule("random_mean_max")
    except ValueError:
        pass
    else:
        raise AssertionError("missing epsilon accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
