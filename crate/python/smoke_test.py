"""Smoke test for the fieldcal_py extension module.

Build and install first, e.g. `pip install -e crates/python --no-build-isolation`.
"""

import math

import fieldcal_py as fc


def main():
    assert abs(fc.improvement(1.1197, 0.6794) - 0.393230329552559) < 1e-12
    assert abs(fc.lambda_from_alpha(0.01, 4, 60955) - 0.04 / 60955) < 1e-18
    assert abs(fc.rmse([0.4, -0.2, 1.3, -0.1], [0.0] * 4, [0, 1, 2, 3]) - 0.6892) < 1e-4

    case = fc.make_case(1)
    problem = case.problem
    assert len(problem) == 3200
    assert len(case.holdout) == 4

    dense = fc.calibrate(problem, fc.CalibrationParams(solver="dense"))
    lowrank = fc.calibrate(problem, fc.CalibrationParams(solver="lowrank", n_samples=100, rowsum="exact"))
    assert dense.solver == "dense" and lowrank.solver == "lowrank"
    assert all(math.isfinite(v) for v in lowrank.v_hat)
    for f, v, x in zip(dense.f_hat, dense.v_hat, problem.values):
        assert abs(f - (x - v)) < 1e-9

    report = fc.evaluate(problem, dense, case.holdout)
    assert report.improvement > 0, report.improvement
    print(f"holdout improvement {100 * report.improvement:.2f}%")

    rows = fc.sweep(problem, fc.CalibrationParams(), "alpha", [1.0, 0.5, 0.1, 0.01], case.holdout)
    assert [r[0] for r in rows] == [1.0, 0.5, 0.1, 0.01]
    max_v = [r[2] for r in rows]
    assert all(b >= a for a, b in zip(max_v, max_v[1:])), max_v

    e = -0.75
    constant = problem.with_sensors([(i, problem.values[i] - e) for i, _ in problem.sensors])
    v = fc.calibrate(constant, fc.CalibrationParams(solver="dense")).v_hat
    assert max(abs(x - e) for x in v) < 1e-10

    tiny = fc.CalibrationProblem.from_points([(0.0, 0.0, 20.0)], [(0, 18.0)])
    assert abs(fc.calibrate(tiny, fc.CalibrationParams(solver="dense")).v_hat[0] - 2.0) < 1e-12

    for bad in (lambda: fc.CalibrationParams(alpha=0.0), lambda: fc.CalibrationParams(solver="qr")):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
