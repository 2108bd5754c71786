"""Smoke test for the hypocert Python bindings."""

import math
import tempfile

import hypocert_py as hc


def main() -> None:
    quad = hc.Potential.quadratic()
    bump = hc.Potential.bump_double_well(2.0, 1.0)
    assert quad.dim == 1 and bump.name == "bump_double_well"
    assert quad.value([2.0]) == 2.0
    assert quad.grad([2.0]) == [2.0]
    assert quad.check_hypotheses()
    assert not hc.Potential.quartic().check_hypotheses()

    lp = quad.lyapunov_params()
    assert abs(lp["beta"] - 1.0 / 3.0) < 1e-12
    assert abs(lp["kappa"] - 16.0 / 3.0) < 1e-12

    paths = hc.simulate(quad, [1.0, 0.0], [0.5, 1.0], n_paths=200, seed=1)
    assert len(paths) == 200 and len(paths[0]) == 2 and len(paths[0][1]) == 2
    again = hc.simulate(quad, [1.0, 0.0], [0.5, 1.0], n_paths=200, seed=1, threads=1)
    assert paths == again

    assert hc.wasserstein1([0.0, 0.0], [3.0, 4.0], 2) == 5.0
    assert hc.rho(quad, [1.0, 0.0], [1.0, 0.0]) == 0.0
    assert hc.rho(quad, [0.0, 0.0], [1.0, 0.0]) >= 1.0

    p, lo, hi = hc.coupling_probability(quad, [0.0, 0.0], [0.0, 0.0], 0.1, 0.5, n_paths=5000)
    assert 0.0 < lo <= p <= hi < 1.0

    t_grid = [0.5 * i for i in range(13)]
    rate, ci, window = hc.decay_rate(quad, [3.0, 0.0], [-3.0, 0.0], t_grid, n_paths=512)
    assert window >= 3 and math.isfinite(rate)

    try:
        hc.simulate(quad, [1.0, 0.0], [1.0], scheme="milstein")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown scheme accepted")

    with tempfile.TemporaryDirectory() as out:
        assert hc.main(["--out", out, "report"]) == 0
        assert hc.main(["frobnicate"]) == 1

    print(f"ok: lambda_hat = {rate:.3f} +/- {ci:.3f}, coupling p = {p:.3f}")


if __name__ == "__main__":
    main()
