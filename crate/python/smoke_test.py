"""Smoke test for the lprev_py extension module.

Build and install first, e.g.:

    maturin develop -m crates/python/Cargo.toml --features extension-module
"""

import math

import lprev_py as lp


def main():
    e = lp.expm([[0.0, 1.0], [-2.0, -2.0]], 0.0)
    assert e == [[1.0, 0.0], [0.0, 1.0]]

    g = lp.conv_const([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], 0.5)
    assert abs(g[0][0] - 0.125) < 1e-12 and abs(g[1][0] - 0.5) < 1e-12

    assert lp.solve_qp_scalar(1.0, 1.0, 0.5, -1.0, 1.0) == 0.5
    assert abs(lp.standard_amax_exo(2.0) - 0.9048) < 1e-4
    assert abs(lp.standard_h(0.2, 0.9048, 0.1, 0.1) - 0.0944739) < 1e-6

    sys = lp.DelaySystem(
        [[0.0, 1.0], [-2.0, -2.0]], [[0.0], [1.0]], [[0.0], [1.0]], [[1.0, 0.0]],
        0.008, 0.010, [1.119], [0.43], 0.2,
    )
    torque = lp.Sinusoid(0.43, 0.2 * math.pi)
    limited = lp.Engine(sys, 0.001).barrier([0.05, 0.1], torque, 1.0)
    full = lp.Engine(sys, 0.001, unlimited=True).barrier([0.05, 0.1], torque, 1.0)
    assert limited.t_s > 0.0 and limited.h <= full.h + 1e-12
    print(limited, full)

    scn = lp.Scenario("exo", duration=5.0)
    unfiltered = lp.simulate(scn, "none").metrics()
    filtered = lp.simulate(scn, "lprev").metrics()
    assert not unfiltered.safe and filtered.safe
    print(unfiltered)
    print(filtered)

    rows = lp.sweep(lp.Scenario("exo", duration=3.0), [1.119, 2.0])
    assert len(rows) == 6 and all(r.safe for r in rows)
    print("smoke test passed")


if __name__ == "__main__":
    main()
