"""Smoke test for the ecdlab Python bindings.

Build and install first:
    pip install --no-build-isolation -e crates/py
then run from the repository root:
    python3 python/smoke_test.py
"""

import math
import pathlib
import tempfile

import ecdlab

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "crates" / "cli" / "scenarios"


def check(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return ok


def main():
    results = []

    cal = ecdlab.calibrate(1e-3)
    results.append(check("calibration N(1e-3)", abs(cal["n"] + 50.6606) < 1e-4, f"N = {cal['n']:.6f}"))

    # the free propagator conjugates under s -> -s
    x, xp = [0.3, 0.1, -0.2, 0.05], [0.0, 0.0, 0.0, 0.0]
    g, gm = ecdlab.free_propagator(x, xp, 0.7), ecdlab.free_propagator(x, xp, -0.7)
    results.append(check("propagator conjugation", abs(g - gm.conjugate()) < 1e-14 * abs(g), f"|G| = {abs(g):.6e}"))

    # light-cone profile tends to 2π/ρ
    rho = 50.0
    f = ecdlab.light_cone_profile(-rho * rho)
    results.append(check("profile tail", abs(f * rho / (2 * math.pi) - 1) < 1e-5, f"f(50) = {f:.15f}"))

    r1, r2 = 1.0, 10.0
    j1, j2 = ecdlab.free_charge_j0(r1, 1e-3), ecdlab.free_charge_j0(r2, 1e-3)
    slope = math.log(j2 / j1) / math.log(r2 / r1)
    results.append(check("charge tail slope", abs(slope + 1) < 0.02, f"slope = {slope:.5f}"))

    s, gamma, gamma_dot = ecdlab.integrate_orbit([0, 0, 0, 0], [1, 0, 0, 0], (0.0, 10.0), 1e-3, e=[0.5, 0, 0])
    m2 = [v[0] ** 2 - v[1] ** 2 - v[2] ** 2 - v[3] ** 2 for v in gamma_dot]
    drift = max(abs(m - m2[0]) for m in m2)
    results.append(check("orbit mass drift", drift < 1e-10 and len(s) == 10001, f"drift = {drift:.2e}"))

    good = ecdlab.consistency_residual(1e-3, [0.0, 0.5])
    bad = ecdlab.consistency_residual(1e-3, [0.0, 0.5], n_factor=2.0)
    results.append(check("consistency and control", good < 1e-6 and bad > 0.1, f"{good:.2e} vs {bad:.2e}"))

    try:
        ecdlab.calibrate(-1.0)
        results.append(check("negative epsilon rejected", False))
    except ValueError as e:
        results.append(check("negative epsilon rejected", "calibration.epsilon" in str(e)))

    results.append(check("scenario validates", ecdlab.validate_scenario(str(SCENARIOS / "free_ecd.toml")) == []))
    with tempfile.TemporaryDirectory() as out:
        m = ecdlab.run_scenario(str(SCENARIOS / "classical_orbit.toml"), out=out, workers=1)
        results.append(check("scenario run", m["passed"] and (pathlib.Path(out) / "trajectory.csv").exists()))
        bad_path = pathlib.Path(out) / "bad.toml"
        bad_path.write_text('schema = 1\nkind = "free-ec"\n')
        diags = ecdlab.validate_scenario(str(bad_path))
        results.append(check("bad kind diagnosed", len(diags) == 1 and "allowed kinds" in diags[0]))

    failed = results.count(False)
    print(f"{len(results) - failed}/{len(results)} smoke checks passed")
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
