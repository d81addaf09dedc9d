"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``CRITERION n: PASS|FAIL`` line; the lines are also
repeated in the terminal summary.  Bundled scenarios run once per session
and are shared between criteria.
"""

import functools

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from semirad import ensemble
from semirad.gridlab import TimeSampling, UniformGrid3
from semirad.oracle import dipole_history, flux_scan
from semirad.scenario import (
    build_source,
    compare_certificates,
    load_scenario,
    parse_scenario,
    run_scenario,
)

TOL = 1e-6
THREADS = 4
CRITERION_SCENARIOS = {
    1: ("free_interference", "five_component"),
    2: ("free_interference",),
    3: ("free_decay",),
    4: ("larmor_uniform_force",),
    5: ("mixed_hbar",),
    6: ("newtonian",),
    7: ("kg_plus", "kg_minus", "kg_mixed"),
    8: ("dirac_mixed", "dirac_plus"),
}
ALL_SCENARIOS = sorted({s for v in CRITERION_SCENARIOS.values() for s in v})
DIPOLE_OMEGA = 0.5


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@functools.lru_cache(maxsize=None)
def run(name, refined=False, threads=THREADS):
    scn = load_scenario(name)
    if refined:
        raw = scn.refined().to_dict()
        # residual checks were established at base resolution; the refined
        # run only re-measures physical quantities
        raw.setdefault("analysis", {})["continuity"] = False
        scn = parse_scenario(raw)
    return run_scenario(scn, threads=threads).certificate.to_dict()


def theorem_holds(cert, min_directions=6, M=4):
    """Criterion-1 conditions on one certificate."""
    certs = cert["residuals"]["certificates"]
    dirs = {tuple(c["direction"]) for c in certs}
    orders = {c["m"] for c in certs}
    ok = len(dirs) >= min_directions and orders == set(range(1, M + 1))
    for c in certs:
        ok &= (c["degree"] is not None and 0 <= c["degree"] <= c["m"] - 1
               and c["fit_residual"] <= TOL and c["derivative_ratio"] <= TOL)
    worst = max(max(c["fit_residual"], c["derivative_ratio"]) for c in certs)
    return bool(ok), len(dirs), worst


@functools.lru_cache(maxsize=None)
def dipole_scan(refined=False):
    h, dt, n = (0.1, 0.05, 121) if refined else (0.2, 0.1, 61)
    t0 = np.pi / (2 * DIPOLE_OMEGA)
    hist = dipole_history(UniformGrid3.centered(2.4, h), TimeSampling.centered(t0, dt, n), omega=DIPOLE_OMEGA)
    return flux_scan(hist, [50.0, 100.0, 200.0, 400.0], t0, 4, 8)


def test_criterion_1_non_radiation_theorem():
    parts, ok = [], True
    for name in CRITERION_SCENARIOS[1]:
        good, nd, worst = theorem_holds(run(name))
        ok &= good
        parts.append(f"{name}: {nd} directions, worst residual {worst:.1e}")
    report(1, ok, "; ".join(parts))


def test_criterion_2_density_beats_at_energy_difference():
    scn = load_scenario("free_interference")
    comps = scn.raw["state"]["components"]
    m, hbar = scn.physics["mass"], scn.physics["hbar"]
    energies = [hbar * np.sum(np.square(c["k_center"])) / (2 * m) for c in comps]
    expected = abs(energies[1] - energies[0])
    cert = run("free_interference")
    peak = cert["measurements"]["strongest_peak"]
    bin_width = cert["measurements"]["bin_width"]
    certified, _, _ = theorem_holds(cert)
    ok = peak is not None and abs(peak - expected) <= bin_width and certified
    report(2, ok, f"peak {peak:.4f} vs {expected:.4f}, bin {bin_width:.4f}, moments still certified: {certified}")


def test_criterion_3_far_field_decay():
    cert = run("free_decay")
    factors = load_scenario("free_decay").oracle["radii_factors"]
    free_exp = cert["measurements"]["oracle_b_exponent"]
    dip = dipole_scan()
    ok = (min(factors) <= 50 and max(factors) >= 400 and free_exp >= 1.9
          and abs(dip.b_exponent - 1.0) <= 0.05)
    report(3, ok, f"free |B| exponent {free_exp:.4f}, dipole exponent {dip.b_exponent:.4f}")


def test_criterion_4_larmor_recovery():
    cert = run("larmor_uniform_force")
    ratio = cert["measurements"]["larmor_ratio"]
    delta = cert["residuals"]["oracle_multipole_delta"]
    R0_ok = np.isclose(cert["measurements"]["R0"], 100 * cert["measurements"]["source_extent"])
    ok = cert["checks"]["larmor"]["passed"] and 0.95 <= ratio <= 1.05 and delta <= 0.03 and R0_ok
    report(4, ok, f"P/P_Larmor {ratio:.4f}, oracle vs multipole {delta:.1e}")


def test_criterion_5_mixed_state():
    scn = load_scenario("mixed_hbar")
    hbars = {m.get("hbar", scn.physics["hbar"]) for m in scn.raw["state"]["members"]}
    good, nd, worst = theorem_holds(run("mixed_hbar"))
    ok = good and len(scn.raw["state"]["members"]) == 3 and {1.0, 2.0} <= hbars
    report(5, ok, f"{nd} directions, hbar values {sorted(hbars)}, worst residual {worst:.1e}")


def test_criterion_6_newtonian_ensemble():
    scn = load_scenario("newtonian")
    ens = build_source(scn).ens
    errs, certified = [], True
    for n in scn.directions:
        chk = ensemble.ensemble_moment_theorem_check(ens, n, 4, scn.sampling, scn.grid, TOL)
        certified &= chk.certification.passed
        errs.append(chk.closed_form_error)
    ok = certified and max(errs) <= 1e-8 and run("newtonian")["verdict"] == "pass"
    report(6, ok, f"certified {certified}, closed-form deviation {max(errs):.1e}")


def test_criterion_7_klein_gordon_branches():
    plus, minus, mixed = (run(n) for n in CRITERION_SCENARIOS[7])
    okp, _, wp = theorem_holds(plus)
    okm, _, wm = theorem_holds(minus)
    mixed_certified = mixed["checks"]["nonradiation_certified"]["certified"]
    scn = load_scenario("kg_mixed")
    w0 = scn.physics["mass"] * scn.physics["c"] ** 2 / scn.physics["hbar"]
    low = mixed["measurements"]["lowest_peak"]
    bw = mixed["measurements"]["bin_width"]
    ok = okp and okm and not mixed_certified and low is not None and low >= 2 * w0 - bw
    report(7, ok, f"plus {wp:.1e}, minus {wm:.1e}, mixed certified {mixed_certified}, "
                  f"lowest peak {low:.4f} vs 2mc^2/hbar {2 * w0:.4f}")


def test_criterion_8_dirac_zitterbewegung():
    mixed, plus = run("dirac_mixed"), run("dirac_plus")
    scn = load_scenario("dirac_mixed")
    w0 = scn.physics["mass"] * scn.physics["c"] ** 2 / scn.physics["hbar"]
    peaks = mixed["measurements"]["spectral_peaks"]
    bw = mixed["measurements"]["bin_width"]
    ratio = mixed["residuals"]["band_ratio"]
    ok = (bool(peaks) and min(peaks) >= 2 * w0 - bw and ratio <= 1e-4
          and plus["measurements"]["spectral_peaks"] == [])
    report(8, ok, f"mixed peaks {np.round(peaks, 4).tolist()}, band ratio {ratio:.1e}, "
                  f"plus peaks {plus['measurements']['spectral_peaks']}")


def test_criterion_9_conservation():
    parts, ok = [], True
    for name in ("free_interference", "five_component", "larmor_uniform_force", "mixed_hbar",
                 "kg_plus", "kg_minus", "kg_mixed", "newtonian"):
        cert = run(name)
        assert load_scenario(name).analysis.get("continuity", {}).get("stride", 1) == 1
        cont = cert["residuals"]["continuity"]
        ok &= cont <= 1e-6 and cert["residuals"]["charge_deviation"] <= 1e-8
        parts.append(f"{name} {cont:.0e}")
    for name in ("dirac_mixed", "dirac_plus"):
        cert = run(name)
        ok &= cert["residuals"]["luminal_excess"] <= 1e-12 and cert["residuals"]["charge_deviation"] <= 1e-8
        parts.append(f"{name} |j|-c rho {cert['residuals']['luminal_excess']:.0e}")
    report(9, ok, "continuity " + ", ".join(parts))


def test_criterion_10_determinism_and_refinement():
    problems = []
    for name in ALL_SCENARIOS:
        base = run(name)
        again = run(name, threads=2)
        if base != again:
            problems.append(f"{name} rerun differs")
        fine = run(name, refined=True)
        if fine["verdict"] != "pass":
            problems.append(f"{name} refined verdict {fine['verdict']}")
        for key, a, b, rel in compare_certificates(base, fine, 1e-3, skip={"residuals", "checks", "verdict"}):
            problems.append(f"{name} {key} {a} -> {b} ({rel:.1e})")
    d0, d1 = dipole_scan(), dipole_scan(refined=True)
    rel = abs(d0.b_exponent - d1.b_exponent) / d1.b_exponent
    if rel >= 1e-3:
        problems.append(f"dipole exponent {rel:.1e}")
    ok = not problems
    report(10, ok, f"{len(ALL_SCENARIOS)} scenarios rerun and refined" if ok else "; ".join(problems))
