"""Acceptance suite: one check per criterion, each driven through the harness.

Every criterion is a function returning a :class:`CriterionResult`. The runs
behind it are plain harness configurations, so the determinism criterion can
replay each of them and compare the emitted bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import harness

PI = math.pi


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    configs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.title}: {self.detail}"


class _Runner:
    """Runs harness configurations and remembers their CSV output."""

    def __init__(self, jobs: int | None = None):
        self.jobs = jobs
        self.configs: list[dict] = []
        self.outputs: list[str] = []

    def __call__(self, doc: dict) -> list[harness.ResultRow]:
        cfg = harness.config_from_dict(doc)
        rows = harness.run(cfg, self.jobs)
        self.configs.append(doc)
        self.outputs.append(harness.to_csv(rows))
        return rows


def _fid(rows, **match) -> list[float]:
    return [r.fidelity for r in rows if all(r.params.get(k) == v for k, v in match.items())]


def _result(n, title, passed, detail, runner) -> CriterionResult:
    return CriterionResult(n, title, bool(passed), detail, runner.configs, runner.outputs)


# ------------------------------------------------------------ criteria

N_TH_GRID = [0.0, 0.25, 0.5, 1.0]


def criterion_1(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "fig1c", "sweep": {"setup": ["cavity"], "n_th": N_TH_GRID}})
    f = [r.fidelity for r in rows]
    spread = max(f) - min(f)
    ok = min(f) >= 0.99 and spread <= 1e-3
    return _result(1, "noise immunity", ok, f"min F = {min(f):.6f}, spread = {spread:.2e}", run)


def criterion_2(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "fig1c", "sweep": {"setup": ["qubit_direct"], "n_th": N_TH_GRID}})
    f = [r.fidelity for r in rows]
    ok = all(b < a for a, b in zip(f, f[1:]))
    return _result(2, "degradation without cavities", ok, "F = " + ", ".join(f"{x:.5f}" for x in f), run)


def crossing(kts, fs, level=0.99):
    """Smallest grid duration from which F stays at or above ``level``."""
    best = None
    for kt, f in sorted(zip(kts, fs), reverse=True):
        if f >= level:
            best = kt
        else:
            break
    return best


def criterion_3(jobs=None):
    run = _Runner(jobs)
    grid = [6.0, 8.0, 9.0, 10.0, 12.0]
    rows = run({"experiment": "fig2a", "sweep": {"n_th": [0.0, 0.5, 1.0], "kappa_T": grid}})
    parts, ok = [], True
    for n in (0.0, 0.5, 1.0):
        t_star = crossing(grid, _fid(rows, n_th=n))
        ok &= t_star is not None and t_star <= 10.0
        parts.append(f"n_th={n}: T*={t_star}")
    return _result(3, "finite duration", ok, ", ".join(parts), run)


def criterion_4(jobs=None):
    run = _Runner(jobs)
    dtaus = [0.02, 0.03, 0.05, 0.07, 0.1, 0.14, 0.2]
    n_grid = [0.25, 0.5, 1.0]
    rows = run({"experiment": "fig2b", "sweep": {"n_th": n_grid, "delta_tau": dtaus}})
    inf = np.array([[1.0 - f for f in _fid(rows, n_th=n)] for n in n_grid])
    slope = np.polyfit(np.log(dtaus), np.log(inf[1]), 1)[0]
    r2 = []
    for j in range(len(dtaus)):
        y = inf[:, j]
        coef = np.polyfit(n_grid, y, 1)
        resid = y - np.polyval(coef, n_grid)
        r2.append(1.0 - resid @ resid / ((y - y.mean()) @ (y - y.mean())))
    ok = abs(slope - 2.0) <= 0.3 and min(r2) >= 0.98
    return _result(4, "timing error", ok, f"slope = {slope:.3f}, min R^2 over delta_tau = {min(r2):.4f}", run)


def criterion_5(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "fig2c", "sweep": {"n_th": [0.0, 0.25], "beta": [0.9], "phi": [0.0, PI / 2, PI]}})
    parts, ok = [], True
    for n in (0.0, 0.25):
        f0, fh, fp = _fid(rows, n_th=n)
        ok &= abs(f0 - fp) <= 1e-6 and min(f0, fp) - fh >= 0.01
        parts.append(f"n_th={n}: F(0)={f0:.5f} F(pi/2)={fh:.5f} F(pi)={fp:.5f}")
    return _result(5, "chirality and phase", ok, "; ".join(parts), run)


def criterion_6(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "fig2d"})
    f = [r.fidelity for r in rows]
    ok = all(b <= a + 1e-12 for a, b in zip(f, f[1:]))
    return _result(6, "retardation", ok, "F = " + ", ".join(f"{x:.5f}" for x in f), run)


def criterion_7(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "mps_vs_me"})
    parts, ok = [], True
    for r in rows:
        d = r.diagnostics
        ok &= d["abs_diff"] <= 1e-2 and d["bond_change"] < 1e-3
        parts.append(f"n_th={r.params['n_th']}: |dF|={d['abs_diff']:.2e}, bond doubling {d['bond_change']:.1e}")
    return _result(7, "cross-engine oracle", ok, "; ".join(parts), run)


def criterion_8(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "noise_leakage", "sweep": {"kappa_T": [20.0]}})
    tol = {"exp_pair": 1e-8, "const_exp_pair": 1e-6}
    ok = all(r.diagnostics["relative_error"] <= tol[r.params["pulse_family"]] for r in rows)
    detail = ", ".join(f"{r.params['pulse_family']} rel err {r.diagnostics['relative_error']:.1e}" for r in rows)
    return _result(8, "noise-cancellation closed forms", ok, detail, run)


def qec_crossover(ps, corrected, plain):
    """First P where the corrected curve drops below the plain one (linear interpolation)."""
    diff = np.asarray(corrected) - np.asarray(plain)
    for k in range(1, len(ps)):
        if diff[k - 1] > 0 >= diff[k]:
            return ps[k - 1] + (ps[k] - ps[k - 1]) * diff[k - 1] / (diff[k - 1] - diff[k])
    return None


def criterion_9(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "fig2e"})
    ps = sorted({r.params["P"] for r in rows})
    fc, fn = _fid(rows, code="binomial_parity"), _fid(rows, code="none")
    beats = all(c > n for p, c, n in zip(ps, fc, fn) if 0 < p <= 0.2)
    cross = qec_crossover(ps, fc, fn)
    ok = beats and cross is not None and 0.26 <= cross <= 0.32
    return _result(9, "QEC crossover", ok, f"beats no-code for 0 < P <= 0.2: {beats}, crossover P = {cross}", run)


def criterion_10(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "fig2f"})
    c0, c5 = _fid(rows, code="binomial_mod3", n_th=0.0)[0], _fid(rows, code="binomial_mod3", n_th=0.5)[0]
    u0, u5 = _fid(rows, code="none", n_th=0.0)[0], _fid(rows, code="none", n_th=0.5)[0]
    margin = min(c0 - u0, c5 - u5)
    ok = abs(c0 - c5) <= 1e-2 and margin >= 0.05
    detail = f"corrected {c0:.5f} / {c5:.5f} (|d| = {abs(c0 - c5):.1e}), margin over no code {margin:.4f}"
    return _result(10, "thermal-reservoir QEC", ok, detail, run)


def criterion_11(jobs=None):
    run = _Runner(jobs)
    cat = f"cat@{math.sqrt(2.0)!r}"
    rows = run({"experiment": "cat_compare", "sweep": {"code": ["none", "binomial_parity", cat]}})
    ps = sorted({r.params["P"] for r in rows})
    fcat, fbin, fn = _fid(rows, code=cat), _fid(rows, code="binomial_parity"), _fid(rows, code="none")
    beats = all(c > n for p, c, n in zip(ps, fcat, fn) if 0 < p <= 0.2)
    below = all(c <= b + 1e-12 for c, b in zip(fcat, fbin))
    ok = beats and below
    return _result(11, "cat code", ok, f"beats no-code for 0 < P <= 0.2: {beats}, never above binomial: {below}", run)


def criterion_12(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "ensembles"})
    use = [r for r in rows if r.diagnostics["x"] >= 100]
    x = np.array([r.diagnostics["x"] for r in use])
    y = np.array([r.diagnostics["one_minus_fidelity"] for r in use])
    c_fit = float(y @ (1 / x) / ((1 / x) @ (1 / x)))
    ok = 2.0 <= c_fit <= 3.0
    spread = ", ".join(f"{r.diagnostics['prefactor']:.2f}" for r in use)
    return _result(12, "ensemble scaling", ok, f"fitted C = {c_fit:.3f} (pointwise x(1-F): {spread})", run)


def threshold(deltas, fs, level=0.99):
    """Largest Delta before F first falls below ``level`` (linear interpolation)."""
    for k in range(1, len(deltas)):
        if fs[k - 1] >= level > fs[k]:
            return deltas[k - 1] + (deltas[k] - deltas[k - 1]) * (fs[k - 1] - level) / (fs[k - 1] - fs[k])
    return None


def criterion_13(jobs=None):
    run = _Runner(jobs)
    deltas = [0.0, 0.015, 0.02, 0.025, 0.03, 0.035]
    n_grid = [0.0, 0.5, 1.0]
    rows = run({"experiment": "mismatch", "sweep": {"n_th": n_grid, "mode": ["hamiltonian", "rotating"],
                                                    "delta": deltas}})
    gap = max(abs(a - b) for a, b in zip(_fid(rows, mode="hamiltonian"), _fid(rows, mode="rotating")))
    ths = {n: threshold(deltas, _fid(rows, n_th=n, mode="hamiltonian")) for n in n_grid}
    # a curve that stays above 0.99 on the whole grid has its threshold beyond it
    found = [t for t in ths.values() if t is not None]
    t_star = min(found) if found else None
    ok = t_star is not None and 0.02 <= t_star <= 0.03 and gap <= 1e-8
    parts = ", ".join(f"n_th={n}: {t if t is None else round(t, 4)}" for n, t in ths.items())
    return _result(13, "frequency mismatch", ok, f"Delta*/kappa = {t_star} ({parts}), route gap {gap:.1e}", run)


def criterion_14(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "fig3b", "sweep": {"alpha": [1.0]}})
    f = [r.fidelity for r in rows]
    mono = all(b <= a + 1e-12 for a, b in zip(f, f[1:]))
    ok = f[0] >= 0.95 and mono
    return _result(14, "closed system", ok, "F(chi/kappa = 0, .5, 1, 2, 4) = " + ", ".join(f"{x:.4f}" for x in f), run)


def criterion_15(jobs=None):
    run = _Runner(jobs)
    rows = run({"experiment": "beamsplitter4", "sweep": {"theta": [PI / 4]}})
    dev = rows[0].diagnostics["max_deviation"]
    return _result(15, "beamsplitter mapping", dev <= 1e-3, f"max deviation {dev:.2e}", run)


CRITERIA = {n: globals()[f"criterion_{n}"] for n in range(1, 16)}


def criterion_16(previous: list[CriterionResult], jobs=None) -> CriterionResult:
    """Replay every run behind ``previous`` and compare emitted bytes."""
    run = _Runner(jobs)
    mismatched = []
    total = 0
    for res in previous:
        for doc, text in zip(res.configs, res.outputs):
            total += 1
            run(doc)
            if run.outputs[-1] != text:
                mismatched.append(f"{res.number}:{doc['experiment']}")
    ok = total > 0 and not mismatched
    detail = f"{total} runs replayed, {len(mismatched)} differ" + (f" ({', '.join(mismatched)})" if mismatched else "")
    return _result(16, "determinism", ok, detail, run)


def run_all(selected=None, jobs=None, echo=print) -> list[CriterionResult]:
    selected = sorted(selected or list(CRITERIA) + [16])
    # determinism replays the other criteria, so they run even when not selected
    needed = list(CRITERIA) if 16 in selected else [n for n in selected if n != 16]
    results = []
    for n in needed:
        res = CRITERIA[n](jobs)
        if n in selected:
            echo(res.line())
        results.append(res)
    if 16 in selected:
        res = criterion_16(results, jobs)
        echo(res.line())
        results.append(res)
    return [r for r in results if r.number in selected]
