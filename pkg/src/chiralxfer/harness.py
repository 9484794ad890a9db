"""Experiment registry, configuration, sweep runner and tabular output.

An experiment is a named sweep over physical parameters evaluated by one
engine (``master_eq``, ``mps`` or ``closed``). Each registry entry carries its
own default physics, sweep grid and numerics, so an experiment runs with an
empty configuration. Configurations are plain JSON documents of the form::

    {"experiment": "fig2a", "engine": "master_eq",
     "physics": {...}, "sweep": {"kappa_T": [...]}, "numerics": {...},
     "output_path": "fig2a.csv"}

and dotted ``key=value`` overrides can be layered on top of them.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import closed, master, mps, pulses, qec
from .errors import ChiralXferError, ConfigurationError
from .fock import StateVector, partial_trace, pure_fidelity

log = logging.getLogger(__name__)

ENGINES = ("master_eq", "mps", "closed")


# ------------------------------------------------------------ rows


@dataclass
class ResultRow:
    """One evaluated sweep point. ``fidelity`` is NaN when the point failed."""

    experiment: str
    params: dict
    fidelity: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        f = self.fidelity
        if not math.isnan(f) and not -1e-9 <= f <= 1.0 + 1e-6:
            raise ConfigurationError(f"fidelity {f} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "params": dict(self.params), "fidelity": self.fidelity,
                "diagnostics": dict(self.diagnostics)}

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRow":
        return cls(d["experiment"], dict(d["params"]), float(d["fidelity"]), dict(d.get("diagnostics", {})))


# ------------------------------------------------------------ physics helpers


def _schedule(ph: dict) -> pulses.PulseSchedule:
    kt = float(ph.get("kappa_T", 20.0))
    dtau = float(ph.get("delta_tau", 0.0))
    if ph.get("pulse_family", "exp_pair") == "const_exp_pair":
        return pulses.PulseSchedule.const_exp_pair(1.0, kt, dtau, float(ph.get("cutoff_eps", 1e-3)))
    return pulses.PulseSchedule.exp_pair(1.0, kt, dtau)


def _cutoff(ph: dict) -> int:
    c = ph.get("cutoff")
    return master.default_cutoff(float(ph.get("n_th", 0.0))) if c in (None, "auto") else int(c)


def _cavity_net(ph: dict) -> master.NetworkSpec:
    return master.cavity_network(
        float(ph.get("n_th", 0.0)), cutoff=_cutoff(ph), pulses=_schedule(ph),
        beta=float(ph.get("beta", 1.0)), phi=float(ph.get("phi", 0.0)),
    )


def _me_diag(res: master.TransferResult) -> dict:
    d = res.diagnostics
    return {"trace_error": d.get("trace_error", 0.0), "min_eigenvalue": d.get("min_eigenvalue", 0.0),
            "top_level_population": d.get("top_level_population", 0.0)}


def parse_code(name: str) -> qec.CodeSpec:
    """``none``, ``binomial_parity``, ``binomial_mod3`` or ``cat@<alpha>``."""
    if name.startswith("cat"):
        alpha = float(name.split("@", 1)[1]) if "@" in name else math.sqrt(2.0)
        return qec.CodeSpec(qec.CodeKind.CAT, alpha=alpha)
    try:
        kind = qec.CodeKind(name)
    except ValueError:
        raise ConfigurationError(f"unknown code {name!r}") from None
    return qec.CodeSpec(kind)


# ------------------------------------------------------------ point functions
# Each takes the merged parameter dict and the numerics dict and returns
# (fidelity, diagnostics). They are module-level so process pools can pickle them.


def _pt_transfer(ph, num):
    setup = ph.get("setup", "cavity")
    if setup == "qubit_direct":
        net = master.qubit_direct_network(float(ph.get("n_th", 0.0)), pulses=_schedule(ph))
    elif setup == "cavity":
        net = _cavity_net(ph)
    else:
        raise ConfigurationError(f"unknown setup {setup!r}")
    res = master.run_transfer(net, dt=num.get("dt"))
    return res.fidelity, _me_diag(res)


def _pt_fig2d(ph, num):
    net = _cavity_net(ph)
    grid = mps.TimeGrid.for_network(net, M=int(num.get("M", 400)), tau=float(ph.get("kappa_tau", 0.0)),
                                    bin_dim=num.get("bin_dim"))
    f, diag = mps.mps_fidelity(net, grid, max_bond=int(num.get("max_bond", 32)),
                               trunc_threshold=float(num.get("trunc_threshold", 1e-10)))
    diag["delay_bins"] = grid.l
    return f, diag


def _pt_mps_vs_me(ph, num):
    n_th = float(ph.get("n_th", 0.0))
    node_cut = num.get("mps_cutoff")
    node_cut = _cutoff(ph) if node_cut in (None, "auto") else int(node_cut)
    net = _cavity_net({**ph, "cutoff": node_cut})
    grid = mps.TimeGrid.for_network(net, M=int(num.get("M", 400)), bin_dim=num.get("bin_dim"))
    bond = int(num.get("max_bond", 32))
    trunc = float(num.get("trunc_threshold", 1e-10))
    f, diag = mps.mps_fidelity(net, grid, max_bond=bond, trunc_threshold=trunc)
    f2, _ = mps.mps_fidelity(net, grid, max_bond=2 * bond, trunc_threshold=trunc)
    f_me = master.qst_fidelity(_cavity_net({**ph, "cutoff": ph.get("cutoff", "auto")}), num.get("dt"))
    diag.update(fidelity_me=f_me, abs_diff=abs(f - f_me), fidelity_double_bond=f2,
                bond_change=abs(f2 - f), node_cutoff=node_cut, n_th=n_th)
    return f, diag


def _pt_qec(ph, num):
    code = parse_code(ph["code"])
    P = float(ph["P"])
    method = num.get("recovery", "gram_schmidt")
    if num.get("model", "kraus") == "kraus":
        return qec.qec_fidelity(code, P, method), {"model": "kraus"}
    n_th = float(ph.get("n_th", 0.0))
    cut = ph.get("cutoff")
    if cut in (None, "auto"):
        cut = qec_cutoff(code, n_th)
    f = qec.qec_fidelity_master(code, P, n_th, float(ph.get("n_th_prime", 0.0)), int(cut), method,
                                pulses=_schedule(ph), dt=num.get("dt"))
    return f, {"model": "master_eq", "cutoff": int(cut)}


def qec_cutoff(code: qec.CodeSpec, n_th: float) -> int:
    """Cavity cutoff for a lossy master-equation QEC run with injected ``n_th``."""
    base = code.cutoff
    if n_th <= 0:
        return base
    return max(base, master.default_cutoff(n_th, tol=2e-6) + 3)


def _pt_closed(ph, num):
    spec = closed.ClosedSpec(
        delta=1.0, n_modes=int(ph.get("n_modes", 3)), alpha=float(ph.get("alpha", 0.0)),
        pulses=pulses.PulseSchedule.exp_pair(float(ph.get("kappa_over_delta", 0.3)),
                                             float(ph.get("kappa_T", 20.0)) / float(ph.get("kappa_over_delta", 0.3))),
    )
    spec = spec.replace(chi=float(ph.get("chi", 0.0)) * spec.pulses.kappa_max)
    f, diag = closed.closed_fidelity(spec, num.get("dt"))
    return f, diag


def _pt_ensemble(ph, num):
    n_atoms = int(ph["n_atoms"])
    n_th = float(ph.get("n_th", 0.0))
    cut = ph.get("excitation_cutoff")
    net = master.ensemble_network(n_atoms, n_th, None if cut in (None, "auto") else int(cut), pulses=_schedule(ph))
    res = master.run_transfer(net, dt=num.get("dt"))
    diag = _me_diag(res)
    one_minus = 1.0 - res.fidelity
    x = (n_atoms + 1) ** 2 / n_th if n_th > 0 else float("inf")
    diag.update(x=x, one_minus_fidelity=one_minus, prefactor=one_minus * x,
                excitation_cutoff=net.nodes[0].ensemble_dim)
    return res.fidelity, diag


def _pt_mismatch(ph, num):
    net = master.mismatch_network(float(ph.get("delta", 0.0)), float(ph.get("n_th", 0.0)), ph.get("mode", "hamiltonian"),
                                  _cutoff(ph), pulses=_schedule(ph))
    res = master.run_transfer(net, dt=num.get("dt"))
    return res.fidelity, _me_diag(res)


def _pt_beamsplitter(ph, num):
    theta = float(ph["theta"])
    net = master.four_node_network(theta, float(ph.get("n_th", 0.0)), pulses=_schedule(ph))
    rho = master.beamsplitter_network(net, dt=num.get("dt"))
    expected = master.beamsplitter_expected(theta)
    f = pure_fidelity(rho, StateVector(rho.layout, expected.amplitudes))
    p2 = float(np.real(partial_trace(rho, ["node2"]).matrix[1, 1]))
    p4 = float(np.real(partial_trace(rho, ["node4"]).matrix[1, 1]))
    diag = {"pop_node2": p2, "pop_node4": p4, "expected_pop_node2": math.cos(theta) ** 2,
            "expected_pop_node4": math.sin(theta) ** 2,
            "max_deviation": max(abs(p2 - math.cos(theta) ** 2), abs(p4 - math.sin(theta) ** 2), 1.0 - f)}
    return f, diag


def _pt_noise_leakage(ph, num):
    s = _schedule(ph)
    value = pulses.noise_leakage(s, rtol=float(num.get("rtol", 1e-8)))
    exact = pulses.noise_leakage_closed_form(s)
    diag = {"leakage": value, "closed_form": exact, "relative_error": abs(value - exact) / exact}
    if s.family is pulses.PulseFamily.CONST_EXP_PAIR:
        diag["clamp_leakage"] = pulses.clamp_leakage(s)
    return 1.0 - value, diag


# ------------------------------------------------------------ registry


@dataclass(frozen=True)
class Experiment:
    id: str
    reproduces: str
    tolerance: str
    engines: tuple[str, ...]
    point: Callable
    physics: dict
    sweep: dict
    numerics: dict


_KT = [4.0, 6.0, 8.0, 9.0, 10.0, 12.0, 14.0, 16.0, 20.0]
_P_GRID = [round(0.02 * k, 2) for k in range(21)]
_SQRT2 = math.sqrt(2.0)

REGISTRY: dict[str, Experiment] = {e.id: e for e in (
    Experiment("fig1c", "transfer fidelity vs injected thermal occupation, with and without cavities",
               "cavity rows F >= 0.99 with spread <= 1e-3; qubit rows strictly decreasing",
               ("master_eq",), _pt_transfer, {"kappa_T": 20.0},
               {"setup": ["cavity", "qubit_direct"], "n_th": [0.0, 0.25, 0.5, 1.0]}, {"dt": 0.01}),
    Experiment("fig2a", "fidelity vs pulse duration kappa_max T",
               "F >= 0.99 reached at kappa_max T <= 10 for n_th <= 1",
               ("master_eq",), _pt_transfer, {}, {"n_th": [0.0, 0.5, 1.0], "kappa_T": _KT}, {"dt": 0.01}),
    Experiment("fig2b", "infidelity vs pulse timing error delta_tau",
               "log-log slope 2 +- 0.3 at n_th = 0.5; linear in n_th with R^2 >= 0.98",
               ("master_eq",), _pt_transfer, {"kappa_T": 20.0},
               {"n_th": [0.25, 0.5, 1.0], "delta_tau": [0.02, 0.03, 0.05, 0.07, 0.1, 0.14, 0.2]}, {"dt": 0.01}),
    Experiment("fig2c", "fidelity vs chirality beta and phase phi",
               "beta = 0.9: F(0) = F(pi) > F(pi/2) by >= 0.01",
               ("master_eq",), _pt_transfer, {"kappa_T": 20.0},
               {"n_th": [0.0, 0.25], "beta": [1.0, 0.95, 0.9, 0.8],
                "phi": [0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi]}, {"dt": 0.01}),
    Experiment("fig2d", "fidelity vs retardation kappa_max tau (MPS, beta < 1)",
               "F non-increasing over kappa_max tau in {0.1, 0.5, 1, 2}",
               ("mps",), _pt_fig2d, {"kappa_T": 20.0, "beta": 0.9, "phi": 0.0, "n_th": 0.0},
               {"kappa_tau": [0.1, 0.5, 1.0, 2.0]}, {"M": 400, "max_bond": 32, "trunc_threshold": 1e-10}),
    Experiment("fig2e", "parity binomial code vs no code under waveguide loss P",
               "corrected > uncorrected for P <= 0.2; crossover in [0.26, 0.32]",
               ("master_eq",), _pt_qec, {}, {"code": ["none", "binomial_parity"], "P": _P_GRID},
               {"model": "kraus", "recovery": "gram_schmidt"}),
    Experiment("fig2f", "mod-3 binomial code with a thermal loss reservoir",
               "P = 0.05, n'_th = 1: corrected F changes <= 1e-2 between n_th = 0 and 0.5 and beats no code by >= 0.05",
               ("master_eq",), _pt_qec, {"n_th_prime": 1.0, "kappa_T": 20.0},
               {"code": ["none", "binomial_mod3"], "n_th": [0.0, 0.5], "P": [0.05]},
               {"model": "master_eq", "recovery": "gram_schmidt", "dt": 0.01}),
    Experiment("fig3b", "closed two-cavity waveguide, fidelity vs Kerr chi and coherent occupation alpha",
               "F(chi = 0, alpha = 1) >= 0.95; F non-increasing in chi at alpha = 1",
               ("closed",), _pt_closed, {"n_modes": 3, "kappa_over_delta": 0.3, "kappa_T": 20.0},
               {"alpha": [0.0, 0.5, 1.0], "chi": [0.0, 0.5, 1.0, 2.0, 4.0]}, {"dt": 0.01}),
    Experiment("ensembles", "Atomic-ensemble nodes: infidelity vs x = (N+1)^2 / n_th",
               "1 - F = C / x with C in [2.0, 3.0] for x >= 100",
               ("master_eq",), _pt_ensemble, {"kappa_T": 20.0},
               {"n_th": [0.5, 1.0], "n_atoms": [8, 16, 32]}, {"dt": 0.01}),
    Experiment("mismatch", "Frequency mismatch Delta between the cavities",
               "F = 0.99 threshold Delta*/kappa_max in [0.02, 0.03]; both implementations agree to 1e-8",
               ("master_eq",), _pt_mismatch, {"kappa_T": 20.0},
               {"n_th": [0.0, 0.5, 1.0], "mode": ["hamiltonian", "rotating"],
                "delta": [0.0, 0.01, 0.015, 0.02, 0.025, 0.03, 0.035, 0.04]}, {"dt": 0.01}),
    Experiment("beamsplitter4", "Four-cavity network realizing a beamsplitter at angle theta",
               "output populations and coherences match the rotation to 1e-3",
               ("master_eq",), _pt_beamsplitter, {"kappa_T": 20.0},
               {"theta": [0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2]}, {"dt": 0.01}),
    Experiment("mps_vs_me", "Cross-engine check: MPS vs master equation in the chiral Markovian limit",
               "|F_MPS - F_ME| <= 1e-2; doubling max_bond changes F by < 1e-3",
               ("mps",), _pt_mps_vs_me, {"kappa_T": 20.0, "beta": 1.0},
               {"n_th": [0.0, 0.5]},
               {"M": 200, "max_bond": 32, "trunc_threshold": 1e-10, "dt": 0.01, "mps_cutoff": 8}),
    Experiment("cat_compare", "Cat code (alpha = 1, sqrt 2, 2) vs binomial parity code and no code",
               "cat(sqrt 2) beats no code for P <= 0.2 and never beats the binomial code",
               ("master_eq",), _pt_qec, {},
               {"code": ["none", "binomial_parity", "cat@1.0", f"cat@{_SQRT2!r}", "cat@2.0"], "P": _P_GRID},
               {"model": "kraus", "recovery": "gram_schmidt"}),
    Experiment("noise_leakage", "Residual noise leakage integral of the pulse pairs",
               "quadrature matches closed form to 1e-8 (exp_pair) and 1e-6 (const_exp_pair)",
               ("master_eq",), _pt_noise_leakage, {},
               {"pulse_family": ["exp_pair", "const_exp_pair"], "kappa_T": [10.0, 20.0, 30.0, 40.0]}, {"rtol": 1e-8}),
)}


# ------------------------------------------------------------ configuration


@dataclass
class ExperimentConfig:
    experiment: str
    engine: str
    physics: dict
    sweep: dict
    numerics: dict
    output_path: str | None = None

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "engine": self.engine, "physics": dict(self.physics),
                "sweep": {k: list(v) for k, v in self.sweep.items()}, "numerics": dict(self.numerics),
                "output_path": self.output_path}

    def points(self) -> list[dict]:
        keys = list(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key=value`` strings with dotted keys to a nested dict (copied)."""
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot descend into non-object at {key!r}")
        node[parts[-1]] = _parse_value(raw)
    return doc


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Merge a user document with the registry defaults of its experiment."""
    name = doc.get("experiment")
    if name not in REGISTRY:
        raise ConfigurationError(f"unknown experiment {name!r}; choose from {sorted(REGISTRY)}")
    exp = REGISTRY[name]
    unknown = set(doc) - {"experiment", "engine", "physics", "sweep", "numerics", "output_path"}
    if unknown:
        raise ConfigurationError(f"unknown top-level keys {sorted(unknown)}")
    physics = {**exp.physics, **doc.get("physics", {})}
    sweep = {k: list(v) for k, v in exp.sweep.items()}
    for k, v in doc.get("sweep", {}).items():
        sweep[k] = list(v) if isinstance(v, (list, tuple)) else [v]
    for k in list(physics):
        if k in sweep and k in doc.get("physics", {}):
            # a fixed physics value in the document pins that sweep axis
            sweep[k] = [physics.pop(k)]
    numerics = {**exp.numerics, **doc.get("numerics", {})}
    return ExperimentConfig(name, doc.get("engine", exp.engines[0]), physics, sweep, numerics, doc.get("output_path"))


def load_config(path: str | None, overrides=(), experiment: str | None = None) -> ExperimentConfig:
    doc = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    if experiment is not None:
        doc["experiment"] = experiment
    return config_from_dict(apply_overrides(doc, overrides))


# ------------------------------------------------------------ validation

_RANGES = {
    "beta": (0.0, 1.0),
    "n_th": (0.0, math.inf),
    "n_th_prime": (0.0, math.inf),
    "kappa_T": (1e-9, math.inf),
    "delta_tau": (0.0, math.inf),
    "kappa_tau": (0.0, math.inf),
    "P": (0.0, 1.0 - 1e-12),
    "theta": (0.0, math.pi / 2 + 1e-12),
    "chi": (0.0, math.inf),
    "alpha": (0.0, math.inf),
    "n_atoms": (1, math.inf),
}


def validate(config: ExperimentConfig) -> list[str]:
    """Static checks of a configuration; returns human-readable problems."""
    problems = []
    exp = REGISTRY.get(config.experiment)
    if exp is None:
        return [f"unknown experiment {config.experiment!r}"]
    if config.engine not in ENGINES:
        problems.append(f"unknown engine {config.engine!r}")
    elif config.engine not in exp.engines:
        problems.append(f"engine {config.engine!r} is not supported by {exp.id} (supported: {', '.join(exp.engines)})")
    for key, values in config.sweep.items():
        if not values:
            problems.append(f"sweep axis {key!r} is empty")
    values = {k: [v] for k, v in config.physics.items()}
    for k, v in config.sweep.items():
        values.setdefault(k, []).extend(v)
    for key, (lo, hi) in _RANGES.items():
        for v in values.get(key, []):
            if not isinstance(v, (int, float)) or not lo <= v <= hi:
                problems.append(f"{key} = {v!r} outside [{lo}, {hi}]")
    dt = config.numerics.get("dt")
    if dt is not None:
        if not isinstance(dt, (int, float)) or dt <= 0:
            problems.append(f"dt = {dt!r} must be positive")
        elif config.engine == "master_eq" and dt > 0.02:
            problems.append(f"kappa_max*dt = {dt} exceeds 0.02")
        elif config.engine == "closed" and dt > 0.02:
            problems.append(f"delta*dt = {dt} exceeds 0.02")
    for key in ("max_bond", "M"):
        v = config.numerics.get(key)
        if v is not None and (not isinstance(v, int) or v < 1):
            problems.append(f"{key} = {v!r} must be a positive integer")
    if config.engine == "mps" and "theta" in values:
        problems.append("the mps engine does not support the 4-node beamsplitter network")
    for code in values.get("code", []):
        try:
            parse_code(str(code))
        except (ValueError, ChiralXferError) as err:
            problems.append(f"code {code!r}: {err}")
    if not problems:
        # build the specs of the first point without running any physics
        try:
            _static_build(config)
        except ChiralXferError as err:
            problems.append(str(err))
        except (ValueError, KeyError, TypeError) as err:
            problems.append(f"invalid parameter: {err}")
    return problems


def _static_build(config: ExperimentConfig) -> None:
    for point in config.points():
        ph = {**config.physics, **point}
        if config.experiment in ("fig1c", "fig2a", "fig2b", "fig2c", "fig2d", "mps_vs_me"):
            if ph.get("setup", "cavity") == "cavity":
                _cavity_net(ph)
        elif config.experiment == "mismatch":
            master.mismatch_network(float(ph.get("delta", 0.0)), float(ph.get("n_th", 0.0)), ph.get("mode", "hamiltonian"))
        elif config.experiment == "ensembles":
            master.ensemble_network(int(ph["n_atoms"]), float(ph.get("n_th", 0.0)))
        elif config.experiment == "fig3b":
            closed.ClosedSpec(n_modes=int(ph.get("n_modes", 3)), alpha=float(ph.get("alpha", 0.0)))
        elif config.experiment == "noise_leakage":
            _schedule(ph)


# ------------------------------------------------------------ running


def _evaluate(args) -> ResultRow:
    exp_id, physics, numerics, point = args
    exp = REGISTRY[exp_id]
    ph = {**physics, **point}
    start = time.perf_counter()
    try:
        f, diag = exp.point(ph, numerics)
    except ChiralXferError as err:
        log.error("%s %s failed: %s", exp_id, point, err)
        return ResultRow(exp_id, point, float("nan"), {"error": f"{type(err).__name__}: {err}"})
    log.info("%s %s F=%.10f (%.1fs)", exp_id, point, f, time.perf_counter() - start)
    return ResultRow(exp_id, point, float(f), diag)


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        env = os.environ.get("CHIRALXFER_JOBS")
        jobs = int(env) if env else 1
    if jobs < 1:
        raise ConfigurationError("jobs must be at least 1")
    return jobs


def run(config: ExperimentConfig, jobs: int | None = None) -> list[ResultRow]:
    """Evaluate every sweep point; rows come back in sweep order."""
    problems = validate(config)
    if problems:
        raise ConfigurationError("invalid configuration: " + "; ".join(problems))
    tasks = [(config.experiment, config.physics, config.numerics, p) for p in config.points()]
    jobs = resolve_jobs(jobs)
    if jobs == 1 or len(tasks) <= 1:
        return [_evaluate(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(_evaluate, tasks))


# ------------------------------------------------------------ output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def _columns(rows: list[ResultRow]) -> tuple[list[str], list[str]]:
    params, diags = [], set()
    for r in rows:
        for k in r.params:
            if k not in params:
                params.append(k)
        diags.update(r.diagnostics)
    return params, sorted(diags)


def to_csv(rows: list[ResultRow]) -> str:
    params, diags = _columns(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["experiment", *params, "fidelity", *diags])
    for r in rows:
        writer.writerow([r.experiment, *(_fmt(r.params.get(k)) for k in params), _fmt(r.fidelity),
                         *(_fmt(r.diagnostics.get(k)) for k in diags)])
    return buf.getvalue()


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def to_json(rows: list[ResultRow]) -> str:
    return json.dumps([_plain(r.to_dict()) for r in rows], indent=2) + "\n"


def emit(rows: list[ResultRow], fmt: str = "csv", path=None) -> str:
    """Serialize rows as CSV or JSON; write to ``path`` when given."""
    if fmt == "csv":
        text = to_csv(rows)
    elif fmt == "json":
        text = to_json(rows)
    else:
        raise ConfigurationError(f"unknown format {fmt!r}")
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_json(path_or_text: str) -> list[ResultRow]:
    text = path_or_text
    if not path_or_text.lstrip().startswith("["):
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    return [ResultRow.from_dict(d) for d in json.loads(text)]


def describe() -> list[tuple[str, str, str, str]]:
    """``(id, engines, reproduces, tolerance)`` for every registry entry."""
    return [(e.id, ",".join(e.engines), e.reproduces, e.tolerance) for e in REGISTRY.values()]
