"""Parameter scans, signal-strength sensitivity projection and a coordinate-descent optimiser."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import ALPHA_DOUBLE, ALPHA_SINGLE, GAMMA_NV, sensitivity_shot_noise
from .coherence import PROTOCOLS, fit_trace, simulate_protocol
from .model import DriveConfig, validate_hierarchy
from .noise import NoiseConfig
from .readout import FluorescenceModel

AXES = ("Omega1", "Omega2", "g", "detuning")
OBJECTIVES = ("T2", "amplitude", "eta")
ROW_FIELDS = ("value", "objective", "uncertainty", "T2", "T2_err", "amplitude", "amplitude_err",
              "frequency", "p", "hierarchy_ok", "error")


def default_alpha(cfg: DriveConfig) -> float:
    return ALPHA_DOUBLE if cfg.Omega2 > 0 else ALPHA_SINGLE


@dataclass(frozen=True)
class ScanSpec:
    """One-dimensional scan of ``axis`` over ``values``.

    Every point reuses ``seed`` (common random numbers). The signal stays
    at the same offset from the ``branch`` resonance omega0 + b1 Omega1 +
    b2 Omega2 / 2 while a drive is scanned; on the ``detuning`` axis the
    value is that offset. ``t_final`` is the simulated record length.
    """

    axis: str
    values: tuple
    cfg: DriveConfig
    noise: NoiseConfig
    t_final: float
    n_traj: int = 200
    seed: int = 0
    objective: str = "T2"
    protocol: str | None = None
    branch: tuple = (1, 1)
    fm: FluorescenceModel = field(default_factory=FluorescenceModel)
    alpha: float | None = None
    time_unit_s: float = 1.0
    gamma: float = GAMMA_NV
    min_ratio: float = 5.0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown scan axis {self.axis!r}; choose from {AXES}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; choose from {OBJECTIVES}")
        if self.protocol is not None and self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("scan grid must be a nonempty 1-D sequence")
        d = np.diff(v)
        if v.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("scan grid must be strictly monotone")
        if self.n_traj < 1:
            raise ValueError("need at least one trajectory per point")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @property
    def kind(self) -> str:
        if self.protocol is not None:
            return self.protocol
        if self.axis in ("g", "detuning") or self.cfg.g > 0:
            return "signal"
        return "drive"

    def offset(self, cfg: DriveConfig) -> float:
        b1, b2 = self.branch
        return cfg.omega_s - (cfg.omega0 + b1 * cfg.Omega1 + b2 * cfg.Omega2 / 2)

    def point_cfg(self, value) -> DriveConfig:
        b1, b2 = self.branch
        if self.axis == "detuning":
            off, cfg = value, self.cfg
        else:
            off, cfg = self.offset(self.cfg), self.cfg.with_(**{self.axis: value})
        return cfg.with_(omega_s=cfg.omega0 + b1 * cfg.Omega1 + b2 * cfg.Omega2 / 2 + off)


@dataclass
class ScanResult:
    spec: ScanSpec
    rows: list

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def columns(self) -> dict:
        cols = {k: self.column(k) for k in ROW_FIELDS if k not in ("error", "hierarchy_ok")}
        cols["hierarchy_ok"] = np.array([int(r["hierarchy_ok"]) for r in self.rows])
        cols["error"] = np.array([r["error"] or "" for r in self.rows], dtype=object)
        return cols


def _eta(T2, spec: ScanSpec, cfg: DriveConfig) -> float:
    alpha = spec.alpha or default_alpha(cfg)
    return sensitivity_shot_noise(spec.fm.n_ph, T2 * spec.time_unit_s, alpha, spec.fm.C, spec.gamma)


def evaluate_point(spec: ScanSpec, value) -> dict:
    """One scan row; simulation or fit failures are recorded, not raised."""
    row = dict.fromkeys(ROW_FIELDS, math.nan)
    row.update(value=float(value), error=None, hierarchy_ok=False)
    try:
        cfg = spec.point_cfg(value)
        row["hierarchy_ok"] = validate_hierarchy(cfg, spec.min_ratio).ok
        tr = simulate_protocol(cfg, spec.noise, spec.kind, spec.t_final, spec.n_traj, spec.seed)
    except (ValueError, RuntimeError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    transfer = 1.0 - tr.mean
    k = int(np.argmax(transfer))
    row["amplitude"], row["amplitude_err"] = float(transfer[k]), float(tr.sem[k])
    res = fit_trace(tr, spec.kind)
    if res.fit is None:
        row["error"] = res.error
    else:
        row.update(T2=res.T2, T2_err=res.T2_err, frequency=res.fit.frequency, p=res.fit.p)
    if spec.objective == "amplitude":
        row["objective"], row["uncertainty"] = row["amplitude"], row["amplitude_err"]
    elif spec.objective == "T2":
        row["objective"], row["uncertainty"] = row["T2"], row["T2_err"]
    elif math.isfinite(row["T2"]):
        eta = _eta(row["T2"], spec, cfg)
        row["objective"] = eta
        # eta ~ T2^(-1/2)
        row["uncertainty"] = 0.5 * eta * row["T2_err"] / row["T2"]
    return row


def run_scan(spec: ScanSpec) -> ScanResult:
    """One row per grid value, evaluated in grid order with the same seed."""
    return ScanResult(spec, [evaluate_point(spec, v) for v in spec.values])


@dataclass
class SensitivityProjection:
    g: np.ndarray
    T2: np.ndarray
    eta: np.ndarray
    reference_T2: float | None
    reference_eta: float | None

    def columns(self) -> dict:
        ref = np.full(self.g.shape, math.nan if self.reference_eta is None else self.reference_eta)
        return {"g": self.g, "T2": self.T2, "eta": self.eta, "eta_no_signal": ref}


def project_sensitivity(scan: ScanResult, fm: FluorescenceModel | None = None, reference_T2=None,
                        alpha=None, time_unit_s=None, gamma=None) -> SensitivityProjection:
    """eta(g) with the sensing time tau set to the fitted T2(g).

    The repetition count and hence sigma(t) are held fixed, so
    eta = 1 / (gamma alpha C sqrt(N_ph tau)). ``reference_T2`` is the
    coherence time without signal; its eta is the no-signal reference line.
    Rows without a fitted T2 are skipped with a warning.
    """
    spec = scan.spec
    spec = replace(spec, fm=fm or spec.fm, alpha=alpha if alpha is not None else spec.alpha,
                   time_unit_s=time_unit_s or spec.time_unit_s, gamma=gamma or spec.gamma)
    g, T2, eta = [], [], []
    for r in scan.rows:
        if not (math.isfinite(r["T2"]) and r["T2"] > 0):
            warnings.warn(f"scan row at {r['value']!r} has no fitted T2; skipped", stacklevel=2)
            continue
        cfg = spec.point_cfg(r["value"])
        g.append(cfg.g)
        T2.append(r["T2"])
        eta.append(_eta(r["T2"], spec, cfg))
    ref = None if reference_T2 is None else _eta(reference_T2, spec, spec.cfg)
    return SensitivityProjection(np.array(g), np.array(T2), np.array(eta), reference_T2, ref)


@dataclass
class OptimizeResult:
    cfg: DriveConfig
    value: float
    history: list
    converged: bool
    n_evals: int


def optimize(objective, bounds: dict, cfg: DriveConfig, n_grid=7, max_sweeps=10, max_evals=200,
             log=False) -> OptimizeResult:
    """Maximise ``objective(cfg)`` by coordinate descent on a fixed grid over Omega1 and Omega2.

    ``bounds`` maps ``Omega1``/``Omega2`` to (lo, hi); equal ends pin a
    coordinate. The search starts from the grid point nearest the middle and
    sweeps each coordinate in turn, moving to the best grid value; ties go to
    the smaller Omega2 (less drive power), then the smaller Omega1. A sweep
    without a move ends the search. Exhausting ``max_evals`` or
    ``max_sweeps`` returns the best point so far with ``converged=False``.
    The objective should use fixed seeds so repeated points agree.
    """
    names = [k for k in ("Omega1", "Omega2") if k in bounds]
    if not names:
        raise ValueError("bounds must name Omega1 and/or Omega2")
    grids = {}
    for k in names:
        lo, hi = bounds[k]
        if not 0 <= lo <= hi:
            raise ValueError(f"bad bounds for {k}: {bounds[k]!r}")
        n = 1 if lo == hi else n_grid
        grids[k] = np.geomspace(lo, hi, n) if lo > 0 and log else np.linspace(lo, hi, n)
    idx = {k: (len(grids[k]) - 1) // 2 for k in names}
    cache, history = {}, []

    def key_of(ix):
        return tuple(ix[k] for k in names)

    def cfg_of(ix):
        return cfg.with_(**{k: float(grids[k][ix[k]]) for k in names})

    def value(ix):
        key = key_of(ix)
        if key not in cache:
            if len(cache) >= max_evals:
                raise _Budget
            c = cfg_of(ix)
            v = float(objective(c))
            cache[key] = v if math.isfinite(v) else -math.inf
            history.append({**{k: float(grids[k][ix[k]]) for k in names}, "objective": v})
        return cache[key]

    def rank(ix):
        # larger objective first; then smaller Omega2, then smaller Omega1
        return (-value(ix), ix.get("Omega2", 0), ix.get("Omega1", 0))

    converged = False
    try:
        for _ in range(max_sweeps):
            moved = False
            for k in names:
                cands = [dict(idx, **{k: j}) for j in range(len(grids[k]))]
                best = min(cands, key=rank)
                if best[k] != idx[k]:
                    idx, moved = best, True
            if not moved:
                converged = True
                break
    except _Budget:
        pass
    best_key = max(cache, key=lambda kk: (cache[kk], tuple(-x for x in reversed(kk))))
    best_ix = dict(zip(names, best_key))
    return OptimizeResult(cfg_of(best_ix), cache[best_key], history, converged, len(cache))


class _Budget(Exception):
    pass


def t2_objective(noise: NoiseConfig, t_final, n_traj=64, seed=0, kind="drive"):
    """Fitted T2 of ``kind`` with fixed seeds, for :func:`optimize`; failures score -inf."""
    def f(cfg):
        res = fit_trace(simulate_protocol(cfg, noise, kind, t_final, n_traj, seed), kind)
        return res.T2 if res.fit is not None else -math.inf
    return f
