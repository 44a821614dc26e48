"""Monte Carlo coherence measurements and noise calibration.

Noisy ensembles are integrated in the first interaction picture (RWA on the
carrier only): the noise channels act identically there and the carrier
cycles, which carry no noise physics, no longer set the step size.
:func:`cddsense.propagate.rwa_error` bounds the approximation.

Protocols, all sampled at multiples of the first-drive period where the
first drive is on (so its rotation drops out):

``ramsey``  drives and signal off; start in |+x>, record P(+x) in IP1.
``drive``   Rabi oscillation of the outermost drive. Single drive: start in
            |0>, record P(0) densely. Double drive: start in the dressed state
            |+x>, record P(+x) in IP2 while the second drive rotates it.
``signal``  signal-induced Rabi oscillation between the dressed states of the
            outermost drive (double: eigenstates of the second-drive axis;
            single: |+-x>), recorded in IP2 on the strobe grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import FitError, RabiFit, fit_damped_rabi
from .model import TWO_PI, DriveConfig, Frame, ip_hamiltonian
from .noise import NoiseConfig, noisy_template, paths_for_seeds
from .readout import sensing_basis
from .propagate import PropagationSpec, TraceRecord, change_frame, integrate, relax_population

PROTOCOLS = ("ramsey", "drive", "signal")
CHUNK = 32


@dataclass
class EnsembleTrace:
    t: np.ndarray
    mean: np.ndarray
    sem: np.ndarray
    n_traj: int
    per_traj: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def as_trace(self) -> TraceRecord:
        """Population transferred out of the readout state, as ``p1``."""
        return TraceRecord(self.t, 1.0 - self.mean, Frame.IP2, p1_err=self.sem, meta=self.meta)


def trajectory_seeds(seed, n):
    """Children of the master seed, one per trajectory (the splitting rule)."""
    return np.random.SeedSequence(seed).spawn(n)


def run_ensemble(cfg: DriveConfig, noise: NoiseConfig, psi0, readout, t_final, n_traj, seed,
                 sample_dt=None, strobe_every=None, readout_frame=Frame.IP2,
                 frame=Frame.IP1, keep_trajectories=False) -> EnsembleTrace:
    """Mean population |<readout|psi(t)>|^2 over ``n_traj`` noise realisations.

    Sampling is either every ``strobe_every`` first-drive periods or every
    ``sample_dt``. T1 relaxation from ``noise.T1`` is applied exactly after
    the unitary part. Trajectories are processed in fixed-size chunks and
    reduced in index order, so results do not depend on thread count.
    """
    if Frame(frame) in (Frame.Lab, Frame.IP1):
        H = noisy_template(cfg, frame)
    elif noise.is_quiet:
        H = ip_hamiltonian(cfg, frame)
    else:
        raise ValueError("noise is modelled in the lab frame or the first interaction picture")
    psi0 = np.asarray(psi0, dtype=complex)
    b = np.asarray(readout, dtype=complex)
    seeds = trajectory_seeds(seed, n_traj)
    # worst-case path amplitude for the step rule: 6 sigma
    path_max = np.array([6 * p.sigma for p in noise.processes])
    if strobe_every is not None:
        tau = TWO_PI / cfg.Omega1
        n_periods = int(math.floor(t_final / tau + 1e-9))
        spec = PropagationSpec.strobed(H, tau, n_periods, every=strobe_every, path_max=path_max)
    else:
        spec = PropagationSpec.resolving(H, t_final, sample_dt=sample_dt, path_max=path_max)
    t = spec.times
    total = np.zeros(t.size)
    total_sq = np.zeros(t.size)
    kept = [] if keep_trajectories else None
    for start in range(0, n_traj, CHUNK):
        chunk = seeds[start:start + CHUNK]
        paths, g0, gdt = paths_for_seeds(noise, chunk, spec.t0, spec.t_final)
        lim = path_max[:, None]
        np.clip(paths, -lim, lim, out=paths)
        amps = integrate(H, np.tile(psi0, (len(chunk), 1)), spec, paths, g0, gdt, check=False)
        amps = change_frame(cfg, amps, t, frame, readout_frame)
        p = np.abs(amps @ b.conj()) ** 2
        total += p.sum(axis=0)
        total_sq += (p ** 2).sum(axis=0)
        if kept is not None:
            kept.append(p)
    mean = total / n_traj
    var = np.clip(total_sq / n_traj - mean ** 2, 0, None)
    sem = np.sqrt(var / max(n_traj - 1, 1))
    keep = np.exp(-2 * (t - spec.t0) / noise.T1) if math.isfinite(noise.T1) else np.ones_like(t)
    mean = relax_population(mean, t - spec.t0, noise.T1)
    sem = sem * keep
    per = None
    if kept is not None:
        per = relax_population(np.concatenate(kept), t - spec.t0, noise.T1)
    meta = {"n_traj": n_traj, "seed": seed, "step": spec.h, "frame": Frame(frame).name}
    return EnsembleTrace(t, mean, sem, n_traj, per, meta)


def _ket(vec):
    x, y, z = np.asarray(vec, dtype=float) / np.linalg.norm(vec)
    theta, ph = math.acos(max(-1.0, min(1.0, z))), math.atan2(y, x)
    return np.array([math.cos(theta / 2), np.exp(1j * ph) * math.sin(theta / 2)])


def protocol_setup(cfg: DriveConfig, kind: str):
    """(config actually run, initial state, readout state, readout frame, strobed?)."""
    if kind not in PROTOCOLS:
        raise ValueError(f"unknown protocol {kind!r}; choose from {PROTOCOLS}")
    plus_x = _ket((1, 0, 0))
    if kind == "ramsey":
        bare = cfg.with_(Omega1=0.0, Omega2=0.0, g=0.0)
        return bare, plus_x, plus_x, Frame.IP1, False
    if cfg.Omega1 <= 0:
        raise ValueError(f"protocol {kind!r} needs the first drive on")
    double = cfg.Omega2 > 0
    if kind == "drive":
        run = cfg.with_(g=0.0)
        if double:
            return run, plus_x, plus_x, Frame.IP2, True
        ground = _ket((0, 0, 1))
        return run, ground, ground, Frame.IP1, False
    dressed = sensing_basis(cfg)
    return cfg, dressed, dressed, Frame.IP2, True


def expected_period(cfg: DriveConfig, kind: str) -> float:
    """Nominal oscillation period of a protocol (inf for Ramsey)."""
    if kind == "ramsey":
        return math.inf
    if kind == "drive":
        return TWO_PI / (cfg.Omega2 / 2) if cfg.Omega2 > 0 else TWO_PI / cfg.Omega1
    rate = cfg.g / 4 if cfg.Omega2 > 0 else cfg.g / 2
    return TWO_PI / rate if rate > 0 else math.inf


@dataclass
class CoherenceResult:
    kind: str
    trace: EnsembleTrace
    fit: RabiFit | None
    error: str | None = None

    @property
    def T2(self) -> float:
        return self.fit.T2 if self.fit is not None else math.nan

    @property
    def T2_err(self) -> float:
        if self.fit is None:
            return math.nan
        return self.fit.stderr.get("T2", math.nan)


def simulate_protocol(cfg: DriveConfig, noise: NoiseConfig, kind: str, t_final, n_traj=200,
                      seed=0, samples_per_period=8, max_samples=4000,
                      keep_trajectories=False, frame=Frame.IP1, strobe_every=None) -> EnsembleTrace:
    """Ensemble trace of one protocol (see the module docstring).

    The record holds at most about ``max_samples`` points, thinned only
    while each expected oscillation keeps ``samples_per_period`` points;
    ``strobe_every`` overrides the automatic thinning of strobed protocols.
    """
    run, psi0, b, rframe, strobed = protocol_setup(cfg, kind)
    period = expected_period(cfg, kind)
    if strobed:
        tau = TWO_PI / cfg.Omega1
        every = max(1, math.ceil(t_final / tau / max_samples))
        if math.isfinite(period):
            every = max(1, min(every, math.floor(period / (samples_per_period * tau))))
        every = strobe_every or every
        tr = run_ensemble(run, noise, psi0, b, t_final, n_traj, seed, strobe_every=every,
                          readout_frame=rframe, frame=frame, keep_trajectories=keep_trajectories)
    else:
        dt = t_final / max_samples
        if math.isfinite(period):
            dt = min(dt, period / samples_per_period)
        tr = run_ensemble(run, noise, psi0, b, t_final, n_traj, seed, sample_dt=dt,
                          readout_frame=rframe, frame=frame, keep_trajectories=keep_trajectories)
    tr.meta["protocol"] = kind
    return tr


def fit_trace(tr: EnsembleTrace, kind: str, p=None) -> CoherenceResult:
    try:
        fit = fit_damped_rabi(tr.t, tr.mean, p=p)
    except (FitError, ValueError) as exc:
        return CoherenceResult(kind, tr, None, str(exc))
    return CoherenceResult(kind, tr, fit)


def measure_coherence(cfg: DriveConfig, noise: NoiseConfig, kind: str, t_final, n_traj=200,
                      seed=0, p=None, **kw) -> CoherenceResult:
    """Simulate one protocol and fit the decay of its ensemble-averaged trace."""
    return fit_trace(simulate_protocol(cfg, noise, kind, t_final, n_traj, seed, **kw), kind, p)


class CalibrationError(ValueError):
    def __init__(self, msg, achievable=None):
        super().__init__(msg)
        self.achievable = achievable


@dataclass
class CalibrationReport:
    noise: NoiseConfig
    targets: dict
    achieved: dict
    iterations: dict

    def relative_errors(self) -> dict:
        return {k: self.achieved[k] / self.targets[k] - 1 for k in self.targets}

    def to_json(self) -> str:
        return json.dumps({"noise": self.noise.to_dict(), "targets": self.targets,
                           "achieved": self.achieved, "iterations": self.iterations,
                           "relative_error": self.relative_errors()}, indent=2, sort_keys=True)


def _bisect_sigma(measure, target, lo, hi, rtol, max_iter):
    """Find sigma with measure(sigma) ~ target, measure decreasing in sigma (log-space bisection)."""
    T_lo = measure(lo)
    if not T_lo > target:
        raise CalibrationError(
            f"target {target:.4g} unreachable: even sigma={lo:.3g} gives T2={T_lo:.4g}",
            achievable=(0.0, T_lo))
    T_hi = measure(hi)
    if T_hi > target:
        raise CalibrationError(
            f"target {target:.4g} unreachable: sigma={hi:.3g} still gives T2={T_hi:.4g}",
            achievable=(T_hi, T_lo))
    best = (hi, T_hi)
    for it in range(max_iter):
        mid = math.sqrt(lo * hi)
        T = measure(mid)
        if not math.isfinite(T):
            lo = mid
            continue
        if abs(T / target - 1) < abs(best[1] / target - 1):
            best = (mid, T)
        if abs(T / target - 1) <= rtol:
            return mid, T, it + 1
        if T > target:
            lo = mid
        else:
            hi = mid
    return best[0], best[1], max_iter


def calibrate(targets: dict, cfg: DriveConfig, n_traj=512, seed=1234, rtol=0.03, max_iter=20,
              base: NoiseConfig | None = None, window=3.0, n_traj_ramsey=2000) -> CalibrationReport:
    """Tune noise amplitudes to reproduce a coherence-time ladder.

    ``targets`` holds ``T2_star``, ``T2_1`` (single drive) and ``T2_12``
    (double drive), in simulation time units. deltaB follows from the
    quasi-static closed form sigma_B = sqrt(2)/T2*; the two drive-noise
    amplitudes are found by bisection on simulated decays with common random
    numbers, so the search is deterministic in ``seed``. Single-drive decay
    times scatter by about 15 % between seeds at 128 trajectories and 6 % at
    512, hence the default.
    """
    need = ("T2_star", "T2_1", "T2_12")
    for k in need:
        if k not in targets or not targets[k] > 0:
            raise ValueError(f"calibration target {k!r} must be a positive time")
    T2s, T21, T212 = (float(targets[k]) for k in need)
    sigma_B = math.sqrt(2) / T2s
    noise = base or NoiseConfig.with_defaults(cfg, T2_star=T2s)
    noise = noise.with_sigmas(sigma_B=sigma_B, sigma_1=0.0, sigma_2=0.0)
    single = cfg.with_(Omega2=0.0, g=0.0)
    double = cfg.with_(g=0.0)
    iters = {}

    def m_single(s):
        r = measure_coherence(single, noise.with_sigmas(sigma_1=s), "drive", window * T21, n_traj, seed)
        return r.T2

    # relative drive noise: T2 ~ sqrt(2)/(s Omega1) sets the bracket scale
    s_guess = math.sqrt(2) / (T21 * cfg.Omega1)
    s1, T1_ach, iters["sigma_1"] = _bisect_sigma(m_single, T21, s_guess / 1e3, min(0.5, 20 * s_guess),
                                                  rtol, max_iter)
    noise = noise.with_sigmas(sigma_1=s1)

    def m_double(s):
        r = measure_coherence(double, noise.with_sigmas(sigma_2=s), "drive", window * T212, n_traj, seed)
        return r.T2

    s_guess = 2 * math.sqrt(2) / (T212 * cfg.Omega2)
    s2, T12_ach, iters["sigma_2"] = _bisect_sigma(m_double, T212, s_guess / 1e3, min(0.5, 20 * s_guess),
                                                   rtol, max_iter)
    noise = noise.with_sigmas(sigma_2=s2)
    ramsey = measure_coherence(cfg, noise, "ramsey", window * T2s, n_traj_ramsey, seed)
    achieved = {"T2_star": ramsey.T2, "T2_1": T1_ach, "T2_12": T12_ach}
    return CalibrationReport(noise, {"T2_star": T2s, "T2_1": T21, "T2_12": T212}, achieved, iters)
