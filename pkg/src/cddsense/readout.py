"""Stroboscopic readout and shot-noise-limited photon counting."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import TWO_PI, DriveConfig, Frame, frame_unitaries
from .propagate import TraceRecord, change_frame

# synthetic photon budget: 0.03 photons per 350 ns of sensing time
N_PH_REF = 0.03
TAU_REF_S = 350e-9
STROBE_RTOL = 1e-9


@dataclass(frozen=True)
class FluorescenceModel:
    """Expected normalised signal S = 1 - C p1; ``n_ph`` photons per sequence (baseline)."""

    C: float = 0.3
    n_ph: float = N_PH_REF

    def __post_init__(self):
        if not 0 <= self.C <= 1:
            raise ValueError("contrast must lie in [0, 1]")
        if not self.n_ph > 0:
            raise ValueError("n_ph must be positive")

    @classmethod
    def synthetic(cls, tau_s, C=0.3) -> "FluorescenceModel":
        """Placeholder budget N_ph = 0.03 (tau / 350 ns) for a sensing time ``tau_s`` in seconds."""
        return cls(C, N_PH_REF * tau_s / TAU_REF_S)

    def expected(self, p1):
        return 1.0 - self.C * np.asarray(p1, dtype=float)


@dataclass(frozen=True)
class StroboscopicGrid:
    period: float
    n: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.n * self.period

    def __len__(self):
        return len(self.n)


def strobe_grid(cfg: DriveConfig, t_max) -> StroboscopicGrid:
    """All times N tau with N >= 1 and N tau <= t_max, tau = 2 pi / Omega1."""
    if not cfg.Omega1 > 0:
        raise ValueError("stroboscopic grid needs Omega1 > 0")
    tau = TWO_PI / cfg.Omega1
    n_max = int(math.floor(t_max / tau * (1 + STROBE_RTOL)))
    return StroboscopicGrid(tau, np.arange(1, max(n_max, 0) + 1))


def is_stroboscopic(t, cfg: DriveConfig) -> bool:
    tau = TWO_PI / cfg.Omega1
    k = np.asarray(t, dtype=float) / tau
    return bool(np.all(np.abs(k - np.round(k)) <= STROBE_RTOL * np.maximum(1.0, np.abs(k))))


def sensing_basis(cfg: DriveConfig) -> np.ndarray:
    """Readout state in IP2: the dressed state the signal drives out of.

    Double drive: the eigenstate of the second-drive axis (|0> for
    drive2_phase = pi/2, so the lab sigma_z readout sees it directly).
    Single drive: the first-drive dressed state |+x>.
    """
    if cfg.Omega2 > 0:
        x, y, z = cfg.drive2_axis
    else:
        x, y, z = 1.0, 0.0, 0.0
    theta, ph = math.acos(max(-1.0, min(1.0, z))), math.atan2(y, x)
    return np.array([math.cos(theta / 2), np.exp(1j * ph) * math.sin(theta / 2)])


def visible_signal(trace: TraceRecord, cfg: DriveConfig) -> TraceRecord:
    """Population transferred out of the sensing state, on the strobe grid.

    At multiples of the first-drive period the first rotation is the
    identity, and with drive2_phase = pi/2 the second one commutes with
    sigma_z, so only the signal-induced Rabi oscillation remains visible.
    """
    if cfg.Omega2 > 0 and not math.isclose(cfg.drive2_phase, math.pi / 2, abs_tol=1e-12):
        raise ValueError("visible signal readout needs drive2_phase = pi/2")
    if not is_stroboscopic(trace.t, cfg):
        raise ValueError("trace is not sampled at multiples of the first-drive period")
    if trace.amplitudes is None and trace.rho is None:
        raise ValueError("trace carries no state information")
    b = sensing_basis(cfg)
    if trace.amplitudes is not None:
        amps = change_frame(cfg, trace.amplitudes, trace.t, trace.frame, Frame.IP2)
        stay = np.abs(amps @ b.conj()) ** 2
    else:
        u = frame_unitaries(cfg, trace.frame, trace.t)
        v = frame_unitaries(cfg, Frame.IP2, trace.t)
        m = np.conj(np.swapaxes(v, -1, -2)) @ u
        rho = m @ trace.rho @ np.conj(np.swapaxes(m, -1, -2))
        stay = np.real(np.einsum("i,nij,j->n", b.conj(), rho, b))
    meta = dict(trace.meta, readout="sensing basis, IP2")
    return TraceRecord(np.asarray(trace.t), 1.0 - stay, Frame.IP2, meta=meta)


@dataclass
class PhotonSample:
    counts: np.ndarray
    normalized: np.ndarray
    sigma: np.ndarray
    repetitions: np.ndarray
    fm: FluorescenceModel
    seed: object

    def columns(self, t=None) -> dict:
        cols = {} if t is None else {"t": np.asarray(t)}
        cols.update(counts=self.counts, normalized=self.normalized, sigma=self.sigma)
        return cols


def photon_sample(p1, fm: FluorescenceModel, repetitions, seed) -> PhotonSample:
    """Poisson photon counts after ``repetitions`` shots at each population.

    counts ~ Poisson(N N_ph (1 - C p1)); the normalised signal divides by the
    p1 = 0 reference N N_ph. ``sigma`` is the shot-noise value 1/sqrt(N_ph N).
    """
    p1 = np.asarray(p1, dtype=float)
    N = np.broadcast_to(np.asarray(repetitions), p1.shape)
    if np.any(N < 1):
        raise ValueError("need at least one repetition")
    rng = np.random.default_rng(seed)
    ref = N * fm.n_ph
    counts = rng.poisson(ref * fm.expected(p1))
    return PhotonSample(counts, counts / ref, 1.0 / np.sqrt(ref), np.asarray(N), fm, seed)


@dataclass
class SigmaCurve:
    t: np.ndarray
    sigma: np.ndarray
    sigma_err: np.ndarray
    sigma_theory: np.ndarray
    tau: float
    n_experiments: int


def sigma_curve(fm: FluorescenceModel, tau, t, n_experiments=400, seed=0, p1=0.0) -> SigmaCurve:
    """Empirical spread of the normalised signal versus total measurement time.

    Each total time t holds N = round(t / tau) repetitions; ``n_experiments``
    independent experiments per point give the sample standard deviation and
    its standard error sigma / sqrt(2 (M - 1)).
    """
    t = np.asarray(t, dtype=float)
    N = np.maximum(1, np.round(t / tau)).astype(np.int64)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(len(t))
    sig = np.empty(len(t))
    for i, (n, s) in enumerate(zip(N, seeds)):
        ps = photon_sample(np.full(n_experiments, p1), fm, n, s)
        sig[i] = ps.normalized.std(ddof=1)
    err = sig / np.sqrt(2 * (n_experiments - 1))
    theory = np.sqrt(fm.expected(p1)) / np.sqrt(fm.n_ph * N)
    return SigmaCurve(N * tau, sig, err, theory, float(tau), n_experiments)
