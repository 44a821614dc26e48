"""Stochastic environment: Ornstein-Uhlenbeck field and drive-amplitude noise, plus T1.

Channels (indices shared with the tone tables in :mod:`cddsense.model`):

* 0, ``deltaB``: additive shift of the qubit splitting, H += deltaB(t) sigma_z / 2
  (angular frequency units, so a quasi-static spread sigma gives T2* = sqrt(2)/sigma);
* 1, ``deltaOmega1``: relative fluctuation, Omega1 -> Omega1 (1 + x(t));
* 2, ``deltaOmega2``: relative fluctuation, Omega2 -> Omega2 (1 + x(t)).

Seed splitting: ``numpy.random.SeedSequence(seed).spawn(n)`` gives one child
per trajectory; each child's generator always draws the three channels in the
order above, even for zero amplitude, so runs that differ only in noise
amplitudes see the same underlying random numbers.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .model import DriveConfig, Frame, HamiltonianFn, _ip1_tones, _lab_tones
from .propagate import relax  # noqa: F401  (T1 channel, re-exported)

N_CHANNELS = 3
# noise grid resolves the shortest correlation time with this many points
GRID_PER_TAU = 50


@dataclass(frozen=True)
class OUProcess:
    sigma: float = 0.0
    tau_c: float = 1.0

    def __post_init__(self):
        if self.sigma < 0 or not self.tau_c > 0:
            raise ValueError("OU process needs sigma >= 0 and tau_c > 0")


@dataclass(frozen=True)
class NoiseConfig:
    deltaB: OUProcess = field(default_factory=OUProcess)
    deltaOmega1: OUProcess = field(default_factory=OUProcess)
    deltaOmega2: OUProcess = field(default_factory=OUProcess)
    T1: float = math.inf

    def __post_init__(self):
        for p in (self.deltaOmega1, self.deltaOmega2):
            if p.sigma >= 1:
                raise ValueError("relative drive noise sigma must be < 1")
        if not self.T1 > 0:
            raise ValueError("T1 must be positive")

    @classmethod
    def with_defaults(cls, cfg: DriveConfig, sigma_B=0.0, sigma_1=0.0, sigma_2=None, T1=math.inf,
                      T2_star=None):
        """Correlation times 25 T2* for deltaB and 100 first-drive periods for the drives.

        ``sigma_2`` defaults to ``sigma_1``: the same relative fluctuation
        on a weaker drive, i.e. deltaOmega2 / deltaOmega1 = Omega2 / Omega1.
        """
        if T2_star is None:
            T2_star = math.sqrt(2) / sigma_B if sigma_B > 0 else 1.0
        tau_drive = 100 * 2 * math.pi / cfg.Omega1 if cfg.Omega1 > 0 else 1.0
        return cls(OUProcess(sigma_B, 25 * T2_star),
                   OUProcess(sigma_1, tau_drive),
                   OUProcess(sigma_1 if sigma_2 is None else sigma_2, tau_drive),
                   T1)

    @property
    def processes(self) -> tuple:
        return (self.deltaB, self.deltaOmega1, self.deltaOmega2)

    @property
    def is_quiet(self) -> bool:
        return all(p.sigma == 0 for p in self.processes)

    def with_sigmas(self, sigma_B=None, sigma_1=None, sigma_2=None) -> "NoiseConfig":
        def upd(p, s):
            return p if s is None else replace(p, sigma=s)
        return replace(self, deltaB=upd(self.deltaB, sigma_B),
                       deltaOmega1=upd(self.deltaOmega1, sigma_1),
                       deltaOmega2=upd(self.deltaOmega2, sigma_2))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "NoiseConfig":
        return cls(OUProcess(**d["deltaB"]), OUProcess(**d["deltaOmega1"]),
                   OUProcess(**d["deltaOmega2"]), float(d.get("T1", math.inf)))


def _ou_unit(grid, tau_c, rng):
    """Unit-variance OU path on ``grid`` using the exact one-step update."""
    grid = np.asarray(grid, dtype=float)
    xi = rng.standard_normal(grid.size)
    x = np.empty(grid.size)
    x[0] = xi[0]
    dt = np.diff(grid)
    if np.any(dt <= 0):
        raise ValueError("grid must be strictly increasing")
    a = np.exp(-dt / tau_c)
    b = np.sqrt(-np.expm1(-2 * dt / tau_c))
    for k in range(grid.size - 1):
        x[k + 1] = a[k] * x[k] + b[k] * xi[k + 1]
    return x


def sample_path(p: OUProcess, grid, seed) -> np.ndarray:
    """One OU realisation on ``grid``; x0 is drawn from the stationary law.

    x_{k+1} = x_k e^{-dt/tau} + sigma sqrt(1 - e^{-2 dt/tau}) xi_k is exact
    for any spacing. ``seed`` may be an int, SeedSequence or Generator.
    """
    rng = np.random.default_rng(seed)
    return p.sigma * _ou_unit(grid, p.tau_c, rng)


def _unit_paths_uniform(n_grid, dt, taus, rng):
    """Three unit OU paths on a uniform grid (vectorised AR(1) via lfilter)."""
    from scipy.signal import lfilter

    out = np.empty((len(taus), n_grid))
    for c, tau in enumerate(taus):
        xi = rng.standard_normal(n_grid)
        a = math.exp(-dt / tau)
        b = math.sqrt(-math.expm1(-2 * dt / tau))
        # x[k] = a x[k-1] + b xi[k], with x[0] = xi[0]
        drive = b * xi
        drive[0] = xi[0]
        out[c] = lfilter([1.0], [1.0, -a], drive)
    return out


def noise_grid(noise: NoiseConfig, t0, t_final):
    """Uniform grid (t0, dt, n) fine enough for the shortest active correlation time."""
    taus = [p.tau_c for p in noise.processes if p.sigma > 0]
    span = t_final - t0
    if not taus:
        return t0, span, 2
    dt = min(min(taus) / GRID_PER_TAU, span)
    n = int(math.ceil(span / dt)) + 2
    return t0, dt, n


def paths_for_seeds(noise: NoiseConfig, children, t0, t_final):
    """Noise realisations, one per seed in ``children``.

    Returns (paths, grid_t0, grid_dt) with paths shaped (len(children), 3, n_grid).
    """
    g0, dt, n = noise_grid(noise, t0, t_final)
    sig = np.array([p.sigma for p in noise.processes])[:, None]
    taus = [p.tau_c for p in noise.processes]
    paths = np.empty((len(children), N_CHANNELS, n))
    for r, child in enumerate(children):
        paths[r] = sig * _unit_paths_uniform(n, dt, taus, np.random.default_rng(child))
    return paths, g0, dt


def ensemble_paths(noise: NoiseConfig, n_traj, seed, t0, t_final, first=0):
    """Noise realisations for trajectories ``first .. first + n_traj - 1`` of the ensemble."""
    children = np.random.SeedSequence(seed).spawn(first + n_traj)[first:]
    return paths_for_seeds(noise, children, t0, t_final)


def noisy_tones(cfg: DriveConfig, frame: Frame = Frame.Lab):
    if Frame(frame) == Frame.Lab:
        return _lab_tones(cfg, noisy=True)
    if Frame(frame) == Frame.IP1:
        return _ip1_tones(cfg, noisy=True)
    raise ValueError("noise is modelled in the lab frame or the first interaction picture")


def noisy_template(cfg: DriveConfig, frame: Frame = Frame.Lab) -> HamiltonianFn:
    """Tone table with noise channels but no realisation attached."""
    return HamiltonianFn.from_tones(frame, Frame(frame) != Frame.Lab, noisy_tones(cfg, frame),
                                    label=f"noisy-{Frame(frame).name.lower()}")


def noisy_hamiltonian(cfg: DriveConfig, n: NoiseConfig, seed, t_final, t0=0.0,
                      frame: Frame = Frame.Lab) -> HamiltonianFn:
    """Hamiltonian with one sampled noise realisation attached (trajectory 0 of ``seed``).

    Lab frame: omega0 -> omega0 + deltaB(t) (as deltaB sigma_z / 2),
    Omega1 -> Omega1 (1 + x1(t)), Omega2 -> Omega2 (1 + x2(t)); the drive
    carriers stay at the nominal omega0. ``frame=Frame.IP1`` gives the same
    noise on the first-interaction-picture RWA Hamiltonian.
    """
    paths, g0, dt = ensemble_paths(n, 1, seed, t0, t_final)
    return noisy_template(cfg, frame).with_paths(paths[0], g0, dt)


# Coherence-time calibration lives in :mod:`cddsense.coherence`; re-exported for convenience.
def calibrate(*args, **kwargs):
    from .coherence import calibrate as _cal
    return _cal(*args, **kwargs)
