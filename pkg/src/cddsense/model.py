"""Drive configuration, Hamiltonians and the interaction-picture cascade.

All frequencies are angular (rad per unit time) in whatever time unit the
caller picks. Hamiltonians are stored as a table of cosine tones,

    H(t) = sum_k amp_k * m_k(t) * cos(freq_k * t + phase_k) * sigma_{axis_k}

where ``m_k(t)`` is 1 for a clean tone, ``1 + x_c(t)`` for a tone whose
amplitude is modulated by noise channel ``c`` and ``x_c(t)`` for an additive
noise term. The table form lets the compiled integrators evaluate H(t)
without calling back into Python.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)

X, Y, Z = 0, 1, 2

# noise channel indices used by the tone tables
CH_B, CH_OMEGA1, CH_OMEGA2 = 0, 1, 2

# relative detuning (in units of g) beyond which the third-frame closed form is refused
IP3_DETUNING_TOL = 1e-2


class Frame(enum.IntEnum):
    """Reference frames, ordered Lab -> IP1 -> IP2 -> IP3."""

    Lab = 0
    IP1 = 1
    IP2 = 2
    IP3 = 3


@dataclass(frozen=True)
class DriveConfig:
    """Carrier, two concatenated drives and the signal.

    ``drive2_phase`` offsets the modulation of the second drive,
    ``cos(Omega1 t + drive2_phase)``. The default pi/2 turns the second
    drive into a sigma_z rotation in the second interaction picture, which
    keeps its Rabi rotations out of a sigma_z readout.
    """

    omega0: float
    Omega1: float
    Omega2: float
    omega_s: float
    g: float = 0.0
    phi: float = 0.0
    drive2_phase: float = math.pi / 2

    def __post_init__(self):
        for name in ("omega0", "Omega1", "Omega2", "omega_s", "g"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite non-negative frequency, got {v!r}")

    @classmethod
    def on_resonance(cls, omega0, Omega1, Omega2, g=0.0, phi=0.0,
                     drive2_phase=math.pi / 2, branch=(1, 1)):
        """Build a config with the signal on one of the four dressed resonances."""
        s1, s2 = branch
        omega_s = omega0 + s1 * Omega1 + s2 * Omega2 / 2
        return cls(omega0, Omega1, Omega2, omega_s, g, phi, drive2_phase)

    def with_(self, **changes) -> "DriveConfig":
        return replace(self, **changes)

    @property
    def detuning(self) -> float:
        """Signal detuning from the (+,+) dressed resonance."""
        return self.omega_s - (self.omega0 + self.Omega1 + self.Omega2 / 2)

    @property
    def drive2_axis(self) -> np.ndarray:
        """Rotation axis of the second drive in the second interaction picture."""
        d = self.drive2_phase
        return np.array([0.0, math.cos(d), math.sin(d)])


@dataclass(frozen=True)
class HamiltonianFn:
    """Time-dependent 2x2 Hamiltonian stored as a tone table.

    ``paths`` optionally holds one realisation of the noise channels sampled on
    a uniform grid starting at ``path_t0`` with spacing ``path_dt``; values in
    between are linearly interpolated.
    """

    frame: Frame
    rwa: bool
    axis: np.ndarray
    amp: np.ndarray
    freq: np.ndarray
    phase: np.ndarray
    channel: np.ndarray
    additive: np.ndarray
    paths: np.ndarray | None = None
    path_t0: float = 0.0
    path_dt: float = 1.0
    label: str = field(default="", compare=False)

    @classmethod
    def from_tones(cls, frame, rwa, tones, label=""):
        """``tones`` is an iterable of (axis, amp, freq, phase[, channel[, additive]])."""
        defaults = (-1, False)
        rows = [tuple(t) + defaults[len(t) - 4:] for t in tones]
        rows = [r for r in rows if r[1] != 0.0 or r[4] >= 0]
        return cls(
            frame=Frame(frame),
            rwa=rwa,
            axis=np.array([r[0] for r in rows], dtype=np.int64),
            amp=np.array([r[1] for r in rows], dtype=float),
            freq=np.array([r[2] for r in rows], dtype=float),
            phase=np.array([r[3] for r in rows], dtype=float),
            channel=np.array([r[4] for r in rows], dtype=np.int64),
            additive=np.array([bool(r[5]) for r in rows], dtype=np.bool_),
            label=label,
        )

    @property
    def n_channels(self) -> int:
        return int(self.channel.max()) + 1 if self.channel.size and self.channel.max() >= 0 else 0

    def with_paths(self, paths, t0=0.0, dt=1.0) -> "HamiltonianFn":
        paths = np.ascontiguousarray(paths, dtype=float)
        if paths.ndim != 2 or paths.shape[0] < self.n_channels:
            raise ValueError("paths must be (n_channels, n_grid)")
        return replace(self, paths=paths, path_t0=float(t0), path_dt=float(dt))

    def _modulation(self, t):
        m = np.ones(self.amp.size)
        if self.paths is None:
            noisy = self.channel >= 0
            m[noisy & self.additive] = 0.0
            return m
        s = (t - self.path_t0) / self.path_dt
        n = self.paths.shape[1]
        i = min(max(int(math.floor(s)), 0), n - 2)
        f = s - i
        for k, c in enumerate(self.channel):
            if c < 0:
                continue
            v = self.paths[c, i] * (1.0 - f) + self.paths[c, i + 1] * f
            m[k] = v if self.additive[k] else 1.0 + v
        return m

    def field(self, t: float) -> np.ndarray:
        """Bloch-vector coefficients (hx, hy, hz) with H = h . sigma."""
        vals = self.amp * self._modulation(t) * np.cos(self.freq * t + self.phase)
        return np.bincount(self.axis, weights=vals, minlength=3)[:3]

    def __call__(self, t: float) -> np.ndarray:
        hx, hy, hz = self.field(t)
        return hx * SIGMA_X + hy * SIGMA_Y + hz * SIGMA_Z

    def max_frequency(self, path_max=None) -> float:
        """Largest angular rate present: a tone frequency or twice the total coupling.

        ``path_max`` gives the largest |x_c| per noise channel; it defaults to
        the attached paths (or zero when none are attached).
        """
        if path_max is None:
            path_max = (np.max(np.abs(self.paths), axis=1) if self.paths is not None
                        else np.zeros(max(self.n_channels, 1)))
        coupling = 0.0
        for a, c, add in zip(self.amp, self.channel, self.additive):
            if c < 0:
                coupling += abs(a)
            elif add:
                coupling += abs(a) * float(path_max[c])
            else:
                coupling += abs(a) * (1.0 + float(path_max[c]))
        top = float(np.max(np.abs(self.freq))) if self.freq.size else 0.0
        return max(top, 2.0 * coupling)


def _lab_tones(cfg: DriveConfig, noisy=False):
    c1 = CH_OMEGA1 if noisy else -1
    c2 = CH_OMEGA2 if noisy else -1
    d = cfg.drive2_phase
    tones = [
        (Z, cfg.omega0 / 2, 0.0, 0.0),
        (X, cfg.Omega1, cfg.omega0, 0.0, c1, False),
        # Omega2 cos(w0 t) cos(Omega1 t + d) split into its two sidebands
        (Y, cfg.Omega2 / 2, cfg.omega0 + cfg.Omega1, d, c2, False),
        (Y, cfg.Omega2 / 2, cfg.omega0 - cfg.Omega1, -d, c2, False),
        (X, cfg.g, cfg.omega_s, cfg.phi),
    ]
    if noisy:
        tones.append((Z, 0.5, 0.0, 0.0, CH_B, True))
    return tones


def _ip1_tones(cfg: DriveConfig, noisy=False):
    c1 = CH_OMEGA1 if noisy else -1
    c2 = CH_OMEGA2 if noisy else -1
    delta = cfg.omega_s - cfg.omega0
    tones = [
        (X, cfg.Omega1 / 2, 0.0, 0.0, c1, False),
        (Y, cfg.Omega2 / 2, cfg.Omega1, cfg.drive2_phase, c2, False),
        (X, cfg.g / 2, delta, cfg.phi),
        (Y, cfg.g / 2, delta, cfg.phi - math.pi / 2),
    ]
    if noisy:
        tones.append((Z, 0.5, 0.0, 0.0, CH_B, True))
    return tones


def lab_hamiltonian(cfg: DriveConfig) -> HamiltonianFn:
    """Full lab-frame Hamiltonian, no rotating-wave approximation."""
    return HamiltonianFn.from_tones(Frame.Lab, False, _lab_tones(cfg), label="lab")


def ip_hamiltonian(cfg: DriveConfig, frame: Frame) -> HamiltonianFn:
    """Closed-form RWA Hamiltonian in the first, second or third interaction picture.

    The forms are derived with the same frame unitaries as
    :func:`frame_unitary`, so states from lab-frame integration transformed
    into ``frame`` can be compared directly against evolution under them.
    """
    frame = Frame(frame)
    if frame is Frame.Lab:
        raise ValueError("use lab_hamiltonian for the lab frame")
    if frame is Frame.IP1:
        return HamiltonianFn.from_tones(frame, True, _ip1_tones(cfg), label="ip1")

    if cfg.Omega1 <= 0:
        raise ValueError("second and third interaction pictures need Omega1 > 0")
    n = cfg.drive2_axis
    if frame is Frame.IP2:
        theta_rate = cfg.omega_s - cfg.omega0 - cfg.Omega1
        tones = [
            (Y, cfg.Omega2 / 4 * n[1], 0.0, 0.0),
            (Z, cfg.Omega2 / 4 * n[2], 0.0, 0.0),
            # (g/4)[sigma_y sin(theta) - sigma_z cos(theta)]
            (Y, cfg.g / 4, theta_rate, cfg.phi - math.pi / 2),
            (Z, -cfg.g / 4, theta_rate, cfg.phi),
        ]
        return HamiltonianFn.from_tones(frame, True, tones, label="ip2")

    if cfg.Omega2 <= 0:
        raise ValueError("third interaction picture needs Omega2 > 0")
    tol = max(IP3_DETUNING_TOL * cfg.g, 1e-12 * max(cfg.omega_s, 1.0))
    if abs(cfg.detuning) > tol:
        raise ValueError(
            f"signal detuned by {cfg.detuning:.6g} from omega0+Omega1+Omega2/2 "
            f"(tolerance {tol:.3g}); the third-frame closed form does not apply")
    # (g/8)[cos(phi-d) e_b - sin(phi-d) x], e_b = n x x_hat
    d = cfg.drive2_phase
    c, s = math.cos(cfg.phi - d), math.sin(cfg.phi - d)
    tones = [
        (X, -cfg.g / 8 * s, 0.0, 0.0),
        (Y, cfg.g / 8 * c * math.sin(d), 0.0, 0.0),
        (Z, -cfg.g / 8 * c * math.cos(d), 0.0, 0.0),
    ]
    return HamiltonianFn.from_tones(frame, True, tones, label="ip3")


def _rotation(axis_vec, angle) -> np.ndarray:
    """exp(-i angle/2 n.sigma) for a unit vector n."""
    nx, ny, nz = axis_vec
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c - 1j * s * nz, -1j * s * (nx - 1j * ny)],
                     [-1j * s * (nx + 1j * ny), c + 1j * s * nz]])


def frame_step_unitaries(cfg: DriveConfig, t: float):
    """The three single-step exponentials of the frame cascade at time t."""
    return (
        _rotation((0.0, 0.0, 1.0), cfg.omega0 * t),
        _rotation((1.0, 0.0, 0.0), cfg.Omega1 * t),
        _rotation(cfg.drive2_axis, cfg.Omega2 * t / 2),
    )


def frame_unitary(cfg: DriveConfig, frame: Frame, t: float) -> np.ndarray:
    """Cumulative unitary U_F(t); a lab state maps into F as U_F(t)^dagger psi."""
    frame = Frame(frame)
    u = IDENTITY.copy()
    for step in frame_step_unitaries(cfg, t)[: int(frame)]:
        u = u @ step
    return u


def _rotations(axis_vec, angles) -> np.ndarray:
    nx, ny, nz = axis_vec
    c, s = np.cos(angles / 2), np.sin(angles / 2)
    out = np.empty(angles.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c - 1j * s * nz
    out[..., 0, 1] = -1j * s * (nx - 1j * ny)
    out[..., 1, 0] = -1j * s * (nx + 1j * ny)
    out[..., 1, 1] = c + 1j * s * nz
    return out


def frame_unitaries(cfg: DriveConfig, frame: Frame, t) -> np.ndarray:
    """Vectorised :func:`frame_unitary` over a time array, shape (n, 2, 2)."""
    t = np.asarray(t, dtype=float)
    u = np.broadcast_to(IDENTITY, t.shape + (2, 2)).copy()
    steps = [((0.0, 0.0, 1.0), cfg.omega0 * t),
             ((1.0, 0.0, 0.0), cfg.Omega1 * t),
             (cfg.drive2_axis, cfg.Omega2 * t / 2)]
    for axis_vec, angle in steps[: int(Frame(frame))]:
        u = u @ _rotations(axis_vec, angle)
    return u


def resonances(cfg: DriveConfig) -> list[float]:
    """The four doubly-dressed transition frequencies omega0 +- Omega1 +- Omega2/2."""
    return sorted(cfg.omega0 + s1 * cfg.Omega1 + s2 * cfg.Omega2 / 2
                  for s1 in (1, -1) for s2 in (1, -1))


@dataclass(frozen=True)
class HierarchyReport:
    ratios: dict
    passed: dict
    min_ratio: float

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    @property
    def violations(self) -> list[str]:
        return [k for k, v in self.passed.items() if not v]


def validate_hierarchy(cfg: DriveConfig, min_ratio: float = 5.0) -> HierarchyReport:
    """Check omega0 >> Omega1 >> Omega2 >> g; advisory, never raises on failure.

    With the second drive off the signal is compared with Omega1 instead.
    """
    if min_ratio <= 1:
        raise ValueError("min_ratio must exceed 1")
    pairs = [("omega0/Omega1", cfg.omega0, cfg.Omega1)]
    if cfg.Omega2 > 0:
        pairs.append(("Omega1/Omega2", cfg.Omega1, cfg.Omega2))
        if cfg.g > 0:
            pairs.append(("Omega2/g", cfg.Omega2, cfg.g))
    elif cfg.g > 0:
        pairs.append(("Omega1/g", cfg.Omega1, cfg.g))
    ratios, passed = {}, {}
    for name, hi, lo in pairs:
        r = hi / lo if lo > 0 else math.inf
        ratios[name] = r
        passed[name] = r >= min_ratio
    return HierarchyReport(ratios, passed, min_ratio)
