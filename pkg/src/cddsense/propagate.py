"""Numerical propagation of the driven qubit and moves between frames.

The lab-frame integration here is the brute-force reference that the
closed-form interaction-picture Hamiltonians are checked against.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .model import (TWO_PI, DriveConfig, Frame, HamiltonianFn, frame_unitaries,
                    frame_unitary, ip_hamiltonian, lab_hamiltonian)

# integration step must resolve the fastest rate with this many steps per cycle
STEPS_PER_CYCLE = 40
STEPPERS = {"cfm4": _kernels.STEPPER_CFM4, "rk4": _kernels.STEPPER_RK4}


class StepTooLargeError(ValueError):
    pass


class NonFiniteStateError(RuntimeError):
    pass


@dataclass
class SpinState:
    """Pure amplitudes (shape (2,)) or a density matrix (shape (2, 2)) in a frame at time t."""

    data: np.ndarray
    frame: Frame = Frame.Lab
    t: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape not in ((2,), (2, 2)):
            raise ValueError("state must be a 2-vector or a 2x2 density matrix")
        self.frame = Frame(self.frame)

    @classmethod
    def ground(cls, frame=Frame.Lab, t=0.0):
        return cls(np.array([1.0, 0.0]), frame, t)

    @classmethod
    def from_bloch(cls, vec, frame=Frame.Lab, t=0.0):
        """Pure state pointing along the unit Bloch vector ``vec``."""
        x, y, z = np.asarray(vec, dtype=float) / np.linalg.norm(vec)
        theta, phi = math.acos(max(-1.0, min(1.0, z))), math.atan2(y, x)
        return cls(np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)]), frame, t)

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data

    def promote(self) -> "SpinState":
        return SpinState(self.density(), self.frame, self.t)

    def populations(self) -> np.ndarray:
        if self.is_pure:
            return np.abs(self.data) ** 2
        return np.real(np.diag(self.data))


@dataclass(frozen=True)
class PropagationSpec:
    """Integration step, final time and output stride (in steps).

    The actual step is ``(t_final - t0) / n_steps`` with ``n_steps`` rounded
    so the stride lands exactly on ``t_final``; it never exceeds ``step``.
    """

    step: float
    t_final: float
    stride: int = 1
    t0: float = 0.0
    stepper: str = "cfm4"
    T1: float = math.inf

    def __post_init__(self):
        if self.step <= 0 or self.t_final <= self.t0:
            raise ValueError("need step > 0 and t_final > t0")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.stepper not in STEPPERS:
            raise ValueError(f"unknown stepper {self.stepper!r}")

    @property
    def n_steps(self) -> int:
        span = self.t_final - self.t0
        blocks = math.ceil(span / (self.step * self.stride) - 1e-9)
        return max(blocks, 1) * self.stride

    @property
    def h(self) -> float:
        return (self.t_final - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        n_out = self.n_steps // self.stride + 1
        return self.t0 + np.arange(n_out) * self.stride * self.h

    @classmethod
    def resolving(cls, H: HamiltonianFn, t_final, sample_dt=None, path_max=None, **kw):
        """Largest legal step for ``H``, with samples every ``sample_dt`` (exactly)."""
        t0 = kw.pop("t0", 0.0)
        h_max = max_step(H, path_max)
        sample_dt = sample_dt or h_max
        per_sample = max(1, math.ceil(sample_dt / h_max - 1e-9))
        n_samples = max(1, round((t_final - t0) / sample_dt))
        return cls(step=sample_dt / per_sample, t_final=t0 + n_samples * sample_dt,
                   stride=per_sample, t0=t0, **kw)

    @classmethod
    def strobed(cls, H: HamiltonianFn, period, n_periods, every=1, path_max=None, **kw):
        """Samples at t0 + k * every * period for k = 0..n_periods // every."""
        h_max = max_step(H, path_max)
        per_period = max(1, math.ceil(period / h_max - 1e-9))
        n_blocks = max(1, n_periods // every)
        t0 = kw.pop("t0", 0.0)
        return cls(step=period / per_period, t_final=t0 + n_blocks * every * period,
                   stride=per_period * every, t0=t0, **kw)


def max_step(H: HamiltonianFn, path_max=None) -> float:
    f_max = H.max_frequency(path_max) / TWO_PI
    return math.inf if f_max == 0 else 1.0 / (STEPS_PER_CYCLE * f_max)


def check_step(H: HamiltonianFn, spec: PropagationSpec, path_max=None):
    f_max = H.max_frequency(path_max) / TWO_PI
    limit = max_step(H, path_max)
    if spec.h > limit * (1 + 1e-9):
        raise StepTooLargeError(
            f"step {spec.h:.4g} too large: fastest rate f_max = {f_max:.6g} cycles per "
            f"unit time needs step <= {limit:.4g} (1/({STEPS_PER_CYCLE} f_max))")


def integrate(H: HamiltonianFn, psi0, spec: PropagationSpec, paths=None,
              path_t0=0.0, path_dt=1.0, check=True) -> np.ndarray:
    """Integrate a batch of initial states; returns amplitudes (n_traj, n_samples, 2).

    ``psi0`` is (2,) or (n_traj, 2); ``paths`` is (n_traj, n_channels, n_grid)
    with one noise realisation per trajectory, or None.
    """
    psi0 = np.atleast_2d(np.asarray(psi0, dtype=np.complex128))
    n_traj = psi0.shape[0]
    if paths is None:
        if H.paths is not None:
            paths = np.broadcast_to(H.paths, (n_traj,) + H.paths.shape)
            path_t0, path_dt = H.path_t0, H.path_dt
        else:
            paths = np.zeros((n_traj, max(H.n_channels, 1), 2))
    paths = np.ascontiguousarray(paths, dtype=float)
    if paths.shape[0] != n_traj:
        raise ValueError("one noise realisation per trajectory required")
    if check:
        path_max = np.max(np.abs(paths), axis=(0, 2))
        check_step(H, spec, path_max)
    out, ok = _kernels.propagate_ensemble(
        psi0, float(spec.t0), float(spec.h), int(spec.n_steps), int(spec.stride),
        STEPPERS[spec.stepper], H.axis, H.amp, H.freq, H.phase, H.channel,
        H.additive, paths, float(path_t0), float(path_dt))
    if not ok.all():
        raise NonFiniteStateError(f"{int((~ok).sum())} trajectories left the finite range")
    return out


def relax(rho, dt, T1):
    """Isotropic depolarising channel over ``dt``: every Bloch component decays as exp(-2 dt / T1).

    Lindblad operators sqrt(1 / (2 T1)) sigma_a for a = x, y, z. The channel
    commutes with every unitary, so applying it after unitary evolution is
    exact. Driven coherences therefore saturate at T1 / 2 in any frame.
    Accepts a density matrix (2, 2) or a stack (..., 2, 2); pure vectors are
    rejected.
    """
    rho = np.asarray(rho)
    if rho.shape[-2:] != (2, 2):
        raise ValueError("relax acts on density matrices; promote pure states first")
    if math.isinf(T1):
        return rho
    dt = np.asarray(dt, dtype=float)
    keep = np.exp(-2.0 * dt / T1)[..., None, None]
    return keep * rho + (1.0 - keep) * np.eye(2) / 2 * np.trace(rho, axis1=-2, axis2=-1)[..., None, None]


def relax_population(p, dt, T1):
    """Population of any basis state after :func:`relax`."""
    if math.isinf(T1):
        return p
    keep = np.exp(-2.0 * np.asarray(dt, dtype=float) / T1)
    return keep * p + (1.0 - keep) / 2


@dataclass
class TraceRecord:
    """Sampled trajectory: times, populations and optional amplitudes or density matrices."""

    t: np.ndarray
    p1: np.ndarray
    frame: Frame = Frame.Lab
    amplitudes: np.ndarray | None = None
    rho: np.ndarray | None = None
    p1_err: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def p0(self) -> np.ndarray:
        return 1.0 - self.p1

    def final_state(self) -> SpinState:
        data = self.amplitudes[-1] if self.amplitudes is not None else self.rho[-1]
        return SpinState(data, self.frame, float(self.t[-1]))

    def columns(self) -> dict:
        cols = {"t": self.t, "p0": self.p0, "p1": self.p1}
        if self.p1_err is not None:
            cols["p1_err"] = self.p1_err
        if self.amplitudes is not None:
            a = self.amplitudes
            cols.update(re0=a[:, 0].real, im0=a[:, 0].imag, re1=a[:, 1].real, im1=a[:, 1].imag)
        return cols

    def to_csv(self, path, sidecar=True):
        path = Path(path)
        write_csv(path, self.columns())
        if sidecar:
            meta = dict(self.meta, frame=self.frame.name)
            path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))

    @classmethod
    def from_csv(cls, path, p_column="p1"):
        cols = read_csv(path)
        if "t" not in cols or p_column not in cols:
            raise ValueError(f"{path}: need columns 't' and {p_column!r}")
        meta = {}
        side = Path(path).with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
        frame = Frame[meta.get("frame", "Lab")]
        amps = None
        if {"re0", "im0", "re1", "im1"} <= cols.keys():
            amps = np.stack([cols["re0"] + 1j * cols["im0"], cols["re1"] + 1j * cols["im1"]], axis=1)
        return cls(cols["t"], cols[p_column], frame, amplitudes=amps, p1_err=cols.get("p1_err"), meta=meta)


def write_csv(path, columns: dict):
    """RFC-4180 CSV with a header row; floats use shortest round-trip repr."""
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(header):
        try:
            cols[name.strip()] = np.array([float(r[j]) for r in body])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: column {name!r}: {exc}") from None
    return cols


def evolve(state: SpinState, H: HamiltonianFn, spec: PropagationSpec) -> TraceRecord:
    """Propagate ``state`` under ``H`` (which must live in ``state.frame``).

    Pure states are integrated directly. Density matrices, or any run with
    finite ``spec.T1``, are handled by propagating both basis vectors and
    rebuilding U rho U^dagger followed by :func:`relax`.
    """
    if state.frame != H.frame:
        raise ValueError(f"state is in {state.frame.name}, Hamiltonian in {H.frame.name}")
    if not math.isclose(state.t, spec.t0, abs_tol=1e-12):
        raise ValueError("state time must equal spec.t0")
    if state.is_pure:
        nrm = np.linalg.norm(state.data)
        if abs(nrm - 1) > 1e-9:
            raise ValueError(f"state not normalised (norm {nrm})")
    t = spec.times
    meta = {"hamiltonian": H.label, "stepper": spec.stepper, "step": spec.h, "T1": spec.T1}
    if state.is_pure and math.isinf(spec.T1):
        amps = integrate(H, state.data, spec)[0]
        return TraceRecord(t, np.abs(amps[:, 1]) ** 2, H.frame, amplitudes=amps, meta=meta)

    cols = integrate(H, np.eye(2, dtype=complex), spec)  # U[:, 0], U[:, 1] per sample
    U = np.stack([cols[0], cols[1]], axis=-1)  # (n, 2, 2)
    rho = U @ state.density() @ np.conj(np.swapaxes(U, -1, -2))
    rho = relax(rho, t - spec.t0, spec.T1)
    return TraceRecord(t, np.real(rho[:, 1, 1]), H.frame, rho=rho, meta=meta)


def change_frame(cfg: DriveConfig, amps, t, src: Frame, dst: Frame) -> np.ndarray:
    """Map amplitudes (..., n, 2) sampled at times ``t`` from frame ``src`` to ``dst``."""
    if Frame(src) == Frame(dst):
        return np.asarray(amps)
    u_src = frame_unitaries(cfg, src, t)
    u_dst = frame_unitaries(cfg, dst, t)
    m = np.conj(np.swapaxes(u_dst, -1, -2)) @ u_src
    return np.einsum("nij,...nj->...ni", m, amps)


def transform(state: SpinState, to: Frame, cfg: DriveConfig) -> SpinState:
    """Re-express ``state`` in frame ``to`` at the same instant."""
    to = Frame(to)
    if to == state.frame:
        return SpinState(state.data.copy(), to, state.t)
    m = frame_unitary(cfg, to, state.t).conj().T @ frame_unitary(cfg, state.frame, state.t)
    if state.is_pure:
        return SpinState(m @ state.data, to, state.t)
    return SpinState(m @ state.data @ m.conj().T, to, state.t)


def trace_distance_pure(a, b) -> np.ndarray:
    """Trace distance between pure qubit states along the last axis.

    Uses 1 - |<a|b>|^2 = |a0 b1 - a1 b0|^2 (normalised 2-vectors), which
    stays accurate for nearly equal states where the overlap form cancels.
    """
    a, b = np.asarray(a), np.asarray(b)
    cross = np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    return cross / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))


@dataclass(frozen=True)
class RWAErrorReport:
    errors: dict          # Frame -> max trace distance
    expected_scale: dict  # Frame -> Omega1/omega0, Omega2/Omega1, g/Omega2

    def constant(self, frame) -> float:
        """Measured error divided by its expected small parameter."""
        s = self.expected_scale[Frame(frame)]
        return self.errors[Frame(frame)] / s if s > 0 else 0.0


def rwa_error(cfg: DriveConfig, t_final, n_samples=200, frames=(Frame.IP1, Frame.IP2, Frame.IP3),
              psi0=None) -> RWAErrorReport:
    """Max trace distance between exact lab evolution (moved to F) and the closed form in F."""
    psi0 = np.array([1.0, 0.0], dtype=complex) if psi0 is None else np.asarray(psi0, dtype=complex)
    H_lab = lab_hamiltonian(cfg)
    dt_sample = t_final / (n_samples - 1)
    spec = PropagationSpec.resolving(H_lab, t_final, sample_dt=dt_sample)
    t = spec.times
    lab = integrate(H_lab, psi0, spec)[0]
    scale = {
        Frame.IP1: cfg.Omega1 / cfg.omega0 if cfg.omega0 else 0.0,
        Frame.IP2: cfg.Omega2 / cfg.Omega1 if cfg.Omega1 else 0.0,
        Frame.IP3: cfg.g / cfg.Omega2 if cfg.Omega2 else 0.0,
    }
    errors = {}
    for F in map(Frame, frames):
        H_F = ip_hamiltonian(cfg, F)
        spec_F = PropagationSpec(step=spec.step, t_final=spec.t_final, stride=spec.stride)
        approx = integrate(H_F, psi0, spec_F, check=False)[0]
        exact = change_frame(cfg, lab, t, Frame.Lab, F)
        errors[F] = float(np.max(trace_distance_pure(exact, approx)))
    return RWAErrorReport(errors, {F: scale[Frame(F)] for F in frames})
