"""Compiled fixed-step integrators for i d(psi)/dt = H(t) psi on one qubit.

Two steppers share the tone-table Hamiltonian evaluation:

* ``cfm4``: fourth-order commutator-free Magnus (two exponentials at the
  Gauss-Legendre nodes). Each factor is an exact SU(2) rotation, so the norm
  is conserved to rounding error over any number of steps.
* ``rk4``: classical Runge-Kutta, kept as a cross-check.
"""
import math

import os

import numpy as np
from numba import config, njit, prange

# prefer OpenMP / workqueue; an outdated system TBB only produces a warning
if "NUMBA_THREADING_LAYER" not in os.environ:
    config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

SQRT3 = math.sqrt(3.0)
C1 = 0.5 - SQRT3 / 6.0
C2 = 0.5 + SQRT3 / 6.0
A1 = (3.0 - 2.0 * SQRT3) / 12.0
A2 = (3.0 + 2.0 * SQRT3) / 12.0

STEPPER_CFM4 = 0
STEPPER_RK4 = 1


@njit(cache=True, inline="always")
def _field(t, axis, amp, freq, phase, chan, additive, paths, p_t0, p_dt):
    hx = 0.0
    hy = 0.0
    hz = 0.0
    n_grid = paths.shape[1]
    for k in range(amp.shape[0]):
        m = 1.0
        c = chan[k]
        if c >= 0:
            s = (t - p_t0) / p_dt
            i = int(math.floor(s))
            if i < 0:
                i = 0
            elif i > n_grid - 2:
                i = n_grid - 2
            f = s - i
            v = paths[c, i] * (1.0 - f) + paths[c, i + 1] * f
            if additive[k]:
                m = v
            else:
                m = 1.0 + v
        val = amp[k] * m * math.cos(freq[k] * t + phase[k])
        a = axis[k]
        if a == 0:
            hx += val
        elif a == 1:
            hy += val
        else:
            hz += val
    return hx, hy, hz


@njit(cache=True, inline="always")
def _rotate(a0, a1, hx, hy, hz, h):
    """Apply exp(-i h (hx sx + hy sy + hz sz)) to (a0, a1)."""
    norm = math.sqrt(hx * hx + hy * hy + hz * hz)
    if norm == 0.0:
        return a0, a1
    th = h * norm
    c = math.cos(th)
    s = math.sin(th) / norm
    # -i s (h.sigma)
    m00 = complex(c, -s * hz)
    m11 = complex(c, s * hz)
    m01 = complex(-s * hy, -s * hx)
    m10 = complex(s * hy, -s * hx)
    return m00 * a0 + m01 * a1, m10 * a0 + m11 * a1


@njit(cache=True, inline="always")
def _deriv(a0, a1, hx, hy, hz):
    # -i H psi
    b0 = complex(hz, 0.0) * a0 + complex(hx, -hy) * a1
    b1 = complex(hx, hy) * a0 - complex(hz, 0.0) * a1
    return -1j * b0, -1j * b1


@njit(cache=True)
def _run_one(psi0, out, t0, h, n_steps, stride, stepper,
             axis, amp, freq, phase, chan, additive, paths, p_t0, p_dt):
    a0 = psi0[0]
    a1 = psi0[1]
    out[0, 0] = a0
    out[0, 1] = a1
    j = 1
    for n in range(n_steps):
        t = t0 + n * h
        if stepper == 0:
            fx, fy, fz = _field(t + C1 * h, axis, amp, freq, phase, chan, additive, paths, p_t0, p_dt)
            gx, gy, gz = _field(t + C2 * h, axis, amp, freq, phase, chan, additive, paths, p_t0, p_dt)
            a0, a1 = _rotate(a0, a1, A2 * fx + A1 * gx, A2 * fy + A1 * gy, A2 * fz + A1 * gz, h)
            a0, a1 = _rotate(a0, a1, A1 * fx + A2 * gx, A1 * fy + A2 * gy, A1 * fz + A2 * gz, h)
        else:
            fx, fy, fz = _field(t, axis, amp, freq, phase, chan, additive, paths, p_t0, p_dt)
            mx, my, mz = _field(t + 0.5 * h, axis, amp, freq, phase, chan, additive, paths, p_t0, p_dt)
            ex, ey, ez = _field(t + h, axis, amp, freq, phase, chan, additive, paths, p_t0, p_dt)
            k10, k11 = _deriv(a0, a1, fx, fy, fz)
            k20, k21 = _deriv(a0 + 0.5 * h * k10, a1 + 0.5 * h * k11, mx, my, mz)
            k30, k31 = _deriv(a0 + 0.5 * h * k20, a1 + 0.5 * h * k21, mx, my, mz)
            k40, k41 = _deriv(a0 + h * k30, a1 + h * k31, ex, ey, ez)
            a0 = a0 + h / 6.0 * (k10 + 2.0 * k20 + 2.0 * k30 + k40)
            a1 = a1 + h / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
        if (n + 1) % stride == 0:
            out[j, 0] = a0
            out[j, 1] = a1
            j += 1
    return math.isfinite(a0.real) and math.isfinite(a0.imag) and \
        math.isfinite(a1.real) and math.isfinite(a1.imag)


@njit(cache=True, parallel=True)
def propagate_ensemble(psi0, t0, h, n_steps, stride, stepper,
                       axis, amp, freq, phase, chan, additive, paths, p_t0, p_dt):
    """Integrate every trajectory; ``psi0`` is (n_traj, 2), ``paths`` (n_traj, n_ch, n_grid).

    Returns amplitudes (n_traj, n_steps // stride + 1, 2) and a finite flag per trajectory.
    """
    n_traj = psi0.shape[0]
    n_out = n_steps // stride + 1
    out = np.empty((n_traj, n_out, 2), dtype=np.complex128)
    ok = np.empty(n_traj, dtype=np.bool_)
    for r in prange(n_traj):
        ok[r] = _run_one(psi0[r], out[r], t0, h, n_steps, stride, stepper,
                         axis, amp, freq, phase, chan, additive, paths[r], p_t0, p_dt)
    return out, ok
