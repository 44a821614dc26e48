"""Fits of decaying oscillations and field-sensitivity figures of merit."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

GAMMA_NV = 2 * math.pi * 28.8e9  # rad s^-1 T^-1
ALPHA_SINGLE = 0.5
ALPHA_DOUBLE = 0.25

P_BOUNDS = (0.5, 3.0)


class FitError(RuntimeError):
    """Raised when the least-squares fit fails; carries the best parameters found."""

    def __init__(self, msg, best=None, residual=math.nan):
        super().__init__(msg)
        self.best = best
        self.residual = residual


@dataclass
class RabiFit:
    """S(t) = A exp(-(t/T2)^p) cos(2 pi f t + phase) + B; ``f = 0`` for decay-only fits."""

    amplitude: float
    offset: float
    frequency: float
    phase: float
    T2: float
    p: float
    stderr: dict = field(default_factory=dict)
    residual_norm: float = 0.0
    model: str = "damped"

    def __call__(self, t):
        return damped_cosine(np.asarray(t, dtype=float), self.amplitude, self.frequency,
                             self.phase, self.T2, self.p, self.offset)

    @property
    def angular_frequency(self) -> float:
        return 2 * math.pi * self.frequency

    def to_dict(self) -> dict:
        return asdict(self)


def damped_cosine(t, A, f, ph, T2, p, B):
    return A * np.exp(-np.power(t / T2, p)) * np.cos(2 * np.pi * f * t + ph) + B


def decay(t, A, T2, p, B):
    return A * np.exp(-np.power(t / T2, p)) + B


def spectral_peak(t, y, pad=8):
    """Frequency (cycles per unit time) of the largest zero-padded spectral peak.

    The zero bin and its leakage lobe are skipped; ties go to the lower frequency.
    Returns (frequency, complex amplitude at the peak).
    """
    dt = t[1] - t[0]
    n = 1 << int(math.ceil(math.log2(len(y) * pad)))
    spec = np.fft.rfft(y - y.mean(), n)
    freqs = np.fft.rfftfreq(n, dt)
    mag = np.abs(spec)
    lobe = int(math.ceil(n / len(y)))  # one natural bin in padded units
    mag[:lobe] = 0.0
    # peaks equal to rounding count as ties
    k = int(np.flatnonzero(mag >= mag.max() * (1 - 1e-9))[0])
    return freqs[k], spec[k]


def _envelope_T2(t, y, offset, f):
    """Crude decay time from the running amplitude of the oscillation about ``offset``."""
    r = np.abs(y - offset)
    if f > 0:
        w = max(1, int(round(1.0 / (f * (t[1] - t[0])))))
        r = np.array([r[i:i + w].max() for i in range(0, len(r), w)])
        tt = t[::w][: len(r)]
    else:
        tt = t
    if r[0] <= 0:
        return t[-1]
    below = np.flatnonzero(r < r[: max(1, len(r) // 20)].max() / math.e)
    return float(tt[below[0]]) if below.size else float(t[-1] - t[0]) * 2


def fit_damped_rabi(t, y, sigma=None, p=None, min_periods=1.5, max_nfev=20000) -> RabiFit:
    """Least-squares fit of a stretched-exponentially damped cosine.

    The starting frequency comes from the zero-padded spectrum. When fewer
    than ``min_periods`` oscillations fit into the record, or the trace is
    flat, a decay-only model is fitted instead. ``p`` fixes the stretching
    exponent; otherwise it is free within [0.5, 3].
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 8:
        raise ValueError("need at least 8 samples")
    dt = np.diff(t)
    if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise ValueError("samples must be on a uniform, increasing grid")
    span = t[-1] - t[0]
    spread = float(np.ptp(y))
    if spread < 1e-12:
        return RabiFit(0.0, float(y.mean()), 0.0, 0.0, math.inf, 1.0, model="flat")

    f0, c0 = spectral_peak(t, y)
    oscillating = f0 * span >= min_periods
    offset0 = float(y.mean())
    T2_hi = 1e3 * span
    T2_lo = dt[0]
    starts_p = [p] if p is not None else [1.0, 2.0]

    best, best_res, best_cov = None, math.inf, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        if oscillating:
            A0 = 2 * abs(c0) / len(y)
            ph0 = math.atan2(c0.imag, c0.real) - 2 * math.pi * f0 * t[0]
            T20 = min(max(_envelope_T2(t, y, offset0, f0), 2 * T2_lo), T2_hi / 2)
            for p0 in starts_p:
                model, x0, lo, hi = _damped_setup(p, A0, f0, ph0, T20, p0, offset0, spread,
                                                  T2_lo, T2_hi, dt[0])
                try:
                    popt, pcov = curve_fit(model, t, y, p0=x0, bounds=(lo, hi), sigma=sigma,
                                           absolute_sigma=sigma is not None, max_nfev=max_nfev)
                except (RuntimeError, ValueError):
                    continue
                res = float(np.linalg.norm(model(t, *popt) - y))
                if res < best_res:
                    best, best_res, best_cov = popt, res, pcov
            if best is None:
                raise FitError("damped-cosine fit did not converge", (f0, A0, T20), math.nan)
            A, f, ph, T2 = best[:4]
            pp = best[4] if p is None else p
            B = best[-1]
            names = ["amplitude", "frequency", "phase", "T2"] + (["p"] if p is None else []) + ["offset"]
            err = _stderr(names, best_cov)
            if A < 0:
                A, ph = -A, ph + math.pi
            ph = (ph + math.pi) % (2 * math.pi) - math.pi
            return RabiFit(float(A), float(B), float(f), float(ph), float(T2), float(pp),
                           err, best_res, "damped")

        A0 = float(y[0] - y[-1]) or spread
        T20 = min(max(_envelope_T2(t, y, float(y[-1]), 0.0), 2 * T2_lo), T2_hi / 2)
        for p0 in starts_p:
            if p is None:
                model = decay
                x0 = [A0, T20, p0, float(y[-1])]
                lo = [-np.inf, T2_lo, P_BOUNDS[0], -np.inf]
                hi = [np.inf, T2_hi, P_BOUNDS[1], np.inf]
            else:
                def model(tt, A, T2, B, _p=p):
                    return decay(tt, A, T2, _p, B)
                x0 = [A0, T20, float(y[-1])]
                lo = [-np.inf, T2_lo, -np.inf]
                hi = [np.inf, T2_hi, np.inf]
            try:
                popt, pcov = curve_fit(model, t, y, p0=x0, bounds=(lo, hi), sigma=sigma,
                                       absolute_sigma=sigma is not None, max_nfev=max_nfev)
            except (RuntimeError, ValueError):
                continue
            res = float(np.linalg.norm(model(t, *popt) - y))
            if res < best_res:
                best, best_res, best_cov = popt, res, pcov
        if best is None:
            raise FitError("decay fit did not converge", (A0, T20), math.nan)
        names = ["amplitude", "T2"] + (["p"] if p is None else []) + ["offset"]
        err = _stderr(names, best_cov)
        A, T2 = best[0], best[1]
        pp = best[2] if p is None else p
        return RabiFit(float(A), float(best[-1]), 0.0, 0.0, float(T2), float(pp), err, best_res, "decay")


def _damped_setup(p_fixed, A0, f0, ph0, T20, p0, B0, spread, T2_lo, T2_hi, dt):
    nyq = 0.5 / dt
    f_lo, f_hi = 0.0, nyq
    if p_fixed is None:
        model = damped_cosine
        x0 = [A0, f0, ph0, T20, p0, B0]
        lo = [-2 * spread, f_lo, -4 * math.pi, T2_lo, P_BOUNDS[0], -np.inf]
        hi = [2 * spread, f_hi, 4 * math.pi, T2_hi, P_BOUNDS[1], np.inf]
    else:
        def model(t, A, f, ph, T2, B):
            return damped_cosine(t, A, f, ph, T2, p_fixed, B)
        x0 = [A0, f0, ph0, T20, B0]
        lo = [-2 * spread, f_lo, -4 * math.pi, T2_lo, -np.inf]
        hi = [2 * spread, f_hi, 4 * math.pi, T2_hi, np.inf]
    x0 = np.clip(x0, np.nextafter(lo, np.inf), np.nextafter(hi, -np.inf))
    return model, x0, lo, hi


def _stderr(names, cov):
    if cov is None:
        return {}
    d = np.sqrt(np.clip(np.diag(cov), 0, None))
    return {k: float(v) for k, v in zip(names, d)}


def _positive(**kw):
    for k, v in kw.items():
        if not (v > 0):
            raise ValueError(f"{k} must be positive, got {v!r}")


def min_field(sigma_t, tau, alpha, C, gamma=GAMMA_NV):
    """Smallest resolvable field change, sigma(t) / (gamma alpha tau C)."""
    _positive(sigma_t=np.min(sigma_t), tau=tau, alpha=alpha, C=C, gamma=gamma)
    return sigma_t / (gamma * alpha * tau * C)


def shot_noise_sigma(n_ph, t, tau):
    """sigma(t) = 1 / sqrt(N_ph N) with N = t / tau repetitions."""
    _positive(n_ph=n_ph, tau=tau, t=np.min(t))
    return 1.0 / np.sqrt(n_ph * np.asarray(t, dtype=float) / tau)


def sensitivity(sigma_t, t, tau, alpha, C, gamma=GAMMA_NV):
    """eta = dB_min(t, tau) sqrt(t) from a measured (or simulated) sigma(t)."""
    _positive(t=np.min(t))
    return min_field(sigma_t, tau, alpha, C, gamma) * np.sqrt(t)


def sensitivity_shot_noise(n_ph, tau, alpha, C, gamma=GAMMA_NV):
    """Closed form of :func:`sensitivity` under shot noise; independent of t."""
    _positive(n_ph=n_ph, tau=tau, alpha=alpha, C=C, gamma=gamma)
    return 1.0 / (gamma * alpha * C * math.sqrt(n_ph * tau))


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def bandwidth(T2):
    """Spectral resolution 1/T2 (Hz for T2 in seconds)."""
    _positive(T2=T2)
    return 1.0 / T2


@dataclass
class SensitivityReport:
    t: np.ndarray
    sigma_t: np.ndarray
    dB_min: np.ndarray
    eta: np.ndarray
    tau: float
    alpha: float
    C: float
    gamma: float
    bandwidth: float

    @classmethod
    def build(cls, t, sigma_t, tau, alpha, C, gamma=GAMMA_NV, T2=None):
        t = np.asarray(t, dtype=float)
        sigma_t = np.asarray(sigma_t, dtype=float)
        dB = min_field(sigma_t, tau, alpha, C, gamma)
        return cls(t, sigma_t, dB, dB * np.sqrt(t), tau, alpha, C, gamma,
                   bandwidth(T2 if T2 is not None else tau))
