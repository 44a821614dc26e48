"""Run configuration: a flat, typed ``key = value`` text format.

Grammar, one entry per line::

    # comment (also allowed after a value)
    key = value

Values are numbers (``inf`` and ``nan`` allowed), words, or comma-separated
number lists. Unknown keys, repeated keys and badly typed values are errors
that name the line. Frequencies (``omega0``, ``Omega1``, ``Omega2``, ``g``,
``omega_s``, ``detuning``) are given as omega / 2 pi: cycles per time unit,
or Hz with ``unit = SI``. Noise amplitude ``sigma_B`` is an angular
frequency; ``sigma_1`` and ``sigma_2`` are relative. Times are in time units
(seconds with ``unit = SI``, rescaled internally by ``time_unit_s``).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .model import TWO_PI, DriveConfig, Frame
from .noise import NoiseConfig, OUProcess
from .readout import FluorescenceModel

NAN = math.nan


class ConfigError(ValueError):
    def __init__(self, msg, line=None, key=None, source=None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        if key is not None:
            where += f" {key}:"
        super().__init__(f"{where} {msg}".strip())
        self.line, self.key = line, key


def _choice(*opts):
    def conv(s):
        if s not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return s
    conv.__name__ = "choice"
    return conv


def _floats(s):
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(float(p) for p in parts)


def _sign(s):
    v = int(s)
    if v not in (-1, 1):
        raise ValueError("expected +1 or -1")
    return v


def _str(s):
    return s


# key: (converter, default, description)
SCHEMA = {
    "unit": (_choice("scaled", "SI"), "scaled", "scaled time units, or SI (Hz and seconds)"),
    "time_unit_s": (float, NAN, "seconds per internal time unit (SI default 1e-6; scaled: for reports)"),
    "omega0": (float, 500.0, "qubit splitting / 2 pi"),
    "Omega1": (float, 10.0, "first drive Rabi frequency / 2 pi"),
    "Omega2": (float, 1.5, "second drive Rabi frequency / 2 pi (0 = single drive)"),
    "g": (float, 0.2, "signal strength / 2 pi"),
    "omega_s": (float, NAN, "signal frequency / 2 pi (nan: branch resonance + detuning)"),
    "detuning": (float, 0.0, "signal offset / 2 pi from the branch resonance"),
    "branch1": (_sign, 1, "resonance branch sign of Omega1"),
    "branch2": (_sign, 1, "resonance branch sign of Omega2 / 2"),
    "phi": (float, 0.0, "signal phase (rad)"),
    "drive2_phase": (float, math.pi / 2, "second-drive modulation phase (rad)"),
    "sigma_B": (float, 0.0, "field noise amplitude (angular frequency)"),
    "tau_B": (float, NAN, "field noise correlation time (nan: 25 sqrt(2)/sigma_B)"),
    "sigma_1": (float, 0.0, "relative first-drive noise"),
    "tau_1": (float, NAN, "first-drive noise correlation time (nan: 100 first-drive periods)"),
    "sigma_2": (float, NAN, "relative second-drive noise (nan: sigma_1)"),
    "tau_2": (float, NAN, "second-drive noise correlation time (nan: tau_1)"),
    "T1": (float, math.inf, "population lifetime"),
    "C": (float, 0.3, "fluorescence contrast"),
    "n_ph": (float, NAN, "photons per sequence (nan: 0.03 per 350 ns of sensing time)"),
    "alpha": (float, NAN, "phase accumulation factor (nan: 1/2 single, 1/4 double)"),
    "gamma": (float, TWO_PI * 28.8e9, "gyromagnetic ratio (rad / s / T)"),
    "repetitions": (int, 100000, "sequence repetitions per strobe point for photon sampling"),
    "frame": (_choice("Lab", "IP1", "IP2", "IP3"), "IP1", "frame the simulation is integrated in"),
    "protocol": (_choice("signal", "drive", "ramsey"), "signal", "what simulate records"),
    "stepper": (_choice("cfm4", "rk4"), "cfm4", "integrator"),
    "t_final": (float, 40.0, "record length"),
    "strobe_every": (int, 1, "record every n-th first-drive period"),
    "trajectories": (int, 200, "Monte Carlo trajectories"),
    "seed": (int, 0, "master seed"),
    "threads": (int, 0, "worker threads (0: all cores)"),
    "scan_axis": (_choice("Omega1", "Omega2", "g", "detuning"), "g", "scanned parameter"),
    "scan_values": (_floats, (0.05, 0.1, 0.2), "scan grid (frequencies / 2 pi)"),
    "scan_objective": (_choice("T2", "amplitude", "eta"), "T2", "scan objective"),
    "scan_protocol": (_choice("auto", "signal", "drive", "ramsey"), "auto", "scan protocol"),
    "target_T2_star": (float, NAN, "calibration target T2*"),
    "target_T2_1": (float, NAN, "calibration target, single drive"),
    "target_T2_12": (float, NAN, "calibration target, double drive"),
    "tau_single": (float, NAN, "sensing time with signal, single drive (nan: simulate)"),
    "tau_naive": (float, NAN, "sensing time without signal, single drive (nan: simulate)"),
    "tau_double": (float, NAN, "sensing time with signal, double drive (nan: simulate)"),
    "sens_t_min": (float, NAN, "shortest total measurement time (nan: 10 longest tau)"),
    "sens_decades": (float, 3.0, "decades of total measurement time"),
    "sens_points": (int, 13, "points on the total-time axis"),
    "sens_experiments": (int, 400, "repeated experiments per point for the empirical sigma"),
    "out": (_str, "out", "output directory"),
}

FREQ_KEYS = ("omega0", "Omega1", "Omega2", "g", "omega_s", "detuning")
TIME_KEYS = ("tau_B", "tau_1", "tau_2", "T1", "t_final", "target_T2_star", "target_T2_1",
             "target_T2_12", "tau_single", "tau_naive", "tau_double", "sens_t_min")
RATE_KEYS = ("sigma_B",)

_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")


def _same(a, b):
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


@dataclass
class RunConfig:
    """All run settings as typed values, keyed as in :data:`SCHEMA`."""

    values: dict = field(default_factory=lambda: {k: v[1] for k, v in SCHEMA.items()})
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return all(_same(self.values[k], other.values[k]) for k in SCHEMA)

    def set(self, key, text, line=None) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", line, source=self.source)
        conv = SCHEMA[key][0]
        try:
            self.values[key] = conv(text)
        except ValueError as exc:
            raise ConfigError(f"bad value {text!r} ({exc})", line, key, self.source) from None

    def override(self, assignments) -> "RunConfig":
        """Apply ``key=value`` strings (command-line overrides)."""
        for a in assignments or ():
            if "=" not in a:
                raise ConfigError(f"override {a!r} is not key=value")
            k, v = a.split("=", 1)
            self.set(k.strip(), v.strip())
        return self

    # -- text form -------------------------------------------------------
    @classmethod
    def parse(cls, text: str, source=None) -> "RunConfig":
        rc = cls(source=source)
        seen = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0]
            if not line.strip():
                continue
            m = _LINE.match(line)
            if not m:
                raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n, source=source)
            key, val = m.groups()
            if key in seen:
                raise ConfigError(f"key {key!r} repeated (first on line {seen[key]})", n, source=source)
            seen[key] = n
            if val == "":
                raise ConfigError("missing value", n, key, source)
            rc.set(key, val, n)
        return rc

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
        return cls.parse(text, source=str(path))

    def dumps(self, comments=True) -> str:
        lines = []
        for k, (conv, _default, doc) in SCHEMA.items():
            v = self.values[k]
            if isinstance(v, tuple):
                s = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            lines.append(f"{k} = {s}" + (f"  # {doc}" if comments else ""))
        return "\n".join(lines) + "\n"

    def validate(self) -> None:
        """Range checks beyond types; raises ConfigError naming the key."""
        v = self.values
        for k in ("omega0", "Omega1", "Omega2", "g", "t_final", "C", "gamma"):
            if not (v[k] >= 0 and math.isfinite(v[k])):
                raise ConfigError(f"must be finite and >= 0, got {v[k]!r}", key=k, source=self.source)
        for k in ("trajectories", "repetitions", "strobe_every", "sens_points", "sens_experiments"):
            if v[k] < 1:
                raise ConfigError(f"must be >= 1, got {v[k]!r}", key=k, source=self.source)
        if v["threads"] < 0:
            raise ConfigError("must be >= 0", key="threads", source=self.source)
        if not v["t_final"] > 0:
            raise ConfigError("must be positive", key="t_final", source=self.source)

    # -- derived objects (internal units) --------------------------------
    @property
    def time_unit_s(self) -> float:
        u = self.values["time_unit_s"]
        if math.isnan(u):
            return 1e-6 if self.values["unit"] == "SI" else 1.0
        return u

    @property
    def scale(self) -> float:
        """Factor that converts input times to internal times (1 for scaled input)."""
        return 1.0 / self.time_unit_s if self.values["unit"] == "SI" else 1.0

    def internal(self, key) -> float:
        v = self.values[key]
        if key in FREQ_KEYS:
            return TWO_PI * v / self.scale
        if key in RATE_KEYS:
            return v / self.scale
        if key in TIME_KEYS:
            return v * self.scale
        return v

    def drive(self) -> DriveConfig:
        f = self.internal
        w0, O1, O2 = f("omega0"), f("Omega1"), f("Omega2")
        ws = f("omega_s")
        if math.isnan(ws):
            ws = w0 + self["branch1"] * O1 + self["branch2"] * O2 / 2 + f("detuning")
        return DriveConfig(w0, O1, O2, ws, f("g"), self["phi"], self["drive2_phase"])

    def noise(self) -> NoiseConfig:
        f = self.internal
        cfg = self.drive()
        sB = f("sigma_B")
        base = NoiseConfig.with_defaults(cfg, sigma_B=sB, sigma_1=self["sigma_1"],
                                         sigma_2=None if math.isnan(self["sigma_2"]) else self["sigma_2"],
                                         T1=f("T1"))
        tau_B = f("tau_B") if not math.isnan(self["tau_B"]) else base.deltaB.tau_c
        tau_1 = f("tau_1") if not math.isnan(self["tau_1"]) else base.deltaOmega1.tau_c
        tau_2 = f("tau_2") if not math.isnan(self["tau_2"]) else tau_1
        return NoiseConfig(OUProcess(sB, tau_B), OUProcess(base.deltaOmega1.sigma, tau_1),
                           OUProcess(base.deltaOmega2.sigma, tau_2), base.T1)

    def fluorescence(self, tau=None) -> FluorescenceModel:
        """Photon model; without an explicit ``n_ph`` the budget follows the sensing time ``tau``."""
        if not math.isnan(self["n_ph"]):
            return FluorescenceModel(self["C"], self["n_ph"])
        if tau is None:
            return FluorescenceModel(self["C"])
        return FluorescenceModel.synthetic(tau * self.time_unit_s, self["C"])

    @property
    def frame(self) -> Frame:
        return Frame[self["frame"]]

    def targets(self) -> dict:
        return {k: self.internal(f"target_{k}") for k in ("T2_star", "T2_1", "T2_12")}

    def units_record(self) -> dict:
        return {"unit": self["unit"], "time_unit_s": self.time_unit_s, "input_to_internal_time": self.scale}


BUNDLED = Path(__file__).parent / "data"


def resolve_config_path(name) -> Path:
    """A path as given, or the name of a bundled configuration (``fig2b`` or ``fig2b.cfg``)."""
    p = Path(name)
    if p.exists():
        return p
    for cand in (BUNDLED / p.name, BUNDLED / f"{p.name}.cfg"):
        if p.parent == Path(".") and cand.exists():
            return cand
    return p
