"""CRAB pulse parametrization E(t) = E0 f(t) and experimental constraints."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from fmo_control.model import FmoModel, polarization_vector, site1_polar_angles

# shortest allowed modulation period (10 fs)
MIN_PERIOD = 0.010
NU_MAX = 2.0 * math.pi / MIN_PERIOD
DEFAULT_E0 = 15.0
DEFAULT_M = 7
DEFAULT_T = 0.250
RAMP_HEIGHT = 5.0
RAMP_STEEPNESS = 200.0


def ramp_lambda(t, t_total: float):
    """Edge ramp 1 + 5[exp(200(t-T)/T) + exp(-200 t/T)]; 6 at both ends, ~1 inside."""
    t = np.asarray(t, dtype=float)
    s = RAMP_STEEPNESS / t_total
    return 1.0 + RAMP_HEIGHT * (np.exp(s * (t - t_total)) + np.exp(-s * t))


@dataclass(frozen=True, eq=False)
class PulseParams:
    """Full CRAB parameter set. Times in ps, frequencies nu in rad/ps, omega_l in cm^-1."""

    e0: float = DEFAULT_E0
    t0: float = DEFAULT_T / 2
    sigma: float = DEFAULT_T / 6
    a: np.ndarray = field(default_factory=lambda: np.zeros(DEFAULT_M))
    b: np.ndarray = field(default_factory=lambda: np.zeros(DEFAULT_M))
    nu: np.ndarray = field(default_factory=lambda: np.zeros(DEFAULT_M))
    omega_l: float = 0.0
    dtheta: float = 0.0
    dphi: float = 0.0
    t_total: float = DEFAULT_T
    seed: int | None = None

    def __post_init__(self):
        for name in ("a", "b", "nu"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.a) == len(self.b) == len(self.nu)):
            raise ValueError("a, b and nu must have the same length")
        if not self.t_total > 0:
            raise ValueError("t_total must be positive")

    @property
    def m(self) -> int:
        return len(self.a)

    def envelope(self, t):
        return crab_envelope(t, self)

    def field(self, t):
        return self.e0 * crab_envelope(t, self)

    def polarization(self, model: FmoModel) -> np.ndarray:
        th1, ph1 = site1_polar_angles(model)
        return polarization_vector(th1 + self.dtheta, ph1 + self.dphi)

    # search-space vector: (dtheta, dphi, omega_l, t0, sigma, A_1..A_m, B_1..B_m)
    def to_vector(self) -> np.ndarray:
        head = [self.dtheta, self.dphi, self.omega_l, self.t0, self.sigma]
        return np.concatenate([head, self.a, self.b])

    def with_vector(self, x) -> PulseParams:
        x = np.asarray(x, dtype=float)
        m = self.m
        if x.shape != (5 + 2 * m,):
            raise ValueError(f"expected vector of length {5 + 2 * m}, got {x.shape}")
        return replace(
            self,
            dtheta=float(x[0]),
            dphi=float(x[1]),
            omega_l=float(x[2]),
            t0=float(x[3]),
            sigma=float(x[4]),
            a=x[5 : 5 + m],
            b=x[5 + m :],
        )

    def wrapped_angles(self) -> tuple[float, float]:
        return self.dtheta % (2 * math.pi), self.dphi % (2 * math.pi)

    def to_dict(self) -> dict:
        th, ph = self.wrapped_angles()
        return {
            "kind": "crab",
            "e0": self.e0,
            "t0": self.t0,
            "sigma": self.sigma,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "nu": self.nu.tolist(),
            "omega_l": self.omega_l,
            "dtheta": self.dtheta,
            "dphi": self.dphi,
            "dtheta_wrapped": th,
            "dphi_wrapped": ph,
            "t_total": self.t_total,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PulseParams:
        keys = ("e0", "t0", "sigma", "a", "b", "nu", "omega_l", "dtheta", "dphi", "t_total", "seed")
        return cls(**{k: d[k] for k in keys if k in d})


@dataclass(frozen=True, eq=False)
class SampledPulse:
    """Pulse with a piecewise-linear envelope through (times, values).

    Used for the simplified (linearly interpolated or constant) pulse shapes;
    carrier and polarization follow the same conventions as ``PulseParams``.
    """

    times: np.ndarray
    values: np.ndarray
    e0: float = DEFAULT_E0
    omega_l: float = 0.0
    dtheta: float = 0.0
    dphi: float = 0.0
    t_total: float = DEFAULT_T

    def __post_init__(self):
        for name in ("times", "values"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.times.shape != self.values.shape or len(self.times) < 2:
            raise ValueError("need at least two (time, value) knots")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("knot times must be strictly increasing")

    def envelope(self, t):
        return np.interp(np.asarray(t, dtype=float), self.times, self.values, left=0.0, right=0.0)

    def field(self, t):
        return self.e0 * self.envelope(t)

    def polarization(self, model: FmoModel) -> np.ndarray:
        th1, ph1 = site1_polar_angles(model)
        return polarization_vector(th1 + self.dtheta, ph1 + self.dphi)

    def to_dict(self) -> dict:
        return {
            "kind": "sampled",
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "e0": self.e0,
            "omega_l": self.omega_l,
            "dtheta": self.dtheta,
            "dphi": self.dphi,
            "t_total": self.t_total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SampledPulse:
        keys = ("times", "values", "e0", "omega_l", "dtheta", "dphi", "t_total")
        return cls(**{k: d[k] for k in keys if k in d})


def crab_envelope(t, p: PulseParams):
    """Normalized CRAB modulation f(t); |f| <= 1 for any parameters."""
    t = np.asarray(t, dtype=float)
    gauss = np.exp(-((t - p.t0) ** 2) / (2.0 * p.sigma**2))
    phase = np.multiply.outer(t, p.nu)
    series = 1.0 + np.sin(phase) @ p.a + np.cos(phase) @ p.b
    norm = 1.0 + np.sum(np.abs(p.a)) + np.sum(np.abs(p.b))
    return gauss / ramp_lambda(t, p.t_total) * series / norm


def sample_frequencies(m: int, t_total: float, seed, shared: bool = False) -> np.ndarray:
    """Randomized CRAB harmonics nu_k = 2 pi k r_k / T with r_k in (0, 1].

    Any harmonic faster than the 10 fs modulation limit is redrawn. With
    ``shared=True`` a single r multiplies every harmonic. ``m=0`` gives the
    plain Gaussian family.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    rng = np.random.default_rng(seed)
    k = np.arange(1, m + 1)
    base = 2.0 * math.pi * k / t_total
    if shared:
        while True:
            r = 1.0 - rng.random()
            if np.all(base * r <= NU_MAX):
                return base * r
    r = 1.0 - rng.random(m)
    nu = base * r
    bad = nu > NU_MAX
    while np.any(bad):
        nu[bad] = base[bad] * (1.0 - rng.random(int(bad.sum())))
        bad = nu > NU_MAX
    return nu


@dataclass(frozen=True)
class Violation:
    kind: str
    magnitude: float
    message: str


def check_constraints(p, e0_max: float = DEFAULT_E0) -> list[Violation]:
    """Amplitude, spectral-resolution and width violations of a pulse (empty if feasible)."""
    out = []
    if p.e0 > e0_max:
        out.append(Violation("amplitude", (p.e0 - e0_max) / e0_max, f"e0={p.e0} exceeds {e0_max}"))
    nu = getattr(p, "nu", None)
    if nu is not None and len(nu):
        worst = float(np.max(np.abs(nu)))
        if worst > NU_MAX * (1 + 1e-12):
            out.append(
                Violation(
                    "resolution",
                    (worst - NU_MAX) / NU_MAX,
                    f"modulation period {2e3 * math.pi / worst:.2f} fs is below 10 fs",
                )
            )
    sigma = getattr(p, "sigma", None)
    if sigma is not None and not sigma > 0:
        out.append(Violation("width", -sigma + 1e-3, f"sigma={sigma} must be positive"))
    return out


def gaussian_pulse(
    e0=DEFAULT_E0, t0=None, sigma=None, omega_l=0.0, dtheta=0.0, dphi=0.0, t_total=DEFAULT_T, m=DEFAULT_M
) -> PulseParams:
    """Plain Gaussian (all Fourier coefficients zero) on the ramped window."""
    return PulseParams(
        e0=e0,
        t0=t_total / 2 if t0 is None else t0,
        sigma=t_total / 6 if sigma is None else sigma,
        a=np.zeros(m),
        b=np.zeros(m),
        nu=np.zeros(m),
        omega_l=omega_l,
        dtheta=dtheta,
        dphi=dphi,
        t_total=t_total,
    )


def piecewise_linear(p: PulseParams, n_knots: int = 11) -> SampledPulse:
    """Replace the envelope of ``p`` by linear interpolation through equally spaced knots."""
    if n_knots < 2:
        raise ValueError("n_knots must be >= 2")
    knots = np.linspace(0.0, p.t_total, n_knots)
    return SampledPulse(
        times=knots,
        values=crab_envelope(knots, p),
        e0=p.e0,
        omega_l=p.omega_l,
        dtheta=p.dtheta,
        dphi=p.dphi,
        t_total=p.t_total,
    )


def constant_pulse(p: PulseParams) -> SampledPulse:
    """Constant envelope with the same time-integrated area as ``p``."""
    grid = np.linspace(0.0, p.t_total, 2001)
    level = np.trapezoid(crab_envelope(grid, p), grid) / p.t_total
    return SampledPulse(
        times=[0.0, p.t_total],
        values=[level, level],
        e0=p.e0,
        omega_l=p.omega_l,
        dtheta=p.dtheta,
        dphi=p.dphi,
        t_total=p.t_total,
    )


def pulse_from_dict(d: dict):
    if d.get("kind", "crab") == "sampled":
        return SampledPulse.from_dict(d)
    return PulseParams.from_dict(d)


def save_pulse(p, path) -> None:
    Path(path).write_text(json.dumps(p.to_dict(), indent=2))


def load_pulse(path):
    return pulse_from_dict(json.loads(Path(path).read_text()))


def write_envelope_csv(p, path, n: int = 1001) -> None:
    """Dump (t_fs, f, E) on a uniform grid over [0, T]."""
    t = np.linspace(0.0, p.t_total, n)
    f = p.envelope(t)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_fs", "f", "E"])
        for ti, fi in zip(t, f):
            w.writerow([f"{1e3 * ti:.17g}", f"{fi:.17g}", f"{p.e0 * fi:.17g}"])
