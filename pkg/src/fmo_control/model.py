"""FMO exciton model: site Hamiltonian, transition dipoles, noise rates.

Units used throughout the package: energies in cm^-1, times in ps, dipoles
in Debye and field amplitudes in D^-1 cm^-1 so that mu.e*E is an energy in
cm^-1. Basis of the 9-level space: 0 = electronic ground state, 1..7 = single
excitation on site j, 8 = sink (reaction centre).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# hbar in cm^-1 ps, i.e. 1 / (2 pi c) with c in cm/ps
HBAR = 5.308837458876145
N_SITES = 7
DIM = N_SITES + 2
GROUND = 0
SINK = 8
SINK_SITE = 3
ENERGY_SHIFT = 12230.0
KB_CM = 0.6950348004  # Boltzmann constant, cm^-1 / K

# site energies shifted by 12230 cm^-1; off-diagonal couplings in cm^-1
_H_SITE = (
    (215.0, -104.1, 5.1, -4.3, 4.7, -15.1, -7.8),
    (-104.1, 220.0, 32.6, 7.1, 5.4, 8.3, 0.8),
    (5.1, 32.6, 0.0, -46.8, 1.0, -8.1, 5.1),
    (-4.3, 7.1, -46.8, 125.0, -70.7, -14.7, -61.5),
    (4.7, 5.4, 1.0, -70.7, 450.0, 89.7, -2.5),
    (-15.1, 8.3, -8.1, -14.7, 89.7, 330.0, 32.7),
    (-7.8, 0.8, 5.1, -61.5, -2.5, 32.7, 280.0),
)

# transition dipoles (x, y, z) in Debye for BChl 1..7
_DIPOLES = (
    (-3.081, 2.119, -1.669),
    (-3.481, -2.083, -0.190),
    (-0.819, -3.972, -0.331),
    (-3.390, 2.111, -1.080),
    (-3.196, -2.361, 0.7920),
    (-0.621, 3.636, 1.882),
    (-1.619, 2.850, -2.584),
)

DEFAULT_GAMMA_DISS = 5e-4
DEFAULT_GAMMA_SINK = 6.3
DEFAULT_GAMMA_DEPH = 1.0


class ModelError(ValueError):
    """Invalid model parameters."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FmoModel:
    """Immutable physics description of one FMO monomer.

    Rates are per-site arrays (length 7), in ps^-1.
    """

    h_site: np.ndarray
    dipoles: np.ndarray
    gamma_deph: np.ndarray
    gamma_diss: np.ndarray
    gamma_sink: float = DEFAULT_GAMMA_SINK
    hbar: float = HBAR

    def __post_init__(self):
        h = _frozen(self.h_site)
        if h.shape != (N_SITES, N_SITES) or not np.array_equal(h, h.T):
            raise ModelError("h_site must be a symmetric 7x7 matrix")
        d = _frozen(self.dipoles)
        if d.shape != (N_SITES, 3):
            raise ModelError("dipoles must have shape (7, 3)")
        deph = _frozen(np.broadcast_to(self.gamma_deph, (N_SITES,)))
        diss = _frozen(np.broadcast_to(self.gamma_diss, (N_SITES,)))
        for name, arr in (("gamma_deph", deph), ("gamma_diss", diss)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ModelError(f"{name} must be finite and non-negative")
        if not math.isfinite(self.gamma_sink) or self.gamma_sink < 0:
            raise ModelError("gamma_sink must be finite and non-negative")
        if not self.hbar > 0:
            raise ModelError("hbar must be positive")
        object.__setattr__(self, "h_site", h)
        object.__setattr__(self, "dipoles", d)
        object.__setattr__(self, "gamma_deph", deph)
        object.__setattr__(self, "gamma_diss", diss)
        object.__setattr__(self, "gamma_sink", float(self.gamma_sink))

    @property
    def site_energies(self) -> np.ndarray:
        return np.diag(self.h_site).copy()

    def with_dephasing(self, gamma: float) -> FmoModel:
        """Copy of the model with a uniform dephasing rate."""
        return replace(self, gamma_deph=np.full(N_SITES, float(gamma)))

    def exciton_energies(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.h_site)

    def to_dict(self) -> dict:
        return {
            "h_site": self.h_site.tolist(),
            "dipoles": self.dipoles.tolist(),
            "gamma_deph": self.gamma_deph.tolist(),
            "gamma_diss": self.gamma_diss.tolist(),
            "gamma_sink": self.gamma_sink,
            "hbar": self.hbar,
        }


_OVERRIDE_KEYS = {"h_site", "dipoles", "gamma_deph", "gamma_diss", "gamma_sink", "hbar"}


def build_fmo_model(overrides: dict | None = None) -> FmoModel:
    """Build the FMO model, optionally replacing any field.

    Scalar rate overrides are broadcast to all sites. Unknown keys, non-finite
    values and negative rates raise ``ModelError``.
    """
    values = {
        "h_site": np.array(_H_SITE),
        "dipoles": np.array(_DIPOLES),
        "gamma_deph": np.full(N_SITES, DEFAULT_GAMMA_DEPH),
        "gamma_diss": np.full(N_SITES, DEFAULT_GAMMA_DISS),
        "gamma_sink": DEFAULT_GAMMA_SINK,
        "hbar": HBAR,
    }
    for key, val in (overrides or {}).items():
        if key not in _OVERRIDE_KEYS:
            raise ModelError(f"unknown model override: {key!r}")
        arr = np.asarray(val, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ModelError(f"override {key!r} is not finite")
        if key.startswith("gamma") and np.any(arr < 0):
            raise ModelError(f"override {key!r} must be non-negative")
        values[key] = float(arr) if arr.ndim == 0 and key in ("gamma_sink", "hbar") else arr
    return FmoModel(**values)


def site1_polar_angles(model: FmoModel) -> tuple[float, float]:
    """Spherical angles (theta_1, phi_1) of the site-1 transition dipole."""
    x, y, z = model.dipoles[0]
    norm = math.sqrt(x * x + y * y + z * z)
    if norm == 0.0:
        raise ModelError("site-1 dipole has zero length")
    return math.acos(z / norm), math.atan2(y, x)


def polarization_vector(theta: float, phi: float) -> np.ndarray:
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def polarization_vectors(theta, phi) -> np.ndarray:
    """Vectorized ``polarization_vector``; returns shape (..., 3)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def basis_state(index: int) -> np.ndarray:
    """Projector |index><index| on the 9-level space."""
    rho = np.zeros((DIM, DIM), dtype=complex)
    rho[index, index] = 1.0
    return rho


def ground_state() -> np.ndarray:
    return basis_state(GROUND)


def site_state(site: int) -> np.ndarray:
    """Excitation localized on ``site`` (1-based)."""
    if not 1 <= site <= N_SITES:
        raise ValueError(f"site must be in 1..{N_SITES}, got {site}")
    return basis_state(site)


def pure_state(amplitudes: dict[int, complex]) -> np.ndarray:
    """Normalized |psi><psi| from {basis index: amplitude}."""
    psi = np.zeros(DIM, dtype=complex)
    for idx, amp in amplitudes.items():
        psi[idx] = amp
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def bright_state() -> np.ndarray:
    """|+> = (|1> + |2>)/sqrt(2)."""
    return pure_state({1: 1.0, 2: 1.0})


def antisymmetric_state() -> np.ndarray:
    """|-> = (|1> - |2>)/sqrt(2)."""
    return pure_state({1: 1.0, 2: -1.0})


def dark_state(weights=(0.70, 0.25, 0.05)) -> np.ndarray:
    """Incoherent mixture on sites 5, 6, 7 with the given populations."""
    rho = np.zeros((DIM, DIM), dtype=complex)
    for site, w in zip((5, 6, 7), weights):
        rho[site, site] = w
    return rho


def check_density_matrix(rho: np.ndarray, herm_tol=1e-10, trace_tol=1e-8, psd_tol=1e-8) -> list[str]:
    """Return the list of violated density-matrix invariants (empty if valid)."""
    problems = []
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > herm_tol:
        problems.append(f"not Hermitian ({herm:.2e})")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > trace_tol:
        problems.append(f"trace {tr!r} != 1")
    lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lo < -psd_tol:
        problems.append(f"negative eigenvalue {lo:.2e}")
    return problems
