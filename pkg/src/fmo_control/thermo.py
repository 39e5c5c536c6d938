"""Orientation of FMO complexes by a far-detuned field.

The light shift of a complex with polarization direction e (in the molecular
frame) is Delta = sum_i |mu_i.e E0|^2 / (omega_i - omega_l). Angles here are
absolute polar angles of e in the dipole-table frame, not offsets from site 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fmo_control.model import KB_CM, FmoModel, polarization_vectors

EV = 1.602176634e-19  # J
POLE_TOL = 1.0  # cm^-1


@dataclass(frozen=True)
class OrientingField:
    omega_l: float = -1000.0
    e0: float = 70.0


@dataclass(frozen=True)
class RotorSpec:
    """Rigid disk: mass in kg, radius in m, thermal energy in eV."""

    mass: float = 15e-23
    radius: float = 2e-9
    e_thermal: float = 0.025

    def __post_init__(self):
        if not (self.mass > 0 and self.radius > 0 and self.e_thermal > 0):
            raise ValueError("rotor parameters must be positive")


def _detunings(field: OrientingField, model: FmoModel) -> np.ndarray:
    det = model.site_energies - field.omega_l
    if np.any(np.abs(det) < POLE_TOL):
        raise ValueError(f"omega_l={field.omega_l} is within {POLE_TOL} cm^-1 of a site energy")
    return det


def orientation_energy(theta, phi, field: OrientingField, model: FmoModel):
    """Light shift Delta(theta, phi) in cm^-1; broadcasts over angle arrays."""
    det = _detunings(field, model)
    rabi = polarization_vectors(theta, phi) @ model.dipoles.T * field.e0
    return np.sum(rabi**2 / det, axis=-1)


def max_rabi(theta, phi, e0: float, model: FmoModel):
    """Largest single-site Rabi energy max_i |mu_i.e| e0, in cm^-1."""
    proj = polarization_vectors(theta, phi) @ model.dipoles.T
    return np.max(np.abs(proj), axis=-1) * abs(e0)


@dataclass
class SphereGrid:
    theta: np.ndarray  # (n_theta,)
    phi: np.ndarray  # (n_phi,)

    @classmethod
    def make(cls, n_theta: int = 181, n_phi: int = 360) -> SphereGrid:
        return cls(np.linspace(0.0, math.pi, n_theta), np.arange(n_phi) * (2 * math.pi / n_phi))

    def mesh(self):
        return np.meshgrid(self.theta, self.phi, indexing="ij")

    def weights(self) -> np.ndarray:
        """sin(theta) dtheta dphi quadrature weights (trapezoid in theta)."""
        dth = np.gradient(self.theta) if len(self.theta) > 1 else np.ones(1)
        w_th = np.sin(self.theta) * dth
        if len(self.theta) > 1:
            w_th[0] *= 0.5
            w_th[-1] *= 0.5
        return np.outer(w_th, np.full(len(self.phi), 2 * math.pi / len(self.phi)))

    def directions(self) -> np.ndarray:
        th, ph = self.mesh()
        return polarization_vectors(th, ph)


def energy_landscape(field: OrientingField, model: FmoModel, grid: SphereGrid | None = None) -> np.ndarray:
    grid = grid or SphereGrid.make()
    th, ph = grid.mesh()
    return orientation_energy(th, ph, field, model)


def landscape_argmax(field: OrientingField, model: FmoModel, grid: SphereGrid | None = None) -> tuple[float, float]:
    """(theta, phi) of the deepest light shift.

    Delta is even in e, so every maximum has an antipodal twin; the one with
    0 <= phi < pi is returned.
    """
    grid = grid or SphereGrid.make()
    delta = energy_landscape(field, model, grid)
    half = grid.phi < math.pi
    sub = delta[:, half]
    i, j = np.unravel_index(np.argmax(sub), sub.shape)
    return float(grid.theta[i]), float(grid.phi[half][j])


@dataclass
class OrientationPdf:
    grid: SphereGrid
    prob: np.ndarray  # cell probabilities, sum to 1
    density: np.ndarray  # per unit solid angle

    def mode(self) -> tuple[float, float]:
        half = self.grid.phi < math.pi
        sub = self.density[:, half]
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        return float(self.grid.theta[i]), float(self.grid.phi[half][j])


def boltzmann_orientation_pdf(
    field: OrientingField, model: FmoModel, temperature: float, grid: SphereGrid | None = None
) -> OrientationPdf:
    """Boltzmann-Gibbs weight exp(+Delta / k_B T) over polarization directions.

    The light shift lowers the energy of the complex, so orientations with the
    largest Delta are the most probable.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    grid = grid or SphereGrid.make()
    delta = energy_landscape(field, model, grid)
    boltz = np.exp((delta - delta.max()) / (KB_CM * temperature))
    w = grid.weights()
    z = np.sum(boltz * w)
    return OrientationPdf(grid=grid, prob=boltz * w / z, density=boltz / z)


def cone_population_fraction(
    field: OrientingField,
    model: FmoModel,
    temperature: float,
    opening: float,
    grid: SphereGrid | None = None,
) -> float:
    """Probability that e lies within ``opening`` (half-angle) of the most probable direction.

    By the e -> -e symmetry of Delta, a half-angle of pi/2 always holds exactly 1/2.
    """
    pdf = boltzmann_orientation_pdf(field, model, temperature, grid)
    axis = polarization_vectors(*pdf.mode())
    cosang = pdf.grid.directions() @ axis
    inside = cosang >= math.cos(opening) - 1e-12
    return float(min(1.0, np.sum(pdf.prob[inside])))


def moment_of_inertia(rotor: RotorSpec) -> float:
    """Disk about a diameter: M R^2 / 4, in kg m^2."""
    return 0.25 * rotor.mass * rotor.radius**2


def rotation_time(rotor: RotorSpec = RotorSpec()) -> float:
    """Free rotation time by pi/2 at thermal energy: (pi/2) sqrt(I / 2 E_th), seconds."""
    return rotation_time_from_inertia(moment_of_inertia(rotor), rotor.e_thermal)


def rotation_time_from_inertia(inertia: float, e_thermal: float = 0.025) -> float:
    return 0.5 * math.pi * math.sqrt(inertia / (2.0 * e_thermal * EV))
