"""Orientation sampling, ensemble statistics and state fidelity.

Three orientation conventions are supported:

``offset``
    additive angle offsets on the pulse polarization angles, theta_1 + dtheta + theta
    (the disorder recipe theta = theta_opt + eta * s);
``tilt``
    the complex is tilted so that the reference axis z maps to (theta, phi); the
    polarization seen by the complex is R(z -> e_pulse) applied to that direction.
    Used for dodecahedron and cone samples, which then stay rigidly attached to
    the pulse polarization;
``absolute``
    (theta, phi) is the polarization direction in the molecular frame itself.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from fmo_control.model import FmoModel, dark_state, polarization_vector, site1_polar_angles
from fmo_control.optimizer import COSTS
from fmo_control.propagator import DT_PULSE, IntegrationError, propagate_many

MODES = ("offset", "tilt", "absolute")
PSD_TOL = 1e-8


class EnsembleError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"propagation failed for sample {index}: {cause}")
        self.index = index


def rotation_from_z(v) -> np.ndarray:
    """Smallest rotation taking the z axis onto the unit vector ``v``."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    c = v[2]
    if c < -1.0 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    k = np.array([-v[1], v[0], 0.0])  # z x v
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + kx + kx @ kx / (1.0 + c)


@dataclass(frozen=True)
class Orientation:
    theta: float = 0.0
    phi: float = 0.0
    mode: str = "offset"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown orientation mode {self.mode!r}")
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise ValueError("orientation angles must be finite")

    def direction(self) -> np.ndarray:
        return polarization_vector(self.theta, self.phi)

    def apply(self, pulse, model: FmoModel) -> np.ndarray:
        """Polarization unit vector seen by a complex with this orientation."""
        if self.mode == "absolute":
            return self.direction()
        if self.mode == "offset":
            th1, ph1 = site1_polar_angles(model)
            return polarization_vector(th1 + pulse.dtheta + self.theta, ph1 + pulse.dphi + self.phi)
        return rotation_from_z(pulse.polarization(model)) @ self.direction()


def polarizations(pulse, orientations, model: FmoModel) -> np.ndarray:
    if orientations is None:
        return pulse.polarization(model)[None, :]
    return np.array([o.apply(pulse, model) for o in orientations])


def _angles(v) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    return math.acos(max(-1.0, min(1.0, v[2]))), math.atan2(v[1], v[0])


# --- samplers -----------------------------------------------------------------


def disorder_orientations(center: Orientation, eta: float, n: int, seed) -> list[Orientation]:
    """theta = center + eta*s1, phi = center + eta*s2 with s1, s2 ~ U[0, 2 pi]."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, 2 * math.pi, size=(n, 2))
    return [Orientation(center.theta + eta * s1, center.phi + eta * s2, center.mode) for s1, s2 in s]


def dodecahedron_vertices() -> np.ndarray:
    g = (1.0 + math.sqrt(5.0)) / 2.0
    pts = [(x, y, z) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    for a in (-1, 1):
        for b in (-1, 1):
            pts += [(0, a / g, b * g), (a / g, b * g, 0), (a * g, 0, b / g)]
    v = np.array(pts, dtype=float)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def dodecahedron_orientations() -> list[Orientation]:
    """The 20 vertex directions of a regular dodecahedron, as tilts."""
    return [Orientation(*_angles(v), mode="tilt") for v in dodecahedron_vertices()]


def cone_directions(axis_vec, opening: float, n: int, seed) -> np.ndarray:
    """n unit vectors uniform on the spherical cap of half-angle ``opening``."""
    if not 0 < opening <= math.pi:
        raise ValueError("opening must be in (0, pi]")
    rng = np.random.default_rng(seed)
    cos_t = rng.uniform(math.cos(opening), 1.0, n)
    phi = rng.uniform(0.0, 2 * math.pi, n)
    sin_t = np.sqrt(np.clip(1.0 - cos_t**2, 0.0, None))
    local = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
    return local @ rotation_from_z(axis_vec).T


def cone_orientations(axis: Orientation, opening: float, n: int, seed) -> list[Orientation]:
    """Tilts uniform over the cap of half-angle ``opening`` about ``axis``."""
    dirs = cone_directions(axis.direction(), opening, n, seed)
    return [Orientation(*_angles(v), mode="tilt") for v in dirs]


def random_orientations(n: int, seed, recipe: str = "literal") -> list[Orientation]:
    """Fully random orientations.

    ``literal`` uses the additive-angle recipe with eta = 1; ``isotropic``
    draws tilts uniformly over the sphere.
    """
    if recipe == "literal":
        return disorder_orientations(Orientation(), 1.0, n, seed)
    if recipe == "isotropic":
        return cone_orientations(Orientation(mode="tilt"), math.pi, n, seed)
    raise ValueError(f"unknown recipe {recipe!r}")


# --- distributions ------------------------------------------------------------


@dataclass
class EnsembleDistribution:
    values: np.ndarray
    mean: float
    stddev: float
    edges: np.ndarray
    densities: np.ndarray

    @classmethod
    def from_values(cls, values, bins: int = 50, value_range=(0.0, 1.0)) -> EnsembleDistribution:
        values = np.asarray(values, dtype=float)
        clipped = np.clip(values, *value_range)
        dens, edges = np.histogram(clipped, bins=bins, range=value_range, density=True)
        return cls(
            values=values,
            mean=float(np.mean(values)),
            stddev=float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
            edges=edges,
            densities=dens,
        )

    @property
    def stderr(self) -> float:
        return self.stddev / math.sqrt(len(self.values))

    def rebinned(self, edges) -> np.ndarray:
        dens, _ = np.histogram(np.clip(self.values, edges[0], edges[-1]), bins=edges, density=True)
        return dens

    def write_histogram_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "density"])
            for lo, hi, d in zip(self.edges[:-1], self.edges[1:], self.densities):
                w.writerow([f"{lo:.17g}", f"{hi:.17g}", f"{d:.17g}"])


def _final_states(pulse, orientations, model, dt, t_end, initial, sink):
    pols = polarizations(pulse, orientations, model)
    return propagate_many(initial, model, pulse, pols, dt=dt, t_end=t_end, sink=sink)


def _chunk_job(args):
    pulse, orients, model, dt, t_end, initial, sink, offset = args
    try:
        return _final_states(pulse, orients, model, dt, t_end, initial, sink)
    except IntegrationError as exc:
        raise EnsembleError(offset, exc) from exc


def final_states(
    pulse,
    orientations,
    model: FmoModel,
    gamma: float | None = None,
    t_end: float | None = None,
    dt: float = DT_PULSE,
    initial=None,
    sink: bool = False,
    workers: int = 1,
) -> np.ndarray:
    """State of every sample after the pulse; shape (n, 9, 9)."""
    from fmo_control.model import ground_state

    if not orientations:
        raise ValueError("need at least one orientation")
    if gamma is not None:
        model = model.with_dephasing(gamma)
    initial = ground_state() if initial is None else initial
    t_end = pulse.t_total if t_end is None else t_end
    orientations = list(orientations)
    if workers <= 1:
        out = []
        for i, o in enumerate(orientations):
            try:
                out.append(_final_states(pulse, [o], model, dt, t_end, initial, sink)[0])
            except IntegrationError as exc:
                raise EnsembleError(i, exc) from exc
        return np.array(out)
    size = math.ceil(len(orientations) / workers)
    jobs = [
        (pulse, orientations[i : i + size], model, dt, t_end, initial, sink, i)
        for i in range(0, len(orientations), size)
    ]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_chunk_job, jobs))
    return np.concatenate(parts)


def ensemble_evaluate(
    pulse,
    orientations,
    cost_kind: str,
    model: FmoModel,
    gamma: float | None = None,
    dt: float = DT_PULSE,
    t_end: float | None = None,
    initial=None,
    bins: int = 50,
    workers: int = 1,
) -> EnsembleDistribution:
    """Cost of ``pulse`` for every orientation, assembled into a distribution."""
    from fmo_control.model import basis_state

    if initial is None and cost_kind == "eps_P":
        initial = basis_state(3)
    states = final_states(pulse, orientations, model, gamma, t_end, dt, initial, workers=workers)
    fn = COSTS[cost_kind]
    return EnsembleDistribution.from_values([fn(r) for r in states], bins=bins)


def ensemble_mean_density(
    pulse, orientations, model: FmoModel, gamma: float | None = None, t: float | None = None, dt: float = DT_PULSE
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble-averaged density matrix after the pulse and its entrywise modulus."""
    states = final_states(pulse, orientations, model, gamma, t, dt)
    mean = states.mean(axis=0)
    return mean, np.abs(mean)


def write_matrix_csv(mat, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + [str(j) for j in range(mat.shape[1])])
        for i, row in enumerate(mat):
            w.writerow([str(i)] + [f"{v:.17g}" for v in row])


# --- fidelity -----------------------------------------------------------------


def _psd_sqrt(a: np.ndarray, name: str) -> np.ndarray:
    a = 0.5 * (a + a.conj().T)
    w, v = np.linalg.eigh(a)
    if w[0] < -PSD_TOL:
        raise ValueError(f"{name} is not positive semidefinite (eigenvalue {w[0]:.2e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity tr sqrt(sqrt(sigma) rho sqrt(sigma)) (not squared)."""
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    _psd_sqrt(rho, "rho")
    s = _psd_sqrt(sigma, "sigma")
    inner = s @ rho @ s
    inner = 0.5 * (inner + inner.conj().T)
    w = np.linalg.eigvalsh(inner)
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))))


def dark_target() -> np.ndarray:
    """Fidelity target for the dark-state preparation: 70/25/5 on sites 5/6/7."""
    return dark_state((0.70, 0.25, 0.05))
