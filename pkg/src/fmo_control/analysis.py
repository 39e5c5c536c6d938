"""Transport pathways: efficiency curves, pulse-prepared ensembles, overlap statistics."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from fmo_control.ensemble import EnsembleDistribution, final_states
from fmo_control.model import (
    DIM,
    SINK,
    FmoModel,
    antisymmetric_state,
    basis_state,
    bright_state,
    dark_state,
    ground_state,
    site_state,
)
from fmo_control.propagator import DT_FREE, DT_PULSE, DriveSpec, Trajectory, propagate

INITIAL_KINDS = ("B", "D", "D_mixture", "minus", "site1", "site3", "prepared")
DARK_SITES = (5, 6, 7)
TRAP_TIME = 2.0  # ps


def _sink_functional(model: FmoModel, sites, t: float, dt: float = DT_FREE) -> np.ndarray:
    """q[i, j] = p_sink(t) started from |i><j| (i, j over ``sites``).

    Off-diagonal starts are assembled from the Hermitian combinations
    |i><j| + |j><i| and i(|j><i| - |i><j|), since the evolution is linear.
    """
    n = len(sites)
    q = np.zeros((n, n), dtype=complex)

    def p_of(rho):
        return propagate(rho, model, dt=dt, t_end=t).p_sink[-1]

    for a, i in enumerate(sites):
        q[a, a] = p_of(basis_state(i))
        for b in range(a + 1, n):
            j = sites[b]
            x = np.zeros((DIM, DIM), dtype=complex)
            x[i, j] = x[j, i] = 1.0
            y = np.zeros((DIM, DIM), dtype=complex)
            y[i, j] = -1j
            y[j, i] = 1j
            re, im = 0.5 * p_of(x), 0.5 * p_of(y)
            q[a, b] = re + 1j * im
            q[b, a] = re - 1j * im
    return q


@lru_cache(maxsize=8)
def _trapped_amplitudes(model_key: tuple, t: float) -> np.ndarray:
    model = FmoModel(**dict(model_key))
    q = _sink_functional(model, DARK_SITES, t)
    # p_sink(|psi><psi|) = sum_ij psi_i conj(psi_j) q_ij = psi^H q^T psi
    w, v = np.linalg.eigh(q.T)
    psi = v[:, 0]
    k = int(np.argmax(np.abs(psi)))
    return psi * (abs(psi[k]) / psi[k])  # fix the global phase: largest entry real positive


def trapped_dark_state(model: FmoModel | None = None, t: float = TRAP_TIME) -> np.ndarray:
    """Pure state on sites 5-7 that delivers the least to the sink by ``t``.

    Computed for coherent transport (no dephasing), where the dark pathway is
    slowest; the result is the lowest eigenvector of the 3x3 sink functional.
    """
    from fmo_control.model import build_fmo_model

    model = (model or build_fmo_model()).with_dephasing(0.0)
    key = (
        ("h_site", tuple(map(tuple, model.h_site))),
        ("dipoles", tuple(map(tuple, model.dipoles))),
        ("gamma_deph", tuple(model.gamma_deph)),
        ("gamma_diss", tuple(model.gamma_diss)),
        ("gamma_sink", float(model.gamma_sink)),
        ("hbar", float(model.hbar)),
    )
    psi = _trapped_amplitudes(key, float(t))
    vec = np.zeros(DIM, dtype=complex)
    vec[list(DARK_SITES)] = psi
    return np.outer(vec, vec.conj())


def exact_state(kind: str, model: FmoModel | None = None) -> np.ndarray:
    """Idealized initial states used for the pathway comparison."""
    if kind == "B":
        return bright_state()
    if kind == "D":
        return trapped_dark_state(model)
    if kind == "D_mixture":
        return dark_state()
    if kind == "minus":
        return antisymmetric_state()
    if kind == "site1":
        return site_state(1)
    if kind == "site3":
        return site_state(3)
    raise ValueError(f"unknown initial state {kind!r}; expected one of {INITIAL_KINDS[:-1]}")


@dataclass(frozen=True)
class TransportScenario:
    """Initial condition plus free, sink-on evolution over ``horizon`` ps.

    ``initial="prepared"`` runs ``pulse`` (sink off) from the ground state
    first; time zero of the curve is the end of the pulse.
    """

    initial: str = "B"
    gamma: float = 1.0
    horizon: float = 2.0
    sink: bool = True
    pulse: object = None
    orientation: object = None
    n_points: int = 201
    dt: float = DT_FREE

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.initial not in INITIAL_KINDS:
            raise ValueError(f"unknown initial state {self.initial!r}; expected one of {INITIAL_KINDS}")
        if self.initial == "prepared" and self.pulse is None:
            raise ValueError("initial='prepared' needs a pulse")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")


def prepare(pulse, model: FmoModel, orientation=None, dt: float = DT_PULSE) -> np.ndarray:
    """State after ``pulse`` acting on the ground state, sink off."""
    drive = DriveSpec(pulse=pulse, orientation=orientation)
    return propagate(ground_state(), model, drive, dt=dt, t_end=pulse.t_total, sink=False).final


def transport_curve(s: TransportScenario, model: FmoModel) -> Trajectory:
    """p_sink(t) on ``n_points`` evenly spaced times over the horizon."""
    model = model.with_dephasing(s.gamma)
    if s.initial == "prepared":
        rho0 = prepare(s.pulse, model, s.orientation)
    else:
        rho0 = exact_state(s.initial, model)
    n_steps = max(int(np.ceil(s.horizon / s.dt)), s.n_points - 1)
    n_steps = int(np.ceil(n_steps / (s.n_points - 1))) * (s.n_points - 1)
    return propagate(rho0, model, dt=s.horizon / n_steps, t_end=s.horizon, stride=n_steps // (s.n_points - 1), sink=s.sink)


def pathway_ratio(model: FmoModel, gamma: float, t: float = 2.0, dark: str = "D") -> float:
    """p_sink(t) from the bright state over p_sink(t) from the dark state."""
    b = transport_curve(TransportScenario("B", gamma, t, n_points=2), model).p_sink[-1]
    d = transport_curve(TransportScenario(dark, gamma, t, n_points=2), model).p_sink[-1]
    return float(b / d)


def sink_after(states, model: FmoModel, t: float, dt: float = DT_FREE) -> np.ndarray:
    """p_sink(t) of free evolution from each state in ``states``."""
    return np.array([propagate(r, model, dt=dt, t_end=t).p_sink[-1] for r in states])


def transport_distribution(
    pulse_b,
    pulse_d,
    orientations,
    model: FmoModel,
    gamma: float = 1.0,
    t: float = 2.0,
    dt: float = DT_PULSE,
    bins: int = 50,
    workers: int = 1,
) -> tuple[EnsembleDistribution, EnsembleDistribution]:
    """Sink yield at ``t`` after preparing every orientation with each pulse."""
    model = model.with_dephasing(gamma)
    out = []
    for pulse in (pulse_b, pulse_d):
        states = final_states(pulse, orientations, model, dt=dt, workers=workers)
        out.append(EnsembleDistribution.from_values(sink_after(states, model, t), bins=bins))
    return out[0], out[1]


def distribution_overlap_error(d1: EnsembleDistribution, d2: EnsembleDistribution, edges=None) -> float:
    """Bayes error 1/2 sum_bins min(p1, p2) * width on shared bins.

    Both distributions are rebinned onto ``edges`` (default: the edges of
    ``d1`` when both share them, otherwise 50 bins over the joint range).
    """
    if edges is None:
        if np.array_equal(d1.edges, d2.edges):
            edges = d1.edges
        else:
            lo = min(d1.edges[0], d2.edges[0])
            hi = max(d1.edges[-1], d2.edges[-1])
            edges = np.linspace(lo, hi, 51)
    edges = np.asarray(edges, dtype=float)
    p1 = d1.rebinned(edges)
    p2 = d2.rebinned(edges)
    return float(0.5 * np.sum(np.minimum(p1, p2) * np.diff(edges)))


def sink_population(rho) -> float:
    return float(np.real(rho[SINK, SINK]))
