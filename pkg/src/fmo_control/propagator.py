"""Lindblad master equation for the driven FMO model, fixed-step RK4.

The drive is treated in the rotating frame of the carrier by default: the
excited-block diagonal becomes omega_j - omega_l and the ground-site coupling
is the real envelope -mu_i.e E(t). A ``"lab"`` frame keeps the carrier phase
explicit and is used to cross-check the frame transformation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np

from fmo_control.model import DIM, GROUND, N_SITES, SINK, SINK_SITE, FmoModel

DT_PULSE = 1e-4  # 0.1 fs
DT_FREE = 2e-3  # 2 fs
TRACE_DRIFT_MAX = 1e-6
# largest allowed |lambda| dt / hbar; finer steps are used automatically beyond it
MAX_PHASE_STEP = 0.2
MAX_DECAY_STEP = 0.5  # largest damping rate x dt; keeps strongly dephased runs stable


class IntegrationError(RuntimeError):
    """Raised when the integrator loses trace; use a smaller step."""


@dataclass(frozen=True, eq=False)
class DriveSpec:
    """Laser drive seen by one complex.

    ``orientation`` (optional) is anything with an ``apply(pulse, model)``
    method returning the polarization unit vector in the molecular frame.
    """

    pulse: object | None = None
    orientation: object | None = None
    enabled: bool = True
    frame: str = "rotating"

    def __post_init__(self):
        if self.frame not in ("rotating", "lab"):
            raise ValueError(f"unknown frame {self.frame!r}")

    @property
    def active(self) -> bool:
        return self.enabled and self.pulse is not None

    @property
    def omega_l(self) -> float:
        return self.pulse.omega_l if self.active else 0.0

    def polarization(self, model: FmoModel) -> np.ndarray:
        if self.orientation is None:
            return self.pulse.polarization(model)
        return self.orientation.apply(self.pulse, model)

    def envelope_field(self, t) -> np.ndarray:
        """Real field amplitude E(t), zero outside [0, T] and when disabled."""
        t = np.asarray(t, dtype=float)
        if not self.active:
            return np.zeros_like(t)
        inside = (t >= 0.0) & (t <= self.pulse.t_total)
        out = np.zeros_like(t)
        out[inside] = self.pulse.field(t[inside])
        if not np.all(np.isfinite(out)):
            raise ValueError("non-finite field value")
        return out

    def complex_drive(self, t, hbar: float) -> np.ndarray:
        e = self.envelope_field(t).astype(complex)
        if self.frame == "lab" and self.active:
            e = e * np.exp(-1j * self.pulse.omega_l * np.asarray(t) / hbar)
        return e


FREE = DriveSpec(pulse=None, enabled=False)


@dataclass(eq=False)
class Trajectory:
    """Sampled solution; ``p_sink[k]`` is the sink population rho_88 at ``times[k]``."""

    times: np.ndarray
    states: np.ndarray
    p_sink: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def populations(self) -> np.ndarray:
        return np.real(np.einsum("kii->ki", self.states))

    def to_csv(self, path, coherences=((1, 2),)) -> None:
        """Columns t_ps, rho_ii (i = 0..8), Re/Im of selected coherences, p_sink."""
        pops = self.populations()
        header = ["t_ps"] + [f"rho_{i}{i}" for i in range(DIM)]
        for i, j in coherences:
            header += [f"re_rho_{i}{j}", f"im_rho_{i}{j}"]
        header.append("p_sink")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.times):
                row = [t, *pops[k]]
                for i, j in coherences:
                    c = self.states[k, i, j]
                    row += [c.real, c.imag]
                row.append(self.p_sink[k])
                w.writerow([f"{v:.17g}" for v in row])


# --- operator form (reference implementation) --------------------------------


def _lowering(site: int) -> np.ndarray:
    op = np.zeros((DIM, DIM))
    op[GROUND, site] = 1.0
    return op


def _projector(i: int) -> np.ndarray:
    op = np.zeros((DIM, DIM))
    op[i, i] = 1.0
    return op


def _dissipator(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    Ld = L.conj().T
    LdL = Ld @ L
    return L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)


def hamiltonian(model: FmoModel, drive: DriveSpec, t: float) -> np.ndarray:
    """9x9 Hamiltonian in cm^-1 in the drive's frame at time ``t``."""
    H = np.zeros((DIM, DIM), dtype=complex)
    H[1 : N_SITES + 1, 1 : N_SITES + 1] = model.h_site
    if drive.frame == "rotating" and drive.active:
        H[1 : N_SITES + 1, 1 : N_SITES + 1] -= drive.omega_l * np.eye(N_SITES)
    if drive.active:
        e = drive.complex_drive(np.array([t]), model.hbar)[0]
        coupling = -model.dipoles @ drive.polarization(model)
        H[1 : N_SITES + 1, GROUND] = coupling * e
        H[GROUND, 1 : N_SITES + 1] = coupling * np.conj(e)
    return H


def liouvillian_apply(rho, t, model: FmoModel, drive: DriveSpec = FREE, sink: bool = True) -> np.ndarray:
    """d(rho)/dt from the Hamiltonian part plus the dissipation, dephasing and sink terms."""
    rho = np.asarray(rho, dtype=complex)
    H = hamiltonian(model, drive, t)
    out = -1j / model.hbar * (H @ rho - rho @ H)
    for j in range(1, N_SITES + 1):
        if model.gamma_diss[j - 1]:
            out += _dissipator(math.sqrt(2 * model.gamma_diss[j - 1]) * _lowering(j), rho)
        if model.gamma_deph[j - 1]:
            out += _dissipator(math.sqrt(2 * model.gamma_deph[j - 1]) * _projector(j), rho)
    if sink and model.gamma_sink:
        jump = np.zeros((DIM, DIM))
        jump[SINK, SINK_SITE] = 1.0
        out += _dissipator(math.sqrt(2 * model.gamma_sink) * jump, rho)
    return out


# --- compiled elementwise form -------------------------------------------------


def decay_matrix(model: FmoModel, sink: bool = True) -> tuple[np.ndarray, np.ndarray, float]:
    """Elementwise decay rates K, ground-feeding rates and sink-feeding rate.

    All Lindblad terms here are diagonal in the site basis, so the dissipative
    part reduces to -K * rho plus gain on rho_00 and rho_88.
    """
    k = np.zeros(DIM)
    k[1 : N_SITES + 1] = model.gamma_diss + model.gamma_deph
    gamma_sink = model.gamma_sink if sink else 0.0
    k[SINK_SITE] += gamma_sink
    K = k[:, None] + k[None, :]
    K[np.arange(1, N_SITES + 1), np.arange(1, N_SITES + 1)] -= 2 * model.gamma_deph
    gain = np.zeros(DIM)
    gain[1 : N_SITES + 1] = 2 * model.gamma_diss
    return K, gain, 2.0 * gamma_sink


@numba.njit(cache=True)
def _rhs(rho, hs, coup, e, K, gain, gain_sink, inv_hbar, out, A):
    # hs: real 7x7 site block; coup: real ground-site couplings; e: complex drive
    n = rho.shape[0]
    ns = hs.shape[0]
    ec = e.conjugate()
    # n == ns + 2 with the sink level kept, ns + 1 when it is dropped
    for j in range(n):
        acc = 0j
        for k in range(ns):
            acc += coup[k] * rho[k + 1, j]
        A[0, j] = ec * acc
        for i in range(ns):
            acc = coup[i] * e * rho[0, j]
            for k in range(ns):
                acc += hs[i, k] * rho[k + 1, j]
            A[i + 1, j] = acc
        if n > ns + 1:
            A[ns + 1, j] = 0.0
    for i in range(n):
        for j in range(n):
            out[i, j] = -1j * inv_hbar * (A[i, j] - A[j, i].conjugate()) - K[i, j] * rho[i, j]
    feed = 0.0
    for i in range(1, ns + 1):
        feed += gain[i] * rho[i, i].real
    out[0, 0] += feed
    if n > ns + 1:
        out[ns + 1, ns + 1] += gain_sink * rho[3, 3].real


@numba.njit(cache=True)
def _rk4(rho0, hs, coup, drive, K, gain, gain_sink, inv_hbar, dt, n_steps, stride, states):
    n = rho0.shape[0]
    rho = rho0.copy()
    k1 = np.empty_like(rho)
    k2 = np.empty_like(rho)
    k3 = np.empty_like(rho)
    k4 = np.empty_like(rho)
    tmp = np.empty_like(rho)
    A = np.empty_like(rho)
    drift = 0.0
    states[0] = rho
    slot = 1
    for step in range(n_steps):
        e0 = drive[2 * step]
        eh = drive[2 * step + 1]
        e1 = drive[2 * step + 2]
        _rhs(rho, hs, coup, e0, K, gain, gain_sink, inv_hbar, k1, A)
        for i in range(n):
            for j in range(n):
                tmp[i, j] = rho[i, j] + 0.5 * dt * k1[i, j]
        _rhs(tmp, hs, coup, eh, K, gain, gain_sink, inv_hbar, k2, A)
        for i in range(n):
            for j in range(n):
                tmp[i, j] = rho[i, j] + 0.5 * dt * k2[i, j]
        _rhs(tmp, hs, coup, eh, K, gain, gain_sink, inv_hbar, k3, A)
        for i in range(n):
            for j in range(n):
                tmp[i, j] = rho[i, j] + dt * k3[i, j]
        _rhs(tmp, hs, coup, e1, K, gain, gain_sink, inv_hbar, k4, A)
        for i in range(n):
            for j in range(n):
                tmp[i, j] = rho[i, j] + dt / 6.0 * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
        tr = 0.0
        for i in range(n):
            for j in range(i, n):
                v = 0.5 * (tmp[i, j] + tmp[j, i].conjugate())
                rho[i, j] = v
                rho[j, i] = v.conjugate()
            tr += rho[i, i].real
        if abs(tr - 1.0) > drift:
            drift = abs(tr - 1.0)
        if (step + 1) % stride == 0:
            states[slot] = rho
            slot += 1
    return rho, drift


def _site_block(model: FmoModel, drive: DriveSpec) -> np.ndarray:
    hs = np.array(model.h_site, dtype=float)
    if drive.frame == "rotating" and drive.active:
        hs -= drive.omega_l * np.eye(N_SITES)
    return hs


def step_count(t_end: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    return int(math.ceil(t_end / dt - 1e-9))


def propagate(
    rho0,
    model: FmoModel,
    drive: DriveSpec = FREE,
    dt: float | None = None,
    t_end: float = 0.0,
    stride: int | None = None,
    sink: bool = True,
    t_start: float = 0.0,
) -> Trajectory:
    """Integrate the master equation from ``t_start`` to ``t_start + t_end``.

    ``dt`` is shrunk so that an integer number of steps covers ``t_end``.
    States are stored every ``stride`` steps (and always at both ends). When
    ``dt`` is too coarse for the field strength, carrier or damping rates it
    is divided by an integer factor and ``stride`` multiplied by the same
    factor, so the stored time grid does not change.
    """
    if dt is None:
        dt = DT_PULSE if drive.active else DT_FREE
    hs = _site_block(model, drive)
    coup = np.zeros(N_SITES)
    limit = math.inf
    if drive.active:
        coup = -model.dipoles @ drive.polarization(model)
        bound = np.max(np.sum(np.abs(hs), axis=1)) + abs(drive.pulse.e0) * np.sum(np.abs(coup))
        limit = MAX_PHASE_STEP * model.hbar / bound
    K, gain, gain_sink = decay_matrix(model, sink)
    if K.max() > 0:
        limit = min(limit, MAX_DECAY_STEP / K.max())
    n_steps = step_count(t_end, dt)
    dt_eff = t_end / n_steps if n_steps else dt
    if stride is None:
        stride = max(n_steps, 1)
    stride = max(int(stride), 1)
    if dt_eff > limit:
        factor = math.ceil(dt_eff / limit)
        n_steps *= factor
        stride *= factor
        dt_eff /= factor
    rho0 = np.ascontiguousarray(rho0, dtype=complex)
    if rho0.shape != (DIM, DIM):
        raise ValueError(f"rho0 must be {DIM}x{DIM}")

    half_times = t_start + 0.5 * dt_eff * np.arange(2 * n_steps + 1)
    if drive.active:
        drive_samples = drive.complex_drive(half_times, model.hbar)
    else:
        drive_samples = np.zeros(2 * n_steps + 1, dtype=complex)

    n_out = n_steps // stride + 1
    tail = n_steps % stride != 0
    # the sink level is inert without the sink channel; drop it when it is empty
    dim = DIM if sink or np.any(rho0[SINK] != 0) or np.any(rho0[:, SINK] != 0) else DIM - 1
    states = np.zeros((n_out + tail, DIM, DIM), dtype=complex)
    work = np.zeros((n_out + tail, dim, dim), dtype=complex)
    final, drift = _rk4(
        np.ascontiguousarray(rho0[:dim, :dim]),
        hs,
        coup,
        drive_samples,
        np.ascontiguousarray(K[:dim, :dim]),
        gain,
        gain_sink,
        1.0 / model.hbar,
        dt_eff,
        n_steps,
        stride,
        work,
    )
    if tail:
        work[-1] = final
    states[:, :dim, :dim] = work
    times = t_start + dt_eff * stride * np.arange(n_out)
    if tail:
        times = np.append(times, t_start + t_end)
    tr0 = np.trace(rho0).real
    if drift > TRACE_DRIFT_MAX and abs(tr0 - 1.0) <= TRACE_DRIFT_MAX:
        raise IntegrationError(f"trace drifted by {drift:.2e}; reduce dt (currently {dt_eff:g} ps)")
    return Trajectory(times=times, states=states, p_sink=np.real(states[:, SINK, SINK]).copy())


def final_state(rho0, model, drive, dt=None, t_end=0.0, sink=True) -> np.ndarray:
    """Final density matrix only (no stored trajectory)."""
    return propagate(rho0, model, drive, dt=dt, t_end=t_end, sink=sink).final


def accumulated_sink(traj: Trajectory, model: FmoModel) -> np.ndarray:
    """Sink population from 2 Gamma_sink * integral of rho_33 (trapezoid rule over stored samples)."""
    rho33 = np.real(traj.states[:, SINK_SITE, SINK_SITE])
    out = np.zeros_like(rho33)
    if len(rho33) > 1:
        steps = 0.5 * (rho33[1:] + rho33[:-1]) * np.diff(traj.times)
        out[1:] = np.cumsum(steps)
    return 2.0 * model.gamma_sink * out


def propagate_many(
    rho0,
    model: FmoModel,
    pulse,
    polarizations,
    dt: float | None = None,
    t_end: float | None = None,
    sink: bool = False,
    frame: str = "rotating",
) -> np.ndarray:
    """Final states for one pulse applied with several polarization vectors.

    Equivalent to calling ``propagate`` once per polarization but evaluates
    the field only once. Returns an array of shape (n, 9, 9).
    """
    pols = np.atleast_2d(np.asarray(polarizations, dtype=float))
    t_end = pulse.t_total if t_end is None else t_end
    dt = DT_PULSE if dt is None else dt
    drive = DriveSpec(pulse=pulse, frame=frame)
    hs = _site_block(model, drive)
    coups = -pols @ model.dipoles.T
    bound = np.max(np.sum(np.abs(hs), axis=1)) + abs(pulse.e0) * np.max(np.sum(np.abs(coups), axis=1))
    dt = min(dt, MAX_PHASE_STEP * model.hbar / bound)
    K, gain, gain_sink = decay_matrix(model, sink)
    if K.max() > 0:
        dt = min(dt, MAX_DECAY_STEP / K.max())
    n_steps = step_count(t_end, dt)
    dt_eff = t_end / n_steps if n_steps else dt
    rho0 = np.ascontiguousarray(rho0, dtype=complex)
    dim = DIM if sink or np.any(rho0[SINK] != 0) or np.any(rho0[:, SINK] != 0) else DIM - 1
    samples = drive.complex_drive(0.5 * dt_eff * np.arange(2 * n_steps + 1), model.hbar)
    K = np.ascontiguousarray(K[:dim, :dim])
    r0 = np.ascontiguousarray(rho0[:dim, :dim])
    out = np.zeros((len(pols), DIM, DIM), dtype=complex)
    work = np.empty((2, dim, dim), dtype=complex)
    for i, coup in enumerate(coups):
        final, drift = _rk4(r0, hs, coup, samples, K, gain, gain_sink, 1.0 / model.hbar, dt_eff, n_steps, max(n_steps, 1), work)
        if drift > TRACE_DRIFT_MAX and abs(np.trace(rho0).real - 1.0) <= TRACE_DRIFT_MAX:
            raise IntegrationError(f"sample {i}: trace drifted by {drift:.2e}; reduce dt")
        out[i, :dim, :dim] = final
    return out
