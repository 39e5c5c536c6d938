"""Cost functions and derivative-free search for CRAB pulses.

The search vector is (dtheta, dphi, omega_l, t0, sigma, A_1..A_m, B_1..B_m);
the CRAB frequencies are frozen per restart.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from fmo_control.model import FmoModel, basis_state, build_fmo_model, ground_state
from fmo_control.propagator import propagate_many
from fmo_control.pulse import DEFAULT_E0, DEFAULT_M, DEFAULT_T, PulseParams, check_constraints, sample_frequencies

log = logging.getLogger(__name__)

DT_SEARCH = 1e-3  # 1 fs; step-halving error on populations ~1e-8 for pulses in the search range
PENALTY = 10.0
OMEGA_SCALE = 50.0  # cm^-1, search scale of the carrier
OMEGA_WINDOW = (-1500.0, 2500.0)  # cm^-1 around the 12230 cm^-1 shift


def eps_b(rho) -> float:
    """1 - <+|rho|+> with |+> = (|1> + |2>)/sqrt(2)."""
    return float(1.0 - 0.5 * (rho[1, 1].real + rho[2, 2].real) - rho[1, 2].real)


def eps_d(rho) -> float:
    """1 - (rho_55 + rho_66 + rho_77)."""
    return float(1.0 - rho[5, 5].real - rho[6, 6].real - rho[7, 7].real)


def eps_p(rho) -> float:
    """Population left on site 3 after the probe."""
    return float(rho[3, 3].real)


COSTS = {"eps_B": eps_b, "eps_D": eps_d, "eps_P": eps_p}


# --- simplex search ------------------------------------------------------------


@dataclass
class SearchResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool
    history: list = field(default_factory=list)


class _BudgetSpent(Exception):
    pass


class _Counted:
    """Counts calls, remembers the best point and refuses calls past the budget."""

    def __init__(self, f, budget):
        self.f = f
        self.budget = budget
        self.nfev = 0
        self.best = (None, np.inf)

    def seed(self, x, fx):
        if fx < self.best[1]:
            self.best = (np.array(x, dtype=float), fx)

    def __call__(self, x):
        if self.nfev >= self.budget:
            raise _BudgetSpent
        self.nfev += 1
        fx = float(self.f(x))
        self.seed(x, fx)
        return fx

    @property
    def left(self):
        return self.budget - self.nfev


def _nm_core(f: _Counted, x0, step, xtol, ftol, budget, f0=None):
    """One Nelder-Mead run; returns (x, fx, converged). ``budget`` counts evaluations."""
    if f0 is not None:
        f.seed(x0, f0)
    try:
        return _nm_loop(f, x0, step, xtol, ftol, budget, f0)
    except _BudgetSpent:
        return f.best[0].copy(), f.best[1], False


def _nm_loop(f, x0, step, xtol, ftol, budget, f0):
    n = len(x0)
    start = f.nfev
    simplex = np.empty((n + 1, n))
    simplex[0] = x0
    fvals = np.empty(n + 1)
    fvals[0] = f(x0) if f0 is None else f0
    for i in range(n):
        v = np.array(x0, dtype=float)
        v[i] += step[i] if step[i] != 0 else 0.00025
        simplex[i + 1] = v
        fvals[i + 1] = f(v)
    converged = False
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        lo, hi = fvals[0], fvals[-1]
        diam = np.max(np.abs(simplex[1:] - simplex[0]))
        if diam <= xtol or 2.0 * abs(hi - lo) <= ftol * (abs(hi) + abs(lo) + 1e-10):
            converged = True
            break
        if f.nfev - start >= budget:
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = f(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + 0.5 * (simplex[-1] - centroid)
                fc = f(xc)
                accept = fc < fvals[-1]
            if accept:
                simplex[-1], fvals[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fvals[i] = f(simplex[i])
    i = int(np.argmin(fvals))
    return simplex[i].copy(), float(fvals[i]), converged


def nelder_mead(cost, x0, step=None, xtol=1e-6, ftol=1e-6, max_evals=20000) -> SearchResult:
    """Plain Nelder-Mead (reflection 1, expansion 2, contraction 1/2, shrink 1/2).

    Stops when the simplex diameter (max-norm) drops below ``xtol``, when the
    relative spread of cost values drops below ``ftol``, or when the budget
    is spent (``converged=False``).
    """
    if max_evals < 1:
        raise ValueError("max_evals must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    step = np.ones_like(x0) if step is None else np.broadcast_to(np.asarray(step, float), x0.shape)
    f = _Counted(cost, max_evals)
    x, fx, ok = _nm_core(f, x0, step, xtol, ftol, max_evals)
    return SearchResult(x=x, fun=fx, nfev=f.nfev, converged=ok)


def _partition(order, ns_min, ns_max):
    n = len(order)
    if n <= ns_max:
        return [list(order)]
    blocks = [list(order[i : i + ns_max]) for i in range(0, n, ns_max)]
    if len(blocks[-1]) < ns_min:
        tail = blocks.pop()
        blocks[-1].extend(tail)
    return blocks


def subplex(
    cost,
    x0,
    step=None,
    xtol=1e-6,
    ftol=1e-6,
    max_evals=20000,
    ns_max=5,
    ns_min=2,
    psi=0.25,
    omega=0.1,
) -> SearchResult:
    """Subspace-searching simplex method.

    Each cycle sorts the coordinates by the size of their last move, splits them
    into subspaces of dimension ``ns_min..ns_max`` and runs Nelder-Mead in each,
    starting from the current best point. Step sizes are rescaled between cycles
    by the observed progress, clamped to [omega, 1/omega].
    """
    x = np.array(x0, dtype=float)
    n = len(x)
    step = np.ones(n) if step is None else np.array(np.broadcast_to(step, (n,)), dtype=float)
    if max_evals < 1:
        raise ValueError("max_evals must be >= 1")
    f = _Counted(cost, max_evals)
    fx = f(x)
    dx = step.copy()
    converged = False
    while f.left > 0:
        x_old = x.copy()
        order = np.argsort(-np.abs(dx), kind="stable")
        blocks = _partition(order, ns_min, ns_max)
        for blk in blocks:
            if f.left <= 0:
                break
            idx = np.array(blk)

            def sub(y, idx=idx):
                z = x.copy()
                z[idx] = y
                return cost(z)

            sub_f = _Counted(sub, f.left)
            inner_xtol = max(xtol, psi * np.max(np.abs(step[idx])))
            y, fy, _ = _nm_core(sub_f, x[idx], step[idx], inner_xtol, ftol, f.left, f0=fx)
            f.nfev += sub_f.nfev
            if fy <= fx:
                x[idx] = y
                fx = fy
        dx = x - x_old
        if len(blocks) > 1:
            scale = np.sum(np.abs(dx)) / np.sum(np.abs(step))
            scale = min(max(scale, omega), 1.0 / omega)
        else:
            scale = psi
        step = np.where(dx == 0.0, -step, np.copysign(step, dx)) * scale
        size = np.maximum(np.abs(dx), np.abs(step) * psi) / np.maximum(np.abs(x), 1.0)
        if np.max(size) <= xtol:
            converged = True
            break
    return SearchResult(x=x, fun=fx, nfev=f.nfev, converged=converged)


METHODS = {"subplex": subplex, "nelder-mead": nelder_mead}


# --- pulse costs ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CostSpec:
    """What a pulse is optimized for.

    ``orientations`` is a list of orientation objects (see ``ensemble``); ``None``
    means a single complex in the reference orientation.
    """

    kind: str = "eps_B"
    model: FmoModel = field(default_factory=build_fmo_model)
    gamma: float | None = 1.0
    t_pulse: float = DEFAULT_T
    orientations: tuple | None = None
    initial: np.ndarray | None = None
    dt: float = DT_SEARCH
    sink: bool = False

    def __post_init__(self):
        if self.kind not in COSTS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if not self.t_pulse > 0:
            raise ValueError("t_pulse must be positive")
        if self.orientations is not None:
            if len(self.orientations) == 0:
                raise ValueError("orientations must be non-empty")
            object.__setattr__(self, "orientations", tuple(self.orientations))
        if self.gamma is not None:
            object.__setattr__(self, "model", self.model.with_dephasing(self.gamma))
        if self.initial is None:
            init = basis_state(3) if self.kind == "eps_P" else ground_state()
            object.__setattr__(self, "initial", init)

    @classmethod
    def probe(cls, **kw) -> CostSpec:
        kw.setdefault("t_pulse", DEFAULT_T / 2)
        return cls(kind="eps_P", **kw)

    def final_states(self, pulse) -> np.ndarray:
        if self.orientations is None:
            pols = [pulse.polarization(self.model)]
        else:
            pols = [o.apply(pulse, self.model) for o in self.orientations]
        return propagate_many(self.initial, self.model, pulse, pols, dt=self.dt, t_end=self.t_pulse, sink=self.sink)

    def evaluate(self, pulse) -> float:
        """Orientation-averaged cost of ``pulse`` (no constraint penalty)."""
        fn = COSTS[self.kind]
        return float(np.mean([fn(r) for r in self.final_states(pulse)]))


def penalized_cost(spec: CostSpec, pulse, e0_max: float, omega_window=None) -> float:
    """Cost plus 10 x total violation magnitude.

    Width violations and carriers outside ``omega_window`` (cm^-1) skip the
    simulation. The window only keeps the search away from far-detuned
    carriers, where nothing is excited and the step size would collapse.
    """
    viol = check_constraints(pulse, e0_max)
    extra = PENALTY * sum(v.magnitude for v in viol)
    if omega_window is not None:
        lo, hi = omega_window
        out = max(lo - pulse.omega_l, pulse.omega_l - hi, 0.0)
        if out > 0:
            return 1.0 + extra + PENALTY * out / OMEGA_SCALE
    if any(v.kind == "width" for v in viol):
        return 1.0 + extra
    return spec.evaluate(pulse) + extra


# search-space scales: (dtheta, dphi, omega_l, t0, sigma, A, B)
def search_scales(m: int, t_total: float) -> np.ndarray:
    return np.concatenate([[0.5, 0.5, OMEGA_SCALE, 0.1 * t_total, 0.05 * t_total], np.full(2 * m, 0.5)])


def random_initial_guess(rng: np.random.Generator, m: int, t_total: float) -> np.ndarray:
    head = [
        rng.uniform(0.0, 2 * math.pi),
        rng.uniform(0.0, 2 * math.pi),
        rng.uniform(-200.0, 600.0),
        rng.uniform(0.3 * t_total, 0.7 * t_total),
        rng.uniform(0.05 * t_total, 0.3 * t_total),
    ]
    return np.concatenate([head, rng.uniform(-1.0, 1.0, 2 * m)])


@dataclass
class RestartRecord:
    index: int
    seed: list
    initial: list
    final_cost: float
    evaluations: int
    converged: bool


@dataclass
class OptimizationResult:
    best_params: PulseParams
    best_cost: float
    restarts: list
    evaluations_total: int
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "best_params": self.best_params.to_dict(),
            "best_cost": self.best_cost,
            "evaluations_total": self.evaluations_total,
            "restarts": [r.__dict__ for r in self.restarts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> OptimizationResult:
        return cls(
            best_params=PulseParams.from_dict(d["best_params"]),
            best_cost=d["best_cost"],
            restarts=[RestartRecord(**r) for r in d["restarts"]],
            evaluations_total=d["evaluations_total"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> OptimizationResult:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SearchOptions:
    method: str = "subplex"
    xtol: float = 1e-6
    ftol: float = 1e-6
    max_evals: int = 20000
    e0: float = DEFAULT_E0
    e0_max: float = DEFAULT_E0
    m: int = DEFAULT_M
    shared_r: bool = False
    omega_window: tuple[float, float] | None = OMEGA_WINDOW


def restart_seeds(seed: int, index: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent sub-streams (frequencies, initial guess) for one restart."""
    freq, init = np.random.SeedSequence([seed, index]).spawn(2)
    return freq, init


def run_restart(spec: CostSpec, seed: int, index: int, opts: SearchOptions, x0=None, nu=None):
    """One CRAB restart; returns (pulse, cost, RestartRecord)."""
    freq_ss, init_ss = restart_seeds(seed, index)
    t_total = spec.t_pulse
    if nu is None:
        nu = sample_frequencies(opts.m, t_total, freq_ss, shared=opts.shared_r)
    template = PulseParams(
        e0=opts.e0, a=np.zeros(opts.m), b=np.zeros(opts.m), nu=nu, t_total=t_total, seed=seed
    )
    if x0 is None:
        x0 = random_initial_guess(np.random.default_rng(init_ss), opts.m, t_total)
    scales = search_scales(opts.m, t_total)

    def cost(u):
        return penalized_cost(spec, template.with_vector(u * scales), opts.e0_max, opts.omega_window)

    search = METHODS[opts.method]
    res = search(cost, np.asarray(x0) / scales, step=1.0, xtol=opts.xtol, ftol=opts.ftol, max_evals=opts.max_evals)
    best = template.with_vector(res.x * scales)
    rec = RestartRecord(
        index=index,
        seed=[seed, index],
        initial=list(map(float, x0)),
        final_cost=res.fun,
        evaluations=res.nfev,
        converged=res.converged,
    )
    return best, res.fun, rec


def _restart_job(args):
    return run_restart(*args)


def optimize_pulse(
    spec: CostSpec,
    restarts: int = 64,
    seed: int = 0,
    e0_max: float = DEFAULT_E0,
    options: SearchOptions | None = None,
    workers: int = 1,
    starts: list | None = None,
) -> OptimizationResult:
    """Multi-restart CRAB optimization; the best restart wins.

    Restart ``i`` draws its frequencies and initial guess from the sub-stream
    (seed, i), so the result does not depend on ``workers``. ``starts`` may
    supply explicit initial pulses used for the first restarts instead of
    random guesses (their frequencies are kept).
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    opts = replace(options or SearchOptions(), e0_max=e0_max)
    starts = list(starts or [])
    jobs = []
    for i in range(restarts):
        if i < len(starts):
            p = starts[i]
            jobs.append((spec, seed, i, replace(opts, m=p.m), p.to_vector(), p.nu))
        else:
            jobs.append((spec, seed, i, opts))
    t_start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_restart_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_restart_job(job))
            log.info("restart %d: cost %.5f (%d evals)", job[2], results[-1][1], results[-1][2].evaluations)
    # ties resolved by restart index, so the reduction is order independent
    best_i = min(range(len(results)), key=lambda i: (results[i][1], i))
    return OptimizationResult(
        best_params=results[best_i][0],
        best_cost=results[best_i][1],
        restarts=[r[2] for r in results],
        evaluations_total=sum(r[2].evaluations for r in results),
        wall_time=time.perf_counter() - t_start,
    )
