"""Flip-angle / TR schedule design by minimizing a weighted sum of bounds.

Decision vector: the N flip angles followed by the N repetition times.
Constraints: per-frame boxes on both, plus a bound on consecutive flip-angle
changes.  The solver is a projected quasi-Newton method (BFGS metric, Armijo
backtracking along the projection arc) that only ever accepts feasible,
cost-decreasing iterates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .bounds import NoiseModel, QuadratureConfig, TissueSpec, zzb_from_fingerprints
from .epg_sim import EpgConfig, Schedule, simulate_fingerprints, simulate_schedule_batch
from .errors import ConstraintViolationError, NonIdentifiableError, NumericError, PreconditionError

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
# stands in for the unconstrained slew between frames 1 and 2
UNBOUNDED_SLEW = 1e6


@dataclass(frozen=True)
class DesignProblem:
    specs: tuple[TissueSpec, ...]
    noise: NoiseModel
    n_frames: int
    fa_bounds: np.ndarray  # (N, 2) degrees
    tr_bounds: np.ndarray  # (N, 2) ms
    fa_slew_max: np.ndarray  # (N-1,) degrees
    echo_time: float = 3.0
    quad: QuadratureConfig = QuadratureConfig()
    epg: EpgConfig = EpgConfig()
    objective: Literal["zzb", "crb"] = "zzb"

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        fa_b = np.array(self.fa_bounds, dtype=float).reshape(self.n_frames, 2)
        tr_b = np.array(self.tr_bounds, dtype=float).reshape(self.n_frames, 2)
        slew = np.array(self.fa_slew_max, dtype=float).reshape(max(self.n_frames - 1, 0))
        for a in (fa_b, tr_b, slew):
            a.setflags(write=False)
        object.__setattr__(self, "fa_bounds", fa_b)
        object.__setattr__(self, "tr_bounds", tr_b)
        object.__setattr__(self, "fa_slew_max", slew)
        if self.n_frames < 1:
            raise PreconditionError("n_frames must be >= 1")
        if not (np.all(np.isfinite(fa_b)) and np.all(np.isfinite(tr_b)) and np.all(np.isfinite(slew))):
            raise PreconditionError("bounds must be finite")
        if np.any(fa_b[:, 0] >= fa_b[:, 1]) or np.any(tr_b[:, 0] >= tr_b[:, 1]):
            raise PreconditionError("each bound needs min < max")
        if np.any(fa_b[:, 0] <= 0) or np.any(fa_b[:, 1] > 180):
            raise PreconditionError("flip-angle bounds must lie in (0, 180]")
        if np.any(tr_b[:, 0] <= self.echo_time):
            raise PreconditionError("TR lower bounds must exceed the echo time")
        if np.any(slew <= 0):
            raise PreconditionError("fa_slew_max entries must be > 0")
        if self.objective not in ("zzb", "crb"):
            raise PreconditionError(f"unknown objective {self.objective!r}")

    @classmethod
    def standard(
        cls,
        specs: Sequence[TissueSpec],
        noise: NoiseModel,
        n_frames: int,
        first_fa_bounds=(10.0, 180.0),
        fa_bounds=(10.0, 60.0),
        tr_bounds=(12.0, 15.0),
        fa_slew=1.0,
        **kwargs,
    ) -> "DesignProblem":
        """Frame 1 has its own flip-angle box and no slew limit into frame 2."""
        fa_b = np.tile(np.asarray(fa_bounds, float), (n_frames, 1))
        fa_b[0] = first_fa_bounds
        tr_b = np.tile(np.asarray(tr_bounds, float), (n_frames, 1))
        slew = np.full(max(n_frames - 1, 0), float(fa_slew))
        if n_frames > 1:
            slew[0] = UNBOUNDED_SLEW
        return cls(tuple(specs), noise, n_frames, fa_b, tr_b, slew, **kwargs)

    def active_specs(self) -> list[TissueSpec]:
        return [s for s in self.specs if s.weight > 0]


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 30
    rel_tol: float = 1e-4
    fd_rel_step: float = 1e-3
    step_init: float = 0.05
    max_backtracks: int = 25

    def __post_init__(self):
        if self.max_iters < 0:
            raise PreconditionError("max_iters must be >= 0")
        if not 0 < self.rel_tol < 1:
            raise PreconditionError("rel_tol must lie in (0, 1)")
        if not 0 < self.fd_rel_step <= 0.1:
            raise PreconditionError("fd_rel_step must lie in (0, 0.1]")
        if not self.step_init > 0:
            raise PreconditionError("step_init must be positive")


@dataclass
class OptimizationResult:
    schedule: Schedule
    cost_history: list[float]
    initial_cost: float
    final_cost: float
    iterations: int
    termination: Literal["tolerance", "max_iters"]
    n_cost_evals: int = 0


@dataclass(frozen=True)
class Violation:
    kind: str  # fa_min, fa_max, tr_min, tr_max, fa_slew
    index: int  # 1-based frame, or gap n for |fa[n+1] - fa[n]|
    margin: float


def conventional_schedule(
    n_frames: int, seed: int = 0, echo_time: float = 3.0, first_fa_bounds=(10.0, 180.0), fa_bounds=(10.0, 60.0),
    tr_bounds=(12.0, 15.0),
) -> Schedule:
    """Deterministic stand-in for the classic FISP-MRF train.

    Flip angles follow sinusoidal lobes ``10 + 50 |sin(pi n / 200)|`` (n from 1)
    clipped to ``fa_bounds``.  Frame 1 is 180 degrees when its bound allows it,
    else the middle of its bound.  TRs are drawn uniformly from ``tr_bounds``
    with ``seed``; the flip angles do not depend on the seed.
    """
    if n_frames < 1:
        raise PreconditionError("n_frames must be >= 1")
    n = np.arange(1, n_frames + 1)
    fa = np.clip(10.0 + 50.0 * np.abs(np.sin(np.pi * n / 200.0)), *fa_bounds)
    lo, hi = first_fa_bounds
    fa[0] = 180.0 if hi >= 180.0 else 0.5 * (lo + hi)
    tr = np.random.default_rng(seed).uniform(tr_bounds[0], tr_bounds[1], size=n_frames)
    return Schedule(fa, tr, echo_time)


def check_feasibility(schedule: Schedule, problem: DesignProblem, tol: float = FEAS_TOL) -> list[Violation]:
    if schedule.n_frames != problem.n_frames:
        raise PreconditionError(f"schedule has {schedule.n_frames} frames, problem expects {problem.n_frames}")
    out = []
    fa, tr = schedule.flip_angles, schedule.repetition_times
    for kind, values, limit, sign in (
        ("fa_min", fa, problem.fa_bounds[:, 0], -1),
        ("fa_max", fa, problem.fa_bounds[:, 1], 1),
        ("tr_min", tr, problem.tr_bounds[:, 0], -1),
        ("tr_max", tr, problem.tr_bounds[:, 1], 1),
    ):
        excess = sign * (values - limit)
        for i in np.flatnonzero(excess > tol):
            out.append(Violation(kind, int(i) + 1, float(excess[i])))
    excess = np.abs(np.diff(fa)) - problem.fa_slew_max
    for i in np.flatnonzero(excess > tol):
        out.append(Violation("fa_slew", int(i) + 1, float(excess[i])))
    return out


def project_flip_angles(fa, lower, upper, slew, tol: float = 1e-12, max_sweeps: int = 100_000) -> np.ndarray:
    """Euclidean projection onto {lower <= fa <= upper, |fa[n+1] - fa[n]| <= slew[n]}.

    Dykstra's alternating projections over three sets with closed-form
    projections: the box, the even-indexed slew pairs and the odd-indexed ones.
    A final box clip leaves any residual slew excess at the ``tol`` level.
    """
    y = np.asarray(fa, dtype=float)
    x = y.copy()
    n = x.size
    if n == 1:
        return np.clip(x, lower, upper)
    incr = [np.zeros(n) for _ in range(3)]
    gaps = np.arange(n - 1)
    pair_sets = (gaps[0::2], gaps[1::2])

    def proj_pairs(v, idx):
        v = v.copy()
        a, b = v[idx], v[idx + 1]
        d = b - a
        lim = slew[idx]
        over = np.abs(d) > lim
        shift = 0.5 * (np.abs(d) - lim) * np.sign(d)
        v[idx] = np.where(over, a + shift, a)
        v[idx + 1] = np.where(over, b - shift, b)
        return v

    projections = (
        lambda v: np.clip(v, lower, upper),
        lambda v: proj_pairs(v, pair_sets[0]),
        lambda v: proj_pairs(v, pair_sets[1]),
    )
    for _ in range(max_sweeps):
        prev = x.copy()
        for j, proj in enumerate(projections):
            z = x + incr[j]
            x = proj(z)
            incr[j] = z - x
        slew_excess = np.max(np.abs(np.diff(x)) - slew, initial=0.0)
        box_excess = max(np.max(lower - x, initial=0.0), np.max(x - upper, initial=0.0))
        if max(slew_excess, box_excess) <= tol and np.max(np.abs(x - prev)) <= tol:
            break
    return np.clip(x, lower, upper)


def project(fa, tr, problem: DesignProblem) -> tuple[np.ndarray, np.ndarray]:
    fa_p = project_flip_angles(fa, problem.fa_bounds[:, 0], problem.fa_bounds[:, 1], problem.fa_slew_max)
    tr_p = np.clip(tr, problem.tr_bounds[:, 0], problem.tr_bounds[:, 1])
    return fa_p, tr_p


def _spec_tissues(problem: DesignProblem):
    """Stacked (t1, t2) for all active specs' quadrature grids, plus per-spec slices."""
    specs = problem.active_specs()
    n = problem.quad.n_grid
    t1 = np.empty(len(specs) * n)
    t2 = np.empty(len(specs) * n)
    for l, spec in enumerate(specs):
        t1[l * n : (l + 1) * n], t2[l * n : (l + 1) * n] = spec.relaxation_pairs(spec.grid(n))
    return specs, t1, t2


def _crb_tissues(problem: DesignProblem, rel_step: float):
    specs = problem.active_specs()
    t1, t2, steps = [], [], []
    for spec in specs:
        c = spec.center
        theta = c.t1 if spec.varying == "T1" else c.t2
        h = theta * rel_step
        for sgn in (1.0, -1.0):
            if spec.varying == "T1":
                t1.append(theta + sgn * h)
                t2.append(c.t2)
            else:
                t1.append(c.t1)
                t2.append(theta + sgn * h)
        steps.append(2 * h)
    return specs, np.array(t1), np.array(t2), np.array(steps)


CRB_REL_STEP = 1e-3


def _cost_from_signals(sig, problem: DesignProblem, specs, steps=None) -> np.ndarray:
    """Weighted costs for signals of shape (S, B, N); summed in ascending spec order."""
    S = sig.shape[0]
    total = np.zeros(S)
    if problem.objective == "zzb":
        n = problem.quad.n_grid
        for l, spec in enumerate(specs):
            block = sig[:, l * n : (l + 1) * n, :]
            if S == 1:
                block = block[0]
            total += spec.weight * zzb_from_fingerprints(block, spec.delta, problem.noise.sigma2)
    else:
        for l, spec in enumerate(specs):
            dm = (sig[:, 2 * l, :] - sig[:, 2 * l + 1, :]) / steps[l]
            info = np.einsum("ij,ij->i", dm, dm)
            if np.any(info == 0):
                raise NonIdentifiableError(f"spec {l + 1} ({spec.varying}) not identifiable")
            total += spec.weight * problem.noise.sigma2 / info
    return total


def _batch_cost(fa: np.ndarray, tr: np.ndarray, problem: DesignProblem) -> np.ndarray:
    """Unchecked cost for S trains given as (S, N) arrays."""
    if problem.objective == "zzb":
        specs, t1, t2 = _spec_tissues(problem)
        steps = None
    else:
        specs, t1, t2, steps = _crb_tissues(problem, CRB_REL_STEP)
    if not specs:
        return np.zeros(np.atleast_2d(fa).shape[0])
    sig = simulate_schedule_batch(fa, tr, problem.echo_time, t1, t2, problem.epg)
    return _cost_from_signals(sig, problem, specs, steps)


def weighted_cost(schedule: Schedule, problem: DesignProblem) -> float:
    """Sum over specs of weight times bound; zero-weight specs are skipped."""
    violations = check_feasibility(schedule, problem)
    if violations:
        raise ConstraintViolationError(violations)
    return unchecked_cost(schedule, problem)


def unchecked_cost(schedule: Schedule, problem: DesignProblem) -> float:
    """:func:`weighted_cost` without the feasibility check (for finite differences)."""
    if schedule.echo_time != problem.echo_time:
        raise PreconditionError("schedule echo time differs from the problem's")
    if problem.objective == "zzb":
        specs, t1, t2 = _spec_tissues(problem)
        steps = None
    else:
        specs, t1, t2, steps = _crb_tissues(problem, CRB_REL_STEP)
    if not specs:
        return 0.0
    sig = simulate_fingerprints(schedule, t1, t2, problem.epg)[None]
    return float(_cost_from_signals(sig, problem, specs, steps)[0])


def fd_gradient(fa, tr, problem: DesignProblem, rel_step: float) -> np.ndarray:
    """Central differences of the cost over all 2N variables, steps ``rel_step * |x|``."""
    x = np.concatenate([fa, tr])
    n = fa.size
    h = rel_step * np.maximum(np.abs(x), 1.0)
    plus = np.tile(x, (2 * n, 1)) + np.diag(h)
    minus = np.tile(x, (2 * n, 1)) - np.diag(h)
    pts = np.concatenate([plus, minus])
    # keep perturbed flip angles physical
    pts[:, :n] = np.clip(pts[:, :n], 1e-6, 180.0)
    h_eff = 0.5 * (pts[: 2 * n] - pts[2 * n :])[np.arange(2 * n), np.arange(2 * n)]
    costs = _batch_cost(pts[:, :n], pts[:, n:], problem)
    g = (costs[: 2 * n] - costs[2 * n :]) / (2 * h_eff)
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise NumericError("non-finite cost gradient", index=int(bad[0]) + 1)
    return g


def optimize(initial: Schedule, problem: DesignProblem, solver: SolverConfig = SolverConfig()) -> OptimizationResult:
    """Minimize the weighted bound from a feasible starting schedule.

    Every accepted iterate is feasible and strictly lowers the cost.  Stops when
    the relative cost change of an accepted step drops below ``rel_tol``, when
    no improving step can be found (reported as ``tolerance``), or after
    ``max_iters`` iterations.
    """
    violations = check_feasibility(initial, problem)
    if violations:
        raise ConstraintViolationError(violations)
    n = problem.n_frames
    te = problem.echo_time
    fa_scale = float(np.median(problem.fa_bounds[:, 1] - problem.fa_bounds[:, 0]))
    tr_scale = float(np.median(problem.tr_bounds[:, 1] - problem.tr_bounds[:, 0]))
    scale = np.concatenate([np.full(n, fa_scale), np.full(n, tr_scale)])

    fa, tr = initial.flip_angles.copy(), initial.repetition_times.copy()
    f = unchecked_cost(initial, problem)
    evals = 1
    history = [f]
    if solver.max_iters == 0:
        return OptimizationResult(initial, history, f, f, 0, "max_iters", evals)

    g = fd_gradient(fa, tr, problem, solver.fd_rel_step) * scale  # gradient in scaled variables
    evals += 4 * n
    H = np.eye(2 * n)
    first = True
    termination = "max_iters"
    it = 0
    while it < solver.max_iters:
        u = np.concatenate([fa, tr]) / scale
        accepted = None
        for direction in ("quasi-newton", "steepest"):
            if direction == "steepest":
                if first:
                    break
                H = np.eye(2 * n)
            d = -H @ g
            gmax = np.max(np.abs(g))
            if gmax == 0:
                break
            t = solver.step_init / np.max(np.abs(d)) if (first or direction == "steepest") else 1.0
            for _ in range(solver.max_backtracks):
                cand = (u + t * d) * scale
                fa_c, tr_c = project(cand[:n], cand[n:], problem)
                du = np.concatenate([fa_c, tr_c]) / scale - u
                decrease = g @ du
                if decrease < 0:
                    sched = Schedule(fa_c, tr_c, te)
                    if not check_feasibility(sched, problem):
                        f_c = unchecked_cost(sched, problem)
                        evals += 1
                        if f_c < f and f_c <= f + 1e-4 * decrease:
                            accepted = (fa_c, tr_c, f_c, du)
                            break
                t *= 0.5
            if accepted is not None:
                break
        if accepted is None:
            termination = "tolerance"
            log.info("no improving step at iteration %d", it)
            break

        fa, tr, f_new, s = accepted
        it += 1
        g_new = fd_gradient(fa, tr, problem, solver.fd_rel_step) * scale
        evals += 4 * n
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            if first:
                H = np.eye(2 * n) * (sy / (y @ y))
            rho = 1.0 / sy
            V = np.eye(2 * n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        first = False
        rel = abs(f_new - f) / f if f > 0 else 0.0
        f, g = f_new, g_new
        history.append(f)
        log.info("iter %d cost %.6g rel %.3g", it, f, rel)
        if rel < solver.rel_tol:
            termination = "tolerance"
            break

    return OptimizationResult(Schedule(fa, tr, te), history, history[0], f, it, termination, evals)


def with_noise(problem: DesignProblem, noise: NoiseModel) -> DesignProblem:
    return replace(problem, noise=noise)


def reference_noise(schedule: Schedule, specs: Sequence[TissueSpec], snr: float, cfg: EpgConfig = EpgConfig()) -> NoiseModel:
    """Noise giving peak-amplitude SNR ``snr`` over the specs' center tissues on ``schedule``."""
    t1 = np.array([s.center.t1 for s in specs])
    t2 = np.array([s.center.t2 for s in specs])
    return NoiseModel.from_snr(simulate_fingerprints(schedule, t1, t2, cfg), snr)
