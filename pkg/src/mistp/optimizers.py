"""Zero-order step rules and the iteration loop.

Six methods share one state/trace machinery:

* ``mistp``   -- three-point descent on a minibatch estimate: evaluate the
  batch mean at x, x + a*s, x - a*s and keep the argmin (cost 3*tau
  component queries per iteration).
* ``stp``     -- the full-batch special case of the same rule (cost 3*n).
* ``sgd``     -- minibatch gradient descent baseline (cost tau), available
  only on problems with exact gradients.
* ``rsgf``    -- two-point forward-difference random smoothing along a unit
  sphere direction (cost 2*tau).
* ``zo_svrg`` -- variance-reduced random smoothing with the dimension
  factor d; keeps a snapshot point and a full-batch anchor estimate that
  is refreshed every ``m`` iterations (cost 4*tau per step plus 2*n per
  refresh).
* ``zo_cd``   -- per-coordinate central differences (cost 2*d*tau).

Cost bookkeeping counts one query per component evaluation f_i; the
full-objective values written to traces are instrumentation only and are
never charged.  Each run owns two generator streams derived from its seed
(one for directions, one for minibatches) so that methods that share a
seed consume identical minibatch sequences regardless of how many
direction draws they make.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .directions import DirectionDistribution, ScaledGaussian, UnitSphere
from .exceptions import InvalidMinibatchError, NumericFailureError, UnsupportedMethodError
from .problems import FiniteSumProblem

Array = np.ndarray

METHODS = ("mistp", "stp", "sgd", "rsgf", "zo_svrg", "zo_cd")
_SMOOTHING_METHODS = ("rsgf", "zo_svrg", "zo_cd")

# Stream tags appended to the seed tuple; keeping x0 / directions / batches
# on separate child streams is what makes paired-minibatch comparisons work.
TAG_X0, TAG_DIRS, TAG_BATCH = 0, 1, 2

Stepsize = Union[float, Sequence[float]]


def _seed_tuple(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def derive_rngs(seed) -> tuple[np.random.Generator, np.random.Generator]:
    """(directions, batches) generator pair for one run.

    Streams are seeded as SeedSequence((*seed, tag)) with tags 1 and 2;
    tag 0 is reserved for drawing starting points.
    """
    s = _seed_tuple(seed)
    return (
        np.random.default_rng((*s, TAG_DIRS)),
        np.random.default_rng((*s, TAG_BATCH)),
    )


def draw_x0(seed, d: int) -> Array:
    """Standard-Gaussian starting point from the reserved x0 stream."""
    return np.random.default_rng((*_seed_tuple(seed), TAG_X0)).standard_normal(d)


def sample_minibatch(
    n: int, tau: int, rng: np.random.Generator, with_replacement: bool = False
) -> Array:
    """Draw a minibatch of ``tau`` indices, sorted ascending.

    Without replacement (the default) this is a partial Fisher-Yates
    shuffle, so every size-tau subset of [0, n) is equally likely.  The
    with-replacement variant draws tau independent uniform indices and may
    repeat; it exists as the analysis-side alternative and is off by
    default everywhere.
    """
    if tau < 1:
        raise InvalidMinibatchError(f"batch size must be >= 1, got {tau}")
    if with_replacement:
        return np.sort(rng.integers(0, n, size=tau))
    if tau > n:
        raise InvalidMinibatchError(f"batch size {tau} exceeds n={n}")
    pool = np.arange(n)
    draws = rng.integers(np.arange(tau), n)  # draws[j] uniform on [j, n)
    for j, r in enumerate(draws):
        pool[j], pool[r] = pool[r], pool[j]
    return np.sort(pool[:tau])


@dataclass
class OptimizerSpec:
    """Method identity plus its parameters.

    ``stepsize`` is a constant or a per-iteration table (indexed by k and
    clamped at its last entry); ``None`` means the harness will grid-search
    it.  ``dist`` defaults to the scaled Gaussian for mistp/stp and the
    unit sphere for rsgf/zo_svrg (the smoothing estimators are defined on
    the sphere).  ``svrg_epoch_length`` defaults to ceil(n / tau).
    """

    method: str
    stepsize: Optional[Stepsize] = None
    tau: int = 1
    mu: Optional[float] = None
    dist: Optional[DirectionDistribution] = None
    svrg_epoch_length: Optional[int] = None
    with_replacement: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.tau < 1:
            raise InvalidMinibatchError(f"batch size must be >= 1, got {self.tau}")
        if self.method in _SMOOTHING_METHODS:
            if self.mu is None or not (0.0 < self.mu < 1.0):
                raise ValueError(f"{self.method} needs a smoothing parameter mu in (0, 1)")
        if self.stepsize is not None and np.isscalar(self.stepsize) and self.stepsize <= 0:
            raise ValueError("stepsize must be positive")

    def resolved_dist(self, d: int) -> Optional[DirectionDistribution]:
        if self.method in ("sgd", "zo_cd"):
            return None
        if self.dist is not None:
            if self.dist.d != d:
                raise ValueError(f"direction distribution has d={self.dist.d}, problem d={d}")
            return self.dist
        if self.method in ("rsgf", "zo_svrg"):
            return UnitSphere(d)
        return ScaledGaussian(d)


@dataclass
class OptimizerState:
    """Current iterate plus the run's RNG streams and query counter."""

    x: Array
    rng_dirs: np.random.Generator
    rng_batch: np.random.Generator
    k: int = 0
    queries: int = 0
    snapshot_x: Optional[Array] = None  # zo_svrg anchor point
    snapshot_grad: Optional[Array] = None  # zo_svrg anchor estimate

    @classmethod
    def start(cls, x0, seed) -> "OptimizerState":
        dirs, batch = derive_rngs(seed)
        return cls(x=np.array(x0, dtype=float), rng_dirs=dirs, rng_batch=batch)


@dataclass
class StepInfo:
    """What a single step did, for traces and tests."""

    batch: Optional[Array]
    fB_x: Optional[float] = None  # minibatch value at the pre-step iterate
    fB_next: Optional[float] = None  # selected candidate value (three-point rules)
    update: Optional[Array] = None  # step vector for gradient-style rules
    extras: dict = field(default_factory=dict)


def _three_point_move(
    problem: FiniteSumProblem,
    state: OptimizerState,
    alpha: float,
    dist: DirectionDistribution,
    batch: Array,
) -> StepInfo:
    """Shared mistp/stp candidate comparison with stay-on-tie selection.

    Non-finite candidate values are excluded from the comparison; if all
    three are non-finite the step cannot choose a point and aborts.
    """
    if alpha < 0:
        raise ValueError("stepsize must be >= 0")
    s = dist.sample(state.rng_dirs)
    x = state.x
    fx = problem.batch_value(batch, x)
    fp = problem.batch_value(batch, x + alpha * s)
    fm = problem.batch_value(batch, x - alpha * s)
    vals = [fx, fp, fm]
    if not any(math.isfinite(v) for v in vals):
        raise NumericFailureError(
            f"all three candidate values are non-finite at iteration {state.k}"
        )
    ranked = [v if math.isfinite(v) else math.inf for v in vals]
    choice = 0
    if ranked[1] < ranked[choice]:
        choice = 1
    if ranked[2] < ranked[choice]:
        choice = 2
    assert ranked[choice] <= ranked[0]  # selected value never exceeds f_B(x_k)
    if choice == 1:
        state.x = x + alpha * s
    elif choice == 2:
        state.x = x - alpha * s
    state.k += 1
    return StepInfo(batch=batch, fB_x=fx, fB_next=vals[choice])


def mistp_step(
    problem: FiniteSumProblem,
    state: OptimizerState,
    alpha: float,
    dist: DirectionDistribution,
    tau: int,
    with_replacement: bool = False,
) -> StepInfo:
    """One minibatch three-point step; costs exactly 3*tau queries."""
    batch = sample_minibatch(problem.n, tau, state.rng_batch, with_replacement)
    info = _three_point_move(problem, state, alpha, dist, batch)
    state.queries += 3 * tau
    return info


def stp_step(
    problem: FiniteSumProblem,
    state: OptimizerState,
    alpha: float,
    dist: DirectionDistribution,
) -> StepInfo:
    """Full-batch three-point step; costs exactly 3*n queries.

    Identical to :func:`mistp_step` with tau = n except that no minibatch
    is drawn, so the batch stream is left untouched.
    """
    batch = np.arange(problem.n)
    info = _three_point_move(problem, state, alpha, dist, batch)
    state.queries += 3 * problem.n
    return info


def sgd_step(
    problem: FiniteSumProblem,
    state: OptimizerState,
    alpha: float,
    tau: int,
    with_replacement: bool = False,
) -> StepInfo:
    """Minibatch gradient step x - alpha * mean of component gradients.

    Counts one query per component-gradient evaluation so epoch axes line
    up with the zero-order methods.  Consumes the batch stream exactly
    like mistp does, which is what makes paired comparisons possible.
    """
    if not problem.has_gradient:
        raise UnsupportedMethodError("sgd needs a problem with exact gradients")
    batch = sample_minibatch(problem.n, tau, state.rng_batch, with_replacement)
    g = problem.batch_grad(batch, state.x)
    state.x = state.x - alpha * g
    state.k += 1
    state.queries += tau
    return StepInfo(batch=batch, update=-alpha * g)


def rsgf_step(
    problem: FiniteSumProblem,
    state: OptimizerState,
    alpha: float,
    mu: float,
    tau: int,
    dist: Optional[DirectionDistribution] = None,
    with_replacement: bool = False,
) -> StepInfo:
    """Two-point random-smoothing step; costs exactly 2*tau queries.

    x' = x - alpha * (f_B(x + mu*s) - f_B(x)) / mu * s with s uniform on
    the unit sphere (the estimator's defining distribution).
    """
    if mu <= 0:
        raise ValueError("smoothing parameter mu must be positive")
    if dist is None:
        dist = UnitSphere(problem.d)
    batch = sample_minibatch(problem.n, tau, state.rng_batch, with_replacement)
    s = dist.sample(state.rng_dirs)
    fx = problem.batch_value(batch, state.x)
    fplus = problem.batch_value(batch, state.x + mu * s)
    slope = (fplus - fx) / mu
    update = -alpha * slope * s
    state.x = state.x + update
    state.k += 1
    state.queries += 2 * tau
    return StepInfo(batch=batch, fB_x=fx, update=update)


def zo_svrg_gradient_estimate(
    problem: FiniteSumProblem, batch: Array, x: Array, mu: float, s: Array
) -> Array:
    """Sphere-smoothing gradient estimate (d/mu) * (f_B(x + mu*s) - f_B(x)) * s.

    Pure function; callers account its cost of two batch evaluations
    (2 * len(batch) queries).
    """
    if mu <= 0:
        raise ValueError("smoothing parameter mu must be positive")
    fx = problem.batch_value(batch, x)
    fplus = problem.batch_value(batch, x + mu * s)
    return (problem.d / mu) * (fplus - fx) * s


def zo_svrg_step(
    problem: FiniteSumProblem,
    state: OptimizerState,
    alpha: float,
    mu: float,
    tau: int,
    m: int,
    dist: Optional[DirectionDistribution] = None,
    with_replacement: bool = False,
) -> StepInfo:
    """Variance-reduced smoothing step.

    Every ``m`` iterations the snapshot point is reset to the current
    iterate and a full-batch anchor estimate is recomputed with a fresh
    direction (2*n queries).  Each step then draws a minibatch and one
    fresh direction, forms

        v = est_B(x) - est_B(snapshot) + anchor

    with the same direction and batch in both minibatch estimates, and
    moves x' = x - alpha * v (4*tau queries).  Right after a refresh the
    two minibatch terms cancel exactly and v equals the anchor.
    """
    if mu <= 0:
        raise ValueError("smoothing parameter mu must be positive")
    if m < 1:
        raise ValueError("svrg epoch length m must be >= 1")
    if dist is None:
        dist = UnitSphere(problem.d)
    d = problem.d
    if state.k % m == 0:
        state.snapshot_x = state.x.copy()
        s_anchor = dist.sample(state.rng_dirs)
        state.snapshot_grad = zo_svrg_gradient_estimate(
            problem, np.arange(problem.n), state.snapshot_x, mu, s_anchor
        )
        state.queries += 2 * problem.n
    batch = sample_minibatch(problem.n, tau, state.rng_batch, with_replacement)
    s = dist.sample(state.rng_dirs)
    x = state.x
    fx = problem.batch_value(batch, x)
    fx_plus = problem.batch_value(batch, x + mu * s)
    fsnap = problem.batch_value(batch, state.snapshot_x)
    fsnap_plus = problem.batch_value(batch, state.snapshot_x + mu * s)
    est_x = (d / mu) * (fx_plus - fx) * s
    est_snap = (d / mu) * (fsnap_plus - fsnap) * s
    v = est_x - est_snap + state.snapshot_grad
    state.x = x - alpha * v
    state.k += 1
    state.queries += 4 * tau
    return StepInfo(
        batch=batch,
        fB_x=fx,
        update=-alpha * v,
        extras={"v": v, "anchor": state.snapshot_grad},
    )


def zo_cd_step(
    problem: FiniteSumProblem,
    state: OptimizerState,
    alpha: float,
    mu: float,
    tau: int,
    with_replacement: bool = False,
) -> StepInfo:
    """Coordinate-wise central-difference step; costs exactly 2*d*tau queries.

    g[i] = (f_B(x + mu*e_i) - f_B(x - mu*e_i)) / (2*mu) for every
    coordinate, then x' = x - alpha * g.
    """
    if mu <= 0:
        raise ValueError("smoothing parameter mu must be positive")
    batch = sample_minibatch(problem.n, tau, state.rng_batch, with_replacement)
    x = state.x
    g = np.zeros(problem.d)
    step = np.zeros(problem.d)
    for i in range(problem.d):
        step[i] = mu
        g[i] = (
            problem.batch_value(batch, x + step) - problem.batch_value(batch, x - step)
        ) / (2.0 * mu)
        step[i] = 0.0
    state.x = x - alpha * g
    state.k += 1
    state.queries += 2 * problem.d * tau
    return StepInfo(batch=batch, update=-alpha * g, extras={"g": g})


@dataclass
class RunTrace:
    """Per-iterate records of one run.

    Each record belongs to an iterate x_k and carries the full objective
    (instrumentation only, never charged to the query budget), the
    minibatch value f_B(x_k) under the batch drawn at step k, the
    cumulative query count on arrival at x_k, and the stepsize applied at
    step k.  The final iterate's record has no step behind it, so its
    minibatch column repeats the full value.
    """

    method: str
    tau: int
    n: int
    seed: tuple[int, ...]
    iters: Array = field(default_factory=lambda: np.empty(0, dtype=int))
    epochs: Array = field(default_factory=lambda: np.empty(0))
    f: Array = field(default_factory=lambda: np.empty(0))
    f_batch: Array = field(default_factory=lambda: np.empty(0))
    queries: Array = field(default_factory=lambda: np.empty(0, dtype=int))
    stepsizes: Array = field(default_factory=lambda: np.empty(0))
    failed: bool = False
    failure: Optional[str] = None

    def __len__(self) -> int:
        return len(self.iters)


def _stepsize_at(stepsize: Stepsize, k: int) -> float:
    if np.isscalar(stepsize):
        return float(stepsize)
    table = np.asarray(stepsize, dtype=float)
    return float(table[min(k, len(table) - 1)])


def run(
    spec: OptimizerSpec,
    problem: FiniteSumProblem,
    x0,
    *,
    seed,
    max_epochs: Optional[float] = None,
    max_queries: Optional[int] = None,
    record_stride: int = 1,
) -> RunTrace:
    """Iterate ``spec`` on ``problem`` from ``x0`` until the budget is spent.

    Exactly one of ``max_epochs`` / ``max_queries`` must be given; an epoch
    is n queries.  The loop takes a step only while its full cost still
    fits the budget, so the final query count equals the sum of per-step
    costs exactly.  Records are written for iterates k = 0, stride,
    2*stride, ... and always for the final iterate.  A step that fails
    numerically, or an iterate that leaves the finite range, ends the run
    early with the partial trace flagged as failed.

    Two runs with equal (spec, problem, x0, seed) produce bitwise-equal
    traces.
    """
    if (max_epochs is None) == (max_queries is None):
        raise ValueError("give exactly one of max_epochs / max_queries")
    if max_queries is None:
        max_queries = int(round(max_epochs * problem.n))
    if max_queries < 0:
        raise ValueError("budget must be non-negative")
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    if spec.stepsize is None:
        raise ValueError("spec.stepsize is unset; tune it first (see harness.grid_search_stepsize)")
    if spec.method != "stp" and spec.tau > problem.n:
        raise InvalidMinibatchError(f"batch size {spec.tau} exceeds n={problem.n}")

    n, tau = problem.n, spec.tau
    dist = spec.resolved_dist(problem.d)
    m = spec.svrg_epoch_length or max(1, math.ceil(n / tau))
    state = OptimizerState.start(x0, seed)

    def step_cost(k: int) -> int:
        if spec.method == "mistp":
            return 3 * tau
        if spec.method == "stp":
            return 3 * n
        if spec.method == "sgd":
            return tau
        if spec.method == "rsgf":
            return 2 * tau
        if spec.method == "zo_cd":
            return 2 * problem.d * tau
        return 4 * tau + (2 * n if k % m == 0 else 0)  # zo_svrg

    def take_step(alpha: float) -> StepInfo:
        if spec.method == "mistp":
            return mistp_step(problem, state, alpha, dist, tau, spec.with_replacement)
        if spec.method == "stp":
            return stp_step(problem, state, alpha, dist)
        if spec.method == "sgd":
            return sgd_step(problem, state, alpha, tau, spec.with_replacement)
        if spec.method == "rsgf":
            return rsgf_step(problem, state, alpha, spec.mu, tau, dist, spec.with_replacement)
        if spec.method == "zo_cd":
            return zo_cd_step(problem, state, alpha, spec.mu, tau, spec.with_replacement)
        return zo_svrg_step(
            problem, state, alpha, spec.mu, tau, m, dist, spec.with_replacement
        )

    records: list[tuple[int, float, float, float, int, float]] = []
    failed, failure = False, None
    while True:
        k = state.k
        if state.queries + step_cost(k) > max_queries:
            break
        x_before = state.x.copy()
        q_before = state.queries
        alpha_k = _stepsize_at(spec.stepsize, k)
        try:
            info = take_step(alpha_k)
        except NumericFailureError as exc:
            failed, failure = True, str(exc)
            break
        if k % record_stride == 0:
            f_full = problem.full_value(x_before)
            fb = info.fB_x
            if fb is None:
                fb = problem.batch_value(info.batch, x_before)
            records.append((k, q_before / n, f_full, fb, q_before, alpha_k))
        if not np.all(np.isfinite(state.x)):
            failed, failure = True, f"iterate became non-finite at iteration {state.k}"
            break

    # Terminal record for the final iterate (the only record when budget = 0).
    f_final = problem.full_value(state.x)
    records.append(
        (
            state.k,
            state.queries / n,
            f_final,
            f_final,
            state.queries,
            _stepsize_at(spec.stepsize, state.k),
        )
    )

    cols = list(zip(*records))
    return RunTrace(
        method=spec.method,
        tau=n if spec.method == "stp" else tau,
        n=n,
        seed=_seed_tuple(seed),
        iters=np.array(cols[0], dtype=int),
        epochs=np.array(cols[1]),
        f=np.array(cols[2]),
        f_batch=np.array(cols[3]),
        queries=np.array(cols[4], dtype=int),
        stepsizes=np.array(cols[5]),
        failed=failed,
        failure=failure,
    )
