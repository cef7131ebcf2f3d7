"""Blockwise test supermartingales: constructions, validity checks, simulation.

A block process is described by a schedule of block boundaries and a rule
producing, for each block, a nonnegative exchangeable payoff on that block's
samples.  Validity (worst null mean of every block factor at most one) is
certified numerically at construction: exactly by type enumeration when the
block is small enough, otherwise through the convex-set empirical bound with
a certified lower bound on the region's divergence level.  When float slack
would break feasibility, the block payoff is rescaled down by the exact
exceedance factor, which is conservative and validity-preserving.

Process descriptions are immutable; simulation is pure given the process,
source, horizon, and stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .epower import EVariableTable, klinf
from .measures import (
    Alphabet,
    FinitePmf,
    NullInstance,
    RngStream,
    TypeTable,
    type_cap,
    type_count,
    type_table,
)

FEASIBILITY_TOL = 1e-9
EXACT_ENUMERATION_GUARD = 1_000_000  # K**m ceiling for exact per-block checks


class PeekingError(RuntimeError):
    """Raised when a constant interpolation of a blockwise process is requested."""


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSchedule:
    """Strictly increasing block boundary times starting at 0.

    Either an explicit finite list of times or one of the generator tags
    fixed / geometric / squares; explicit schedules simply run out when
    simulation passes their last boundary.
    """

    kind: str
    times: tuple[int, ...] | None = None
    m1: int = 1
    ratio: int = 2

    def __post_init__(self):
        if self.kind == "explicit":
            ts = tuple(int(t) for t in (self.times or ()))
            if not ts or ts[0] != 0:
                raise ValueError("explicit schedule must start at t0 = 0")
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("schedule times must be strictly increasing")
            object.__setattr__(self, "times", ts)
        elif self.kind in ("fixed", "geometric"):
            if self.m1 < 1:
                raise ValueError("block length must be >= 1")
            if self.kind == "geometric" and self.ratio < 2:
                raise ValueError("geometric schedules need ratio >= 2")
        elif self.kind != "squares":
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @staticmethod
    def explicit(times: Sequence[int]) -> "BlockSchedule":
        return BlockSchedule("explicit", times=tuple(times))

    @staticmethod
    def fixed(m: int) -> "BlockSchedule":
        return BlockSchedule("fixed", m1=m)

    @staticmethod
    def geometric(m1: int, ratio: int = 2) -> "BlockSchedule":
        return BlockSchedule("geometric", m1=m1, ratio=ratio)

    @staticmethod
    def squares() -> "BlockSchedule":
        return BlockSchedule("squares")

    def block_length(self, k: int) -> int:
        """Length of block k (1-indexed); raises IndexError past an explicit end."""
        if k < 1:
            raise IndexError("blocks are 1-indexed")
        if self.kind == "explicit":
            if k >= len(self.times):
                raise IndexError("explicit schedule exhausted")
            return self.times[k] - self.times[k - 1]
        if self.kind == "fixed":
            return self.m1
        if self.kind == "geometric":
            return self.m1 * self.ratio ** (k - 1)
        return k * k

    def time(self, k: int) -> int:
        if self.kind == "explicit":
            if k >= len(self.times):
                raise IndexError("explicit schedule exhausted")
            return self.times[k]
        return sum(self.block_length(j) for j in range(1, k + 1))

    def blocks_within(self, horizon: int):
        """Yield (k, m_k, t_k) for complete blocks with t_k <= horizon."""
        k, t = 1, 0
        while True:
            try:
                m = self.block_length(k)
            except IndexError:
                return
            t += m
            if t > horizon:
                return
            yield k, m, t
            k += 1


# ---------------------------------------------------------------------------
# Acceptance regions on the simplex
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TvBall:
    """Closed total-variation ball around a center pmf; convex and closed."""

    center: FinitePmf
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def contains(self, probs: np.ndarray) -> np.ndarray | bool:
        probs = np.asarray(probs, dtype=float)
        gap = 0.5 * np.abs(probs - self.center.probs).sum(axis=-1)
        return gap <= self.radius + 1e-15

    def describe(self) -> str:
        return f"TV ball radius {self.radius:g}"


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """Half-space {p : coeffs . p >= threshold}; convex and closed."""

    alphabet: Alphabet
    coeffs: np.ndarray
    threshold: float

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float).copy()
        if coeffs.shape != (self.alphabet.size,):
            raise ValueError("one coefficient per symbol required")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    def contains(self, probs: np.ndarray) -> np.ndarray | bool:
        probs = np.asarray(probs, dtype=float)
        return probs @ self.coeffs >= self.threshold - 1e-15

    def describe(self) -> str:
        return f"half-space level {self.threshold:g}"


Region = TvBall | HalfSpace


def typical_region(instance: NullInstance, center: FinitePmf, radius: float) -> TvBall:
    """Convex closed acceptance region: empirical pmfs within TV `radius` of center."""
    if center.alphabet != instance.alphabet:
        raise ValueError("region center must live on the instance alphabet")
    return TvBall(center, radius)


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _project_l1_ball(v: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {x : ||x - center||_1 <= radius}."""
    d = v - center
    if np.abs(d).sum() <= radius:
        return v
    u = np.sort(np.abs(d))[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, d.size + 1)
    rho = np.nonzero(u * idx > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return center + np.sign(d) * np.maximum(np.abs(d) - theta, 0.0)


def _project_halfspace(v: np.ndarray, coeffs: np.ndarray, threshold: float) -> np.ndarray:
    slack = threshold - float(v @ coeffs)
    if slack <= 0:
        return v
    return v + coeffs * (slack / float(coeffs @ coeffs))


def _dykstra(v: np.ndarray, projections, iters: int = 60) -> np.ndarray:
    """Dykstra's alternating projection onto an intersection of convex sets."""
    x = v.copy()
    increments = [np.zeros_like(v) for _ in projections]
    for _ in range(iters):
        for i, proj in enumerate(projections):
            y = proj(x + increments[i])
            increments[i] = x + increments[i] - y
            x = y
    return x


def _region_feasible_lp(region: Region, support: np.ndarray, k: int):
    """Feasibility of {simplex supported on `support`} intersect region."""
    if isinstance(region, HalfSpace):
        # maximize coeffs . p over the support sub-simplex
        best = region.coeffs[support].max()
        return best >= region.threshold - 1e-12
    center = region.center.probs
    off_mass = center.sum() - center[support].sum()
    min_l1 = 2.0 * off_mass  # nearest support-constrained pmf in L1
    return 0.5 * min_l1 <= region.radius + 1e-12


def _binary_region_interval(region: Region) -> tuple[float, float] | None:
    """For K = 2, the region as an interval of the second-symbol probability."""
    if isinstance(region, TvBall):
        c = float(region.center.probs[1])
        return max(0.0, c - region.radius), min(1.0, c + region.radius)
    a0, a1 = float(region.coeffs[0]), float(region.coeffs[1])
    # a0 (1 - s) + a1 s >= threshold
    slope = a1 - a0
    rhs = region.threshold - a0
    if slope > 0:
        return max(0.0, rhs / slope), 1.0
    if slope < 0:
        return 0.0, min(1.0, rhs / slope)
    return (0.0, 1.0) if rhs <= 0 else None


def inf_phi_over_region(
    instance: NullInstance,
    region: Region,
    tol: float = 1e-7,
    iters: int = 2000,
) -> float:
    """Smallest divergence level of the region: min over null members of the
    minimum of KL(R || P_j) over pmfs R in the region.

    On binary alphabets the inner minimum has the closed form of the KL at
    the clipped parameter; otherwise each inner problem is convex and solved
    by projected gradient on the simplex intersected with the region
    (Dykstra projections), started from the projection of the member itself.
    The iterative value is lowered by its final linearization gap, so the
    result is a certified lower bound within `tol` of the true infimum; the
    conservatism keeps downstream empirical bounds valid.
    """
    from .measures import binary_kl

    k = instance.alphabet.size
    if k == 2:
        interval = _binary_region_interval(region)
        if interval is None:
            return math.inf
        lo, hi = interval
        if lo > hi + 1e-15:
            return math.inf
        best = math.inf
        for p in instance.null:
            s = min(max(float(p.probs[1]), lo), hi)
            best = min(best, binary_kl(s, float(p.probs[1])))
        return max(best, 0.0)
    best = math.inf
    for p in instance.null:
        support = p.support()
        if support.size == 0:
            continue
        if not _region_feasible_lp(region, support, k):
            continue  # no feasible R << P_j inside the region
        value = _inner_min_kl(p, region, tol, iters)
        best = min(best, value)
    if best is math.inf:
        # no member admits a finite value on the region
        return math.inf
    return max(best, 0.0)


def _inner_min_kl(p: FinitePmf, region: Region, tol: float, iters: int) -> float:
    support = p.support()
    k = p.size
    log_p = p.log_probs()

    def full(x_s: np.ndarray) -> np.ndarray:
        x = np.zeros(k)
        x[support] = x_s
        return x

    projections = [lambda x: _project_simplex(x)]
    if isinstance(region, TvBall):
        center_s = region.center.probs[support]
        off = region.center.probs.sum() - center_s.sum()
        radius_s = 2.0 * region.radius - 2.0 * off  # L1 budget on the support block
        if radius_s < -1e-12:
            return math.inf
        radius_s = max(radius_s, 0.0)
        projections.append(lambda x: _project_l1_ball(x, center_s, radius_s))
    else:
        coeffs_s = region.coeffs[support]
        projections.append(lambda x: _project_halfspace(x, coeffs_s, region.threshold))

    def objective(x_s: np.ndarray) -> float:
        pos = x_s > 0
        if not np.all(np.isfinite(log_p[support][pos])):
            return math.inf
        terms = x_s[pos] * (np.log(x_s[pos]) - log_p[support][pos])
        return float(terms.sum())

    def gradient(x_s: np.ndarray) -> np.ndarray:
        safe = np.maximum(x_s, 1e-300)
        return np.log(safe) - log_p[support] + 1.0

    x = _dykstra(p.probs[support].copy(), projections)
    x = np.maximum(x, 0.0)
    if x.sum() <= 0:
        return math.inf
    x /= x.sum()
    value = objective(x)
    step = 0.5
    for _ in range(iters):
        g = gradient(x)
        candidate = _dykstra(x - step * g, projections)
        candidate = np.maximum(candidate, 0.0)
        total = candidate.sum()
        if total <= 0:
            step *= 0.5
            continue
        candidate /= total
        cand_value = objective(candidate)
        if cand_value < value - 1e-16:
            x, value = candidate, cand_value
            step = min(step * 1.25, 4.0)
        else:
            step *= 0.5
            if step < 1e-12:
                break
    gap = _certified_gap(x, gradient(x), region, support)
    return max(value - gap, 0.0)


def _certified_gap(x: np.ndarray, grad: np.ndarray, region: Region, support) -> float:
    """Linearization gap max over the feasible set of grad . (x - s), via LP."""
    from scipy.optimize import linprog

    n = x.size
    if isinstance(region, TvBall):
        center_s = region.center.probs[support]
        off = region.center.probs.sum() - center_s.sum()
        budget = 2.0 * region.radius - 2.0 * off
        # vars [s, u]: minimize grad.s  s.t. sum s = 1, |s - c| <= u, sum u <= budget
        c = np.concatenate([grad, np.zeros(n)])
        a_ub = np.block([
            [np.eye(n), -np.eye(n)],
            [-np.eye(n), -np.eye(n)],
            [np.zeros((1, n)), np.ones((1, n))],
        ])
        b_ub = np.concatenate([center_s, -center_s, [max(budget, 0.0)]])
        a_eq = np.concatenate([np.ones(n), np.zeros(n)])[None, :]
        bounds = [(0, None)] * n + [(0, None)] * n
    else:
        coeffs_s = region.coeffs[support]
        c = np.concatenate([grad])
        a_ub = -coeffs_s[None, :]
        b_ub = np.array([-region.threshold])
        a_eq = np.ones(n)[None, :]
        bounds = [(0, None)] * n
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds,
                  method="highs")
    if not res.success:
        return math.inf
    linear_min = float(res.fun)
    return max(float(grad @ x) - linear_min, 0.0)


@dataclass(frozen=True)
class CsiszarCheck:
    exact_sup: float
    bound: float
    holds: bool


def csiszar_bound_check(instance: NullInstance, region: Region, m: int) -> CsiszarCheck:
    """Exact worst null mass of the acceptance event against the exponential bound.

    The exact side enumerates type classes; the bound side exponentiates the
    certified region level.  For convex closed regions the bound always
    holds mathematically, so a failing flag indicates a numerical defect,
    not a statistical one.
    """
    table = type_table(m, instance.alphabet.size)
    member_mask = np.asarray(region.contains(table.pmfs()))
    exact_sup = 0.0
    for p in instance.null:
        log_probs = table.log_type_probs(p)
        masked = log_probs[member_mask]
        finite = masked[np.isfinite(masked)]
        mass = float(np.exp(logsumexp(finite))) if finite.size else 0.0
        exact_sup = max(exact_sup, mass)
    level = inf_phi_over_region(instance, region)
    bound = math.exp(-m * level) if math.isfinite(level) else 0.0
    holds = exact_sup <= bound * (1.0 + 1e-9)
    return CsiszarCheck(exact_sup, bound, holds)


# ---------------------------------------------------------------------------
# Block factors
# ---------------------------------------------------------------------------

class BlockFactor:
    """One block's payoff: a nonnegative exchangeable function of the counts."""

    length: int

    def log_value(self, counts: np.ndarray) -> float:
        raise NotImplementedError

    def log_values(self, table: TypeTable) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class TableFactor(BlockFactor):
    """Payoff read from an explicit per-type table (repeated e-variable blocks)."""

    length: int
    evariable: EVariableTable
    log_shift: float = 0.0

    def log_value(self, counts: np.ndarray) -> float:
        value = self.evariable.value_of(counts)
        return (math.log(value) if value > 0 else -math.inf) + self.log_shift

    def log_values(self, table: TypeTable) -> np.ndarray:
        return self.evariable.log_values() + self.log_shift


@dataclass(frozen=True, eq=False)
class RegionFactor(BlockFactor):
    """Indicator payoff paying exp(m * rate) on the region plus a mixing floor."""

    length: int
    region: Region
    rate: float
    gamma: float
    log_shift: float = 0.0

    def _log_payoff(self, member) -> np.ndarray:
        hit = np.log1p(-self.gamma) + self.length * self.rate
        miss = math.log(self.gamma)
        inside = np.logaddexp(hit, miss)
        return np.where(member, inside, miss) + self.log_shift

    def log_value(self, counts: np.ndarray) -> float:
        pmf_vec = np.asarray(counts, dtype=float) / self.length
        member = bool(self.region.contains(pmf_vec))
        return float(self._log_payoff(np.array(member)))

    def log_values(self, table: TypeTable) -> np.ndarray:
        return self._log_payoff(np.asarray(self.region.contains(table.pmfs())))


@dataclass(frozen=True, eq=False)
class ConstantFactor(BlockFactor):
    length: int

    def log_value(self, counts: np.ndarray) -> float:
        return 0.0

    def log_values(self, table: TypeTable) -> np.ndarray:
        return np.zeros(len(table))


@dataclass(frozen=True, eq=False)
class ZLambdaFactor(BlockFactor):
    """Convex combination with cash: 1 - lam + lam * E(block counts)."""

    length: int
    evariable: EVariableTable
    lam: float

    def __post_init__(self):
        if not (0.0 < self.lam < 1.0):
            raise ValueError("mixing coefficient must lie in (0, 1)")

    def log_value(self, counts: np.ndarray) -> float:
        value = self.evariable.value_of(counts)
        return math.log(1.0 - self.lam + self.lam * value)

    def log_values(self, table: TypeTable) -> np.ndarray:
        return np.log(1.0 - self.lam + self.lam * self.evariable.values)


def exact_block_means(
    instance: NullInstance, factor: BlockFactor
) -> np.ndarray:
    """Exact E_{P_j^m}[factor] for every null member, via type enumeration."""
    m = factor.length
    k = instance.alphabet.size
    table = type_table(m, k)
    log_vals = factor.log_values(table)
    means = []
    for p in instance.null:
        with np.errstate(invalid="ignore"):
            terms = table.log_type_probs(p) + log_vals
        finite = terms[np.isfinite(terms)]
        means.append(float(np.exp(logsumexp(finite))) if finite.size else 0.0)
    return np.array(means)


# ---------------------------------------------------------------------------
# Block processes
# ---------------------------------------------------------------------------

class BlockEProcess:
    """Base class: a wealth process defined at block boundary times only."""

    kind: str
    schedule: BlockSchedule
    instance: NullInstance
    certified: bool

    def initial_state(self):
        raise NotImplementedError

    def advance(self, state, k: int, counts: np.ndarray):
        raise NotImplementedError

    def log_wealth(self, state) -> float:
        raise NotImplementedError

    def factors_for_block(self, k: int) -> list[BlockFactor]:
        raise NotImplementedError

    def block_length(self, k: int) -> int:
        return self.schedule.block_length(k)


@dataclass(frozen=True, eq=False)
class ProductBlockProcess(BlockEProcess):
    """Wealth is the running product of one factor per block."""

    kind: str
    schedule: BlockSchedule
    instance: NullInstance
    factor_fn: Callable[[int], BlockFactor]
    certified: bool = True

    def initial_state(self):
        return 0.0

    def advance(self, state, k: int, counts: np.ndarray):
        return state + self.factor_fn(k).log_value(counts)

    def log_wealth(self, state) -> float:
        return float(state)

    def factors_for_block(self, k: int) -> list[BlockFactor]:
        return [self.factor_fn(k)]


@dataclass(frozen=True, eq=False)
class MixtureBlockProcess(BlockEProcess):
    """Wealth is a fixed convex combination of component product processes.

    The weight slack (if the component weights sum below one) rides on the
    constant process, so the mixture starts at exactly one.
    """

    kind: str
    schedule: BlockSchedule
    instance: NullInstance
    weights: tuple[float, ...]
    components: tuple[ProductBlockProcess, ...]
    certified: bool = True

    def __post_init__(self):
        total = sum(self.weights)
        if total > 1.0 + 1e-12:
            raise ValueError("component weights must sum to at most one")
        if any(w <= 0 for w in self.weights):
            raise ValueError("component weights must be positive")

    @property
    def slack(self) -> float:
        return max(1.0 - sum(self.weights), 0.0)

    def initial_state(self):
        return np.zeros(len(self.components))

    def advance(self, state, k: int, counts: np.ndarray):
        increments = np.array(
            [c.factor_fn(k).log_value(counts) for c in self.components]
        )
        return state + increments

    def log_wealth(self, state) -> float:
        log_terms = np.log(np.asarray(self.weights)) + state
        if self.slack > 0:
            log_terms = np.append(log_terms, math.log(self.slack))
        return float(logsumexp(log_terms))

    def factors_for_block(self, k: int) -> list[BlockFactor]:
        return [c.factor_fn(k) for c in self.components]


def supermartingale_check(
    proc: BlockEProcess,
    instance: NullInstance,
    k: int,
    tol: float = FEASIBILITY_TOL,
):
    """Exact per-member means of every factor in block k; true iff all <= 1 + tol.

    Block factors are exchangeable, so enumeration over type classes is an
    exact computation of the sequence-space mean; the reach guard is the
    type-count cap rather than the raw K^m count.
    """
    m = proc.block_length(k)
    if type_count(m, instance.alphabet.size) > type_cap():
        raise ValueError("block too large for exact supermartingale check")
    all_means = []
    ok = True
    for factor in proc.factors_for_block(k):
        means = exact_block_means(instance, factor)
        all_means.append(means)
        ok = ok and bool(np.all(means <= 1.0 + tol))
    return BlockMeanCheck(ok, tuple(np.asarray(m) for m in all_means))


@dataclass(frozen=True)
class BlockMeanCheck:
    ok: bool
    means: tuple[np.ndarray, ...]

    def __bool__(self) -> bool:
        return self.ok


# ---------------------------------------------------------------------------
# Constructions
# ---------------------------------------------------------------------------

def repeated_block_process(evariable: EVariableTable) -> ProductBlockProcess:
    """Product process repeating one m-sample payoff on consecutive blocks."""
    if evariable.worst_null_mean > 1.0 + FEASIBILITY_TOL:
        raise ValueError(
            f"payoff is outside the polar: worst null mean {evariable.worst_null_mean}"
        )
    m = evariable.horizon
    factor = TableFactor(m, evariable)
    return ProductBlockProcess(
        kind="RepeatedGRO",
        schedule=BlockSchedule.fixed(m),
        instance=evariable.instance,
        factor_fn=lambda k: factor,
    )


def z_lambda_process(
    instance: NullInstance,
    evariable: EVariableTable,
    lam: float | None = None,
    alt_label: str | None = None,
) -> ProductBlockProcess:
    """Strictly positive repeated factor 1 - lam + lam * E; wealth floor (1-lam)^blocks.

    With `lam` omitted the coefficient is tuned for the named alternative.
    """
    if evariable.worst_null_mean > 1.0 + FEASIBILITY_TOL:
        raise ValueError("payoff is outside the polar")
    if lam is None:
        if alt_label is None:
            raise ValueError("need an explicit coefficient or an alternative to tune for")
        from .seqtest import tune_lambda  # deferred: seqtest builds on this module

        lam, _ = tune_lambda(instance, evariable, alt_label)
    if not (0.0 < lam < 1.0):
        raise ValueError("mixing coefficient must lie in (0, 1)")
    factor = ZLambdaFactor(evariable.horizon, evariable, lam)
    return ProductBlockProcess(
        kind="ZLambda",
        schedule=BlockSchedule.fixed(evariable.horizon),
        instance=instance,
        factor_fn=lambda k: factor,
    )


def _certified_region_factor(
    instance: NullInstance,
    region: Region,
    m: int,
    rate: float,
    gamma: float,
    region_level: float,
) -> RegionFactor | None:
    """Certified feasible region factor for one block, or None if uncertifiable.

    Exact enumeration is preferred; when it exceeds the cap, the empirical
    convex-set bound with the certified region level is used.  A factor
    whose exact mean overshoots one by float slack is rescaled down.
    """
    k = instance.alphabet.size
    can_enumerate = type_count(m, k) <= type_cap()
    factor = RegionFactor(m, region, rate, gamma)
    if can_enumerate:
        means = exact_block_means(instance, factor)
        worst = float(means.max())
        if worst <= 1.0 + FEASIBILITY_TOL:
            if worst <= 1.0:
                return factor
            return RegionFactor(m, region, rate, gamma, log_shift=-math.log(worst))
        return None
    if rate <= region_level:
        return factor
    return None


def fixed_region_process(
    instance: NullInstance,
    region: Region,
    rate: float,
    schedule: BlockSchedule | None = None,
    gamma: Callable[[int], float] | None = None,
) -> ProductBlockProcess:
    """Typical-set process at a fixed target rate on a fixed acceptance region.

    The rate must sit strictly below the region's certified divergence
    level.  Blocks that cannot yet be certified feasible pay the constant
    one; as block lengths grow the certification eventually engages and the
    process compounds exp(m_k * rate) on acceptance.
    """
    if schedule is None:
        schedule = BlockSchedule.squares()
    if gamma is None:
        gamma = lambda k: 2.0 ** -k
    level = inf_phi_over_region(instance, region)
    if not rate < level:
        raise ValueError(
            f"target rate {rate:.6g} must be below the region level {level:.6g}"
        )
    if rate <= 0:
        raise ValueError("target rate must be positive")
    cache: dict[int, BlockFactor] = {}

    def factor_fn(k: int) -> BlockFactor:
        if k not in cache:
            m = schedule.block_length(k)
            g = gamma(k)
            if not (0.0 < g < 1.0):
                raise ValueError("mixing floor must lie in (0, 1)")
            factor = _certified_region_factor(instance, region, m, rate, g, level)
            cache[k] = factor if factor is not None else ConstantFactor(m)
        return cache[k]

    return ProductBlockProcess(
        kind="FixedRegion",
        schedule=schedule,
        instance=instance,
        factor_fn=factor_fn,
    )


@dataclass(frozen=True)
class TypicalSetConfig:
    """Knobs for the adaptive typical-set construction.

    Defaults: acceptance balls shrink with the tolerance sequence
    eps_k = min(2^-k, d/4), floors gamma_k = 2^-k, and block lengths grow at
    least geometrically while keeping the source's acceptance probability
    above 1 - 2^-k.  Alternative schedules are accepted without any
    optimality claim.
    """

    eps: Callable[[int], float] | None = None
    gamma: Callable[[int], float] | None = None
    schedule: BlockSchedule | None = None
    radius: Callable[[int], float] | None = None
    max_block_length: int = 1 << 20
    target_rate: float | None = None

    def eps_fn(self, d: float) -> Callable[[int], float]:
        if self.eps is not None:
            return self.eps
        return lambda k: min(2.0 ** -k, d / 4.0)

    def gamma_fn(self) -> Callable[[int], float]:
        return self.gamma if self.gamma is not None else (lambda k: 2.0 ** -k)


def radius_for_level(
    instance: NullInstance, center: FinitePmf, target_level: float
) -> float:
    """Largest TV-ball radius (by bisection) whose level stays >= target."""
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if mid <= 0:
            break
        level = inf_phi_over_region(instance, TvBall(center, mid))
        if level >= target_level:
            lo = mid
        else:
            hi = mid
    if lo <= 0:
        raise ValueError("no positive radius certifies the requested level")
    return lo


def _acceptance_probability(
    source: FinitePmf, region: Region, m: int
) -> float:
    """Source probability that the empirical pmf of m samples hits the region.

    Exact by enumeration when reachable, otherwise a fixed-stream Monte
    Carlo estimate (deterministic, 4000 blocks).
    """
    if type_count(m, source.size) <= type_cap():
        table = type_table(m, source.size)
        member = np.asarray(region.contains(table.pmfs()))
        with np.errstate(invalid="ignore"):
            log_probs = table.log_type_probs(source)[member]
        finite = log_probs[np.isfinite(log_probs)]
        return float(np.exp(logsumexp(finite))) if finite.size else 0.0
    gen = RngStream(0xACCE97, m).generator()
    cdf = np.cumsum(source.probs)
    cdf[-1] = 1.0
    trials = 4000
    hits = 0
    for _ in range(trials):
        draws = np.searchsorted(cdf, gen.random(m), side="right")
        freq = np.bincount(draws, minlength=source.size) / m
        hits += bool(region.contains(freq))
    return hits / trials


def typical_set_process(
    instance: NullInstance,
    alt_label: str | None = None,
    d: float | None = None,
    cfg: TypicalSetConfig | None = None,
) -> ProductBlockProcess:
    """Blockwise supermartingale whose simulated growth approaches the target.

    Block k pays (1 - gamma_k) exp(m_k (d - 2 eps_k)) on the event that the
    block's empirical pmf falls in a shrinking ball around the alternative,
    plus the floor gamma_k.  Feasibility of every block is certified before
    it is accepted.  With d = 0 the process is constantly one.
    """
    cfg = cfg or TypicalSetConfig()
    if cfg.target_rate is not None:
        d = cfg.target_rate
    if d is None:
        if alt_label is None:
            raise ValueError("need an alternative label or an explicit target d")
        d, _ = klinf(instance, alt_label)
    if d < 0:
        raise ValueError("target must be nonnegative")
    center = instance.alternative(alt_label) if alt_label is not None else None
    if d == 0.0:
        return ProductBlockProcess(
            kind="TypicalSet",
            schedule=cfg.schedule or BlockSchedule.fixed(1),
            instance=instance,
            factor_fn=lambda k: ConstantFactor((cfg.schedule or BlockSchedule.fixed(1)).block_length(k)),
        )
    if not math.isfinite(d):
        raise ValueError("target rate must be finite")
    if center is None:
        raise ValueError("adaptive regions need an alternative to center on")
    eps = cfg.eps_fn(d)
    gamma = cfg.gamma_fn()

    regions: dict[int, TvBall] = {}
    levels: dict[int, float] = {}

    def region_for(k: int) -> TvBall:
        if k not in regions:
            e_k = eps(k)
            if e_k <= 0 or (k > 1 and e_k > eps(k - 1) + 1e-15):
                raise ValueError("tolerance sequence must be positive and decreasing")
            target_level = d - e_k if cfg.radius is None else d - 2.0 * e_k
            if cfg.radius is not None:
                regions[k] = TvBall(center, cfg.radius(k))
                levels[k] = inf_phi_over_region(instance, regions[k])
                if levels[k] < d - 2.0 * e_k:
                    raise ValueError("configured radius fails the level requirement")
            else:
                radius = radius_for_level(instance, center, target_level)
                regions[k] = TvBall(center, radius)
                levels[k] = target_level
        return regions[k]

    if cfg.schedule is not None:
        schedule = cfg.schedule
    else:
        # recursive default: at least doubling, and long enough for the
        # source to hit the acceptance ball with probability 1 - 2^-k
        lengths: list[int] = []

        def required_length(k: int) -> int:
            region = region_for(k)
            target = 1.0 - 2.0 ** -k
            m = max(1, lengths[-1] * 2 if lengths else 1)
            while m <= cfg.max_block_length:
                if _acceptance_probability(center, region, m) >= target:
                    return m
                m *= 2
            raise ValueError("no block length under the cap meets the hit probability")

        class _RecursiveSchedule(BlockSchedule):
            def __init__(self):
                object.__setattr__(self, "kind", "fixed")
                object.__setattr__(self, "times", None)
                object.__setattr__(self, "m1", 1)
                object.__setattr__(self, "ratio", 2)

            def block_length(self, k: int) -> int:
                while len(lengths) < k:
                    lengths.append(required_length(len(lengths) + 1))
                return lengths[k - 1]

        schedule = _RecursiveSchedule()

    cache: dict[int, BlockFactor] = {}

    def factor_fn(k: int) -> BlockFactor:
        if k not in cache:
            m = schedule.block_length(k)
            g = gamma(k)
            rate = d - 2.0 * eps(k)
            if rate <= 0:
                cache[k] = ConstantFactor(m)
            else:
                factor = _certified_region_factor(
                    instance, region_for(k), m, rate, g, levels[k]
                )
                cache[k] = factor if factor is not None else ConstantFactor(m)
        return cache[k]

    return ProductBlockProcess(
        kind="TypicalSet",
        schedule=schedule,
        instance=instance,
        factor_fn=factor_fn,
    )


def cover_and_mix_process(
    instance: NullInstance,
    alt_labels: Sequence[str],
    eps: float,
    schedule: BlockSchedule | None = None,
) -> MixtureBlockProcess:
    """Countable mixture over rate levels and per-alternative acceptance balls.

    Level m covers the alternatives whose divergence clears the grid point
    r_m = m * eps / 2 with a ball certified at level r_m - eps/4, each run
    as a fixed-region component at the backed-off rate s_m = r_m - eps/2.
    Weights are 2^-m split evenly inside a level; the unused remainder of
    the unit budget rides on the constant process.
    """
    labels = tuple(alt_labels)
    if not labels:
        raise ValueError("need at least one alternative")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if schedule is None:
        schedule = BlockSchedule.squares()
    d_values = {}
    bad = []
    for label in labels:
        value, _ = klinf(instance, label)
        if value <= 0 or not math.isfinite(value):
            bad.append(label)
        d_values[label] = value
    if bad:
        raise ValueError(f"alternatives with degenerate divergence: {bad}")
    max_level = max(int(math.floor(2.0 * d / eps)) for d in d_values.values())
    weights: list[float] = []
    components: list[ProductBlockProcess] = []
    for m in range(1, max_level + 1):
        r_m = m * eps / 2.0
        s_m = r_m - eps / 2.0
        covered = [lbl for lbl in labels if d_values[lbl] >= r_m]
        if not covered or s_m <= 0:
            continue
        level_weight = 2.0 ** -m / len(covered)
        for label in covered:
            center = instance.alternative(label)
            radius = radius_for_level(instance, center, r_m - eps / 4.0)
            component = fixed_region_process(
                instance,
                TvBall(center, radius),
                rate=s_m,
                schedule=schedule,
            )
            weights.append(level_weight)
            components.append(component)
    if not components:
        # every alternative sits below the first usable grid level
        raise ValueError("eps too large: no level covers any alternative")
    return MixtureBlockProcess(
        kind="CoverAndMix",
        schedule=schedule,
        instance=instance,
        weights=tuple(weights),
        components=tuple(components),
    )


# ---------------------------------------------------------------------------
# Zero lift, optimal stopping, and the peeking example
# ---------------------------------------------------------------------------

def zero_lift(proc: BlockEProcess) -> "ZeroLifted":
    """Extend a blockwise process to all times by paying zero off-schedule.

    Validity survives the lift: any stopping rule can be rounded up to the
    next boundary without decreasing the collected wealth, so null stopping
    expectations stay at most one.
    """
    return ZeroLifted(proc)


@dataclass(frozen=True, eq=False)
class ZeroLifted:
    """Full-filtration view of a blockwise process: zero wealth off-schedule."""

    process: BlockEProcess

    def log_wealth_path(self, samples: np.ndarray, horizon: int) -> dict[int, float]:
        """Wealth at every time 0..horizon: -inf (zero) except at boundaries."""
        out = {t: -math.inf for t in range(horizon + 1)}
        out[0] = 0.0
        state = self.process.initial_state()
        pos = 0
        k_count = self.process.instance.alphabet.size
        for k, m, t in self.process.schedule.blocks_within(horizon):
            counts = np.bincount(samples[pos:pos + m], minlength=k_count)
            state = self.process.advance(state, k, counts)
            out[t] = self.process.log_wealth(state)
            pos += m
        return out

    def constant_interpolation(self):
        raise PeekingError(
            "holding wealth constant between block boundaries admits peeking "
            "stopping rules whose null expectation exceeds one; only the "
            "zero lift preserves validity on the full filtration"
        )


def snell_value(wealth_fn, pmf: FinitePmf, horizon: int, times=None):
    """Maximum of E[W_tau] over stopping times with values in `times`.

    Exhaustive optimal stopping (Snell envelope) over the full K^horizon
    tree; dominating every stopping rule at once is what makes small-case
    validity checks conclusive.  `wealth_fn` maps a prefix tuple to wealth;
    Fractions are propagated exactly when both wealth and pmf entries are
    rational.
    """
    if pmf.size ** horizon > EXACT_ENUMERATION_GUARD:
        raise ValueError("horizon too large for exhaustive optimal stopping")
    allowed = set(range(horizon + 1)) if times is None else set(times)
    if horizon not in allowed:
        raise ValueError("the horizon itself must be a permitted stopping time")
    probs = [Fraction(p).limit_denominator(10**12) for p in pmf.probs.tolist()]

    def value(prefix: tuple[int, ...]):
        t = len(prefix)
        if t == horizon:
            return wealth_fn(prefix)
        cont = sum(
            probs[x] * value(prefix + (x,)) for x in range(pmf.size) if probs[x] > 0
        )
        if t in allowed:
            here = wealth_fn(prefix)
            return max(here, cont)
        return cont

    return value(())


@dataclass(frozen=True)
class PeekingExample:
    """Exact four-step wealth family separating blockwise from full validity."""

    peeked_value: Fraction
    blockwise_value: Fraction
    zero_lift_peeked_value: Fraction


def peeking_example_value() -> Fraction:
    """Exact expectation 3/2 extracted by peeking into an unfinished block."""
    return peeking_example().peeked_value


def peeking_example() -> PeekingExample:
    """Four fair-coin tosses, block times {0, 2, 4}, terminal payoff 2*1{X3=1}.

    Enumerates all 16 outcomes exactly.  The rule that stops at time 3 on
    X3=0 (keeping the held wealth 1 under constant interpolation) and waits
    for the payoff otherwise collects 3/2 in expectation; every stopping
    rule confined to the block times collects exactly 1; and the same
    peeking rule applied to the zero-lifted process collects at most 1.
    """
    paths = [(a, b, c, e) for a in (0, 1) for b in (0, 1) for c in (0, 1) for e in (0, 1)]
    prob = Fraction(1, 16)

    def w4(path) -> Fraction:
        return Fraction(2) if path[2] == 1 else Fraction(0)

    peeked = Fraction(0)
    lifted = Fraction(0)
    for path in paths:
        if path[2] == 0:
            peeked += prob * Fraction(1)   # constant interpolation holds W2 = 1
            lifted += prob * Fraction(0)   # zero lift pays nothing off-schedule
        else:
            peeked += prob * w4(path)
            lifted += prob * w4(path)

    # every blockwise rule collects exactly 1: wealth is 1 at times 0 and 2,
    # and E[W4 | F2] = 1; confirmed by matching Snell max and min
    coin = FinitePmf(Alphabet(("0", "1")), np.array([0.5, 0.5]))
    wealth = lambda prefix: Fraction(1) if len(prefix) < 4 else w4(prefix)
    blockwise_max = snell_value(wealth, coin, 4, times=(0, 2, 4))
    blockwise_min = -snell_value(lambda p: -wealth(p), coin, 4, times=(0, 2, 4))
    if blockwise_max != blockwise_min:
        raise RuntimeError("blockwise stopping values failed to collapse to a point")
    return PeekingExample(peeked, Fraction(blockwise_max), lifted)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryLog:
    """Simulated log-wealth path at schedule times, with stream identifiers.

    The first entry is always (0, 0.0): unit wealth before any block.
    """

    times: tuple[int, ...]
    log_wealth: tuple[float, ...]
    stopped_at: int | None
    seed: int
    stream_id: int

    def __post_init__(self):
        if not self.times or self.times[0] != 0 or self.log_wealth[0] != 0.0:
            raise ValueError("trajectory must start at time 0 with unit wealth")

    @property
    def block_count(self) -> int:
        return len(self.times) - 1

    def final_slope(self) -> float:
        if len(self.times) < 2:
            return 0.0
        return self.log_wealth[-1] / self.times[-1]


def _fast_fixed_path(proc: "ProductBlockProcess") -> np.ndarray | None:
    """Per-type log-factor table when every block repeats one small factor."""
    if proc.schedule.kind != "fixed":
        return None
    f1 = proc.factor_fn(1)
    if proc.factor_fn(2) is not f1:
        return None
    m = f1.length
    if type_count(m, proc.instance.alphabet.size) > 4096:
        return None
    return f1.log_values(type_table(m, proc.instance.alphabet.size))


def simulate(
    proc: BlockEProcess,
    source: FinitePmf,
    horizon: int,
    rng: RngStream,
    stop_log_threshold: float | None = None,
) -> TrajectoryLog:
    """Stream i.i.d. blocks from `source` and record log wealth at boundaries.

    Draws happen block by block in one fixed order, so a given stream yields
    the same trajectory prefix whatever the horizon.  Fixed-schedule binary
    processes that repeat a single factor run on a vectorized path.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if source.alphabet != proc.instance.alphabet:
        raise ValueError("source must live on the process alphabet")
    k_size = proc.instance.alphabet.size
    gen = rng.generator()
    cdf = np.cumsum(source.probs)
    cdf[-1] = 1.0
    if isinstance(proc, ProductBlockProcess) and k_size == 2:
        log_table = _fast_fixed_path(proc)
        if log_table is not None:
            m = proc.factor_fn(1).length
            blocks = horizon // m
            if blocks >= 1:
                draws = np.searchsorted(
                    cdf, gen.random(blocks * m), side="right"
                ).reshape(blocks, m)
                ones = draws.sum(axis=1)  # type index = count of symbol 1
                log_wealth = np.cumsum(log_table[ones])
                times = m * np.arange(1, blocks + 1)
                stopped_at = None
                if stop_log_threshold is not None:
                    hits = np.nonzero(log_wealth >= stop_log_threshold)[0]
                    if hits.size:
                        cut = hits[0]
                        stopped_at = int(times[cut])
                        times = times[: cut + 1]
                        log_wealth = log_wealth[: cut + 1]
                return TrajectoryLog(
                    (0,) + tuple(int(t) for t in times),
                    (0.0,) + tuple(float(v) for v in log_wealth),
                    stopped_at,
                    rng.seed,
                    rng.stream_id,
                )
    times_list: list[int] = [0]
    values: list[float] = [0.0]
    state = proc.initial_state()
    stopped_at = None
    for k, m, t in proc.schedule.blocks_within(horizon):
        draws = np.searchsorted(cdf, gen.random(m), side="right")
        counts = np.bincount(draws, minlength=k_size)
        state = proc.advance(state, k, counts)
        lw = proc.log_wealth(state)
        times_list.append(t)
        values.append(lw)
        if stop_log_threshold is not None and stopped_at is None and lw >= stop_log_threshold:
            stopped_at = t
            break
    return TrajectoryLog(
        tuple(times_list), tuple(values), stopped_at, rng.seed, rng.stream_id
    )


def wealth_path(proc: BlockEProcess, samples: np.ndarray):
    """Log wealth at every complete block boundary of a given sample path.

    Returns (times, log_wealth) as arrays; used when several processes must
    be evaluated on one shared draw.
    """
    samples = np.asarray(samples, dtype=np.int64)
    horizon = samples.size
    k_size = proc.instance.alphabet.size
    if isinstance(proc, ProductBlockProcess) and k_size == 2:
        log_table = _fast_fixed_path(proc)
        if log_table is not None:
            m = proc.factor_fn(1).length
            blocks = horizon // m
            if blocks == 0:
                return np.zeros(0, dtype=np.int64), np.zeros(0)
            ones = samples[: blocks * m].reshape(blocks, m).sum(axis=1)
            return (
                m * np.arange(1, blocks + 1),
                np.cumsum(log_table[ones]),
            )
    times: list[int] = []
    values: list[float] = []
    state = proc.initial_state()
    pos = 0
    for k, m, t in proc.schedule.blocks_within(horizon):
        counts = np.bincount(samples[pos:pos + m], minlength=k_size)
        state = proc.advance(state, k, counts)
        times.append(t)
        values.append(proc.log_wealth(state))
        pos += m
    return np.asarray(times, dtype=np.int64), np.asarray(values)


def exact_expected_log_wealth(
    proc: BlockEProcess, source: FinitePmf, k: int
) -> float:
    """Exact E_source[log W_{t_k}], by block sums for products and path
    enumeration for mixtures (guarded by the enumeration ceiling)."""
    if isinstance(proc, ProductBlockProcess):
        total = 0.0
        for j in range(1, k + 1):
            factor = proc.factor_fn(j)
            table = type_table(factor.length, source.size)
            with np.errstate(invalid="ignore"):
                terms = np.exp(table.log_type_probs(source))
            log_vals = factor.log_values(table)
            charged = terms > 0
            if np.any(~np.isfinite(log_vals[charged])):
                return -math.inf
            total += float(np.dot(terms[charged], log_vals[charged]))
        return total
    horizon = proc.schedule.time(k)
    if source.size ** horizon > EXACT_ENUMERATION_GUARD:
        raise ValueError("horizon too large for exact mixture expectation")
    total = 0.0
    k_size = source.size
    log_probs = source.log_probs()
    for path in np.ndindex(*([k_size] * horizon)):
        lp = float(log_probs[list(path)].sum())
        if lp == -math.inf:
            continue
        state = proc.initial_state()
        pos = 0
        for j, m, t in proc.schedule.blocks_within(horizon):
            counts = np.bincount(np.array(path[pos:pos + m]), minlength=k_size)
            state = proc.advance(state, j, counts)
            pos += m
        total += math.exp(lp) * proc.log_wealth(state)
    return total
