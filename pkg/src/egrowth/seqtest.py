"""Sequential tests: wealth thresholding, power-one construction, unions.

A sequential test stops at the first schedule time where the wealth of a
certified blockwise supermartingale reaches 1/alpha; the supermartingale
maximal inequality makes the null stopping probability at most alpha at
every horizon.  Power against a fixed alternative is always reported within
a finite horizon; the stop frequency is monotone in the horizon but never
literally one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .epower import EVariableTable, SolveReport, ripr_solve, tv_to_hull
from .measures import FinitePmf, NullInstance, RngStream, sample_iid, type_table
from .processes import (
    BlockEProcess,
    ProductBlockProcess,
    _fast_fixed_path,
    simulate,
    wealth_path,
    z_lambda_process,
)

CERT_TOL_DEFAULT = 1e-7
LAMBDA_CLIP_CAP = 1e12


@dataclass(frozen=True)
class TestOutcome:
    stopped: bool
    stop_time: int | None
    wealth_at_stop: float
    stopped_by: int | None = None


@dataclass(frozen=True, eq=False)
class SequentialTest:
    """Stop at the first schedule time with wealth >= 1/alpha."""

    process: BlockEProcess
    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def log_threshold(self) -> float:
        return -math.log(self.alpha)

    def run_trial(self, source: FinitePmf, horizon: int, rng: RngStream) -> TestOutcome:
        traj = simulate(
            self.process, source, horizon, rng,
            stop_log_threshold=self.log_threshold,
        )
        stopped = traj.stopped_at is not None
        wealth = math.exp(traj.log_wealth[-1]) if traj.log_wealth else 1.0
        return TestOutcome(stopped, traj.stopped_at, wealth)


def ville_test(process: BlockEProcess, alpha: float) -> SequentialTest:
    """Threshold a certified blockwise supermartingale at 1/alpha."""
    if not getattr(process, "certified", False):
        raise ValueError("process is not supermartingale-certified")
    return SequentialTest(process, alpha)


def tune_lambda(
    instance: NullInstance,
    evariable: EVariableTable,
    alt_label: str,
    cap: float = LAMBDA_CLIP_CAP,
) -> tuple[float, float]:
    """Maximize the expected log of 1 - lam + lam * E under the alternative.

    The objective is concave on (0, 1); ternary search narrows the maximizer
    to 1e-10.  Payoff entries are clipped at `cap` first, which can only
    lower the optimum (monotone in the cap), and requires positive drift
    E_alt[E] > 1 to begin with.
    """
    alt = instance.alternative(alt_label)
    table = evariable.table()
    q_mass = np.exp(table.log_type_probs(alt))
    values = np.minimum(evariable.values, cap)
    mean = float(np.dot(q_mass, values))
    if mean <= 1.0:
        raise ValueError(f"no positive drift: E_alt[E] = {mean} <= 1")

    def psi(lam: float) -> float:
        return float(np.dot(q_mass, np.log1p(lam * (values - 1.0))))

    lo, hi = 0.0, 1.0
    while hi - lo > 1e-10:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if psi(m1) < psi(m2):
            lo = m1
        else:
            hi = m2
    lam = 0.5 * (lo + hi)
    return lam, psi(lam)


def power_one_test_from_membership(
    instance: NullInstance,
    alt_label: str,
    k: int,
    alpha: float,
    cert_tol: float = CERT_TOL_DEFAULT,
) -> SequentialTest:
    """Level-alpha test with positive drift built from a positive k-sample value.

    Positivity of the k-sample projection value yields a payoff in the polar
    with expected log above zero, hence mean above one by Jensen; mixing it
    with cash at the tuned coefficient gives a strictly positive factor
    whose repeated product crosses any threshold almost surely under the
    alternative.
    """
    report = ripr_solve(instance, alt_label, k)
    if report.status == "Infinite":
        evar = _separating_evariable(instance, alt_label, k)
    else:
        if report.value <= cert_tol:
            raise ValueError(
                f"no certificate: value {report.value} at horizon {k} is not positive"
            )
        evar = _gro_from_report(instance, alt_label, k, report)
    lam, drift = tune_lambda(instance, evar, alt_label)
    process = z_lambda_process(instance, evar, lam)
    if drift <= 0:
        raise ValueError("tuned drift is not positive")
    return SequentialTest(process, alpha)


def _gro_from_report(
    instance: NullInstance, alt_label: str, k: int, report: SolveReport
) -> EVariableTable:
    from .epower import gro_evariable

    return gro_evariable(instance, alt_label, k, report)


def _separating_evariable(
    instance: NullInstance, alt_label: str, k: int
) -> EVariableTable:
    """Payoff concentrated on types no null member can reach (infinite value)."""
    alt = instance.alternative(alt_label)
    table = type_table(k, instance.alphabet.size)
    null_reach = np.zeros(len(table), dtype=bool)
    for p in instance.null:
        null_reach |= np.isfinite(table.log_point_probs(p))
    q_mass = np.exp(table.log_type_probs(alt))
    target = (~null_reach) & (q_mass > 0)
    if not target.any():
        raise ValueError("no separating types exist at this horizon")
    values = np.where(target, LAMBDA_CLIP_CAP, 0.0)
    return EVariableTable(instance, k, values, 0.0)


@dataclass(frozen=True, eq=False)
class UnionSequentialTest:
    """Stop when any component test stops; levels sum to at most alpha."""

    components: tuple[SequentialTest, ...]
    alpha: float
    levels: tuple[Fraction, ...]

    def run_trial(self, source: FinitePmf, horizon: int, rng: RngStream) -> TestOutcome:
        samples = sample_iid(source, horizon, rng)
        best_time, best_idx, best_wealth = None, None, 1.0
        for idx, test in enumerate(self.components, start=1):
            times, log_w = wealth_path(test.process, samples)
            hits = np.nonzero(log_w >= test.log_threshold)[0]
            if hits.size:
                t = int(times[hits[0]])
                if best_time is None or t < best_time:
                    best_time, best_idx = t, idx
                    best_wealth = float(math.exp(log_w[hits[0]]))
        if best_time is None:
            return TestOutcome(False, None, 1.0, None)
        return TestOutcome(True, best_time, best_wealth, best_idx)


def alpha_spending_union(
    processes: list[BlockEProcess], alpha: float
) -> UnionSequentialTest:
    """Union test with dyadic level allocations alpha * 2^-i.

    Level bookkeeping is exact rational arithmetic, so the allocated levels
    sum to alpha * (1 - 2^-N) <= alpha with no float slack.
    """
    if not processes:
        raise ValueError("need at least one component process")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    alpha_frac = Fraction(alpha).limit_denominator(10**12)
    levels = [alpha_frac / 2**i for i in range(1, len(processes) + 1)]
    if sum(levels) > alpha_frac:
        raise ValueError("allocated levels exceed the total budget")
    components = tuple(
        ville_test(proc, float(level)) for proc, level in zip(processes, levels)
    )
    return UnionSequentialTest(components, alpha, tuple(levels))


@dataclass(frozen=True)
class Certificate:
    """Testability verdict from per-horizon projection values."""

    first_positive_horizon: int | None
    a_values: tuple[float, ...]
    verdict: str
    consistent: bool


def testability_certificate(
    instance: NullInstance,
    alt_label: str,
    n_max: int,
    cert_tol: float = CERT_TOL_DEFAULT,
) -> Certificate:
    """Scan horizons 1..n_max for a positive value; positivity must persist.

    Once positive the value stays positive at later horizons; a later
    solver value at or below the tolerance is a solver bug and raises.  The
    one-step verdict is cross-checked against the TV-to-hull separation via
    the quadratic lower bound; disagreement marks the certificate
    inconsistent rather than silently trusting either side.
    """
    values = []
    first = None
    for n in range(1, n_max + 1):
        rep = ripr_solve(instance, alt_label, n)
        value = rep.value
        values.append(value)
        positive = value > cert_tol
        if positive and first is None:
            first = n
        if first is not None and n > first and not positive:
            raise RuntimeError(
                f"monotonicity violated: positive at {first} but not at {n}"
            )
    verdict = "Testable" if first is not None else "UndeterminedUpToNMax"
    gap = tv_to_hull(instance, alt_label)
    pinsker_floor = 2.0 * gap * gap
    consistent = True
    if pinsker_floor > cert_tol and values[0] <= cert_tol:
        consistent = False
    if values[0] > cert_tol and pinsker_floor == 0.0 and values[0] > 1e-3:
        # positive value with the alternative inside the hull: solver defect
        consistent = False
    return Certificate(first, tuple(values), verdict, consistent)


@dataclass(frozen=True)
class LevelPowerRow:
    label: str
    stop_frequency: float
    mean_stop_time: float | None
    standard_error: float
    trials: int


def estimate_level_power(
    test: SequentialTest | UnionSequentialTest,
    instance: NullInstance,
    horizon: int,
    trials: int,
    rng: RngStream,
) -> list[LevelPowerRow]:
    """Monte Carlo stop frequency per law (null members first, then alternatives).

    Per-trial substreams make the table deterministic in (seed, stream) and
    independent of evaluation order.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials for a meaningful table")
    laws: list[tuple[str, FinitePmf]] = [
        (f"null[{j}]", p) for j, p in enumerate(instance.null)
    ]
    laws += [(label, q) for label, q in instance.alternatives.items()]
    rows = []
    for law_index, (label, law) in enumerate(laws):
        stops = 0
        stop_times = []
        if horizon >= 1:
            for trial in range(trials):
                stream = rng.substream(law_index * trials + trial)
                outcome = test.run_trial(law, horizon, stream)
                if outcome.stopped:
                    stops += 1
                    stop_times.append(outcome.stop_time)
        freq = stops / trials
        se = math.sqrt(freq * (1.0 - freq) / trials)
        mean_stop = float(np.mean(stop_times)) if stop_times else None
        rows.append(LevelPowerRow(label, freq, mean_stop, se, trials))
    return rows


def exact_stop_probability(
    test: SequentialTest, null: FinitePmf, horizon: int
) -> float:
    """Exact null stopping probability by forward recursion over type counts.

    Requires a binary alphabet and a fixed-block process whose repeated
    log-factor is affine in the block's count of ones; then the running
    count is sufficient for the wealth and the stopped set is a lattice
    barrier, so the recursion over (time, count) is exact.
    """
    if null.size != 2:
        raise ValueError("exact recursion implemented for binary alphabets only")
    proc = test.process
    if not isinstance(proc, ProductBlockProcess) or proc.schedule.kind != "fixed":
        raise ValueError("exact recursion needs a fixed-block product process")
    log_table = _fast_fixed_path(proc)
    if log_table is None:
        raise ValueError("exact recursion needs one repeated small factor")
    if not np.all(np.isfinite(log_table)):
        raise ValueError("exact recursion needs a strictly positive factor")
    m = proc.factor_fn(1).length
    if m > 1:
        second = np.diff(log_table, 2)
        if log_table.size > 2 and np.max(np.abs(second)) > 1e-12:
            raise ValueError("log factor is not affine in the block count")
    g0 = float(log_table[0])
    slope = float(log_table[-1] - log_table[0]) / m if m >= 1 else 0.0
    p1 = float(null.probs[1])
    threshold = test.log_threshold
    alive = np.array([1.0])  # alive[c] = P(not stopped, c ones so far)
    stopped_mass = 0.0
    for t in range(1, horizon + 1):
        nxt = np.zeros(t + 1)
        nxt[: t] += alive * (1.0 - p1)
        nxt[1: t + 1] += alive * p1
        alive = nxt
        if t % m == 0:
            blocks = t // m
            counts = np.arange(t + 1)
            wealth = blocks * g0 + slope * counts
            crossing = wealth >= threshold
            stopped_mass += float(alive[crossing].sum())
            alive = np.where(crossing, 0.0, alive)
    return stopped_mass


@dataclass(frozen=True)
class CompositeRouteReport:
    """Which sufficient route (if any) funds a pointwise power-one union test."""

    route: str
    detail: str
    per_alternative: dict[str, float]


def composite_testability_report(
    instance: NullInstance, alt_labels, n_max: int = 4
) -> CompositeRouteReport:
    """Report which general sufficient condition applies to a composite family.

    Route "uniform-rate": the worst per-alternative growth rate is positive,
    so a single mixed process works.  Route "compact-null": on a finite
    alphabet every finite null family is compact, so per-alternative tests
    at split levels always combine into a pointwise power-one union.  Only
    sufficiency is reported; no necessary condition is claimed.
    """
    labels = tuple(alt_labels)
    rates = {}
    for label in labels:
        best = 0.0
        for n in range(1, n_max + 1):
            rep = ripr_solve(instance, label, n)
            rate = rep.value / n if math.isfinite(rep.value) else math.inf
            best = max(best, rate)
        rates[label] = best
    worst = min(rates.values())
    if worst > CERT_TOL_DEFAULT:
        return CompositeRouteReport(
            "uniform-rate",
            f"min over alternatives of the best per-sample rate is {worst:.6g} > 0",
            rates,
        )
    return CompositeRouteReport(
        "compact-null",
        "finite family on a finite alphabet; pointwise tests at split levels",
        rates,
    )
