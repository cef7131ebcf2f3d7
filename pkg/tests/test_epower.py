"""Solver core: projection values, duals, robust values, and their oracles.

Derived expectations are computed by independent oracles (1-D grids over the
weight, raw-sequence enumeration, closed forms) before being compared with
the solver path.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from egrowth.epower import (
    EVariableTable,
    MixtureOfProducts,
    dual_ascent,
    dual_lower_bound,
    epower_of,
    gro_evariable,
    grow_bruteforce_oracle,
    grow_solve,
    klinf,
    rate_table,
    ripr_solve,
    tv_to_hull,
    worst_case_an,
)
from egrowth.gallery import (
    bernoulli_band_instance,
    dirac_pair_instance,
    oscillating_density_instance,
    shrinking_support_instance,
    two_point_instance,
)
from egrowth.measures import (
    BINARY,
    Alphabet,
    FinitePmf,
    NullInstance,
    RngStream,
    bernoulli,
    binary_kl,
    kl_divergence,
    type_table,
)

TWO_POINT = two_point_instance().instance
DIRAC = dirac_pair_instance().instance
SHRINK = shrinking_support_instance(8).instance
BAND = bernoulli_band_instance().instance
SIMPLE = NullInstance("simple", BINARY, (bernoulli(0.5),), {"Q": bernoulli(0.8)})


def random_instance(gen, k=2, j=2, m_alts=1, floor=0.03):
    alphabet = BINARY if k == 2 else Alphabet(tuple(f"s{i}" for i in range(k)))

    def draw():
        raw = gen.dirichlet(np.ones(k)) + floor
        return FinitePmf(alphabet, raw / raw.sum())

    alts = {f"Q{i}": draw() for i in range(m_alts)}
    return NullInstance("rand", alphabet, tuple(draw() for _ in range(j)), alts)


def grid_oracle_two_point_n2() -> float:
    """1-D grid search over the mixture weight with closed-form type KL."""
    q = TWO_POINT.alternative("Q")
    table = type_table(2, 2)
    q_mass = np.exp(table.log_type_probs(q))
    p_pts = [np.exp(table.log_point_probs(p)) for p in TWO_POINT.null]
    q_pts = np.exp(table.log_point_probs(q))
    best = math.inf
    for w in np.linspace(0.0, 1.0, 20001):
        r = w * p_pts[0] + (1 - w) * p_pts[1]
        value = float(np.dot(q_mass, np.log(q_pts / r)))
        best = min(best, value)
    return best


class TestRiprSolve:
    def test_two_point_n1(self):
        report = ripr_solve(TWO_POINT, "Q", 1)
        assert report.converged()
        assert report.value <= 1e-9
        assert np.allclose(report.weights, [0.5, 0.5], atol=1e-6)

    def test_two_point_n2_vs_grid_oracle(self):
        oracle = grid_oracle_two_point_n2()
        report = ripr_solve(TWO_POINT, "Q", 2)
        assert report.value == pytest.approx(oracle, abs=1e-8)
        assert report.value == pytest.approx(0.5 * math.log(16.0 / 15.0), abs=1e-9)

    def test_dirac_pair_infinite_at_two(self):
        report = ripr_solve(DIRAC, "Q", 2)
        assert report.status == "Infinite"
        assert report.value == math.inf

    def test_shrinking_support_exact(self):
        for n in (1, 2, 4):
            report = ripr_solve(SHRINK, "Q", n)
            assert report.value == pytest.approx(n * math.log(2.0), abs=1e-9)

    def test_tol_must_be_positive(self):
        with pytest.raises(ValueError):
            ripr_solve(TWO_POINT, "Q", 1, tol=0.0)

    def test_dual_bound_certifies(self):
        report = ripr_solve(BAND, "Q", 3)
        assert report.dual_bound <= report.value + 1e-9
        assert report.duality_gap >= 0.0

    def test_type_reduction_matches_raw_sequences(self):
        # raw-sequence oracle: same objective computed without exchangeability
        gen = RngStream(17, 0).generator()
        for _ in range(5):
            inst = random_instance(gen, k=3, j=2)
            n = 3
            report = ripr_solve(inst, "Q0", n)
            w = report.weights
            q = inst.alternative("Q0")
            value = 0.0
            for seq in itertools.product(range(3), repeat=n):
                q_seq = math.exp(sum(math.log(q.probs[x]) for x in seq))
                r_seq = sum(
                    float(w[j]) * math.exp(sum(math.log(p.probs[x]) for x in seq))
                    for j, p in enumerate(inst.null)
                )
                value += q_seq * math.log(q_seq / r_seq)
            assert value == pytest.approx(report.value, abs=1e-9)


class TestGroEvariable:
    def test_two_point_epower_matches_value(self):
        report = ripr_solve(TWO_POINT, "Q", 2)
        evar = gro_evariable(TWO_POINT, "Q", 2, report)
        power = epower_of(evar, "Q", TWO_POINT)
        assert power == pytest.approx(0.0322693, abs=1e-6)
        assert power >= report.dual_bound - 1e-9

    def test_singleton_null_is_likelihood_ratio(self):
        report = ripr_solve(SIMPLE, "Q", 1)
        evar = gro_evariable(SIMPLE, "Q", 1, report)
        assert np.allclose(evar.values, [0.4, 1.6], atol=1e-9)
        assert epower_of(evar, "Q", SIMPLE) == pytest.approx(0.192745, abs=1e-6)

    def test_alternative_inside_hull_gives_flat_payoff(self):
        report = ripr_solve(TWO_POINT, "Q", 1)
        evar = gro_evariable(TWO_POINT, "Q", 1, report)
        assert np.allclose(evar.values, 1.0, atol=1e-6)
        assert abs(epower_of(evar, "Q", TWO_POINT)) <= 1e-6

    def test_polar_membership_exact(self):
        gen = RngStream(18, 0).generator()
        for _ in range(10):
            inst = random_instance(gen, k=2, j=3)
            report = ripr_solve(inst, "Q0", 2)
            evar = gro_evariable(inst, "Q0", 2, report)
            assert evar.worst_null_mean <= 1.0 + 1e-9

    def test_requires_converged_report(self):
        report = ripr_solve(DIRAC, "Q", 2)
        with pytest.raises(ValueError):
            gro_evariable(DIRAC, "Q", 2, report)


class TestEpowerOf:
    def test_flat_payoff(self):
        table = type_table(2, 2)
        flat = EVariableTable(TWO_POINT, 2, np.ones(len(table)), 1.0)
        assert epower_of(flat, "Q", TWO_POINT) == 0.0

    def test_any_polar_payoff_below_value(self):
        gen = RngStream(19, 0).generator()
        for _ in range(20):
            inst = random_instance(gen, k=2, j=2)
            n = int(gen.integers(1, 4))
            table = type_table(n, 2)
            raw = gen.uniform(0.05, 3.0, size=len(table))
            means = [
                float(np.dot(np.exp(table.log_type_probs(p)), raw))
                for p in inst.null
            ]
            evar = EVariableTable(inst, n, raw / max(means), 1.0)
            value = ripr_solve(inst, "Q0", n).value
            assert epower_of(evar, "Q0", inst) <= value + 1e-9


class TestDualBounds:
    def test_constant_table_scores_zero(self):
        table = type_table(1, 2)
        assert dual_lower_bound(TWO_POINT, "Q", 1, np.full(len(table), 2.5)) == pytest.approx(0.0, abs=1e-12)

    def test_two_point_any_table_nonpositive(self):
        gen = RngStream(20, 0).generator()
        for _ in range(100):
            f = gen.normal(size=2) * 4.0
            assert dual_lower_bound(TWO_POINT, "Q", 1, f) <= 1e-12

    def test_shrinking_indicator_closed_form(self):
        inst = shrinking_support_instance(4).instance
        table = type_table(1, inst.alphabet.size)
        f = np.array([20.0 if row[0] == 1 else 0.0 for row in table.counts])
        expected = math.log(2.0) - math.log(1.0 + math.exp(-20.0))
        assert dual_lower_bound(inst, "Q", 1, f) == pytest.approx(expected, abs=1e-12)
        assert dual_lower_bound(inst, "Q", 1, f) == pytest.approx(0.693145, abs=1e-5)

    def test_dual_ascent_two_point(self):
        result = dual_ascent(TWO_POINT, "Q", 2, tol=1e-5)
        assert result.converged
        assert result.lower_bound == pytest.approx(0.0322693, abs=1e-4)

    def test_dual_ascent_inside_hull(self):
        result = dual_ascent(TWO_POINT, "Q", 1, tol=1e-6)
        assert abs(result.lower_bound) <= 1e-6

    def test_dual_ascent_band_tight(self):
        result = dual_ascent(BAND, "Q", 1, tol=1e-6, max_iter=60_000)
        assert result.lower_bound == pytest.approx(binary_kl(0.8, 0.6), abs=1e-5)

    def test_dual_ascent_rejects_infinite(self):
        with pytest.raises(ValueError):
            dual_ascent(DIRAC, "Q", 2)


class TestKlinfAndHull:
    def test_two_point(self):
        value, index = klinf(TWO_POINT, "Q")
        assert value == pytest.approx(0.5 * math.log(4.0 / 3.0), abs=1e-12)
        assert index == 0

    def test_oscillating_lower_bound(self):
        entry = oscillating_density_instance(8)
        value, _ = klinf(entry.instance, "Q")
        closed = min(
            entry.closed_forms[f"kl_q_p{k}"] for k in range(1, 9)
        )
        assert value == pytest.approx(closed, abs=1e-12)
        assert value >= 1.0 + 0.5 * math.log(0.5) - 1e-12

    def test_alternative_in_family(self):
        inst = NullInstance(
            "member", BINARY, (bernoulli(0.5), bernoulli(0.7)), {"Q": bernoulli(0.7)}
        )
        value, index = klinf(inst, "Q")
        assert value == 0.0
        assert index == 1

    def test_tv_to_hull_inside(self):
        assert tv_to_hull(TWO_POINT, "Q") <= 1e-9
        assert tv_to_hull(DIRAC, "Q") <= 1e-9

    def test_tv_to_hull_singleton(self):
        assert tv_to_hull(SIMPLE, "Q") == pytest.approx(0.3, abs=1e-9)

    def test_pinsker_gap(self):
        gen = RngStream(21, 0).generator()
        for _ in range(20):
            inst = random_instance(gen, k=3, j=2)
            a1 = ripr_solve(inst, "Q0", 1).value
            gap = tv_to_hull(inst, "Q0")
            assert a1 >= 2.0 * gap * gap - 1e-7


class TestGrow:
    def test_singleton_family_reduces_to_projection(self):
        report = grow_solve(SIMPLE, ["Q"], 2)
        expected = ripr_solve(SIMPLE, "Q", 2).value
        assert report.value == pytest.approx(expected, abs=1e-9)

    def test_symmetric_pair_collapses(self):
        inst = NullInstance(
            "gap", BINARY, (bernoulli(0.5),),
            {"Q1": bernoulli(0.25), "Q2": bernoulli(0.75)},
        )
        report = grow_solve(inst, ["Q1", "Q2"], 1)
        assert report.value <= 1e-9
        assert np.allclose(report.alt_weights, [0.5, 0.5], atol=1e-5)
        worst = worst_case_an(inst, ["Q1", "Q2"], 1)
        assert worst == pytest.approx(binary_kl(0.25, 0.5), abs=1e-9)
        # strict minimax gap, within the logarithmic family-size allowance
        assert report.value <= worst + 1e-9
        assert report.value >= worst - math.log(2) - 1e-6

    def test_oracle_agreement(self):
        gen = RngStream(22, 0).generator()
        for trial in range(6):
            inst = random_instance(gen, k=2, j=1 + trial % 2, m_alts=2 + trial % 2)
            n = 1 + trial % 3
            labels = inst.alt_labels()
            joint = grow_solve(inst, labels, n)
            oracle = grow_bruteforce_oracle(inst, labels, n)
            assert joint.value == pytest.approx(oracle, abs=1e-3)

    def test_oracle_nonnegative(self):
        gen = RngStream(23, 0).generator()
        inst = random_instance(gen, k=2, j=2, m_alts=2)
        assert grow_bruteforce_oracle(inst, inst.alt_labels(), 2) >= -1e-12

    def test_oracle_singleton_matches_projection(self):
        oracle = grow_bruteforce_oracle(SIMPLE, ["Q"], 2)
        assert oracle == pytest.approx(ripr_solve(SIMPLE, "Q", 2).value, abs=1e-3)

    def test_oracle_size_guard(self):
        with pytest.raises(ValueError):
            grow_bruteforce_oracle(SIMPLE, ["Q"], 300)

    def test_robust_evariable_is_polar(self):
        gen = RngStream(24, 0).generator()
        inst = random_instance(gen, k=2, j=2, m_alts=2)
        report = grow_solve(inst, inst.alt_labels(), 2)
        assert report.evariable is not None
        assert report.evariable.worst_null_mean <= 1.0 + 1e-9


class TestRateTable:
    def test_band_rate_constant(self):
        report = rate_table(BAND, "Q", 5)
        target = binary_kl(0.8, 0.6)
        for _, _, rate in report.per_horizon:
            assert rate == pytest.approx(target, abs=1e-5)
        assert report.superadditivity_ok and report.ceiling_ok

    def test_shrinking_rate_exact(self):
        report = rate_table(SHRINK, "Q", 4)
        for n, value, rate in report.per_horizon:
            assert value == pytest.approx(n * math.log(2.0), abs=1e-9)
        assert report.d_star_lower_bound == pytest.approx(math.log(2.0), abs=1e-9)

    def test_two_point_rates_nondecreasing_along_doubling(self):
        report = rate_table(TWO_POINT, "Q", 4)
        values = {n: v for n, v, _ in report.per_horizon}
        assert values[1] <= 1e-9
        assert values[2] == pytest.approx(0.0323, abs=1e-4)
        assert values[4] >= 2 * values[2] - 1e-8
        assert report.superadditivity_ok

    def test_superadditivity_and_ceiling_random(self):
        gen = RngStream(25, 0).generator()
        for _ in range(8):
            inst = random_instance(gen, k=int(gen.integers(2, 4)), j=int(gen.integers(1, 4)))
            values = {n: ripr_solve(inst, "Q0", n).value for n in range(1, 7)}
            kv, _ = klinf(inst, "Q0")
            for n in range(1, 6):
                for m in range(1, 7 - n):
                    assert values[n + m] >= values[n] + values[m] - 3e-7
            for n in range(1, 7):
                assert values[n] <= n * kv + 1e-7


class TestWorstCase:
    def test_singleton(self):
        assert worst_case_an(SIMPLE, ["Q"], 2) == pytest.approx(
            ripr_solve(SIMPLE, "Q", 2).value, abs=1e-12
        )

    def test_dominates_robust_value(self):
        gen = RngStream(26, 0).generator()
        for _ in range(5):
            inst = random_instance(gen, k=2, j=2, m_alts=2)
            labels = inst.alt_labels()
            robust = grow_solve(inst, labels, 2).value
            assert robust <= worst_case_an(inst, labels, 2) + 1e-9

    def test_empty_family_rejected(self):
        with pytest.raises(ValueError):
            worst_case_an(SIMPLE, [], 1)


class TestMixtureGeometry:
    def test_type_mass_matches_direct(self):
        gen = RngStream(27, 0).generator()
        inst = random_instance(gen, k=3, j=3)
        mix = MixtureOfProducts(inst, 3, np.array([0.2, 0.5, 0.3]))
        table = type_table(3, 3)
        direct = np.zeros(len(table))
        for j, p in enumerate(inst.null):
            direct += mix.weights[j] * np.exp(table.log_type_probs(p))
        assert np.allclose(mix.type_mass(table), direct, atol=1e-12)

    def test_marginal_by_direct_summation(self):
        gen = RngStream(28, 0).generator()
        inst = random_instance(gen, k=2, j=2)
        mix = MixtureOfProducts(inst, 3, np.array([0.7, 0.3]))
        marg = mix.marginal()
        # sum the full three-sample law over the last coordinate
        def seq_mass(weights, seqs, n):
            total = 0.0
            for j, p in enumerate(inst.null):
                total += weights[j] * math.exp(
                    sum(math.log(p.probs[x]) for x in seqs)
                )
            return total

        for prefix in itertools.product(range(2), repeat=2):
            lhs = sum(
                seq_mass(mix.weights, prefix + (x,), 3) for x in range(2)
            )
            rhs = seq_mass(marg.weights, prefix, 2)
            assert lhs == pytest.approx(rhs, abs=1e-14)

    def test_event_supremum_lp(self):
        # max over mixture weights of the event mass equals the best member
        gen = RngStream(29, 0).generator()
        inst = random_instance(gen, k=2, j=3)
        n = 3
        table = type_table(n, 2)
        member_masses = np.stack(
            [np.exp(table.log_type_probs(p)) for p in inst.null]
        )
        for subset in (0b0001, 0b0110, 0b1010, 0b1111):
            mask = np.array([(subset >> i) & 1 for i in range(len(table))], dtype=bool)
            event = member_masses[:, mask].sum(axis=1)
            res = linprog(
                -event, A_eq=np.ones((1, 3)), b_eq=[1.0], bounds=[(0, 1)] * 3,
                method="highs",
            )
            assert -res.fun == pytest.approx(event.max(), abs=1e-9)
