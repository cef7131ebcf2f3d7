"""Invariant batteries runnable from the CLI: pass/fail rows with measured slack.

Each suite replays the structural guarantees of one module on seeded random
or fixed instances.  Slack is reported as (measured - allowed), so negative
numbers mean margin and any positive number is a failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import epower, gallery, processes, seqtest
from .measures import (
    BINARY,
    Alphabet,
    FinitePmf,
    NullInstance,
    RngStream,
    bernoulli,
    binary_kl,
    kl_divergence,
    tv_distance,
    type_table,
)


@dataclass(frozen=True)
class CheckRow:
    name: str
    passed: bool
    slack: float


def _random_pmf(gen, k: int, floor: float = 0.02) -> FinitePmf:
    raw = gen.dirichlet(np.ones(k)) + floor
    alphabet = BINARY if k == 2 else Alphabet(tuple(f"s{i}" for i in range(k)))
    return FinitePmf(alphabet, raw / raw.sum())


def _suite_divergences(seed: int) -> list[CheckRow]:
    gen = RngStream(seed, 101).generator()
    rows = []
    worst_pinsker = -math.inf
    worst_dpi = -math.inf
    worst_entropy = -math.inf
    worst_convexity = -math.inf
    for _ in range(1000):
        k = int(gen.integers(2, 5))
        alphabet = BINARY if k == 2 else Alphabet(tuple(f"s{i}" for i in range(k)))
        m = _random_pmf(gen, k)
        n = _random_pmf(gen, k)
        kl = kl_divergence(m, n)
        tv = tv_distance(m, n)
        worst_pinsker = max(worst_pinsker, 2.0 * tv * tv - kl)
        for subset in range(1, 2 ** k - 1):
            mask = np.array([(subset >> i) & 1 for i in range(k)], dtype=bool)
            worst_dpi = max(
                worst_dpi,
                binary_kl(float(m.probs[mask].sum()), float(n.probs[mask].sum())) - kl,
            )
        f = gen.normal(size=k) * 2.0
        lhs = float(m.probs @ f)
        rhs = kl + math.log(float(n.probs @ np.exp(f)))
        worst_entropy = max(worst_entropy, lhs - rhs)
        lam = float(gen.uniform(0.1, 0.9))
        m2, n2 = _random_pmf(gen, k), _random_pmf(gen, k)
        mix_m = FinitePmf(alphabet, lam * m.probs + (1 - lam) * m2.probs)
        mix_n = FinitePmf(alphabet, lam * n.probs + (1 - lam) * n2.probs)
        convex_gap = kl_divergence(mix_m, mix_n) - (
            lam * kl + (1 - lam) * kl_divergence(m2, n2)
        )
        worst_convexity = max(worst_convexity, convex_gap)
    rows.append(CheckRow("pinsker", worst_pinsker <= 1e-12, worst_pinsker))
    rows.append(CheckRow("binary-dpi", worst_dpi <= 1e-12, worst_dpi))
    rows.append(CheckRow("entropy-inequality", worst_entropy <= 1e-9, worst_entropy))
    rows.append(CheckRow("joint-convexity", worst_convexity <= 1e-9, worst_convexity))
    worst_partition = 0.0
    for k, n_len in ((2, 9), (3, 6), (4, 4)):
        table = type_table(n_len, k)
        p = _random_pmf(RngStream(seed, 55 + k).generator(), k)
        total = float(np.exp(table.log_type_probs(p)).sum())
        worst_partition = max(worst_partition, abs(total - 1.0))
    rows.append(CheckRow("type-partition", worst_partition <= 1e-9, worst_partition))
    return rows


def _duality_instances():
    yield gallery.two_point_instance().instance, "Q", (1, 2, 3)
    yield gallery.dirac_pair_instance().instance, "Q", (1,)
    yield gallery.oscillating_density_instance(8).instance, "Q", (1, 2)
    yield gallery.shrinking_support_instance(16).instance, "Q", (1, 2)
    yield gallery.bernoulli_band_instance().instance, "Q", (1, 2, 3)


def _suite_duality(seed: int) -> list[CheckRow]:
    rows = []
    worst = -math.inf
    for instance, alt, horizons in _duality_instances():
        for n in horizons:
            primal = epower.ripr_solve(instance, alt, n)
            if not math.isfinite(primal.value):
                continue
            dual = epower.dual_ascent(instance, alt, n, tol=5e-5)
            worst = max(worst, primal.value - dual.lower_bound)
    rows.append(CheckRow("strong-duality-gap<=1e-4", worst <= 1e-4, worst - 1e-4))
    gen = RngStream(seed, 202).generator()
    worst_cert = -math.inf
    for _ in range(50):
        inst = NullInstance(
            "r", BINARY,
            tuple(_random_pmf(gen, 2) for _ in range(2)),
            {"Q": _random_pmf(gen, 2)},
        )
        n = int(gen.integers(1, 4))
        f = gen.normal(size=n + 1) * 2.0
        bound = epower.dual_lower_bound(inst, "Q", n, f)
        value = epower.ripr_solve(inst, "Q", n).value
        worst_cert = max(worst_cert, bound - value)
    rows.append(CheckRow("bounded-certificate<=value", worst_cert <= 1e-9, worst_cert))
    return rows


def _suite_processes(seed: int) -> list[CheckRow]:
    rows = []
    example = processes.peeking_example()
    rows.append(CheckRow(
        "peeking-value-3/2", example.peeked_value == Fraction(3, 2),
        float(example.peeked_value - Fraction(3, 2)),
    ))
    rows.append(CheckRow(
        "blockwise-value-1", example.blockwise_value == 1,
        float(example.blockwise_value - 1),
    ))
    rows.append(CheckRow(
        "zero-lift-peeked<=1", example.zero_lift_peeked_value <= 1,
        float(example.zero_lift_peeked_value - 1),
    ))
    gen = RngStream(seed, 303).generator()
    worst_csiszar = -math.inf
    for _ in range(10):
        k = int(gen.integers(2, 4))
        inst = NullInstance(
            "r",
            BINARY if k == 2 else Alphabet(tuple(f"s{i}" for i in range(k))),
            tuple(_random_pmf(gen, k) for _ in range(int(gen.integers(1, 3)))),
            {"Q": _random_pmf(gen, k)},
        )
        center = _random_pmf(gen, k)
        region = processes.TvBall(center, float(gen.uniform(0.05, 0.4)))
        m = int(gen.integers(1, 11))
        chk = processes.csiszar_bound_check(inst, region, m)
        worst_csiszar = max(worst_csiszar, chk.exact_sup - chk.bound * (1 + 1e-9))
    rows.append(CheckRow("csiszar-bound", worst_csiszar <= 0.0, worst_csiszar))
    # covering penalty: uniform mixture of polar payoffs loses at most log N
    inst = gallery.two_point_instance().instance
    rep = epower.ripr_solve(inst, "Q", 2)
    e1 = epower.gro_evariable(inst, "Q", 2, rep)
    table = e1.table()
    flat = epower.EVariableTable(inst, 2, np.ones(len(table)), 1.0)
    mix = epower.EVariableTable(
        inst, 2, 0.5 * e1.values + 0.5 * flat.values, 1.0
    )
    penalty_gap = max(
        epower.epower_of(e1, "Q", inst), epower.epower_of(flat, "Q", inst)
    ) - math.log(2) - epower.epower_of(mix, "Q", inst)
    rows.append(CheckRow("covering-penalty", penalty_gap <= 1e-12, penalty_gap))
    # growth ceiling at an exactly reachable block time
    proc = processes.repeated_block_process(e1)
    exact = processes.exact_expected_log_wealth(proc, inst.alternative("Q"), 2)
    ceiling = epower.ripr_solve(inst, "Q", 4).value
    rows.append(CheckRow("growth-ceiling", exact <= ceiling + 1e-9, exact - ceiling))
    return rows


def _suite_tests(seed: int) -> list[CheckRow]:
    rows = []
    inst = NullInstance("s", BINARY, (bernoulli(0.5),), {"Q": bernoulli(0.8)})
    evar = epower.gro_evariable(inst, "Q", 1, epower.ripr_solve(inst, "Q", 1))
    test = seqtest.ville_test(processes.repeated_block_process(evar), 0.05)
    exact = seqtest.exact_stop_probability(test, bernoulli(0.5), 24)
    rows.append(CheckRow("exact-dp-level", exact <= 0.05, exact - 0.05))
    table = seqtest.estimate_level_power(test, inst, horizon=200,
                                         trials=400, rng=RngStream(seed, 404))
    null_row = table[0]
    bound = 0.05 + 3 * max(null_row.standard_error, math.sqrt(0.05 * 0.95 / 400))
    rows.append(CheckRow(
        "mc-level", null_row.stop_frequency <= bound, null_row.stop_frequency - bound
    ))
    union = seqtest.alpha_spending_union(
        [processes.repeated_block_process(evar)] * 3, 0.05
    )
    total = sum(union.levels)
    rows.append(CheckRow("union-accounting", total <= Fraction(1, 20), float(total) - 0.05))
    cert = seqtest.testability_certificate(
        gallery.dirac_pair_instance().instance, "Q", 4
    )
    rows.append(CheckRow(
        "certificate-dirac", cert.first_positive_horizon == 2 and cert.consistent, 0.0
    ))
    return rows


def _suite_gallery(seed: int) -> list[CheckRow]:
    rows = []
    tp = gallery.two_point_instance()
    kv, _ = epower.klinf(tp.instance, "Q")
    rows.append(CheckRow(
        "two-point-klinf", abs(kv - tp.closed_forms["klinf"]) <= 1e-12,
        abs(kv - tp.closed_forms["klinf"]),
    ))
    a2 = epower.ripr_solve(tp.instance, "Q", 2).value
    rows.append(CheckRow(
        "two-point-a2", abs(a2 - tp.closed_forms["a2"]) <= 1e-9,
        abs(a2 - tp.closed_forms["a2"]),
    ))
    osc = gallery.oscillating_density_instance(8)
    worst = 0.0
    for k in range(1, 9):
        lib_kl = kl_divergence(osc.instance.alternative("Q"), osc.instance.null[k - 1])
        worst = max(worst, abs(lib_kl - osc.closed_forms[f"kl_q_p{k}"]))
        lib_tv = tv_distance(osc.instance.alternative("Q"), osc.instance.null[k - 1])
        worst = max(worst, abs(lib_tv - osc.closed_forms[f"tv_q_p{k}"]))
    rows.append(CheckRow("oscillating-closed-forms", worst <= 1e-12, worst))
    shrink = gallery.shrinking_support_instance(8)
    a3 = epower.ripr_solve(shrink.instance, "Q", 3).value
    rows.append(CheckRow(
        "shrinking-a3", abs(a3 - 3 * math.log(2)) <= 1e-9, abs(a3 - 3 * math.log(2))
    ))
    band = gallery.bernoulli_band_instance()
    a1 = epower.ripr_solve(band.instance, "Q", 1).value
    rows.append(CheckRow(
        "band-a1", abs(a1 - band.closed_forms["klinf"]) <= 1e-6,
        abs(a1 - band.closed_forms["klinf"]),
    ))
    return rows


SUITES = {
    "divergences": _suite_divergences,
    "duality": _suite_duality,
    "processes": _suite_processes,
    "tests": _suite_tests,
    "gallery": _suite_gallery,
}


def run_suite(name: str, seed: int) -> list[CheckRow]:
    if name == "all":
        rows = []
        for suite_name in SUITES:
            rows.extend(
                CheckRow(f"{suite_name}:{row.name}", row.passed, row.slack)
                for row in SUITES[suite_name](seed)
            )
        return rows
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; have {sorted(SUITES)} and 'all'")
    return SUITES[name](seed)
