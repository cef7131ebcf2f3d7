"""Canonical instances with closed-form oracles, wired as named fixtures.

Each entry bundles a NullInstance with the exact quantities its structure
pins down, so tests and CLI reproduction runs can compare solver output
against formulas evaluated independently.  Truncation indices are
first-class parameters: families that are countable in principle are
represented by explicit finite truncations, with the untruncated limits
recorded in the notes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measures import (
    BINARY,
    Alphabet,
    FinitePmf,
    NullInstance,
    bernoulli,
    binary_kl,
    point_mass,
)


@dataclass(frozen=True)
class GalleryEntry:
    name: str
    instance: NullInstance
    closed_forms: dict[str, float]
    notes: tuple[str, ...] = field(default_factory=tuple)


def two_point_instance() -> GalleryEntry:
    """Symmetric two-member null with the alternative at their midpoint.

    The hull of the null contains the alternative, so the one-step
    projection value vanishes while the raw KL to either member does not.
    """
    instance = NullInstance(
        "two-point",
        BINARY,
        (bernoulli(0.75), bernoulli(0.25)),
        {"Q": bernoulli(0.5)},
    )
    closed = {
        "klinf": 0.5 * math.log(4.0 / 3.0),
        "a1": 0.0,
        "a2": 0.5 * math.log(16.0 / 15.0),
    }
    notes = ("a2 from the symmetric mixture, verifiable by 1-D grid search",)
    return GalleryEntry("two-point", instance, closed, notes)


def dirac_pair_instance() -> GalleryEntry:
    """Two point masses with the fair coin as alternative.

    One-step testing is hopeless (the alternative is the midpoint mixture),
    but no mixture of two-sample products charges the mixed-symbol types,
    so the two-step value is infinite.
    """
    instance = NullInstance(
        "dirac-pair",
        BINARY,
        (point_mass(BINARY, 0), point_mass(BINARY, 1)),
        {"Q": bernoulli(0.5)},
    )
    closed = {"a1": 0.0, "a2": math.inf, "first_positive_horizon": 2.0}
    return GalleryEntry("dirac-pair", instance, closed)


def oscillating_density_instance(k_max: int) -> GalleryEntry:
    """Truncation of the oscillating-density family on dyadic cells of [0,1].

    The alternative is uniform; member k deflates the cell block [0, 2^-k]
    by a factor exp(-2^k) and inflates the rest to compensate.  Densities
    are constant on the K+1 cells, so the coarsening to cell masses is
    exact: KL and TV against the uniform law equal their continuous-space
    closed forms.  Members get TV-close to the alternative while their raw
    KL stays above 1 + (1/2)log(1/2), which makes the hull creep toward the
    alternative as the truncation grows.
    """
    if not (2 <= k_max <= 16):
        raise ValueError("truncation index must be between 2 and 16")
    # cells: [0, 2^-K], then rings (2^-k, 2^-(k-1)] for k = K..1
    masses = np.array([2.0 ** -k_max] + [2.0 ** -k for k in range(k_max, 0, -1)])
    alphabet = Alphabet(tuple(f"cell{i}" for i in range(k_max + 1)))
    alt = FinitePmf(alphabet, masses)
    null = []
    closed: dict[str, float] = {}
    for k in range(1, k_max + 1):
        eps = 2.0 ** -k
        a_k = math.exp(-(2.0 ** k))
        b_k = (1.0 - eps * a_k) / (1.0 - eps)
        # density a_k on [0, 2^-k] = cells 0..(k_max - k); b_k on the rest
        density = np.array(
            [a_k if i <= k_max - k else b_k for i in range(k_max + 1)]
        )
        probs = density * masses
        total = probs.sum()
        null.append(FinitePmf(alphabet, probs / total))
        closed[f"kl_q_p{k}"] = 1.0 + (1.0 - eps) * math.log(
            (1.0 - eps) / (1.0 - eps * a_k)
        )
        closed[f"tv_q_p{k}"] = eps * (1.0 - a_k)
    closed["klinf_lower"] = 1.0 + 0.5 * math.log(0.5)
    instance = NullInstance(
        f"oscillating-{k_max}", alphabet, tuple(null), {"Q": alt}
    )
    notes = (
        "members with k >= 10 have deflated cell masses below float range;"
        " they carry exact zeros there and their library KL to Q is +inf",
        "the untruncated family drives every projection value to 0",
    )
    return GalleryEntry(f"oscillating-{k_max}", instance, closed, notes)


def shrinking_support_instance(k_max: int) -> GalleryEntry:
    """Point-mass alternative against half-half members on shrinking atoms.

    Every member puts mass 1/2 on the alternative's atom, so the value at
    horizon n is exactly n log 2 for every mixture, and the growth rate
    equals the raw KL floor log 2.
    """
    if k_max < 2:
        raise ValueError("need at least two members")
    alphabet = Alphabet(tuple(["0"] + [f"1/{k}" for k in range(1, k_max + 1)]))
    null = []
    for k in range(1, k_max + 1):
        probs = np.zeros(k_max + 1)
        probs[0] = 0.5
        probs[k] = 0.5
        null.append(FinitePmf(alphabet, probs))
    instance = NullInstance(
        f"shrinking-support-{k_max}",
        alphabet,
        tuple(null),
        {"Q": point_mass(alphabet, 0)},
    )
    closed = {
        "klinf": math.log(2.0),
        "rate": math.log(2.0),
        "first_positive_horizon": 1.0,
    }
    return GalleryEntry(f"shrinking-support-{k_max}", instance, closed)


def shrinking_bernoulli_alternatives(k_max: int) -> GalleryEntry:
    """Fair-coin null with alternatives sliding down toward it.

    Each alternative is individually testable, yet the family's uniform
    growth rate degenerates to zero because the separations shrink to 0.
    """
    if k_max < 1:
        raise ValueError("need at least one alternative")
    alternatives = {}
    closed: dict[str, float] = {}
    for i in range(1, k_max + 1):
        p = 0.5 + 2.0 ** (-i - 2)
        alternatives[f"Q{i}"] = bernoulli(p)
        closed[f"klinf_q{i}"] = binary_kl(p, 0.5)
    instance = NullInstance(
        f"shrinking-bernoulli-{k_max}", BINARY, (bernoulli(0.5),), alternatives
    )
    closed["min_klinf"] = closed[f"klinf_q{k_max}"]
    return GalleryEntry(f"shrinking-bernoulli-{k_max}", instance, closed)


def bernoulli_band_instance(
    lo: float = 0.4,
    hi: float = 0.6,
    grid_step: float = 0.01,
    alt_prob: float = 0.8,
) -> GalleryEntry:
    """Grid of Bernoulli nulls whose hull is the full parameter band.

    On a binary alphabet, mixtures of Bernoullis are Bernoullis, so the
    grid's hull is convex and compact and the one-step projection value
    already equals the raw KL to the nearest band edge; superadditivity and
    the per-horizon ceiling then pin every horizon to n times that value.
    """
    if not (0.0 < lo < hi < 1.0):
        raise ValueError("band must satisfy 0 < lo < hi < 1")
    count = int(round((hi - lo) / grid_step)) + 1
    grid = [lo + i * grid_step for i in range(count)]
    if abs(grid[-1] - hi) > 1e-12:
        raise ValueError("grid step must divide the band exactly")
    instance = NullInstance(
        "bernoulli-band",
        BINARY,
        tuple(bernoulli(p) for p in grid),
        {"Q": bernoulli(alt_prob)},
    )
    edge = hi if alt_prob > hi else (lo if alt_prob < lo else alt_prob)
    closed = {
        "klinf": binary_kl(alt_prob, edge),
        "rate": binary_kl(alt_prob, edge),
    }
    return GalleryEntry("bernoulli-band", instance, closed)


_BUILDERS = {
    "two-point": lambda **kw: two_point_instance(),
    "dirac-pair": lambda **kw: dirac_pair_instance(),
    "oscillating": lambda **kw: oscillating_density_instance(int(kw.get("K", 8))),
    "shrinking-support": lambda **kw: shrinking_support_instance(int(kw.get("K", 16))),
    "shrinking-bernoulli": lambda **kw: shrinking_bernoulli_alternatives(int(kw.get("K", 6))),
    "bernoulli-band": lambda **kw: bernoulli_band_instance(
        float(kw.get("lo", 0.4)), float(kw.get("hi", 0.6)),
        float(kw.get("step", 0.01)), float(kw.get("alt", 0.8)),
    ),
}


def gallery_names() -> list[str]:
    return sorted(_BUILDERS)


def gallery_entry(name: str, **params) -> GalleryEntry:
    """Look up an entry by name; parameters like K arrive as keywords."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown gallery entry {name!r}; have {gallery_names()}") from None
    return builder(**params)
