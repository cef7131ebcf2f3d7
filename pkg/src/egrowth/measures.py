"""Finite-alphabet probability objects: pmfs, divergences, sampling, type classes.

Everything here is immutable after construction and every function is pure,
so concurrent use from any number of threads is safe.  Probability
accumulation over sequences and type classes is done in log domain; the
conventions 0*log(0) = 0 and log(0) = -inf are implemented as explicit
branches, never left to floating-point accident.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

DEFAULT_TYPE_CAP = 10_000_000
TYPE_CAP_ENV = "EGL_TYPECAP"

_PMF_SUM_TOL = 1e-12
_LOAD_SUM_TOL = 1e-9


class AlphabetMismatchError(ValueError):
    """Raised when two measures do not share the same alphabet."""


class TypeCountCapError(RuntimeError):
    """Raised when a type-class enumeration would exceed the configured cap."""


def type_cap() -> int:
    """Current type-class cap; overridable via the EGL_TYPECAP env variable."""
    raw = os.environ.get(TYPE_CAP_ENV)
    if raw is None:
        return DEFAULT_TYPE_CAP
    return int(raw)


@dataclass(frozen=True, eq=False)
class Alphabet:
    """Ordered finite sample space; indexing is by position in `symbols`."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise ValueError("alphabet needs at least two symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be distinct")
        object.__setattr__(self, "symbols", tuple(str(s) for s in self.symbols))

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        return self.symbols.index(symbol)

    def __eq__(self, other) -> bool:
        return isinstance(other, Alphabet) and self.symbols == other.symbols

    def __hash__(self) -> int:
        return hash(self.symbols)


BINARY = Alphabet(("0", "1"))


@dataclass(frozen=True, eq=False)
class FinitePmf:
    """Probability mass function on a named finite alphabet."""

    alphabet: Alphabet
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).copy()
        if probs.shape != (self.alphabet.size,):
            raise ValueError(
                f"pmf needs {self.alphabet.size} entries, got shape {probs.shape}"
            )
        if np.any(probs < 0):
            raise ValueError("pmf entries must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > _PMF_SUM_TOL:
            raise ValueError(f"pmf sums to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self) -> int:
        return self.alphabet.size

    def log_probs(self) -> np.ndarray:
        """Entrywise log with log(0) = -inf (no warnings, explicit branch)."""
        out = np.full(self.probs.shape, -np.inf)
        pos = self.probs > 0
        out[pos] = np.log(self.probs[pos])
        return out

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    def __repr__(self) -> str:
        body = ", ".join(f"{s}:{p:.6g}" for s, p in zip(self.alphabet.symbols, self.probs))
        return f"FinitePmf({body})"


def pmf(alphabet: Alphabet, probs: Iterable[float]) -> FinitePmf:
    return FinitePmf(alphabet, np.asarray(list(probs), dtype=float))


def point_mass(alphabet: Alphabet, index: int) -> FinitePmf:
    probs = np.zeros(alphabet.size)
    probs[index] = 1.0
    return FinitePmf(alphabet, probs)


def bernoulli(p: float, alphabet: Alphabet = BINARY) -> FinitePmf:
    """Pmf assigning probability p to the symbol at index 1."""
    if alphabet.size != 2:
        raise ValueError("bernoulli needs a binary alphabet")
    return FinitePmf(alphabet, np.array([1.0 - p, p]))


def _require_same_alphabet(m: FinitePmf, n: FinitePmf) -> None:
    if m.alphabet != n.alphabet:
        raise AlphabetMismatchError("pmfs live on different alphabets")


def kl_divergence(m: FinitePmf, n: FinitePmf) -> float:
    """KL(m || n) in nats; +inf exactly when m charges a point n does not."""
    _require_same_alphabet(m, n)
    total = 0.0
    for mi, ni in zip(m.probs, n.probs):
        if mi == 0.0:
            continue
        if ni == 0.0:
            return math.inf
        total += mi * math.log(mi / ni)
    return max(total, 0.0)


def binary_kl(p: float, q: float) -> float:
    """KL between Bernoulli(p) and Bernoulli(q), with the 0*log0 conventions."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError("binary_kl needs p, q in [0, 1]")
    total = 0.0
    if p > 0.0:
        if q == 0.0:
            return math.inf
        total += p * math.log(p / q)
    if p < 1.0:
        if q == 1.0:
            return math.inf
        total += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return max(total, 0.0)


def tv_distance(m: FinitePmf, n: FinitePmf) -> float:
    """Total variation distance, half the L1 gap of the mass vectors."""
    _require_same_alphabet(m, n)
    return 0.5 * float(np.abs(m.probs - n.probs).sum())


def sequence_log_prob(p: FinitePmf, seq: Sequence[int]) -> float:
    """log of the i.i.d. product probability of `seq`; -inf on unsupported symbols."""
    seq = np.asarray(seq, dtype=int)
    if seq.size == 0:
        return 0.0
    if seq.min() < 0 or seq.max() >= p.size:
        raise ValueError("sequence contains out-of-range symbol indices")
    probs = p.probs[seq]
    if np.any(probs == 0.0):
        return -math.inf
    return float(np.log(probs).sum())


def empirical_pmf(seq: Sequence[int], alphabet: Alphabet) -> FinitePmf:
    seq = np.asarray(seq, dtype=int)
    if seq.size == 0:
        raise ValueError("empirical pmf of an empty sequence is undefined")
    counts = np.bincount(seq, minlength=alphabet.size).astype(float)
    return FinitePmf(alphabet, counts / seq.size)


# ---------------------------------------------------------------------------
# Type classes (empirical compositions) and their exact multiplicities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TypeClass:
    """One empirical composition of n samples with its exact log multiplicity."""

    counts: tuple[int, ...]
    log_multiplicity: float

    @property
    def n(self) -> int:
        return sum(self.counts)


class TypeTable:
    """Dense array view of all type classes at a fixed (n, K).

    `counts` is a (T, K) int64 array in a fixed canonical order and
    `log_mult` the matching log multinomial coefficients.  Solvers work on
    these arrays directly; `enumerate_types` wraps rows into TypeClass
    objects for the public API.
    """

    __slots__ = ("n", "k", "counts", "log_mult", "_index")

    def __init__(self, n: int, k: int, counts: np.ndarray):
        self.n = n
        self.k = k
        counts.setflags(write=False)
        self.counts = counts
        log_mult = gammaln(n + 1) - gammaln(counts + 1.0).sum(axis=1)
        log_mult.setflags(write=False)
        self.log_mult = log_mult
        self._index: dict[tuple[int, ...], int] | None = None

    def __len__(self) -> int:
        return self.counts.shape[0]

    def index_of(self, counts: Sequence[int]) -> int:
        if self._index is None:
            self._index = {tuple(row): i for i, row in enumerate(self.counts.tolist())}
        return self._index[tuple(int(c) for c in counts)]

    def log_point_probs(self, p: FinitePmf) -> np.ndarray:
        """log Prob of a single sequence of each type under the product of p."""
        lp = p.log_probs()
        finite = np.where(np.isfinite(lp), lp, 0.0)
        out = self.counts @ finite
        zero_cols = np.flatnonzero(~np.isfinite(lp))
        if zero_cols.size:
            bad = (self.counts[:, zero_cols] > 0).any(axis=1)
            out[bad] = -np.inf
        return out

    def log_type_probs(self, p: FinitePmf) -> np.ndarray:
        """log Prob of each whole type class under the product of p."""
        return self.log_mult + self.log_point_probs(p)

    def pmfs(self) -> np.ndarray:
        """Empirical pmfs of the types as a (T, K) float array."""
        return self.counts / float(self.n)


def type_count(n: int, k: int) -> int:
    return math.comb(n + k - 1, k - 1)


def type_table(n: int, k: int, cap: int | None = None) -> TypeTable:
    """All compositions of n into k parts as a TypeTable, guarded by the cap."""
    if n < 1 or k < 2:
        raise ValueError("type enumeration needs n >= 1 and K >= 2")
    limit = type_cap() if cap is None else cap
    total = type_count(n, k)
    if total > limit:
        raise TypeCountCapError(
            f"type count C({n + k - 1},{k - 1}) = {total} exceeds cap {limit}"
        )
    if k == 2:
        ones = np.arange(n + 1, dtype=np.int64)
        counts = np.stack([n - ones, ones], axis=1)
    else:
        bars = np.array(
            list(itertools.combinations(range(n + k - 1), k - 1)), dtype=np.int64
        )
        padded = np.concatenate(
            [
                np.full((total, 1), -1, dtype=np.int64),
                bars,
                np.full((total, 1), n + k - 1, dtype=np.int64),
            ],
            axis=1,
        )
        counts = np.diff(padded, axis=1) - 1
    return TypeTable(n, k, counts)


def enumerate_types(n: int, k: int, cap: int | None = None) -> list[TypeClass]:
    """All type classes of n samples on a K-letter alphabet with exact log multiplicities."""
    table = type_table(n, k, cap=cap)
    return [
        TypeClass(tuple(int(c) for c in row), float(lm))
        for row, lm in zip(table.counts, table.log_mult)
    ]


# ---------------------------------------------------------------------------
# Reproducible sampling
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_SPLIT_MIX = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Philox keys make identical (seed, stream_id) pairs reproduce the same
    draw sequence on every platform; substreams never overlap their parent.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64
        )
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> "RngStream":
        mixed = (self.stream_id * _SPLIT_MIX + index + 1) & _MASK64
        return RngStream(self.seed, mixed)


def sample_iid(p: FinitePmf, n: int, rng: RngStream) -> np.ndarray:
    """n i.i.d. symbol indices drawn from p; deterministic given the stream."""
    if n < 0:
        raise ValueError("sample size must be nonnegative")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    gen = rng.generator()
    cdf = np.cumsum(p.probs)
    cdf[-1] = 1.0
    u = gen.random(n)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


# ---------------------------------------------------------------------------
# Null instances and their JSON interchange format
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NullInstance:
    """A finite null family together with named alternatives on one alphabet."""

    name: str
    alphabet: Alphabet
    null: tuple[FinitePmf, ...]
    alternatives: dict[str, FinitePmf] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.null) < 1:
            raise ValueError("null family must be nonempty")
        if len(self.alternatives) < 1:
            raise ValueError("at least one named alternative is required")
        for p in self.null:
            if p.alphabet != self.alphabet:
                raise AlphabetMismatchError("null member on a different alphabet")
        for label, q in self.alternatives.items():
            if q.alphabet != self.alphabet:
                raise AlphabetMismatchError(f"alternative {label!r} on a different alphabet")
        object.__setattr__(self, "null", tuple(self.null))
        object.__setattr__(self, "alternatives", dict(self.alternatives))

    @property
    def null_size(self) -> int:
        return len(self.null)

    def alternative(self, label: str) -> FinitePmf:
        try:
            return self.alternatives[label]
        except KeyError:
            raise KeyError(
                f"unknown alternative {label!r}; have {sorted(self.alternatives)}"
            ) from None

    def alt_labels(self) -> list[str]:
        return list(self.alternatives)


def _load_row(raw: Sequence[float], alphabet: Alphabet, where: str) -> FinitePmf:
    row = np.asarray(raw, dtype=float)
    if row.shape != (alphabet.size,):
        raise ValueError(f"{where}: expected {alphabet.size} entries, got {row.shape}")
    if np.any(row < 0):
        raise ValueError(f"{where}: negative probability entry")
    total = float(row.sum())
    if abs(total - 1.0) > _LOAD_SUM_TOL:
        raise ValueError(f"{where}: row sums to {total!r}, not 1 within {_LOAD_SUM_TOL}")
    return FinitePmf(alphabet, row / total)


def instance_from_dict(doc: dict) -> NullInstance:
    """Parse the instance interchange schema, naming any offending row."""
    for key in ("name", "alphabet", "null", "alternatives"):
        if key not in doc:
            raise ValueError(f"instance file missing required key {key!r}")
    unknown = set(doc) - {"name", "alphabet", "null", "alternatives"}
    if unknown:
        raise ValueError(f"instance file has unknown keys {sorted(unknown)}")
    alphabet = Alphabet(tuple(doc["alphabet"]))
    null = tuple(
        _load_row(row, alphabet, f"null[{i}]") for i, row in enumerate(doc["null"])
    )
    alternatives = {
        str(label): _load_row(row, alphabet, f"alternatives[{label!r}]")
        for label, row in doc["alternatives"].items()
    }
    return NullInstance(str(doc["name"]), alphabet, null, alternatives)


def instance_to_dict(instance: NullInstance) -> dict:
    return {
        "name": instance.name,
        "alphabet": list(instance.alphabet.symbols),
        "null": [p.probs.tolist() for p in instance.null],
        "alternatives": {
            label: q.probs.tolist() for label, q in instance.alternatives.items()
        },
    }


def load_instance(path: str) -> NullInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))


def save_instance(instance: NullInstance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2, sort_keys=True)
        fh.write("\n")
