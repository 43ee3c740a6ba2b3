"""Ground-set bookkeeping, independent activation sampling, and seeded streams.

Element subsets are machine-word bitmasks wrapped in :class:`ElementSubset`;
all randomness flows from a single 64-bit master seed through a published
counter-based derivation (Philox keyed by mixed path indices), so trial i is
bit-identical across runs and worker counts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

_MASK64 = (1 << 64) - 1

#: Trials are grouped into fixed-size blocks; block j of a loop draws from the
#: derived stream (domain, j) and trial i consumes row (i mod BLOCK) of the
#: block's uniform table.  The mapping trial -> randomness is therefore a pure
#: function of the master seed, independent of worker scheduling.
TRIAL_BLOCK = 8192


def _splitmix64(z: int) -> int:
    """One splitmix64 output step; the finalizer used by stream derivation."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fold(key: int, index: int) -> int:
    return _splitmix64(key ^ _splitmix64(index & _MASK64))


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus the derivation rule for independent substreams.

    Stream ``path = (i_0, i_1, ...)`` uses a Philox generator keyed by
    ``(master_seed, fold(master_seed, i_0, i_1, ...))`` where ``fold`` chains
    splitmix64 over the path indices.  Distinct Philox keys give independent
    streams, so the layout of trials over workers never changes results.
    """

    master_seed: int

    def stream_key(self, *path: int) -> int:
        key = self.master_seed & _MASK64
        for index in path:
            key = _fold(key, index)
        return key

    def stream(self, *path: int) -> np.random.Generator:
        key = np.array([self.master_seed & _MASK64, self.stream_key(*path)],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "SeedSpec":
        """Derived SeedSpec for a sub-experiment (same mixing rule)."""
        return SeedSpec(self.stream_key(index))


def uniform_blocks(seed: SeedSpec, domain: int, trials: int, width: int,
                   block_range: Optional[tuple[int, int]] = None
                   ) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(start_trial, U)`` blocks of per-trial uniform rows.

    ``U`` has shape ``(count, width)``; trial ``start_trial + i`` owns row
    ``U[i]``.  Block j draws from stream ``(domain, j)``, so any partition
    of blocks over workers reproduces the same per-trial rows.
    ``block_range`` restricts iteration to blocks ``lo <= j < hi``.
    """
    lo, hi = block_range if block_range is not None else (0, None)
    for j, start in enumerate(range(0, trials, TRIAL_BLOCK)):
        if j < lo or (hi is not None and j >= hi):
            continue
        count = min(TRIAL_BLOCK, trials - start)
        gen = seed.stream(domain, j)
        yield start, gen.random((count, width))


def num_blocks(trials: int) -> int:
    return (trials + TRIAL_BLOCK - 1) // TRIAL_BLOCK


@dataclass(frozen=True)
class GroundSet:
    """A ground set of ``n`` elements identified by indices ``0..n-1``."""

    n: int
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.n <= 0:
            raise ValueError("ground set must be nonempty")
        if self.labels is not None and len(self.labels) != self.n:
            raise ValueError("labels must have length n")

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    def label(self, e: int) -> str:
        if self.labels is not None:
            return self.labels[e]
        return str(e)


class ElementSubset:
    """Immutable subset of ``{0..n-1}`` backed by an integer bitmask."""

    __slots__ = ("mask", "n")

    def __init__(self, mask: int, n: int):
        if mask < 0 or mask >> n:
            raise ValueError("mask has bits outside the ground set")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "n", n)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("ElementSubset is immutable")

    @classmethod
    def from_iterable(cls, members: Iterable[int], n: int) -> "ElementSubset":
        mask = 0
        for e in members:
            if not 0 <= e < n:
                raise ValueError(f"element {e} outside ground set of size {n}")
            mask |= 1 << e
        return cls(mask, n)

    @classmethod
    def empty(cls, n: int) -> "ElementSubset":
        return cls(0, n)

    @classmethod
    def full(cls, n: int) -> "ElementSubset":
        return cls((1 << n) - 1, n)

    def __contains__(self, e: int) -> bool:
        return bool((self.mask >> e) & 1)

    def __iter__(self) -> Iterator[int]:
        return iter_bits(self.mask)

    def __len__(self) -> int:
        return self.mask.bit_count()

    def __eq__(self, other) -> bool:
        return (isinstance(other, ElementSubset)
                and self.mask == other.mask and self.n == other.n)

    def __hash__(self) -> int:
        return hash((self.mask, self.n))

    def __repr__(self) -> str:
        return f"ElementSubset({sorted(self)}, n={self.n})"

    def union(self, other: "ElementSubset") -> "ElementSubset":
        return ElementSubset(self.mask | other.mask, self.n)

    def intersect(self, other: "ElementSubset") -> "ElementSubset":
        return ElementSubset(self.mask & other.mask, self.n)

    def minus(self, other: "ElementSubset") -> "ElementSubset":
        return ElementSubset(self.mask & ~other.mask, self.n)

    def issubset(self, other: "ElementSubset") -> bool:
        return self.mask & ~other.mask == 0


def iter_bits(mask: int) -> Iterator[int]:
    """Indices of set bits, ascending."""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def iter_submasks(mask: int) -> Iterator[int]:
    """All submasks of ``mask``, including 0 and ``mask`` itself."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


class FractionalPoint:
    """A point ``x`` in ``[0,1]^n``; optionally tagged with the scale ``b``
    whose polytope membership it was validated against."""

    __slots__ = ("values", "validated_scale")

    def __init__(self, values: Sequence[float],
                 validated_scale: Optional[float] = None):
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("x must be a nonempty vector")
        if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
            raise ValueError("coordinates must lie in [0, 1]")
        arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "validated_scale", validated_scale)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("FractionalPoint is immutable")

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __getitem__(self, e: int) -> float:
        return float(self.values[e])

    def __repr__(self) -> str:
        return f"FractionalPoint({self.values.tolist()})"

    def with_validated_scale(self, b: float) -> "FractionalPoint":
        return FractionalPoint(self.values, validated_scale=b)


def scale_point(x: FractionalPoint, b: float) -> FractionalPoint:
    """Coordinate-wise product ``b * x``; forgets any validation tag."""
    if not 0.0 <= b <= 1.0:
        raise ValueError("scale must lie in [0, 1]")
    return FractionalPoint(b * x.values)


def fragment_from_json(obj: dict) -> tuple[GroundSet, FractionalPoint, SeedSpec]:
    """Parse the common instance fragment {"n": int, "x": [...], "seed": int}."""
    if not isinstance(obj, dict):
        raise ValueError("instance fragment must be a JSON object")
    for fld in ("n", "x", "seed"):
        if fld not in obj:
            raise ValueError(f"instance fragment is missing field '{fld}'")
    ground = GroundSet(int(obj["n"]))
    x = FractionalPoint(obj["x"])
    if x.n != ground.n:
        raise ValueError("'x' length must equal 'n'")
    return ground, x, SeedSpec(int(obj["seed"]))


def sample_active_mask(values: np.ndarray, gen: np.random.Generator) -> int:
    """Bitmask of R(x): element e included independently w.p. values[e]."""
    return pack_mask(gen.random(values.size) < values)


def pack_mask(bits: np.ndarray) -> int:
    mask = 0
    for i in np.flatnonzero(bits):
        mask |= 1 << int(i)
    return mask


def pack_mask_rows(bits: np.ndarray) -> np.ndarray:
    """Row-wise bitmask packing of a boolean (T, n) array into int64 masks."""
    powers = (1 << np.arange(bits.shape[1], dtype=np.int64))
    return bits.astype(np.int64) @ powers


def sample_active_set(x: FractionalPoint,
                      gen: np.random.Generator) -> ElementSubset:
    """Independent activation set R(x)."""
    return ElementSubset(sample_active_mask(x.values, gen), x.n)


def downsample_active(active: ElementSubset, b: float,
                      gen: np.random.Generator) -> ElementSubset:
    """Keep each member independently with probability ``b``.

    Applied before the online loop, this converts a scheme selectable at
    scale ``b`` into one usable on unscaled points (selection probabilities
    shrink by the factor ``b``).
    """
    if not 0.0 <= b <= 1.0:
        raise ValueError("retention probability must lie in [0, 1]")
    if b == 1.0:
        return active
    coins = gen.random(active.n)
    kept = 0
    for e in iter_bits(active.mask):
        if coins[e] < b:
            kept |= 1 << e
    return ElementSubset(kept, active.n)


def downsample_mask(mask: int, n: int, b: float,
                    row: np.ndarray) -> int:
    """Mask-level downsampling using pre-drawn uniforms ``row`` (length n)."""
    if b == 1.0:
        return mask
    kept = 0
    m = mask
    while m:
        low = m & -m
        e = low.bit_length() - 1
        if row[e] < b:
            kept |= low
        m ^= low
    return kept
