"""Workload generation: hashed-order keys, Zipfian / latest key choice, YCSB mixes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from ..config import KiB
from ..record import FNV_OFFSET, FNV_PRIME

YCSB_MIXES = {
    "A": {"update": 0.5, "read": 0.5},
    "B": {"update": 0.05, "read": 0.95},
    "C": {"read": 1.0},
    "D": {"insert": 0.05, "read": 0.95},
    "F": {"read": 0.5, "rmw": 0.5},
}
OPS = ("insert", "update", "read", "rmw", "scan", "delete")
DISTRIBUTIONS = ("hashed", "zipfian", "uniform", "latest")


@dataclass
class PhaseSpec:
    name: str
    mix: dict = field(default_factory=lambda: {"update": 1.0})
    distribution: str = "zipfian"
    volume_bytes: int = 0      # 0 -> one pass over the key population
    ops: int = 0               # overrides volume_bytes when set

    def validate(self) -> "PhaseSpec":
        if any(k not in OPS for k in self.mix):
            raise ValueError(f"unknown op in mix {self.mix}")
        if abs(sum(self.mix.values()) - 1.0) > 1e-9:
            raise ValueError(f"op fractions must sum to 1, got {sum(self.mix.values())}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
        return self


@dataclass
class WorkloadSpec:
    """Key population and pair shape shared by every phase of one experiment.

    ``pair_size`` counts key plus value bytes.  ``small_pair_size`` with a
    ``small_fraction`` above 0 gives the mixed-size workload: each key gets a
    fixed size class at load time and keeps it through updates.
    """

    keys: int = 65536
    key_size: int = 24
    pair_size: int = 1 * KiB
    theta: float = 0.99
    seed: int = 1
    phases: list = field(default_factory=list)
    small_pair_size: int = 40
    small_fraction: float = 0.0
    zipf_method: str = "exact"

    @property
    def value_size(self) -> int:
        return self.pair_size - self.key_size

    def load_bytes(self) -> int:
        return self.keys * self.mean_pair_size()

    def ops_for(self, phase: PhaseSpec) -> int:
        if phase.ops:
            return phase.ops
        if phase.volume_bytes:
            return max(1, phase.volume_bytes // self.mean_pair_size())
        return self.keys

    def mean_pair_size(self) -> int:
        f = self.small_fraction
        return max(1, int(round(f * self.small_pair_size + (1 - f) * self.pair_size)))

    def validate(self) -> "WorkloadSpec":
        if self.key_size < 16 or self.key_size > 255:
            raise ValueError("key_size must be 16..255 (keys carry a 16-hex-digit hash)")
        if self.pair_size <= self.key_size:
            raise ValueError("pair_size must exceed key_size")
        if self.small_fraction and self.small_pair_size <= self.key_size:
            raise ValueError("small_pair_size must exceed key_size")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must be in (0, 1)")
        for p in self.phases:
            p.validate()
        return self


# ---------------------------------------------------------------- keys
def hashed_ids(start: int, count: int, seed: int) -> np.ndarray:
    """FNV-1a-64 of the 16 little-endian bytes (seed, i) for i in [start, start+count)."""
    i = np.arange(start, start + count, dtype=np.uint64)
    h = np.full(count, FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for word in (np.full(count, s, dtype=np.uint64), i):
            for shift in range(0, 64, 8):
                h ^= (word >> np.uint64(shift)) & np.uint64(0xFF)
                h *= prime
    return h


def make_keys(start: int, count: int, seed: int, key_size: int) -> list[bytes]:
    pad = b"0" * (key_size - 16)
    return [b"%016x" % int(h) + pad for h in hashed_ids(start, count, seed)]


def key_for(i: int, seed: int, key_size: int) -> bytes:
    return make_keys(i, 1, seed, key_size)[0]


# ---------------------------------------------------------------- Zipf
def zeta(n: int, theta: float) -> float:
    return float(np.sum(np.arange(1, n + 1, dtype=np.float64) ** -theta))


def zipf_pmf(n: int, theta: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -theta
    return w / w.sum()


class Zipfian:
    """Draws ranks 0..n-1 with P(rank r) proportional to 1 / (r+1)^theta.

    ``method="exact"`` inverts the cumulative pmf.  ``method="ycsb"`` uses the
    closed-form approximation from the YCSB client (no table, but it skews the
    middle ranks enough to fail a goodness-of-fit test at 10^6 draws).
    """

    def __init__(self, n: int, theta: float = 0.99, seed: int = 1, method: str = "exact"):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.theta = theta
        self.method = method
        self.rng = np.random.default_rng(seed)
        if method == "exact":
            self._cdf = np.cumsum(zipf_pmf(n, theta))
            self._cdf[-1] = 1.0
        elif method == "ycsb":
            self._zetan = zeta(n, theta)
            zeta2 = 1.0 + 0.5 ** theta
            self._alpha = 1.0 / (1.0 - theta)
            self._eta = (1.0 - (2.0 / n) ** (1.0 - theta)) / (1.0 - zeta2 / self._zetan)
        else:
            raise ValueError(f"unknown zipf method {method!r}")

    def draw(self, size: int) -> np.ndarray:
        u = self.rng.random(size)
        if self.method == "exact":
            return np.minimum(np.searchsorted(self._cdf, u, side="right"), self.n - 1)
        uz = u * self._zetan
        r = np.floor(self.n * (self._eta * u - self._eta + 1.0) ** self._alpha).astype(np.int64)
        r = np.where(uz < 1.0 + 0.5 ** self.theta, 1, r)
        r = np.where(uz < 1.0, 0, r)
        return np.clip(r, 0, self.n - 1)


# ---------------------------------------------------------------- op streams
@dataclass
class Op:
    kind: str
    key: bytes
    value: Optional[bytes] = None
    count: int = 0


class KeySpace:
    """Tracks the inserted population and hands out values of the right size per key."""

    def __init__(self, spec: WorkloadSpec):
        self.spec = spec
        self.count = 0
        self._keys: list[bytes] = []
        self._small = bytearray()
        self._rng = np.random.default_rng(spec.seed ^ 0x5EED)
        self._payload = np.random.default_rng(spec.seed + 17).bytes(1 << 20)

    def extend(self, count: int) -> list[bytes]:
        new = make_keys(self.count, count, self.spec.seed, self.spec.key_size)
        self._keys.extend(new)
        small = self._rng.random(count) < self.spec.small_fraction
        self._small.extend(small.astype(np.uint8).tobytes())
        self.count += count
        return new

    def key(self, i: int) -> bytes:
        return self._keys[i]

    def value_size(self, i: int) -> int:
        s = self.spec
        size = s.small_pair_size if self._small[i] else s.pair_size
        return size - s.key_size

    def value(self, i: int, version: int = 0) -> bytes:
        """Deterministic filler; differs between versions so stale reads are detectable."""
        n = self.value_size(i)
        start = (i * 7919 + version * 104729) % (len(self._payload) - n)
        return self._payload[start:start + n]

    def pair_size(self, i: int) -> int:
        return self.spec.key_size + self.value_size(i)


def load_ops(space: KeySpace, count: Optional[int] = None) -> Iterator[Op]:
    """Insert ``count`` fresh keys (default: the whole population) in hashed order."""
    count = space.spec.keys - space.count if count is None else count
    base = space.count
    space.extend(count)
    for i in range(base, base + count):
        yield Op("insert", space.key(i), space.value(i))


def phase_ops(space: KeySpace, phase: PhaseSpec, seed: int, batch: int = 65536) -> Iterator[Op]:
    """Ops for one phase.  Identical (space state, phase, seed) gives an identical stream."""
    spec = space.spec
    total = spec.ops_for(phase)
    rng = np.random.default_rng(seed)
    kinds = list(phase.mix)
    probs = np.array([phase.mix[k] for k in kinds], dtype=np.float64)
    zipf = Zipfian(max(1, space.count), spec.theta, seed=seed + 1, method=spec.zipf_method)
    version = seed
    done = 0
    while done < total:
        n = min(batch, total - done)
        choice = rng.choice(len(kinds), size=n, p=probs)
        if phase.distribution == "hashed":
            picks = np.arange(done, done + n) % max(1, space.count)
        elif phase.distribution == "uniform":
            picks = rng.integers(0, max(1, space.count), size=n)
        else:
            picks = zipf.draw(n)
        scan_lens = rng.integers(1, 101, size=n)
        for j in range(n):
            kind = kinds[choice[j]]
            version += 1
            if kind == "insert":
                i = space.count
                space.extend(1)
                yield Op("insert", space.key(i), space.value(i, version))
                continue
            if space.count == 0:
                continue
            r = int(picks[j])
            if phase.distribution == "latest":
                # most recent insert is rank 0; population grows as D inserts
                i = max(0, space.count - 1 - min(r, space.count - 1))
            else:
                i = min(r, space.count - 1)
            key = space.key(i)
            if kind == "update":
                yield Op("update", key, space.value(i, version))
            elif kind == "read":
                yield Op("read", key)
            elif kind == "rmw":
                yield Op("rmw", key, space.value(i, version))
            elif kind == "scan":
                yield Op("scan", key, count=int(scan_lens[j]))
            else:
                yield Op("delete", key)
        done += n
