import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

# Seeds are 64-bit unsigned integers. Every randomized constructor derives its own generator from the run seed and
# a fixed purpose label, so e.g. the graph draw does not change when the signal draw changes.
RngSeed = int

_MASK64 = (1 << 64) - 1


class SeedPurpose(Enum):
    Graph = 1
    Signal = 2
    OmegaPrime = 3
    Initialization = 4
    CompressiveSensing = 5
    KnownSupport = 6
    GuardRow = 7


def fork_rng(seed: RngSeed, purpose: SeedPurpose) -> np.random.Generator:
    """Returns the generator used for [purpose] in a run seeded with [seed]"""
    return np.random.default_rng([check_seed(seed), purpose.value])


def check_seed(seed: RngSeed) -> int:
    if not isinstance(seed, (int, np.integer)) or seed < 0 or seed > _MASK64:
        raise ValueError(f'Seed must be a 64-bit unsigned integer, got {seed!r}')
    return int(seed)


def trial_seed(seed: RngSeed, trial: int) -> RngSeed:
    """
    Derives the seed of trial number [trial] from a run [seed]: splitmix64(seed XOR trial). Neighbouring trials get
    unrelated seeds, and any row of a results file can be re-run on its own from the seed it records.
    """
    z = (check_seed(seed) ^ trial) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True, eq=False)
class SparseSignal:
    """
    A length-[n] complex vector stored by its support. [indices] are 1-based and strictly increasing, [values] holds
    the matching nonzero entries. Instances are immutable and can be shared between threads.
    """
    n: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f'Signal length must be positive, got {self.n}')

        indices = np.array(self.indices, dtype=np.int64).reshape(-1)
        values = np.array(self.values, dtype=np.complex128).reshape(-1)
        if indices.size != values.size:
            raise ValueError(f'Got {indices.size} indices but {values.size} values')
        if indices.size:
            if indices.min() < 1 or indices.max() > self.n:
                raise ValueError(f'Support indices must lie in 1..{self.n}')
            if np.any(np.diff(indices) <= 0):
                raise ValueError('Support indices must be strictly increasing')
            if np.any(np.abs(values) == 0.0):
                raise ValueError('Support values must be nonzero')

        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, 'indices', indices)
        object.__setattr__(self, 'values', values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseSignal):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    @staticmethod
    def empty(n: int) -> 'SparseSignal':
        return SparseSignal(n, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.complex128))

    @staticmethod
    def from_support(n: int, support: Mapping[int, complex]) -> 'SparseSignal':
        """Builds a signal from an index -> value map. Entries that are exactly zero are dropped"""
        items = sorted((int(i), complex(v)) for i, v in support.items() if v != 0)
        if not items:
            return SparseSignal.empty(n)
        indices, values = zip(*items)
        return SparseSignal(n, np.array(indices, dtype=np.int64), np.array(values, dtype=np.complex128))

    @property
    def k(self) -> int:
        return int(self.indices.size)

    @property
    def support(self) -> Dict[int, complex]:
        return {int(i): complex(v) for i, v in zip(self.indices, self.values)}

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def get(self, index: int) -> complex:
        pos = np.searchsorted(self.indices, index)
        if pos < self.indices.size and self.indices[pos] == index:
            return complex(self.values[pos])
        return 0j

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.n, dtype=np.complex128)
        dense[self.indices - 1] = self.values
        return dense

    def scaled(self, factor: complex) -> 'SparseSignal':
        if factor == 0:
            raise ValueError('Cannot scale a signal by zero')
        return SparseSignal(self.n, self.indices, self.values * factor)

    def restricted(self, indices: Iterable[int]) -> 'SparseSignal':
        """Returns the part of this signal supported on [indices]"""
        keep = np.isin(self.indices, np.fromiter(indices, dtype=np.int64))
        return SparseSignal(self.n, self.indices[keep], self.values[keep])

    def to_json(self) -> dict:
        return {
            'n': self.n,
            'entries': [{'i': int(i), 're': float(v.real), 'im': float(v.imag)}
                        for i, v in zip(self.indices, self.values)],
        }

    @staticmethod
    def from_json(data: dict) -> 'SparseSignal':
        support = {int(e['i']): complex(float(e['re']), float(e['im'])) for e in data.get('entries', [])}
        return SparseSignal.from_support(int(data['n']), support)


def write_signal(signal: SparseSignal, path: str) -> None:
    with open(path, 'wt') as file:
        json.dump(signal.to_json(), file, indent=1)


def read_signal(path: str) -> SparseSignal:
    with open(path, 'rt') as file:
        return SparseSignal.from_json(json.load(file))


def random_sparse_signal(n: int, k: int, seed: RngSeed,
                         magnitude_range: Tuple[float, float] = (0.1, 1.0)) -> SparseSignal:
    """
    Draws a [k]-sparse signal of length [n]: a uniformly random support, magnitudes uniform in [magnitude_range] and
    phases uniform in [0, 2pi). The same [seed] always yields the same signal.
    """
    lo, hi = magnitude_range
    if k < 0 or k > n:
        raise ValueError(f'Sparsity must satisfy 0 <= K <= n, got K={k}, n={n}')
    if not 0 < lo <= hi:
        raise ValueError(f'Magnitude range must satisfy 0 < lo <= hi, got {magnitude_range}')

    rng = fork_rng(seed, SeedPurpose.Signal)
    indices = np.sort(rng.choice(n, size=k, replace=False)) + 1
    magnitudes = rng.uniform(lo, hi, size=k)
    phases = rng.uniform(0.0, 2 * math.pi, size=k)
    return SparseSignal(n, indices, magnitudes * np.exp(1j * phases))


def _aligned(x: SparseSignal, xhat: SparseSignal) -> Tuple[np.ndarray, np.ndarray]:
    if x.n != xhat.n:
        raise ValueError(f'Signal lengths differ: {x.n} != {xhat.n}')
    union = np.union1d(x.indices, xhat.indices)
    a = np.zeros(union.size, dtype=np.complex128)
    b = np.zeros(union.size, dtype=np.complex128)
    a[np.searchsorted(union, x.indices)] = x.values
    b[np.searchsorted(union, xhat.indices)] = xhat.values
    return a, b


def global_phase_error(x: SparseSignal, xhat: SparseSignal) -> float:
    """
    Relative error of [xhat] as an estimate of [x] modulo one global phase: min over phi of
    ||x - e^{i phi} xhat|| / ||x||, attained at phi = arg(sum conj(xhat_l) x_l).

    Returns 0 when both signals are empty and infinity when only [x] is empty.
    """
    a, b = _aligned(x, xhat)
    reference = np.linalg.norm(a)
    if reference == 0:
        return 0.0 if not np.any(b) else math.inf

    inner = np.vdot(b, a)
    rotation = inner / abs(inner) if inner != 0 else 1.0
    return float(np.linalg.norm(a - rotation * b) / reference)


def support_error(x: SparseSignal, xhat: SparseSignal) -> Tuple[int, int]:
    """Returns (missed, false_alarms): true support indices absent from [xhat], and the reverse"""
    if x.n != xhat.n:
        raise ValueError(f'Signal lengths differ: {x.n} != {xhat.n}')
    missed = np.setdiff1d(x.indices, xhat.indices, assume_unique=True).size
    false_alarms = np.setdiff1d(xhat.indices, x.indices, assume_unique=True).size
    return int(missed), int(false_alarms)
