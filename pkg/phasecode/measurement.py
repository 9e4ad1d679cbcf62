import csv
import math
from dataclasses import dataclass
from typing import Iterator, List, Sequence

import numpy as np

from phasecode.graph_design import CodeGraph
from phasecode.sparse_signal import RngSeed, SeedPurpose, SparseSignal, fork_rng

# Modulation rows per bin: e^{i w l}, e^{-i w l}, 2 cos(w l), e^{i w' l}
ROWS_PER_BIN = 4


def row_tensor_shape(p: int, m: int) -> int:
    """Number of rows of T (x) H for a [p]-row modulation matrix and an [m]-row code matrix"""
    if p < 1 or m < 1:
        raise ValueError(f'Both matrices need at least one row, got p={p}, M={m}')
    return p * m


def row_tensor_product(t: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Dense T (x) H, for small examples and tests only. Bin i contributes rows i*p .. i*p + p - 1, row j of which is
    T_j masked by the support of H_i.
    """
    t = np.asarray(t)
    h = np.asarray(h)
    if t.shape[1] != h.shape[1]:
        raise ValueError(f'Column counts differ: {t.shape[1]} != {h.shape[1]}')
    p, m = t.shape[0], h.shape[0]
    return (h[:, None, :] * t[None, :, :]).reshape(row_tensor_shape(p, m), t.shape[1])


@dataclass(frozen=True)
class TrigParams:
    """
    The modulation matrix T for signals of length [n]: [omega] = pi / (2n) keeps w*l in (0, pi/2], where cos is
    injective; [omega_prime] is a uniform random phase for the check row.
    """
    n: int
    omega: float
    omega_prime: float

    @staticmethod
    def draw(n: int, seed: RngSeed) -> 'TrigParams':
        if n < 1:
            raise ValueError(f'Signal length must be positive, got {n}')
        omega_prime = float(fork_rng(seed, SeedPurpose.OmegaPrime).uniform(0.0, 2 * math.pi))
        return TrigParams(n, math.pi / (2 * n), omega_prime)

    def rows(self, indices: np.ndarray) -> np.ndarray:
        """Columns [indices] (1-based) of T, as a (4, len(indices)) complex array"""
        psi = self.omega * np.asarray(indices, dtype=np.float64)
        return np.stack((np.exp(1j * psi), np.exp(-1j * psi), 2 * np.cos(psi) + 0j,
                         np.exp(1j * self.omega_prime * np.asarray(indices, dtype=np.float64))))

    def matrix(self) -> np.ndarray:
        return self.rows(np.arange(1, self.n + 1))


@dataclass(frozen=True)
class BinObservation:
    y1: float
    y2: float
    y3: float
    y4: float

    def as_array(self) -> np.ndarray:
        return np.array([self.y1, self.y2, self.y3, self.y4])


class Observations(Sequence[BinObservation]):
    """Magnitudes of all M bins; bin i is row i of [y]"""

    def __init__(self, y: np.ndarray):
        y = np.array(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != ROWS_PER_BIN:
            raise ValueError(f'Expected an (M, {ROWS_PER_BIN}) array, got shape {y.shape}')
        if np.any(y < 0):
            raise ValueError('Magnitudes must be nonnegative')
        y.setflags(write=False)
        self.y = y

    def __len__(self) -> int:
        return self.y.shape[0]

    def __getitem__(self, index):
        if isinstance(index, slice):
            return Observations(self.y[index])
        return BinObservation(*(float(v) for v in self.y[index]))

    def __iter__(self) -> Iterator[BinObservation]:
        for index in range(len(self)):
            yield self[index]

    @property
    def num_measurements(self) -> int:
        return self.y.size


def bin_sums(x: SparseSignal, graph: CodeGraph, trig: TrigParams) -> np.ndarray:
    """
    The complex values whose magnitudes are observed: entry (i, k) is row k of T applied to the active neighbours of
    bin i. Only the simulation and the tests see these.
    """
    if x.n != graph.n or x.n != trig.n:
        raise ValueError(f'Signal length {x.n} does not match graph ({graph.n}) and modulation ({trig.n})')
    owners, bins = graph.edges_of(x.indices)
    values = x.values[np.searchsorted(x.indices, owners)]
    contributions = trig.rows(owners) * values
    sums = np.zeros((graph.m, ROWS_PER_BIN), dtype=np.complex128)
    np.add.at(sums, bins, contributions.T)
    return sums


def measure(x: SparseSignal, graph: CodeGraph, trig: TrigParams) -> Observations:
    """y = |(T (x) H) x|, grouped by bin. A is never formed; the work is proportional to the active edges"""
    return Observations(np.abs(bin_sums(x, graph, trig)))


@dataclass(frozen=True, eq=False)
class GenericRow:
    """A sparse complex measurement row: sum of [coefficients] times the entries at 1-based [indices]"""
    indices: np.ndarray
    coefficients: np.ndarray

    @staticmethod
    def of(terms: dict) -> 'GenericRow':
        indices = np.array(list(terms.keys()), dtype=np.int64)
        coefficients = np.array(list(terms.values()), dtype=np.complex128)
        return GenericRow(indices, coefficients)


def measure_rows(x: SparseSignal, rows: List[GenericRow]) -> np.ndarray:
    """|row . x| for every row"""
    dense = x.to_dense()
    result = np.zeros(len(rows))
    for position, row in enumerate(rows):
        indices = np.asarray(row.indices, dtype=np.int64)
        if indices.size and (indices.min() < 1 or indices.max() > x.n):
            raise ValueError(f'Row {position} references an index outside 1..{x.n}')
        result[position] = abs(np.dot(np.asarray(row.coefficients), dense[indices - 1]))
    return result


def write_observations(observations: Observations, path: str) -> None:
    """CSV dump with columns bin,y1,y2,y3,y4. 17 significant digits round-trip doubles exactly"""
    with open(path, 'wt', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(['bin', 'y1', 'y2', 'y3', 'y4'])
        for index, row in enumerate(observations.y):
            writer.writerow([index] + [f'{v:.17g}' for v in row])


def read_observations(path: str) -> Observations:
    with open(path, 'rt', newline='') as file:
        rows = list(csv.DictReader(file))
    y = np.zeros((len(rows), ROWS_PER_BIN))
    for row in rows:
        y[int(row['bin'])] = [float(row[key]) for key in ('y1', 'y2', 'y3', 'y4')]
    return Observations(y)
