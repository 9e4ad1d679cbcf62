import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from result import Err, Ok, Result, is_err

from phasecode import logger
from phasecode.graph_design import CodeGraph, sample_regular_graph
from phasecode.initialization import align_phases
from phasecode.measurement import GenericRow
from phasecode.sparse_signal import RngSeed, SeedPurpose, SparseSignal, fork_rng

DEFAULT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CSDesign:
    """
    The phase-aware compressive-sensing code z = C x. Row 0 is a dense guard row with random unit phases
    ([guard][l - 1] for index l); bin i then contributes rows 2i + 1 and 2i + 2, the plain sum and the
    e^{i w l}-weighted sum of its members. [ratio_tol] and [location_tol] drive singleton detection.
    """
    n: int
    r: int
    degree: int
    omega: float
    graph: CodeGraph
    guard: np.ndarray
    ratio_tol: float = 1e-8
    location_tol: float = 1e-4

    @staticmethod
    def build(n: int, k: int, ratio: float = 2.0, degree: int = 3, seed: RngSeed = 0) -> 'CSDesign':
        """Draws a design with R = max(ceil([ratio] * K), [degree]) bins and a [degree]-regular graph"""
        if k < 0 or k > n:
            raise ValueError(f'Sparsity must satisfy 0 <= K <= n, got K={k}, n={n}')
        if not ratio > 0:
            raise ValueError(f'Bins per ball must be positive, got {ratio}')
        if degree < 1:
            raise ValueError(f'Left degree must be positive, got {degree}')

        r = max(math.ceil(ratio * k - 1e-9), degree)
        graph = sample_regular_graph(n, r, degree, seed, purpose=SeedPurpose.CompressiveSensing)
        guard = np.exp(1j * fork_rng(seed, SeedPurpose.GuardRow).uniform(0.0, 2 * math.pi, size=n))
        guard.setflags(write=False)
        return CSDesign(n, r, degree, math.pi / (2 * n), graph, guard)

    @property
    def m1(self) -> int:
        return 2 * self.r + 1

    @property
    def pr_design(self) -> 'PRDesign':
        return PRDesign(self.m1)

    @property
    def magnitude_measurements(self) -> int:
        return self.pr_design.num_rows

    def guard_value(self, x: SparseSignal) -> complex:
        return complex(np.sum(self.guard[x.indices - 1] * x.values))


@dataclass(frozen=True)
class PRDesign:
    """
    Magnitude rows over a length-[m1] vector z: |z_l| for every l, then |z_1 + z_l| and |z_1 + i z_l| for
    l = 2..m1.
    """
    m1: int

    def __post_init__(self):
        if self.m1 < 1:
            raise ValueError(f'Phase layer needs at least one entry, got m1={self.m1}')

    @property
    def num_rows(self) -> int:
        return 3 * self.m1 - 2

    def rows(self) -> List[GenericRow]:
        identity = [GenericRow.of({l: 1}) for l in range(1, self.m1 + 1)]
        sums = [GenericRow.of({1: 1, l: 1}) for l in range(2, self.m1 + 1)]
        quadratures = [GenericRow.of({1: 1, l: 1j}) for l in range(2, self.m1 + 1)]
        return identity + sums + quadratures


@dataclass
class CsDecodeFailure:
    """What the CS peeler managed before it stalled. [stuck_bins] still hold unexplained energy."""
    partial: SparseSignal
    stuck_bins: List[int] = field(default_factory=list)
    reason: str = ''


def cs_encode(x: SparseSignal, design: CSDesign) -> np.ndarray:
    """z = C x, guard entry first"""
    if x.n != design.n:
        raise ValueError(f'Signal length {x.n} does not match the design ({design.n})')
    z = np.zeros(design.m1, dtype=np.complex128)
    z[0] = design.guard_value(x)
    owners, bins = design.graph.edges_of(x.indices)
    values = x.values[np.searchsorted(x.indices, owners)]
    np.add.at(z, 1 + 2 * bins, values)
    np.add.at(z, 2 + 2 * bins, np.exp(1j * design.omega * owners) * values)
    return z


def _singleton(pair: np.ndarray, bin_index: int, design: CSDesign, zero: float) -> Optional[int]:
    """The location of the only ball left in a bin, or None when the bin is a zeroton or a multiton"""
    plain, weighted = pair
    if abs(plain) <= zero:
        return None
    if abs(abs(weighted) - abs(plain)) > design.ratio_tol * abs(plain):
        return None

    estimate = np.angle(weighted / plain) / design.omega
    index = round(estimate)
    if abs(estimate - index) > design.location_tol or not 1 <= index <= design.n:
        return None
    members = design.graph.members_of(bin_index)
    position = np.searchsorted(members, index)
    if position == members.size or members[position] != index:
        return None
    return int(index)


def cs_decode(z: np.ndarray, design: CSDesign, tol: float = DEFAULT_TOL) -> Result[SparseSignal, CsDecodeFailure]:
    """
    Peels singleton bins out of [z] until nothing changes. A bin whose two entries have equal magnitude holds one
    ball at l = arg(z_2 / z_1) / w with value z_1; that ball is subtracted from all of its bins. The decode succeeds
    when every bin is explained and the guard entry matches the recovered signal, all within [tol] relative to
    max |z|.
    """
    z = np.asarray(z, dtype=np.complex128)
    if z.shape != (design.m1,):
        raise ValueError(f'Expected {design.m1} CS measurements, got shape {z.shape}')
    scale = float(np.abs(z).max())
    if scale == 0:
        return Ok(SparseSignal.empty(design.n))
    zero = tol * scale

    residual = z[1:].reshape(design.r, 2).copy()
    recovered: Dict[int, complex] = {}
    queue = deque(range(design.r))
    queued = np.ones(design.r, dtype=bool)
    while queue:
        bin_index = queue.popleft()
        queued[bin_index] = False
        index = _singleton(residual[bin_index], bin_index, design, zero)
        if index is None or index in recovered:
            continue

        value = complex(residual[bin_index, 0])
        recovered[index] = value
        rotated = complex(math.cos(design.omega * index), math.sin(design.omega * index)) * value
        for other in design.graph.bins_of(index):
            residual[other, 0] -= value
            residual[other, 1] -= rotated
            if not queued[other]:
                queue.append(int(other))
                queued[other] = True

    partial = SparseSignal.from_support(design.n, recovered)
    stuck = np.nonzero(np.abs(residual).max(axis=1) > zero)[0].tolist()
    if stuck:
        logger.debug(f'CS peeling stalled with {len(stuck)} of {design.r} bins unexplained')
        return Err(CsDecodeFailure(partial, stuck, f'{len(stuck)} bins left unexplained'))

    gap = abs(z[0] - design.guard_value(partial))
    if gap > zero:
        return Err(CsDecodeFailure(partial, [], f'guard entry off by {gap:.3e}'))
    return Ok(partial)


def phase_layer_measure(z: np.ndarray) -> np.ndarray:
    """|B z|, the rows listed by PRDesign.rows()"""
    z = np.asarray(z, dtype=np.complex128)
    return np.concatenate((np.abs(z), np.abs(z[0] + z[1:]), np.abs(z[0] + 1j * z[1:])))


def phase_layer_recover(y: np.ndarray, m1: int, tol: float = DEFAULT_TOL) -> Result[np.ndarray, str]:
    """
    Rebuilds z from [y] = |B z| up to one global phase: z_1 is taken real positive and every other entry gets the
    phase the cosine law gives against z_1, with the sign read off the quadrature row. Magnitudes at or below
    [tol] * max(y) count as zero. An all-zero [y] gives z = 0.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (PRDesign(m1).num_rows,):
        raise ValueError(f'Expected {3 * m1 - 2} magnitudes for m1={m1}, got shape {y.shape}')
    if np.any(y < 0):
        raise ValueError('Magnitudes must be nonnegative')

    z = np.zeros(m1, dtype=np.complex128)
    peak = float(y.max())
    if peak == 0:
        return Ok(z)
    threshold = tol * peak
    reference = float(y[0])
    if reference <= threshold:
        return Err(f'reference magnitude vanished ({reference:.3e} <= {threshold:.3e})')

    z[0] = reference
    sums, quadratures = y[m1:2 * m1 - 1], y[2 * m1 - 1:]
    for position in range(1, m1):
        magnitude = float(y[position])
        if magnitude <= threshold:
            continue
        phase = align_phases(reference, magnitude, float(sums[position - 1]), float(quadratures[position - 1]),
                             threshold)
        if is_err(phase):
            logger.warning(f'Phase layer could not align entry {position + 1}: {phase.err_value}')
            continue
        z[position] = magnitude * complex(math.cos(phase.ok_value), math.sin(phase.ok_value))
    return Ok(z)


def two_layer_pipeline(x: SparseSignal, design: CSDesign,
                       tol: float = DEFAULT_TOL) -> Result[SparseSignal, CsDecodeFailure]:
    """
    Measures |B C x| with design.magnitude_measurements rows, recovers C x up to a global phase and decodes it.
    On success the estimate equals [x] up to one global phase.
    """
    y = phase_layer_measure(cs_encode(x, design))
    z = phase_layer_recover(y, design.m1, tol)
    if is_err(z):
        return Err(CsDecodeFailure(SparseSignal.empty(design.n), [], z.err_value))
    return cs_decode(z.ok_value, design, tol)
