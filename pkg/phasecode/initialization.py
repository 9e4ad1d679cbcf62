import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from result import Err, Ok, Result, is_ok

from phasecode import logger
from phasecode.measurement import GenericRow, TrigParams, measure_rows
from phasecode.sparse_signal import RngSeed, SeedPurpose, SparseSignal, fork_rng


class InitMode(Enum):
    ActiveSensing = 'active'
    KnownSupport = 'known'

    @staticmethod
    def from_literal(mode: str) -> 'InitMode':
        for member in InitMode:
            if member.value == mode:
                return member
        raise ValueError(f'Unknown initialization mode: {mode}')


@dataclass(frozen=True, eq=False)
class InitDesign:
    """
    How the seed balls are obtained. Active sensing hashes every column to one of [rows] rows
    ([row_of_column][l - 1]) and reads three magnitudes per row; known support measures the listed [locations].
    """
    mode: InitMode
    rows: int = 0
    row_of_column: Optional[np.ndarray] = None
    locations: Tuple[int, ...] = ()
    ratio_tol: float = 1e-8
    location_tol: float = 1e-6

    @staticmethod
    def active_sensing(n: int, k: int, eps2: float, seed: RngSeed) -> 'InitDesign':
        if not eps2 > 0:
            raise ValueError(f'eps2 must be positive, got {eps2}')
        if k < 1:
            raise ValueError(f'Sparsity must be positive, got K={k}')
        rows = math.ceil(eps2 * k - 1e-9)
        assignment = fork_rng(seed, SeedPurpose.Initialization).integers(0, rows, size=n)
        assignment.setflags(write=False)
        return InitDesign(InitMode.ActiveSensing, rows=rows, row_of_column=assignment)

    @staticmethod
    def known_support(locations: Sequence[int]) -> 'InitDesign':
        if not locations:
            raise ValueError('Known-support initialization needs at least one location')
        return InitDesign(InitMode.KnownSupport, locations=tuple(int(l) for l in locations))


@dataclass
class SeedSet:
    """Seed balls, exact up to one shared global phase, and the number of extra magnitude rows spent on them"""
    n: int
    balls: Dict[int, complex]
    rows_used: int
    reference: Optional[int] = None
    unrecoverable: List[int] = field(default_factory=list)

    def to_signal(self) -> SparseSignal:
        return SparseSignal.from_support(self.n, self.balls)


def active_sensing_rows(x: SparseSignal, design: InitDesign, trig: TrigParams) -> np.ndarray:
    """
    ([rows], 3) magnitudes |sum x_l|, |sum e^{i w l} x_l|, |sum cos(w l) x_l| over the columns hashed to each row.
    The third row uses cos, not 2 cos.
    """
    if design.mode is not InitMode.ActiveSensing:
        raise ValueError(f'Expected an active sensing design, got {design.mode.value}')
    if x.n != design.row_of_column.size or x.n != trig.n:
        raise ValueError(f'Signal length {x.n} does not match the design ({design.row_of_column.size})')
    psi = trig.omega * x.indices
    contributions = np.stack((x.values, np.exp(1j * psi) * x.values, np.cos(psi) * x.values), axis=1)
    sums = np.zeros((design.rows, 3), dtype=np.complex128)
    np.add.at(sums, design.row_of_column[x.indices - 1], contributions)
    return np.abs(sums)


def active_sense(x: SparseSignal, design: InitDesign, trig: TrigParams) -> List[Tuple[int, float]]:
    """
    Finds the rows that hold exactly one active column. A row is a singleton when |y1 / y2 - 1| <= ratio_tol,
    l = arccos(y3 / y1) / w is within location_tol of an integer, and column l is hashed to that row. Returns
    (l, |x_l|) per singleton row.
    """
    y = active_sensing_rows(x, design, trig)
    found = []
    for row, (y1, y2, y3) in enumerate(y):
        if y2 <= design.ratio_tol or y1 <= design.ratio_tol:
            continue
        if abs(y1 / y2 - 1) > design.ratio_tol:
            continue
        estimate = math.acos(min(1.0, y3 / y1)) / trig.omega
        index = round(estimate)
        if abs(estimate - index) > design.location_tol or not 1 <= index <= trig.n:
            continue
        if design.row_of_column[index - 1] != row:
            continue
        found.append((index, float(y1)))
    return found


def alignment_rows(reference: int, target: int) -> List[GenericRow]:
    """The rows x_r + x_l and x_r + i x_l"""
    return [GenericRow.of({reference: 1, target: 1}), GenericRow.of({reference: 1, target: 1j})]


def align_phases(reference: float, magnitude: float, sum_magnitude: float, quadrature_magnitude: float,
                 tol: float = 1e-8) -> Result[float, str]:
    """
    Phase of x_l relative to x_r from |x_r|, |x_l|, |x_r + x_l| and |x_r + i x_l|. The cosine law gives
    cos(phi); the sign of phi is picked by evaluating |x_r + i x_l| under both hypotheses and keeping the closer one.
    """
    if reference <= tol:
        return Err(f'reference magnitude {reference:.3e} is too small')
    if magnitude <= tol:
        return Err(f'target magnitude {magnitude:.3e} is too small')

    product = 2 * reference * magnitude
    cosine = min(1.0, max(-1.0, (sum_magnitude ** 2 - reference ** 2 - magnitude ** 2) / product))
    # |x_r + i x_l|^2 = |x_r|^2 + |x_l|^2 - 2 |x_r| |x_l| sin(phi)
    sine = min(1.0, max(-1.0, (reference ** 2 + magnitude ** 2 - quadrature_magnitude ** 2) / product))
    phi = math.atan2(abs(sine), cosine)

    def mismatch(angle: float) -> float:
        return abs(abs(reference + 1j * magnitude * complex(math.cos(angle), math.sin(angle))) - quadrature_magnitude)

    return Ok(phi if mismatch(phi) <= mismatch(-phi) else -phi)


def _align(x: SparseSignal, magnitudes: List[Tuple[int, float]], rows_used: int, tol: float) -> SeedSet:
    """Fixes the first entry of [magnitudes] as the real positive reference and aligns the others to it"""
    seeds = SeedSet(x.n, {}, rows_used)
    if not magnitudes:
        return seeds

    reference, reference_magnitude = magnitudes[0]
    seeds.reference = reference
    seeds.balls[reference] = complex(reference_magnitude)
    targets = magnitudes[1:]
    rows = [row for target, _ in targets for row in alignment_rows(reference, target)]
    measured = measure_rows(x, rows)
    seeds.rows_used += len(rows)
    for position, (target, magnitude) in enumerate(targets):
        phase = align_phases(reference_magnitude, magnitude, measured[2 * position], measured[2 * position + 1], tol)
        if is_ok(phase):
            seeds.balls[target] = magnitude * complex(math.cos(phase.ok_value), math.sin(phase.ok_value))
        else:
            logger.warning(f'Could not align ball {target}: {phase.err_value}')
            seeds.unrecoverable.append(target)
    return seeds


def build_seed_set(x: SparseSignal, design: InitDesign, trig: TrigParams) -> SeedSet:
    """
    Runs the initialization stage against the true signal [x] and returns the seed balls with the measurement count:
    3 * rows + 2 (K1 - 1) for active sensing, 3 K1 - 2 for known support.
    """
    if design.mode is InitMode.ActiveSensing:
        singletons = active_sense(x, design, trig)
        seeds = _align(x, singletons, 3 * design.rows, design.ratio_tol)
        logger.debug(f'Active sensing found {len(singletons)} singleton rows out of {design.rows}')
        return seeds

    locations = list(design.locations)
    if min(locations) < 1 or max(locations) > x.n:
        raise ValueError(f'Known-support locations must lie in 1..{x.n}')
    magnitudes = measure_rows(x, [GenericRow.of({location: 1}) for location in locations])
    scale = max(1.0, float(magnitudes.max()))
    active = []
    for location, magnitude in zip(locations, magnitudes):
        if magnitude <= design.ratio_tol * scale:
            logger.warning(f'Known-support location {location} is inactive; excluding it from the seeds')
            continue
        active.append((location, float(magnitude)))
    return _align(x, active, len(locations), design.ratio_tol)
