import csv
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from phasecode import logger
from phasecode.graph_design import CodeGraph
from phasecode.measurement import BinObservation, Observations, TrigParams
from phasecode.sparse_signal import SparseSignal

Residual = Tuple[complex, complex, complex, complex]

# Intersections whose check rows miss by more than this are discarded before polishing
_PREFILTER_TOL = 1e-4
_POLISH_STEPS = 3


@dataclass
class DecoderSettings:
    tol: float = 1e-8
    max_bootstrap_attempts: int = 16
    # A bootstrap run is accepted once it colors this fraction of the design sparsity
    bootstrap_fraction: float = 0.5
    debug_checks: bool = False

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f'Tolerance must lie in (0, 1), got {self.tol}')
        if self.max_bootstrap_attempts < 1:
            raise ValueError(f'Need at least one bootstrap attempt, got {self.max_bootstrap_attempts}')


@dataclass(frozen=True)
class CandidateSolution:
    index: int
    value: complex
    residual: float


class Outcome(Enum):
    FullyExplained = 'FullyExplained'
    NewBall = 'NewBall'
    Stuck = 'Stuck'


@dataclass(frozen=True)
class Resolution:
    outcome: Outcome
    solution: Optional[CandidateSolution] = None


@dataclass(frozen=True)
class ColoringEvent:
    iteration: int
    bin: int
    index: int
    magnitude: float
    residual: float


def _check_residuals(x: complex, psi: float, rotation: complex, residual: Residual, y: np.ndarray) -> np.ndarray:
    """Normalized mismatch of the four bin equations when the lone unknown at phase psi equals [x]"""
    a, b, c, d = residual
    fits = np.array([abs(a + complex(math.cos(psi), math.sin(psi)) * x),
                     abs(b + complex(math.cos(psi), -math.sin(psi)) * x),
                     abs(c + 2 * math.cos(psi) * x),
                     abs(d + rotation * x)])
    return np.abs(fits - y) / np.maximum(1.0, y)


def _polish(x: complex, psi: float, rotation: complex, residual: Residual, y: np.ndarray) -> complex:
    """A few Gauss-Newton steps on all four magnitude equations in the unknown (Re x, Im x)"""
    coefficients = np.array([complex(math.cos(psi), math.sin(psi)), complex(math.cos(psi), -math.sin(psi)),
                             2 * math.cos(psi), rotation])
    centres = np.array(residual, dtype=np.complex128)
    for _ in range(_POLISH_STEPS):
        u = centres + coefficients * x
        magnitude = np.abs(u)
        live = magnitude > 1e-300
        if not live.any():
            break
        weighted = np.conj(u[live]) * coefficients[live] / magnitude[live]
        jacobian = np.stack((weighted.real, -weighted.imag), axis=1)
        step = np.linalg.lstsq(jacobian, y[live] - magnitude[live], rcond=None)[0]
        x += complex(step[0], step[1])
    return x


def solve_single_unknown(obs: BinObservation, residual: Residual, candidate_locs: Sequence[int], trig: TrigParams,
                         tol: float) -> List[CandidateSolution]:
    """
    Guess-and-check for a bin with exactly one unknown ball. For each candidate location l (psi = w*l) the first two
    equations become circles in w = e^{i psi} x:

        |w + a| = y1,  |w + b e^{2 i psi}| = y2

    Their (at most two) intersections are mapped back to x and kept when the cosine row |c + 2 cos(psi) x| = y3 and
    the random-phase row |d + e^{i w' l} x| = y4 also hold within [tol] relative. When the colored residual is zero
    (a lone ball) the circles coincide; then |x| = y1, the phase is free and is fixed to 0.

    Candidates whose circles are concentric are skipped. Returns every survivor.
    """
    locs = np.asarray(candidate_locs, dtype=np.int64)
    if locs.size == 0:
        raise ValueError('Need at least one candidate location')
    if locs.min() < 1 or locs.max() > trig.n:
        raise ValueError(f'Candidate locations must lie in 1..{trig.n}')

    a, b, c, d = (complex(v) for v in residual)
    y = obs.as_array()
    y1, y2 = y[0], y[1]
    psi = trig.omega * locs
    spin = np.exp(1j * psi)

    if abs(a) <= tol * max(1.0, y1) and abs(b) <= tol * max(1.0, y2):
        if y1 <= tol or abs(y1 - y2) > tol * max(1.0, y1):
            return []
        points = (spin * y1)[:, None]
        valid = np.ones(points.shape, dtype=bool)
    else:
        centre1 = -a
        centre2 = -b * spin ** 2
        gap = centre2 - centre1
        distance = np.abs(gap)
        usable = distance >= tol * max(1.0, y1, y2)
        safe = np.where(usable, distance, 1.0)
        along = (safe ** 2 + y1 ** 2 - y2 ** 2) / (2 * safe)
        height_sq = y1 ** 2 - along ** 2
        usable &= height_sq >= -_PREFILTER_TOL * max(1.0, y1) ** 2
        height = np.sqrt(np.maximum(height_sq, 0.0))
        unit = gap / safe
        points = centre1 + unit[:, None] * (along[:, None] + 1j * height[:, None] * np.array([1.0, -1.0]))
        valid = np.stack((usable, usable & (height > tol * max(1.0, y1))), axis=1)

    x = points * np.conj(spin)[:, None]
    check_rotation = np.exp(1j * trig.omega_prime * locs)
    cos_row = 2 * np.cos(psi)[:, None]
    mismatch = np.maximum(np.abs(np.abs(c + cos_row * x) - y[2]) / max(1.0, y[2]),
                          np.abs(np.abs(d + check_rotation[:, None] * x) - y[3]) / max(1.0, y[3]))
    rows, columns = np.nonzero(valid & (mismatch <= _PREFILTER_TOL))

    survivors: List[CandidateSolution] = []
    lone_ball = points.shape[1] == 1
    for row, column in zip(rows, columns):
        index, angle, rotation = int(locs[row]), float(psi[row]), complex(check_rotation[row])
        value = complex(x[row, column])
        if not lone_ball:
            value = _polish(value, angle, rotation, (a, b, c, d), y)
        score = float(_check_residuals(value, angle, rotation, (a, b, c, d), y).max())
        if score > tol:
            continue
        if any(s.index == index and abs(s.value - value) <= 1e-6 * max(1.0, abs(value)) for s in survivors):
            continue
        survivors.append(CandidateSolution(index, value, score))
    return survivors


class DecoderState:
    """
    Coloring status of one decode run. [sums] holds, per bin, the four row sums (a, b, c, d) over the colored
    neighbours; c = a + b holds identically. [queue] is a FIFO of bins to re-examine.
    """

    def __init__(self, graph: CodeGraph, trig: TrigParams):
        if graph.n != trig.n:
            raise ValueError(f'Graph has {graph.n} left nodes but the modulation is for n={trig.n}')
        self.graph = graph
        self.trig = trig
        self.sums = np.zeros((graph.m, 4), dtype=np.complex128)
        self.colored: Dict[int, complex] = {}
        self.is_colored = np.zeros(graph.n + 1, dtype=bool)
        self.queue: Deque[int] = deque()
        self.queued = np.zeros(graph.m, dtype=bool)
        self.iteration = 0
        self.attempts = 0
        self.events: List[ColoringEvent] = []
        # bin that produced each ball; None for seeds
        self.source: Dict[int, Optional[int]] = {}

    def enqueue(self, bins: np.ndarray) -> None:
        for b in bins:
            if not self.queued[b]:
                self.queued[b] = True
                self.queue.append(int(b))

    def color(self, index: int, value: complex, source_bin: Optional[int] = None) -> None:
        if self.is_colored[index]:
            raise ValueError(f'Ball {index} is already colored')
        bins = self.graph.bins_of(index)
        self.sums[bins] += (self.trig.rows(np.array([index]))[:, 0] * value)[None, :]
        self.colored[index] = value
        self.is_colored[index] = True
        self.source[index] = source_bin
        self.enqueue(bins)

    def uncolored_members(self, bin_index: int) -> np.ndarray:
        members = self.graph.members_of(bin_index)
        return members[~self.is_colored[members]]

    def recomputed_sums(self, bins: np.ndarray) -> np.ndarray:
        """Row sums of [bins] rebuilt from the colored set"""
        sums = np.zeros((len(bins), 4), dtype=np.complex128)
        for position, b in enumerate(bins):
            members = self.graph.members_of(int(b))
            members = members[self.is_colored[members]]
            if members.size:
                values = np.array([self.colored[int(m)] for m in members])
                sums[position] = (self.trig.rows(members) * values).sum(axis=1)
        return sums

    def estimate(self) -> SparseSignal:
        return SparseSignal.from_support(self.graph.n, self.colored)


def _explained(sums: np.ndarray, y: np.ndarray, tol: float) -> bool:
    return bool(np.all(np.abs(np.abs(sums) - y) <= tol * np.maximum(1.0, y)))


def try_resolve_bin(state: DecoderState, bin_index: int, obs: BinObservation, tol: float) -> Resolution:
    """
    FullyExplained when the colored residual reproduces all four magnitudes; NewBall when exactly one hypothesis
    over the bin's uncolored neighbours survives the guess-and-check; Stuck otherwise.
    """
    state.attempts += 1
    sums = state.sums[bin_index]
    if _explained(sums, obs.as_array(), tol):
        return Resolution(Outcome.FullyExplained)

    candidates = state.uncolored_members(bin_index)
    if candidates.size == 0:
        return Resolution(Outcome.Stuck)
    survivors = solve_single_unknown(obs, tuple(sums), candidates, state.trig, tol)
    if len(survivors) == 1:
        return Resolution(Outcome.NewBall, survivors[0])
    return Resolution(Outcome.Stuck)


@dataclass
class AuditReport:
    checked_bins: int
    violations: List[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_coloring(state: DecoderState, observations: Observations, tol: float) -> AuditReport:
    """
    Substitutes the colored balls back into the bin equations. A bin that produced a ball, or whose neighbours are
    all colored, has no unknown left and must be reproduced exactly.
    """
    bins = set(b for b in state.source.values() if b is not None)
    for index in state.colored:
        for b in state.graph.bins_of(index):
            b = int(b)
            if b not in bins and state.uncolored_members(b).size == 0:
                bins.add(b)
    report = AuditReport(len(bins))
    for b in sorted(bins):
        if not _explained(state.sums[b], observations.y[b], tol):
            report.violations.append(b)
    return report


@dataclass
class PeelingResult:
    estimate: SparseSignal
    iterations: int
    attempts: int
    events: List[ColoringEvent]
    audit: AuditReport

    @property
    def colored_count(self) -> int:
        return self.estimate.k


def _peel(state: DecoderState, observations: Observations, settings: DecoderSettings) -> None:
    while state.queue:
        state.iteration += 1
        for _ in range(len(state.queue)):
            bin_index = state.queue.popleft()
            state.queued[bin_index] = False
            resolution = try_resolve_bin(state, bin_index, observations[bin_index], settings.tol)
            if resolution.outcome is not Outcome.NewBall:
                continue

            solution = resolution.solution
            state.color(solution.index, solution.value, bin_index)
            state.events.append(ColoringEvent(state.iteration, bin_index, solution.index, abs(solution.value),
                                              solution.residual))
            logger.debug(f'Iteration {state.iteration}: bin {bin_index} colored ball {solution.index} '
                         f'(|x|={abs(solution.value):.6g}, residual={solution.residual:.2e})')
            if settings.debug_checks:
                bins = state.graph.bins_of(solution.index)
                expected = state.recomputed_sums(bins)
                drift = np.abs(state.sums[bins] - expected) / np.maximum(1.0, np.abs(expected))
                if np.any(drift > 1e-9):
                    raise AssertionError(f'Residual sums drifted by {drift.max():.2e} after coloring '
                                         f'ball {solution.index}')


def _finish(state: DecoderState, observations: Observations, settings: DecoderSettings) -> PeelingResult:
    audit = audit_coloring(state, observations, settings.tol)
    if not audit.ok:
        logger.warning(f'Coloring audit failed on {len(audit.violations)} of {audit.checked_bins} bins')
    return PeelingResult(state.estimate(), state.iteration, state.attempts, state.events, audit)


def run_peeling(observations: Observations, graph: CodeGraph, trig: TrigParams, seed_balls: Mapping[int, complex],
                settings: Optional[DecoderSettings] = None) -> PeelingResult:
    """
    Spreads the coloring from [seed_balls] (known up to one shared global phase): bins next to newly colored balls
    are examined in FIFO order, one round per iteration, until the queue drains. With no seeds nothing is colored.
    """
    settings = settings or DecoderSettings()
    if len(observations) != graph.m:
        raise ValueError(f'Expected {graph.m} bin observations, got {len(observations)}')

    state = DecoderState(graph, trig)
    for index, value in sorted(seed_balls.items()):
        state.color(int(index), complex(value))
    _peel(state, observations, settings)
    result = _finish(state, observations, settings)
    logger.debug(f'Peeling from {len(seed_balls)} seeds colored {result.colored_count} balls in '
                 f'{result.iterations} iterations')
    return result


def singleton_bins(observations: Observations, tol: float) -> np.ndarray:
    """Bins whose magnitudes look like a lone ball: y1 = y2 = y4 > 0 and y3 <= 2 y1"""
    y = observations.y
    scale = tol * np.maximum(1.0, y[:, 0])
    lone = ((y[:, 0] > tol) & (np.abs(y[:, 0] - y[:, 1]) <= scale) & (np.abs(y[:, 0] - y[:, 3]) <= scale)
            & (y[:, 2] <= 2 * y[:, 0] + scale))
    return np.nonzero(lone)[0]


def bootstrap_peeling(observations: Observations, graph: CodeGraph, trig: TrigParams, target: int,
                      settings: Optional[DecoderSettings] = None) -> PeelingResult:
    """
    Decodes without an initialization stage: a lone-ball bin gives one ball with |x| = y1 and phase 0, and peeling
    spreads from it. Runs restart from the next lone-ball bin until one colors at least bootstrap_fraction of
    [target] balls or the attempts run out; the largest coloring is returned.
    """
    settings = settings or DecoderSettings()
    if len(observations) != graph.m:
        raise ValueError(f'Expected {graph.m} bin observations, got {len(observations)}')

    best: Optional[PeelingResult] = None
    covered = set()
    attempts = 0
    for bin_index in singleton_bins(observations, settings.tol):
        if attempts >= settings.max_bootstrap_attempts:
            break
        bin_index = int(bin_index)
        state = DecoderState(graph, trig)
        survivors = solve_single_unknown(observations[bin_index], (0j, 0j, 0j, 0j), graph.members_of(bin_index),
                                         trig, settings.tol)
        if len(survivors) != 1 or survivors[0].index in covered:
            continue
        attempts += 1
        start = survivors[0]
        state.color(start.index, start.value, bin_index)
        _peel(state, observations, settings)
        result = _finish(state, observations, settings)
        covered.update(state.colored)
        logger.debug(f'Bootstrap attempt {attempts} from bin {bin_index} colored {result.colored_count} balls')
        if best is None or result.colored_count > best.colored_count:
            best = result
        if result.colored_count >= settings.bootstrap_fraction * target:
            break

    if best is None:
        state = DecoderState(graph, trig)
        return _finish(state, observations, settings)
    return best


def write_trace(events: List[ColoringEvent], path: str) -> None:
    with open(path, 'wt', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(['iteration', 'bin', 'index', 'magnitude', 'residual'])
        for event in events:
            writer.writerow([event.iteration, event.bin, event.index, f'{event.magnitude:.17g}',
                             f'{event.residual:.3e}'])
