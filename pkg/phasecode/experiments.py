import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
from result import Err, Ok, Result, is_ok

from phasecode import logger
from phasecode.density_evolution import DETrace, DEParams, error_floor_bound, fixed_points, iterations_to_reach, \
    run_de
from phasecode.graph_design import GraphParams, harmonic_lambda, sample_graph, select_d, stability_margin
from phasecode.initialization import InitDesign, build_seed_set
from phasecode.measurement import TrigParams, measure
from phasecode.peeling import DecoderSettings, bootstrap_peeling, run_peeling
from phasecode.sparse_signal import RngSeed, check_seed, global_phase_error, random_sparse_signal, support_error, \
    trial_seed
from phasecode.two_layer import CSDesign, two_layer_pipeline

ProgressCallback = Callable[[str, float], None]

TRIAL_COLUMNS = ['seed', 'trial', 'n', 'K', 'M_over_K', 'D', 'init_mode', 'frac_uncolored', 'missed', 'false_alarms',
                 'phase_error', 'm_total', 'success', 'ms', 'config_hash']
AGGREGATE_COLUMNS = ['K', 'M_over_K', 'trials', 'mean_uncolored', 'std_uncolored', 'success_rate', 'config_hash']
TWO_LAYER_COLUMNS = ['seed', 'trial', 'K', 'success', 'rel_error', 'm_total', 'config_hash']
DE_COLUMNS = ['eps', 'D', 'j', 'p_j']
# Summary rows: 'summary', eps, D, x2, floor_bound, f_prime_1, converged_at
DE_SUMMARY_FIELDS = ['x2', 'floor_bound', 'f_prime_1', 'converged_at']
# Fields that do not change what a run computes
_VOLATILE_FIELDS = ('out', 'jobs')
_TWO_LAYER_TOL = 1e-8
DEFAULT_DE_EPS = [0.3]
DEFAULT_TWO_LAYER_RATIO = 2.0


class Mode(Enum):
    DensityEvolution = 'de'
    Simulation = 'sim'
    Sweep = 'sweep'
    TwoLayer = 'twolayer'

    @staticmethod
    def from_literal(mode: str) -> 'Mode':
        for value in Mode:
            if value.value == mode:
                return value
        raise ValueError(f'Unknown mode: {mode}')


class InitKind(Enum):
    NoInit = 'none'
    Active = 'active'
    Known = 'known'

    @staticmethod
    def from_literal(kind: str) -> 'InitKind':
        for value in InitKind:
            if value.value == kind:
                return value
        raise ValueError(f'Unknown initialization: {kind}')


@dataclass
class ExperimentConfig:
    """
    Everything a run needs. [k] and [mk] are grids (sweep) or single values (sim). [eps] is the grid of the density
    evolution figure (default 0.3); in two-layer mode a single eps sets R = ceil((1 + eps) K) unless [ratio] is given.
    When [p_star] is set, D is chosen per design by select_d instead of taken from [d].
    """
    mode: Mode = Mode.Simulation
    n: int = 20_000
    k: List[int] = field(default_factory=lambda: [1000])
    mk: List[float] = field(default_factory=lambda: [1.3])
    eps: Optional[List[float]] = None
    d: int = 1000
    p_star: Optional[float] = None
    p0: float = 0.99
    init: InitKind = InitKind.NoInit
    eps2: float = 0.5
    delta: float = 0.1
    ratio: Optional[float] = None
    cs_degree: int = 3
    trials: int = 1
    seed: int = 0
    threshold: float = 0.005
    tol: float = 1e-8
    jobs: int = 0
    out: Optional[str] = None

    def to_json(self) -> dict:
        data = dataclasses.asdict(self)
        data['mode'] = self.mode.value
        data['init'] = self.init.value
        return data

    @staticmethod
    def from_json(data: dict) -> 'ExperimentConfig':
        """Builds a config from JSON [data]; missing keys keep their defaults. Raises ValueError on unknown keys."""
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f'Unknown configuration keys: {", ".join(unknown)}')

        values = dict(data)
        if 'mode' in values:
            values['mode'] = Mode.from_literal(values['mode'])
        if 'init' in values:
            values['init'] = InitKind.from_literal(values['init'])
        for key, cast in (('k', int), ('mk', float), ('eps', float)):
            if values.get(key) is not None:
                raw = values[key] if isinstance(values[key], list) else [values[key]]
                values[key] = [cast(v) for v in raw]
        return ExperimentConfig(**values)

    def with_overrides(self, overrides: dict) -> 'ExperimentConfig':
        """A copy with every non-None entry of [overrides] applied"""
        return dataclasses.replace(self, **{key: value for key, value in overrides.items() if value is not None})

    @property
    def config_hash(self) -> str:
        data = {key: value for key, value in self.to_json().items() if key not in _VOLATILE_FIELDS}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode('utf-8')).hexdigest()[:12]

    @property
    def de_eps(self) -> List[float]:
        return self.eps if self.eps else DEFAULT_DE_EPS

    @property
    def two_layer_ratio(self) -> float:
        """R/K of the two-layer design: [ratio] when given, else 1 + eps for a single eps, else 2"""
        if self.ratio is not None:
            return self.ratio
        if self.eps:
            return 1 + self.eps[0]
        return DEFAULT_TWO_LAYER_RATIO

    def graph_degree(self, mk: float) -> int:
        if self.p_star is None:
            return self.d
        return select_d(1 - 1 / mk, self.p_star)

    def validate(self) -> Result[None, str]:
        """Checks the config before any trial runs"""
        if self.n < 1:
            return Err(f'n must be positive, got {self.n}')
        if not self.k or any(k < 0 or k > self.n for k in self.k):
            return Err(f'Every K must lie in 0..{self.n}, got {self.k}')
        if self.trials < 1:
            return Err(f'trials must be at least 1, got {self.trials}')
        try:
            check_seed(self.seed)
        except ValueError as e:
            return Err(str(e))
        if self.jobs < 0:
            return Err(f'jobs must be nonnegative, got {self.jobs}')
        if self.p_star is not None and not 0 < self.p_star < 1:
            return Err(f'p_star must lie in (0, 1), got {self.p_star}')
        if not 0 <= self.threshold <= 1:
            return Err(f'Success threshold must lie in [0, 1], got {self.threshold}')

        if self.mode is Mode.DensityEvolution:
            if any(not 0 < eps < 1 for eps in self.de_eps):
                return Err(f'Every eps must lie in (0, 1), got {self.de_eps}')
            if self.p_star is None and self.d < 2:
                return Err(f'D must be at least 2, got {self.d}')
            if not 0 < self.p0 <= 1:
                return Err(f'p0 must lie in (0, 1], got {self.p0}')
            return Ok(None)

        if self.mode is Mode.TwoLayer:
            if self.eps is not None and len(self.eps) != 1:
                return Err(f'twolayer takes a single eps (R = ceil((1 + eps) K)), got {self.eps}')
            if self.eps is not None and not self.eps[0] > 0:
                return Err(f'eps must be positive, got {self.eps[0]}')
            if not self.two_layer_ratio > 0 or self.cs_degree < 1:
                return Err(f'Two-layer design needs ratio > 0 and degree >= 1, got {self.two_layer_ratio}, '
                           f'{self.cs_degree}')
            return Ok(None)

        if self.mode is Mode.Simulation and (len(self.k) != 1 or len(self.mk) != 1):
            return Err('sim runs a single (K, M/K) point; use sweep for grids')
        if not self.mk or any(not mk > 1 for mk in self.mk):
            return Err(f'Every M/K must exceed 1, got {self.mk}')
        if self.p_star is None and self.d < 2:
            return Err(f'D must be at least 2, got {self.d}')
        if self.init is InitKind.Active and not self.eps2 > 0:
            return Err(f'eps2 must be positive, got {self.eps2}')
        if self.init is InitKind.Known and not 0 < self.delta <= 1:
            return Err(f'delta must lie in (0, 1], got {self.delta}')
        for k in self.k:
            for mk in self.mk:
                if k == 0:
                    continue
                d = self.graph_degree(mk)
                m = GraphParams.from_ratio(k, mk, harmonic_lambda(d)).m
                if m < d:
                    return Err(f'K={k}, M/K={mk} gives M={m} bins, fewer than D={d}')
                if self.n < d:
                    return Err(f'Signal length n={self.n} is smaller than D={d}')
        return Ok(None)


def load_config(path: str, overrides: Optional[dict] = None) -> Result[ExperimentConfig, str]:
    """Reads a JSON config from [path] (when given), applies [overrides] and validates the result"""
    try:
        cfg = ExperimentConfig()
        if path:
            with open(path, 'rt') as file:
                cfg = ExperimentConfig.from_json(json.load(file))
        cfg = cfg.with_overrides(overrides or {})
    except (OSError, ValueError, TypeError) as e:
        return Err(f'Invalid configuration: {e}')
    valid = cfg.validate()
    if not is_ok(valid):
        return Err(valid.err_value)
    return Ok(cfg)


@dataclass
class TrialRow:
    seed: RngSeed
    trial: int
    n: int
    k: int
    m_over_k: float
    d: int
    init_mode: str
    frac_uncolored: float
    missed: int
    false_alarms: int
    phase_error: float
    m_total: int
    success: bool
    ms: int
    config_hash: str

    def to_csv_row(self) -> list:
        return [self.seed, self.trial, self.n, self.k, self.m_over_k, self.d, self.init_mode, self.frac_uncolored,
                self.missed, self.false_alarms, self.phase_error, self.m_total, int(self.success), self.ms,
                self.config_hash]


@dataclass
class Aggregate:
    k: int
    m_over_k: float
    trials: int
    mean_uncolored: float
    std_uncolored: float
    success_rate: float
    config_hash: str

    def to_csv_row(self) -> list:
        return [self.k, self.m_over_k, self.trials, self.mean_uncolored, self.std_uncolored, self.success_rate,
                self.config_hash]


@dataclass
class TwoLayerRow:
    seed: RngSeed
    trial: int
    k: int
    success: bool
    rel_error: float
    m_total: int
    config_hash: str

    def to_csv_row(self) -> list:
        return [self.seed, self.trial, self.k, int(self.success), self.rel_error, self.m_total, self.config_hash]


@dataclass
class SweepResult:
    rows: List[TrialRow]
    aggregates: List[Aggregate]


def _log_progress(description: str, percent: float):
    logger.info(f'[Sweep] {description} ({percent:.1f}%)')


def _initial_seeds(cfg: ExperimentConfig, x, trig: TrigParams, seed: RngSeed) -> Tuple[dict, int]:
    """Seed balls and the extra magnitude rows they cost"""
    if cfg.init is InitKind.Active:
        design = InitDesign.active_sensing(cfg.n, x.k, cfg.eps2, seed)
    else:
        count = math.ceil(cfg.delta * x.k - 1e-9)
        design = InitDesign.known_support(x.indices[:count].tolist())
    seeds = build_seed_set(x, design, trig)
    return seeds.balls, seeds.rows_used


def run_trial(cfg: ExperimentConfig, k: int, mk: float, trial: int, seed: RngSeed) -> TrialRow:
    """
    One decode: draws the graph, signal and modulation from [seed], measures, initializes (or bootstraps) and peels.
    The same arguments always give the same row, apart from [ms].
    """
    started = time.perf_counter()
    d = cfg.graph_degree(mk)
    if k == 0:
        return TrialRow(seed, trial, cfg.n, 0, mk, d, cfg.init.value, 0.0, 0, 0, 0.0, 0, True, 0, cfg.config_hash)

    dist = harmonic_lambda(d)
    params = GraphParams.from_ratio(k, mk, dist)
    graph = sample_graph(cfg.n, dist, params, seed)
    x = random_sparse_signal(cfg.n, k, seed)
    trig = TrigParams.draw(cfg.n, seed)
    observations = measure(x, graph, trig)
    settings = DecoderSettings(tol=cfg.tol)

    extra_rows = 0
    if cfg.init is InitKind.NoInit:
        result = bootstrap_peeling(observations, graph, trig, k, settings)
    else:
        balls, extra_rows = _initial_seeds(cfg, x, trig, seed)
        result = run_peeling(observations, graph, trig, balls, settings)

    estimate = result.estimate
    missed, false_alarms = support_error(x, estimate)
    frac_uncolored = missed / k
    phase_error = global_phase_error(x.restricted(estimate.indices), estimate)
    success = frac_uncolored <= cfg.threshold and false_alarms == 0
    ms = int(round((time.perf_counter() - started) * 1000))
    return TrialRow(seed, trial, cfg.n, k, mk, d, cfg.init.value, frac_uncolored, missed, false_alarms, phase_error,
                    observations.num_measurements + extra_rows, success, ms, cfg.config_hash)


def _safe_trial(cfg: ExperimentConfig, k: int, mk: float, trial: int, seed: RngSeed) -> TrialRow:
    try:
        return run_trial(cfg, k, mk, trial, seed)
    except Exception:
        logger.error(f'Trial {trial} (K={k}, M/K={mk}, seed={seed}) failed', exc_info=True)
        return TrialRow(seed, trial, cfg.n, k, mk, cfg.graph_degree(mk), cfg.init.value, 1.0, k, 0, math.nan, 0,
                        False, 0, cfg.config_hash)


def sweep_tasks(cfg: ExperimentConfig) -> List[Tuple[int, float, int, RngSeed]]:
    """(K, M/K, trial, seed) in output order. Seeds come from the run seed and the task's position."""
    tasks = []
    for k in cfg.k:
        for mk in cfg.mk:
            for trial in range(cfg.trials):
                tasks.append((k, mk, trial, trial_seed(cfg.seed, len(tasks))))
    return tasks


def _worker_count(cfg: ExperimentConfig, tasks: int) -> int:
    jobs = cfg.jobs or os.cpu_count() or 1
    return max(1, min(jobs, tasks))


def aggregate_rows(rows: List[TrialRow]) -> List[Aggregate]:
    groups = {}
    for row in rows:
        groups.setdefault((row.k, row.m_over_k), []).append(row)
    aggregates = []
    for (k, mk), members in groups.items():
        fractions = np.array([row.frac_uncolored for row in members])
        aggregates.append(Aggregate(k, mk, len(members), float(fractions.mean()), float(fractions.std()),
                                    sum(row.success for row in members) / len(members), members[0].config_hash))
    return aggregates


def audit_aggregates(rows: List[TrialRow], aggregates: List[Aggregate]) -> Result[None, str]:
    """Recomputes [aggregates] from [rows] and reports the first group that disagrees"""
    expected = {(a.k, a.m_over_k): a for a in aggregate_rows(rows)}
    if len(expected) != len(aggregates):
        return Err(f'Expected {len(expected)} aggregate rows, got {len(aggregates)}')
    for aggregate in aggregates:
        reference = expected.get((aggregate.k, aggregate.m_over_k))
        if reference is None:
            return Err(f'No trials for K={aggregate.k}, M/K={aggregate.m_over_k}')
        if reference.trials != aggregate.trials:
            return Err(f'K={aggregate.k}, M/K={aggregate.m_over_k}: {aggregate.trials} trials, '
                       f'recomputed {reference.trials}')
        for name in ('mean_uncolored', 'std_uncolored', 'success_rate'):
            if not math.isclose(getattr(reference, name), getattr(aggregate, name), rel_tol=1e-12, abs_tol=1e-12):
                return Err(f'K={aggregate.k}, M/K={aggregate.m_over_k}: {name} does not match the trial rows')
    return Ok(None)


def run_sweep(cfg: ExperimentConfig, progress: Optional[ProgressCallback] = None) -> SweepResult:
    """
    Runs every (K, M/K, trial) of [cfg], in a process pool unless jobs is 1. Rows come back in task order no matter
    which worker finishes first; a trial that raises is logged and recorded as a failure.
    """
    progress = progress or _log_progress
    tasks = sweep_tasks(cfg)
    workers = _worker_count(cfg, len(tasks))
    logger.info(f'[Sweep] {len(tasks)} trials on {workers} workers (config {cfg.config_hash})')

    rows: List[TrialRow] = []
    if workers == 1:
        for position, task in enumerate(tasks):
            rows.append(_safe_trial(cfg, *task))
            progress(_describe(task, cfg), 100 * (position + 1) / len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_safe_trial, cfg, *task) for task in tasks]
            for position, (task, future) in enumerate(zip(tasks, futures)):
                try:
                    rows.append(future.result())
                except Exception:
                    logger.error(f'Worker for {_describe(task, cfg)} died', exc_info=True)
                    k, mk, trial, seed = task
                    rows.append(TrialRow(seed, trial, cfg.n, k, mk, cfg.graph_degree(mk), cfg.init.value, 1.0, k, 0,
                                         math.nan, 0, False, 0, cfg.config_hash))
                progress(_describe(task, cfg), 100 * (position + 1) / len(tasks))

    aggregates = aggregate_rows(rows)
    audit = audit_aggregates(rows, aggregates)
    if not is_ok(audit):
        raise AssertionError(audit.err_value)
    return SweepResult(rows, aggregates)


def _describe(task: Tuple[int, float, int, RngSeed], cfg: ExperimentConfig) -> str:
    k, mk, trial, _ = task
    return f'K={k} M/K={mk:.2f} trial {trial + 1}/{cfg.trials}'


def write_sweep(result: SweepResult, path: str) -> str:
    """Writes the trial rows to [path] and the aggregates next to it; returns the aggregate path"""
    write_csv(path, TRIAL_COLUMNS, [row.to_csv_row() for row in result.rows])
    summary = summary_path(path)
    write_csv(summary, AGGREGATE_COLUMNS, [aggregate.to_csv_row() for aggregate in result.aggregates])
    return summary


def summary_path(path: str) -> str:
    stem, _ = os.path.splitext(path)
    return f'{stem}.summary.csv'


def write_csv(path: str, header: List[str], rows: List[list]) -> None:
    with open(path, 'wt', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(header)
        writer.writerows(rows)


@dataclass
class DECurve:
    """One density evolution trajectory and the design quantities it is read against; [x2] is None without escape"""
    eps: float
    d: int
    trace: DETrace
    x2: Optional[float]
    floor_bound: float
    f_prime_1: float

    def summary_row(self) -> list:
        x2 = '' if self.x2 is None else self.x2
        converged = '' if self.trace.converged_at is None else self.trace.converged_at
        return ['summary', self.eps, self.d, x2, self.floor_bound, self.f_prime_1, converged]


def run_de_figure(cfg: ExperimentConfig) -> List[DECurve]:
    """One density evolution trajectory per eps in [cfg], designed for the largest K of the config"""
    curves = []
    k = max(max(cfg.k), 1)
    for eps in cfg.de_eps:
        d = cfg.d if cfg.p_star is None else select_d(eps, cfg.p_star)
        dist = harmonic_lambda(d)
        params = GraphParams.design(k, eps, dist)
        trace = run_de(DEParams(dist, params, p0=cfg.p0))
        points = fixed_points(dist, params)
        x2 = points.ok_value[1] if is_ok(points) else None
        if x2 is None:
            logger.warning(f'[DE] eps={eps} D={d}: {points.err_value}')
        reached = iterations_to_reach(trace, 0.01)
        logger.info(f'[DE] eps={eps} D={d}: limit {trace.p_limit:.3e}, below 0.01 at j={reached}')
        curves.append(DECurve(eps, d, trace, x2, error_floor_bound(dist, params), stability_margin(dist, params)))
    return curves


def write_de_figure(curves: List[DECurve], path: str) -> None:
    """Trajectory rows (eps, D, j, p_j) followed by one summary row per curve"""
    rows = [[c.eps, c.d, j, float(p)] for c in curves for j, p in enumerate(c.trace.trajectory)]
    rows += [c.summary_row() for c in curves]
    write_csv(path, DE_COLUMNS, rows)


def run_two_layer_trial(cfg: ExperimentConfig, k: int, trial: int, seed: RngSeed) -> TwoLayerRow:
    design = CSDesign.build(cfg.n, k, cfg.two_layer_ratio, cfg.cs_degree, seed)
    x = random_sparse_signal(cfg.n, k, seed)
    outcome = two_layer_pipeline(x, design)
    estimate = outcome.ok_value if is_ok(outcome) else outcome.err_value.partial
    rel_error = global_phase_error(x, estimate)
    success = is_ok(outcome) and rel_error < _TWO_LAYER_TOL
    return TwoLayerRow(seed, trial, k, success, rel_error, design.magnitude_measurements, cfg.config_hash)


def run_two_layer(cfg: ExperimentConfig, progress: Optional[ProgressCallback] = None) -> List[TwoLayerRow]:
    progress = progress or _log_progress
    tasks = [(k, trial) for k in cfg.k for trial in range(cfg.trials)]
    rows = []
    for position, (k, trial) in enumerate(tasks):
        seed = trial_seed(cfg.seed, position)
        try:
            rows.append(run_two_layer_trial(cfg, k, trial, seed))
        except Exception:
            logger.error(f'Two-layer trial {trial} (K={k}, seed={seed}) failed', exc_info=True)
            rows.append(TwoLayerRow(seed, trial, k, False, math.nan, 0, cfg.config_hash))
        progress(f'two-layer K={k} trial {trial + 1}/{cfg.trials}', 100 * (position + 1) / len(tasks))
    return rows


def run_experiment(cfg: ExperimentConfig, progress: Optional[ProgressCallback] = None) -> Result[str, str]:
    """Runs [cfg] and writes its CSV to cfg.out. Returns a one-line summary."""
    valid = cfg.validate()
    if not is_ok(valid):
        return Err(valid.err_value)
    if not cfg.out:
        return Err('No output path given')

    if cfg.mode is Mode.DensityEvolution:
        curves = run_de_figure(cfg)
        write_de_figure(curves, cfg.out)
        return Ok(f'Wrote {len(curves)} trajectories to {cfg.out}')

    if cfg.mode is Mode.TwoLayer:
        rows = run_two_layer(cfg, progress)
        write_csv(cfg.out, TWO_LAYER_COLUMNS, [row.to_csv_row() for row in rows])
        successes = sum(row.success for row in rows)
        return Ok(f'{successes}/{len(rows)} two-layer trials recovered the signal; wrote {cfg.out}')

    result = run_sweep(cfg, progress)
    summary = write_sweep(result, cfg.out)
    lines = [f'K={a.k} M/K={a.m_over_k}: mean uncolored {a.mean_uncolored:.4f}, success {a.success_rate:.2f}'
             for a in result.aggregates]
    return Ok('\n'.join(lines + [f'Wrote {cfg.out} and {summary}']))
