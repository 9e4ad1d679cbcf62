import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from result import Err, Ok, Result
from scipy import optimize

from phasecode import logger
from phasecode.graph_design import GraphParams, LeftEdgeDistribution, stability_margin

CONVERGENCE_TOL = 1e-12
DEFAULT_J_MAX = 10_000
# Right end of the bisection bracket for the escape fixed point; f(x) < x on (1 - this, 1) when f'(1) > 1
_BRACKET_GAP = 1e-9


@dataclass(frozen=True)
class DEParams:
    dist: LeftEdgeDistribution
    params: GraphParams
    p0: float = 0.99
    eps1: float = 1e-3
    j_max: int = DEFAULT_J_MAX

    def __post_init__(self):
        if not 0 < self.p0 <= 1:
            raise ValueError(f'Initial uncolored probability must lie in (0, 1], got {self.p0}')
        if self.eps1 <= 0:
            raise ValueError(f'Slack eps1 must be positive, got {self.eps1}')
        if self.j_max < 1:
            raise ValueError(f'Iteration cap must be positive, got {self.j_max}')
        if self.dist.d != self.params.d:
            raise ValueError(f'Distribution has D={self.dist.d} but the graph parameters use D={self.params.d}')

    @property
    def delta(self) -> float:
        return 1 - self.p0


@dataclass
class DETrace:
    """Uncolored-edge probabilities p_0, p_1, ...; [converged_at] is the first j with p_j <= p_limit + eps1"""
    trajectory: np.ndarray
    converged_at: Optional[int]
    p_limit: float


def de_step(p: float, dist: LeftEdgeDistribution, params: GraphParams) -> float:
    """
    f(p) = lambda(1 + rho_1 - rho(1 - p)) with rho(x) = e^{-eta (1 - x)}. The argument is formed as
    1 - e^{-eta} (e^{eta (1 - p)} - 1) so that f(1) = 1 exactly.
    """
    if not 0 <= p <= 1:
        raise ValueError(f'Probability must lie in [0, 1], got {p}')
    argument = 1 - math.exp(-params.eta) * math.expm1(params.eta * (1 - p))
    return min(1.0, max(0.0, dist.evaluate(argument)))


def run_de(cfg: DEParams) -> DETrace:
    """Iterates f from p0 until successive values differ by less than 1e-12 or j_max steps have run"""
    trajectory = [cfg.p0]
    p = cfg.p0
    for _ in range(cfg.j_max):
        following = de_step(p, cfg.dist, cfg.params)
        trajectory.append(following)
        if abs(following - p) < CONVERGENCE_TOL:
            break
        p = following
    else:
        logger.warning(f'Density evolution did not settle within {cfg.j_max} iterations (p={p:.3e})')

    trajectory = np.array(trajectory)
    p_limit = float(trajectory[-1])
    reached = np.nonzero(trajectory <= p_limit + cfg.eps1)[0]
    return DETrace(trajectory, int(reached[0]) if reached.size else None, p_limit)


def iterations_to_reach(trace: DETrace, level: float) -> Optional[int]:
    """First iteration j with p_j <= [level], or None when the trajectory stays above it"""
    reached = np.nonzero(trace.trajectory <= level)[0]
    return int(reached[0]) if reached.size else None


def fixed_points(dist: LeftEdgeDistribution, params: GraphParams) -> Result[Tuple[float, float], str]:
    """
    The two fixed points of f: 1 and the escape point x2 in (0, 1), found by bisection of f(x) - x on
    [0, 1 - 1e-9]. Returns Err when f'(1) <= 1, since then the coloring cannot leave 1.
    """
    margin = stability_margin(dist, params)
    if margin <= 1:
        return Err(f"no escape fixed point: f'(1) = {margin:.4f} <= 1")

    def gap(x: float) -> float:
        return de_step(x, dist, params) - x

    upper = 1 - _BRACKET_GAP
    if gap(upper) >= 0:
        return Err(f"no escape fixed point: f(x) >= x just below 1 (f'(1) = {margin:.4f})")
    x2 = optimize.bisect(gap, 0.0, upper, xtol=1e-15)
    return Ok((1.0, float(x2)))


def error_floor_bound(dist: LeftEdgeDistribution, params: GraphParams) -> float:
    """sum over i of lambda_i e^{-eta (i - 1)}, i.e. lambda(e^{-eta})"""
    return dist.evaluate(params.rho1)
