import json
import math
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import stats

from phasecode import logger
from phasecode.sparse_signal import RngSeed, SeedPurpose, fork_rng

DEFAULT_D_MAX = 10 ** 6

# Polynomials of degree up to D are evaluated in blocks of this many coefficients, highest block first, so memory
# stays bounded for the very large D returned by select_d.
_HORNER_BLOCK = 1 << 16


def harmonic_number(count: int) -> float:
    """h(count) = 1 + 1/2 + ... + 1/count"""
    if count <= 0:
        return 0.0
    return float(np.sum(1.0 / np.arange(1, count + 1, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class LeftEdgeDistribution:
    """
    Truncated harmonic left-degree distribution from the edge perspective: lambda_i = 1 / ((i - 1) h(D - 1)) for
    2 <= i <= D. [lam][i - 2] holds lambda_i.
    """
    d: int
    hd1: float
    lam: np.ndarray

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(2, self.d + 1)

    @property
    def node_distribution(self) -> np.ndarray:
        """Node-perspective probabilities Lambda_i proportional to lambda_i / i, aligned with [degrees]"""
        weights = self.lam / self.degrees
        return weights / weights.sum()

    @property
    def mean_node_degree(self) -> float:
        """d-bar = 1 / sum(lambda_i / i)"""
        return float(1.0 / np.sum(self.lam / self.degrees))

    def derivative_at_one(self) -> float:
        """lambda'(1) = sum lambda_i (i - 1)"""
        return float(np.sum(self.lam * (self.degrees - 1)))

    def evaluate(self, x: float) -> float:
        """
        lambda(x) = sum lambda_i x^(i-1), by Horner's rule over blocks of coefficients. Each block is a polynomial in x
        evaluated with vectorized powers; blocks are folded from the highest degree down as
        acc <- acc * x^block_len + block(x).
        """
        if x == 1.0:
            return 1.0
        coefficients = self.lam  # lam[j] multiplies x^(j+1)
        acc = 0.0
        for start in range(((coefficients.size - 1) // _HORNER_BLOCK) * _HORNER_BLOCK, -1, -_HORNER_BLOCK):
            block = coefficients[start:start + _HORNER_BLOCK]
            powers = np.power(x, np.arange(block.size, dtype=np.float64))
            acc = acc * x ** block.size + float(np.dot(block, powers))
        return acc * x


def harmonic_lambda(d: int) -> LeftEdgeDistribution:
    if d < 2:
        raise ValueError(f'Degree cap D must be at least 2, got {d}')
    hd1 = harmonic_number(d - 1)
    lam = 1.0 / (np.arange(1, d, dtype=np.float64) * hd1)
    lam.setflags(write=False)
    return LeftEdgeDistribution(d, hd1, lam)


@dataclass(frozen=True)
class GraphParams:
    """Design parameters of the code graph for sparsity [k]: M bins, capacity gap eps, d-bar and eta = K d-bar / M"""
    k: int
    d: int
    eps: float
    m: int
    dbar: float
    eta: float

    @staticmethod
    def design(k: int, eps: float, dist: LeftEdgeDistribution) -> 'GraphParams':
        """Uses M = ceil(K / (1 - eps)) bins"""
        if k < 1:
            raise ValueError(f'Sparsity must be positive, got K={k}')
        if not 0 < eps < 1:
            raise ValueError(f'Capacity gap must satisfy 0 < eps < 1, got {eps}')
        m = math.ceil(k / (1 - eps) - 1e-9)
        return GraphParams._build(k, eps, m, dist)

    @staticmethod
    def from_ratio(k: int, ratio: float, dist: LeftEdgeDistribution) -> 'GraphParams':
        """Uses M = ceil(ratio * K) bins, i.e. eps = 1 - 1/ratio"""
        if k < 1:
            raise ValueError(f'Sparsity must be positive, got K={k}')
        if ratio <= 1:
            raise ValueError(f'Bins per ball M/K must exceed 1, got {ratio}')
        m = math.ceil(ratio * k - 1e-9)
        return GraphParams._build(k, 1 - 1 / ratio, m, dist)

    @staticmethod
    def _build(k: int, eps: float, m: int, dist: LeftEdgeDistribution) -> 'GraphParams':
        dbar = dist.mean_node_degree
        return GraphParams(k=k, d=dist.d, eps=eps, m=m, dbar=dbar, eta=k * dbar / m)

    @property
    def rho1(self) -> float:
        return math.exp(-self.eta)


def select_d(eps: float, p_star: float, d_max: int = DEFAULT_D_MAX) -> int:
    """
    Degree cap large enough for both stability (f'(1) > 1) and an error floor of at most [p_star]:
    D = ceil(max{(e / (1 - eps))^(2 / eps), (1 + 1 / p_star)^(1 / (1 - eps))}).

    The bound is very conservative, so the result is capped at [d_max] with a warning.
    """
    if not 0 < eps < 1:
        raise ValueError(f'Capacity gap must satisfy 0 < eps < 1, got {eps}')
    if not 0 < p_star < 1:
        raise ValueError(f'Target error floor must satisfy 0 < p* < 1, got {p_star}')

    log_stability = (2 / eps) * (1 - math.log1p(-eps))
    log_floor = math.log1p(1 / p_star) / (1 - eps)
    log_d = max(log_stability, log_floor)
    if log_d >= math.log(d_max):
        logger.warning(f'Degree cap for eps={eps}, p*={p_star} is exp({log_d:.2f}); capping at D={d_max}')
        return d_max
    return max(2, math.ceil(math.exp(log_d)))


def stability_margin(dist: LeftEdgeDistribution, params: GraphParams) -> float:
    """f'(1) = eta e^(-eta) lambda'(1). Values above 1 let the coloring escape the fixed point at 1"""
    _check_same_d(dist, params)
    return params.eta * math.exp(-params.eta) * dist.derivative_at_one()


def _check_same_d(dist: LeftEdgeDistribution, params: GraphParams) -> None:
    if dist.d != params.d:
        raise ValueError(f'Distribution has D={dist.d} but the graph parameters were designed for D={params.d}')


@dataclass(frozen=True, eq=False)
class CodeGraph:
    """
    Bipartite graph between [n] left nodes (signal indices 1..n) and [m] bins (0..m-1), stored as two CSR maps.
    Left node l owns left_bins[left_ptr[l-1]:left_ptr[l]] (sorted); bin i owns right_nodes[right_ptr[i]:right_ptr[i+1]]
    (sorted, 1-based).
    """
    n: int
    m: int
    left_ptr: np.ndarray
    left_bins: np.ndarray
    right_ptr: np.ndarray
    right_nodes: np.ndarray

    @staticmethod
    def from_edges(n: int, m: int, owners: np.ndarray, bins: np.ndarray) -> 'CodeGraph':
        """Builds the graph from parallel arrays of 0-based left nodes and bins"""
        order = np.lexsort((bins, owners))
        left_bins = bins[order].astype(np.int64)
        left_ptr = np.concatenate(([0], np.cumsum(np.bincount(owners, minlength=n)))).astype(np.int64)

        order = np.lexsort((owners, bins))
        right_nodes = owners[order].astype(np.int64) + 1
        right_ptr = np.concatenate(([0], np.cumsum(np.bincount(bins, minlength=m)))).astype(np.int64)
        for array in (left_ptr, left_bins, right_ptr, right_nodes):
            array.setflags(write=False)
        return CodeGraph(n, m, left_ptr, left_bins, right_ptr, right_nodes)

    @property
    def num_edges(self) -> int:
        return int(self.left_bins.size)

    def bins_of(self, index: int) -> np.ndarray:
        return self.left_bins[self.left_ptr[index - 1]:self.left_ptr[index]]

    def members_of(self, bin_index: int) -> np.ndarray:
        return self.right_nodes[self.right_ptr[bin_index]:self.right_ptr[bin_index + 1]]

    def left_degrees(self) -> np.ndarray:
        return np.diff(self.left_ptr)

    def right_degrees(self) -> np.ndarray:
        return np.diff(self.right_ptr)

    def edges_of(self, indices: np.ndarray):
        """Returns parallel arrays (left node, bin) of every edge leaving the 1-based [indices]"""
        indices = np.asarray(indices, dtype=np.int64)
        starts = self.left_ptr[indices - 1]
        counts = self.left_ptr[indices] - starts
        owners = np.repeat(indices, counts)
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        return owners, self.left_bins[np.repeat(starts, counts) + offsets]

    def active_bin_degrees(self, indices: np.ndarray) -> np.ndarray:
        """Number of neighbours among [indices] for every bin"""
        _, bins = self.edges_of(indices)
        return np.bincount(bins, minlength=self.m)

    def is_consistent(self) -> bool:
        """Checks that the two adjacency maps describe the same duplicate-free edge set"""
        owners = np.repeat(np.arange(1, self.n + 1), self.left_degrees())
        forward = np.stack((owners, self.left_bins))
        bins = np.repeat(np.arange(self.m), self.right_degrees())
        backward = np.stack((self.right_nodes, bins))
        forward = forward[:, np.lexsort(forward[::-1])]
        backward = backward[:, np.lexsort(backward[::-1])]
        if forward.shape != backward.shape or not np.array_equal(forward, backward):
            return False
        same = (forward[0, 1:] == forward[0, :-1]) & (forward[1, 1:] == forward[1, :-1])
        return not np.any(same)

    def to_json(self) -> dict:
        return {
            'n': self.n,
            'M': self.m,
            'left_adj': [self.bins_of(index).tolist() for index in range(1, self.n + 1)],
        }

    @staticmethod
    def from_json(data: dict) -> 'CodeGraph':
        n, m = int(data['n']), int(data['M'])
        adjacency: List[List[int]] = data['left_adj']
        if len(adjacency) != n:
            raise ValueError(f'Expected {n} adjacency lists, got {len(adjacency)}')
        counts = np.array([len(a) for a in adjacency], dtype=np.int64)
        owners = np.repeat(np.arange(n), counts)
        bins = np.array([b for a in adjacency for b in a], dtype=np.int64)
        return CodeGraph.from_edges(n, m, owners, bins)


def write_graph(graph: CodeGraph, path: str) -> None:
    with open(path, 'wt') as file:
        json.dump(graph.to_json(), file)


def read_graph(path: str) -> CodeGraph:
    with open(path, 'rt') as file:
        return CodeGraph.from_json(json.load(file))


def _place_edges(rng: np.random.Generator, degrees: np.ndarray, m: int) -> CodeGraph:
    """Connects node j to degrees[j] distinct uniform bins. Colliding edges are redrawn until none remain"""
    n = degrees.size
    owners = np.repeat(np.arange(n, dtype=np.int64), degrees)
    bins = rng.integers(0, m, size=owners.size)
    while True:
        order = np.lexsort((bins, owners))
        sorted_owners, sorted_bins = owners[order], bins[order]
        repeated = (sorted_owners[1:] == sorted_owners[:-1]) & (sorted_bins[1:] == sorted_bins[:-1])
        if not repeated.any():
            break
        redraw = order[1:][repeated]
        bins[redraw] = rng.integers(0, m, size=redraw.size)
    return CodeGraph.from_edges(n, m, owners, bins)


def sample_graph(n: int, dist: LeftEdgeDistribution, params: GraphParams, seed: RngSeed) -> CodeGraph:
    """
    Samples H: every one of the [n] left nodes (active or not) draws a degree from the node-perspective distribution
    and connects to that many distinct bins chosen uniformly among the M bins.
    """
    _check_same_d(dist, params)
    if params.m < dist.d:
        raise ValueError(f'Cannot place {dist.d} distinct edges into M={params.m} bins')
    if n < dist.d:
        raise ValueError(f'Signal length n={n} must be at least D={dist.d}')

    rng = fork_rng(seed, SeedPurpose.Graph)
    degrees = rng.choice(dist.degrees, size=n, p=dist.node_distribution)
    graph = _place_edges(rng, degrees, params.m)
    logger.debug(f'Sampled graph n={n} M={params.m} edges={graph.num_edges} '
                 f'(mean degree {graph.num_edges / n:.3f}, d-bar {params.dbar:.3f})')
    return graph


def sample_regular_graph(n: int, m: int, degree: int, seed: RngSeed,
                         purpose: SeedPurpose = SeedPurpose.Graph) -> CodeGraph:
    """Left-regular graph: every left node connects to [degree] distinct uniform bins"""
    if degree < 1 or degree > m:
        raise ValueError(f'Left degree must lie in 1..{m}, got {degree}')
    rng = fork_rng(seed, purpose)
    return _place_edges(rng, np.full(n, degree, dtype=np.int64), m)


@dataclass
class PoissonFit:
    eta_hat: float
    statistic: float
    p_value: float
    categories: int


def bin_degree_fit(graph: CodeGraph, active: np.ndarray) -> PoissonFit:
    """
    Chi-square goodness of fit of the bin degrees restricted to the [active] left nodes against Poisson(eta-hat),
    eta-hat being the realized mean. Adjacent degree classes are pooled until each expects at least 5 bins.
    """
    counts = graph.active_bin_degrees(active)
    eta_hat = float(counts.mean())
    kmax = max(int(counts.max()), int(eta_hat + 10 * math.sqrt(eta_hat)) + 1)
    observed = np.bincount(counts, minlength=kmax + 1).astype(np.float64)
    expected = graph.m * stats.poisson.pmf(np.arange(kmax + 1), eta_hat)
    expected[-1] += graph.m * stats.poisson.sf(kmax, eta_hat)

    pooled_obs: List[float] = []
    pooled_exp: List[float] = []
    acc_obs = acc_exp = 0.0
    for obs, exp in zip(observed, expected):
        acc_obs += obs
        acc_exp += exp
        if acc_exp >= 5:
            pooled_obs.append(acc_obs)
            pooled_exp.append(acc_exp)
            acc_obs = acc_exp = 0.0
    if pooled_exp:
        pooled_obs[-1] += acc_obs
        pooled_exp[-1] += acc_exp
    else:
        pooled_obs, pooled_exp = [acc_obs], [acc_exp]

    if len(pooled_exp) < 3:
        return PoissonFit(eta_hat, 0.0, 1.0, len(pooled_exp))
    statistic, p_value = stats.chisquare(pooled_obs, pooled_exp, ddof=1)
    return PoissonFit(eta_hat, float(statistic), float(p_value), len(pooled_exp))
