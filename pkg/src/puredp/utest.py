"""Private uniformity testing from per-category noisy counts.

Every user one-hot encodes their category and runs the binary sum
randomizer (``g = 1``) on each coordinate. The analyzer decodes a noisy count
per category, forms the centred chi-squared statistic ``Z'`` and compares it
to a threshold ``ell``. The final tester first coarsens ``[d]`` into ``dhat``
equal groups drawn from public randomness.

Categories are 1-based throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, Optional

import numpy as np

from . import dist
from .dist import Pmf
from .errors import ParameterError
from .model import MessageBatch, ideal_aggregator
from .rng import Rng
from .summation import SumParams, randomize_many, select_params_sum

UNIFORM = "uniform"
NOT_UNIFORM = "not-uniform"

# verdict-probability gap of the preliminary tester
GAP_LOW = 2 / 27
GAP_HIGH = 71 / 162
AMPLIFY_THRESHOLD = (GAP_LOW + GAP_HIGH) / 2

COMPRESSION_RATE = 1 / 954
PUBLIC_TAG = 2**31 - 1


def _check_unit_open(name: str, v: float) -> None:
    if not 0 < v < 1:
        raise ParameterError(f"{name} must lie in (0, 1), got {v!r}")


def _check_eps(eps: float) -> None:
    if not 0 < eps <= 1:
        raise ParameterError(f"eps must lie in (0, 1], got {eps!r}")


def _check_d(d: int) -> None:
    if int(d) != d or d < 2:
        raise ParameterError(f"d must be an integer >= 2, got {d!r}")


def compute_N_star(d: int, alpha: float, eps: float, kappa: float = 1.0) -> float:
    """Sample size at which the preliminary tester's verdict gap is guaranteed."""
    _check_d(d)
    _check_unit_open("alpha", alpha)
    _check_eps(eps)
    if not kappa > 0:
        raise ParameterError("kappa must be positive")
    e = math.exp(eps)
    return (kappa * math.sqrt(d) / alpha ** 2
            + 174 * d ** 0.75 * e / (alpha * (e - 1))
            + 261 * d ** (2 / 3) * math.exp(2 * eps / 3) / (alpha ** (4 / 3) * (e - 1) ** (2 / 3)))


def min_tau_for_moments(lam: float) -> int:
    """Smallest integer ``tau`` with ``tau > ln 10 / ln(1/lam) - 1``."""
    return math.floor(math.log(10) / math.log(1 / lam) - 1) + 1


@lru_cache(maxsize=64)
def _dlap_trunc(tau: int, lam: float) -> Pmf:
    return dist.pmf_dlap_trunc(tau, 0, lam)


@lru_cache(maxsize=64)
def _dlap_trunc_pair(tau: int, lam: float) -> Pmf:
    core = _dlap_trunc(tau, lam)
    return dist.convolve(core, core)


def ell_value(d: int, alpha: float, lam: float, tau: int, N: float) -> float:
    """Acceptance threshold for ``Z'`` with exact moments of the truncated noise."""
    if not N > 0:
        raise ParameterError("N must be positive")
    core = _dlap_trunc(int(tau), float(lam))
    m1, m2 = dist.moment(core, 1), dist.moment(core, 2)
    slack = (alpha ** 2 * N / math.sqrt(500000)
             + 7 * d / (math.sqrt(N) * (1 - lam))
             + 25 * d ** 1.5 / (N * (1 - lam) ** 2))
    return alpha ** 2 * N / 500 + 4 * d * d / N * m2 - 2 * d * d / N * m1 + 9 * slack


@dataclass(frozen=True)
class UTestParams:
    d: int
    alpha: float
    eps: float
    kappa: float
    N: float
    lam: float
    q: float
    g: int
    tau: int
    m: int
    n_surrogate: int
    ell: float
    N_star: float

    @property
    def sum_params(self) -> SumParams:
        """Per-coordinate sum parameters; decoding wraps above ``n_surrogate + 2 tau``."""
        return SumParams(self.eps, self.q, self.n_surrogate, self.g, self.tau, self.m, self.lam)

    @property
    def n_expected(self) -> int:
        return max(1, round(self.N))


def select_params_ut(d: int, alpha: float, eps: float, kappa: float = 1.0,
                     N: Optional[float] = None, cap_N: Optional[float] = None) -> UTestParams:
    """Tester parameters; ``N`` defaults to ``N*``, optionally capped at ``cap_N``.

    ``tau`` and ``m`` follow the binary sum rule with ``2 ceil(N)`` standing in
    for the unknown Poisson sample size.
    """
    _check_d(d)
    N_star = compute_N_star(d, alpha, eps, kappa)
    if N is None:
        N = N_star if cap_N is None else min(N_star, cap_N)
    if not N > 0:
        raise ParameterError(f"N must be positive, got {N!r}")
    q = 1 / (484 * d)
    n_sur = 2 * math.ceil(N)
    base = select_params_sum(eps, q, n_sur, g=1)
    tau = max(base.tau, min_tau_for_moments(base.lam))
    m = n_sur + 4 * tau
    ell = ell_value(d, alpha, base.lam, tau, N)
    return UTestParams(int(d), alpha, eps, kappa, float(N), base.lam, q, 1, tau, m, n_sur, ell, N_star)


def compute_ell(params: UTestParams, N: Optional[float] = None) -> float:
    return ell_value(params.d, params.alpha, params.lam, params.tau, params.N if N is None else N)


def compute_Z_prime(counts, N: float, d: int) -> float:
    c = np.asarray(counts, dtype=np.float64)
    if c.shape != (d,):
        raise ParameterError(f"expected {d} counts, got shape {c.shape}")
    if not N > 0:
        raise ParameterError("N must be positive")
    return float(d / N * np.sum((c - N / d) ** 2 - c))


def verdict_for(z: float, ell: float) -> str:
    return UNIFORM if z <= ell else NOT_UNIFORM


def _check_categories(xs, d: int) -> np.ndarray:
    a = np.asarray(xs, dtype=np.int64).ravel()
    if a.size and (a.min() < 1 or a.max() > d):
        raise ParameterError(f"categories must lie in [1, {d}]")
    return a


def one_hot(xs, d: int) -> np.ndarray:
    a = _check_categories(xs, d)
    out = np.zeros((a.size, d), dtype=np.int64)
    out[np.arange(a.size), a - 1] = 1
    return out


def ut_randomize_many(xs, params: UTestParams, rng: Rng, n: Optional[int] = None) -> np.ndarray:
    """One row of ``d`` residues per user; the Polya shape uses ``n`` (default: ``len(xs)``)."""
    hot = one_hot(xs, params.d)
    if hot.shape[0] == 0:
        return hot
    n = hot.shape[0] if n is None else n
    return randomize_many(hot.astype(np.float64), params.sum_params, rng, g=1, n=n)


def ut_randomizer(x: int, params: UTestParams, rng: Rng, n: Optional[int] = None) -> np.ndarray:
    """A single user's ``d`` residues; ``n`` is the number of participating users."""
    return ut_randomize_many([x], params, rng, n=params.n_expected if n is None else n)[0]


def ut_decode(agg_output, params: UTestParams, rng: Optional[Rng] = None) -> np.ndarray:
    """Noisy per-category counts; ``None`` or an empty output means no user reported."""
    if agg_output is None or np.size(agg_output) == 0:
        if rng is None:
            raise ParameterError("an Rng is needed to draw counts when no messages arrived")
        return dist.sample(_dlap_trunc_pair(params.tau, params.lam), rng, params.d).astype(np.float64)
    y = np.asarray(agg_output, dtype=np.int64).ravel()
    if y.shape != (params.d,):
        raise ParameterError(f"expected {params.d} aggregates, got {y.size}")
    if y.min() < 0 or y.max() >= params.m:
        raise ParameterError(f"aggregates must lie in [0, {params.m})")
    wrap = params.sum_params.wrap_threshold
    return np.where(y > wrap, y - params.m, y).astype(np.float64)


def ut_analyzer(agg_output, params: UTestParams, N: Optional[float] = None,
                rng: Optional[Rng] = None) -> str:
    counts = ut_decode(agg_output, params, rng)
    N = params.N if N is None else N
    z = compute_Z_prime(counts, N, params.d)
    return verdict_for(z, compute_ell(params, N))


def select_dhat(d: int, eps: float, alpha: float) -> int:
    """Coarsened universe size, moved to the nearest divisor of ``d`` in ``[2, d]`` (ties go down)."""
    _check_d(d)
    raw = d ** (2 / 3) * eps ** (4 / 3) / alpha ** (4 / 3)
    target = min(max(raw, 2.0), float(d))
    divisors = [k for k in range(2, d + 1) if d % k == 0]
    return min(divisors, key=lambda k: (abs(k - target), k))


def alpha_hat(d: int, dhat: int, alpha: float) -> float:
    """Accuracy the coarsened tester must reach."""
    return alpha * math.sqrt(dhat) / (477 * math.sqrt(10 * d))


@dataclass(frozen=True)
class Partition:
    """``dhat`` disjoint equal-size groups covering ``[d]``."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        flat = [j for g in self.groups for j in g]
        d = len(flat)
        if not self.groups or sorted(flat) != list(range(1, d + 1)):
            raise ParameterError("groups must be disjoint and cover [1, d]")
        if len({len(g) for g in self.groups}) != 1:
            raise ParameterError("groups must have equal size")

    @property
    def d(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def dhat(self) -> int:
        return len(self.groups)

    @property
    def labels(self) -> np.ndarray:
        """``labels[j - 1]`` is the 1-based group holding category ``j``."""
        out = np.empty(self.d, dtype=np.int64)
        for k, g in enumerate(self.groups, start=1):
            out[np.asarray(g) - 1] = k
        return out


def random_partition(d: int, dhat: int, rng: Rng) -> Partition:
    _check_d(d)
    if not 2 <= dhat <= d or d % dhat:
        raise ParameterError(f"dhat={dhat!r} must be a divisor of d={d} in [2, d]")
    perm = rng.gen.permutation(d) + 1
    size = d // dhat
    return Partition(tuple(tuple(sorted(int(j) for j in perm[k * size:(k + 1) * size]))
                           for k in range(dhat)))


def public_partition(d: int, dhat: int, seed: int, trial: int = 0) -> Partition:
    """Partition drawn from the public randomness of ``(seed, trial)``."""
    return random_partition(d, dhat, Rng(seed, trial).child(PUBLIC_TAG))


def coarsen(j, partition: Partition):
    labels = partition.labels
    a = _check_categories(j, partition.d)
    out = labels[a - 1]
    return int(out[0]) if np.ndim(j) == 0 else out


def pushforward(pmf: Pmf, partition: Partition) -> Pmf:
    """Law of the group index when the category is drawn from ``pmf``."""
    probs = pmf.on(1, partition.d)
    if pmf.lo < 1 or pmf.hi > partition.d:
        raise ParameterError("pmf support must lie in [1, d]")
    return Pmf(1, np.bincount(partition.labels - 1, weights=probs, minlength=partition.dhat))


def uniform_pmf(d: int) -> Pmf:
    _check_d(d)
    return Pmf(1, np.full(d, 1 / d))


def half_bump(d: int, alpha: float) -> Pmf:
    """``(1 + 2 alpha)/d`` on the first half of ``[d]`` and ``(1 - 2 alpha)/d`` on the rest.

    Its total variation distance from uniform is exactly ``alpha``.
    """
    _check_d(d)
    if d % 2:
        raise ParameterError("the half-bump needs even d")
    if not 0 < alpha <= 0.5:
        raise ParameterError("alpha must lie in (0, 1/2]")
    half = d // 2
    return Pmf(1, np.r_[np.full(half, (1 + 2 * alpha) / d), np.full(half, (1 - 2 * alpha) / d)])


def sample_dataset(pmf: Pmf, N: float, rng: Rng, d: Optional[int] = None) -> np.ndarray:
    """``n ~ Pois(N)`` i.i.d. categories from ``pmf``."""
    if pmf.lo < 1 or (d is not None and pmf.hi > d):
        raise ParameterError("pmf support must lie in [1, d]")
    if N < 0:
        raise ParameterError("N must be non-negative")
    n = int(rng.gen.poisson(N))
    return dist.sample(pmf, rng, n)


@dataclass(frozen=True)
class FinalParams:
    d: int
    dhat: int
    inner: UTestParams


def select_params_final(d: int, alpha: float, eps: float, kappa: float = 1.0,
                        N: Optional[float] = None, cap_N: Optional[float] = None) -> FinalParams:
    """Coarsened tester: universe ``dhat`` at accuracy ``alpha_hat``."""
    _check_unit_open("alpha", alpha)
    dhat = select_dhat(d, eps, alpha)
    inner = select_params_ut(dhat, alpha_hat(d, dhat, alpha), eps, kappa, N, cap_N)
    return FinalParams(int(d), dhat, inner)


def ut_final_randomizer(x: int, partition: Partition, params: UTestParams, rng: Rng,
                        n: Optional[int] = None) -> np.ndarray:
    if partition.dhat != params.d:
        raise ParameterError("partition size does not match the coarsened universe")
    return ut_randomizer(coarsen(x, partition), params, rng, n)


def ut_final_analyzer(agg_output, params: UTestParams, N: Optional[float] = None,
                      rng: Optional[Rng] = None) -> str:
    return ut_analyzer(agg_output, params, N, rng)


@dataclass(frozen=True)
class TrialOutcome:
    n: int
    Z_prime: float
    ell: float
    verdict: str


def run_trial(params: UTestParams, pmf: Pmf, rng: Rng, intermediary=ideal_aggregator,
              partition: Optional[Partition] = None) -> TrialOutcome:
    """Draw a Poisson dataset, run every user's randomizer, aggregate and decide.

    With ``partition`` the data lives on ``[partition.d]`` and is coarsened
    before randomization.
    """
    xs = sample_dataset(pmf, params.N, rng.child(0))
    if partition is not None:
        xs = coarsen(xs, partition) if xs.size else xs
    if xs.size == 0:
        out = None
    else:
        rows = ut_randomize_many(xs, params, rng.child(1))
        out = intermediary(MessageBatch(rows, params.m), rng.child(2))
    counts = ut_decode(out, params, rng.child(3))
    z = compute_Z_prime(counts, params.N, params.d)
    return TrialOutcome(int(xs.size), z, params.ell, verdict_for(z, params.ell))


def experiment(params: UTestParams, pmf: Pmf, trials: int, seed: int,
               intermediary=ideal_aggregator, *, final_d: Optional[int] = None,
               stream_base: int = 0) -> Iterator[dict]:
    """One record per trial. ``final_d`` switches to the coarsened tester over ``[final_d]``."""
    for trial in range(trials):
        stream = stream_base + trial
        partition = public_partition(final_d, params.d, seed, stream) if final_d else None
        o = run_trial(params, pmf, Rng(seed, stream), intermediary, partition)
        yield {"trial": stream, "n": o.n, "Z_prime": o.Z_prime, "ell": o.ell, "verdict": o.verdict}


def amplify(tester: Callable[[int], str], reps: int,
            threshold_frac: float = AMPLIFY_THRESHOLD) -> str:
    """Majority-style boosting: ``tester(k)`` must run on fresh samples for each ``k``."""
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    _check_unit_open("threshold_frac", threshold_frac)
    rejections = sum(tester(k) == NOT_UNIFORM for k in range(reps))
    return NOT_UNIFORM if rejections / reps > threshold_frac else UNIFORM


def compression_success_rate(pmf: Pmf, d: int, dhat: int, partitions: int, seed: int) -> float:
    """Fraction of random partitions that keep at least the guaranteed share of the distance to uniform."""
    base = dist.sd_distance(pmf, uniform_pmf(d))
    need = math.sqrt(dhat) / (477 * math.sqrt(10 * d)) * base
    target = uniform_pmf(dhat)
    hits = 0
    for k in range(partitions):
        part = random_partition(d, dhat, Rng(seed, k))
        hits += dist.sd_distance(pushforward(pmf, part), target) >= need
    return hits / partitions


def cross_term_samples(d: int, N: float, lam: float, tau: int, trials: int, rng: Rng) -> np.ndarray:
    """Draws of ``(2d/N) sum_j (eta+_j + eta-_j)(c_j - N/d)`` on Poissonized uniform data."""
    core = _dlap_trunc(int(tau), float(lam))
    counts = rng.gen.poisson(N / d, size=(trials, d))
    noise = dist.sample(core, rng, (trials, d)) + dist.sample(core, rng, (trials, d))
    return 2 * d / N * np.sum(noise * (counts - N / d), axis=1)


def noise_variance_terms(d: int, N: float, lam: float, tau: int) -> list[tuple[str, float, float]]:
    """``(name, exact variance, bound)`` for the three noise-only terms of ``Z'``."""
    core = _dlap_trunc(int(tau), float(lam))
    m2, m4 = dist.moment(core, 2), dist.moment(core, 4)
    var = dist.variance(core)
    k = d ** 3 / N ** 2
    return [
        ("squares", 2 * k * (m4 - m2 * m2), 120 * k / (1 - lam) ** 4),
        ("products", 4 * k * var * var, 100 * k / (1 - lam) ** 4),
        ("linear", 2 * k * var, 10 * k / (1 - lam) ** 2),
    ]

