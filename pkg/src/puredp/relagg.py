"""A relaxed mod-``m`` aggregator built from a bit shuffler.

Each user with residue ``x`` sends a binary vector of length ``m t + m - 1``
whose number of ones is drawn from ``(1 - p) D_x + p B``. Shuffling all bits
reveals only the total count of ones, and the count mod ``m`` is the sum of
the inputs mod ``m`` unless some user drew from ``B``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import dist
from .dist import Pmf
from .errors import ParameterError, ResourceError
from .model import Attack, MessageBatch, Protocol, execute, shuffler
from .rng import Rng

EXACT_GUARD = 10**6


def t_lower_bound(m: int, lam: float, p: float) -> float:
    """Smallest admissible ``t`` (real-valued) for the alpha-term bounds."""
    return 3 + 4 / lam + (2 / lam) * math.log(m * m / (lam * p * p))


def t_lower_bound_beta(m: int, lam: float, p: float) -> float:
    """Weaker bound sufficient for the mixed ``D_x * B`` terms."""
    return 3 + 4 / lam + (2 / lam) * math.log(m / (lam * p))


def smallest_odd_at_least(bound: float) -> int:
    t = max(1, math.ceil(bound))
    return t if t % 2 else t + 1


@dataclass(frozen=True)
class RelAggParams:
    m: int
    n: int
    eps_hat: float
    q_hat: float
    lam: float
    p: float
    t: int

    @property
    def msg_len(self) -> int:
        return self.m * self.t + self.m - 1

    def with_p(self, p: float) -> "RelAggParams":
        """Same ``t`` and ``lam`` with a different mixture weight (``p=0`` is the naive randomizer)."""
        return RelAggParams(self.m, self.n, self.eps_hat, self.q_hat, self.lam, p, self.t)

    def composed(self, eps_shuffler: float = 0.0, q_shuffler: float = 0.0) -> tuple[float, float]:
        """Security/failure of the aggregator when the shuffler is itself an (eps, q)-relaxation."""
        return eps_shuffler + self.eps_hat, q_shuffler + self.q_hat


def select_params(m: int, n: int, eps_hat: float, q_hat: float) -> RelAggParams:
    if m < 2 or int(m) != m:
        raise ParameterError("m must be an integer >= 2")
    if n < 1 or int(n) != n:
        raise ParameterError("n must be a positive integer")
    for name, v in (("eps_hat", eps_hat), ("q_hat", q_hat)):
        if not 0 < v < 1:
            raise ParameterError(f"{name} must lie in (0, 1)")
    lam = eps_hat / (4 * n)
    p = q_hat / n
    t = smallest_odd_at_least(t_lower_bound(m, lam, p))
    return RelAggParams(int(m), int(n), eps_hat, q_hat, lam, p, t)


@lru_cache(maxsize=32)
def _d_and_l(t: int, lam: float) -> tuple[Pmf, Pmf]:
    return dist.pmf_D(t, lam), dist.pmf_L(t, lam)


def _check_x(x: int, m: int) -> None:
    if not 0 <= x < m:
        raise ParameterError(f"input {x!r} outside [0, {m})")


def sample_ones_count(xs, params: RelAggParams, rng: Rng, p: Optional[float] = None) -> np.ndarray:
    """Number of ones each user's randomizer would emit, for a vector of residues."""
    xs = np.asarray(xs, dtype=np.int64).ravel()
    if xs.size and (xs.min() < 0 or xs.max() >= params.m):
        raise ParameterError(f"inputs must lie in [0, {params.m})")
    p = params.p if p is None else p
    d_pmf, l_pmf = _d_and_l(params.t, params.lam)
    from_b = rng.random(xs.size) < p
    u_d = dist.sample(d_pmf, rng, xs.size)
    u_l = dist.sample(l_pmf, rng, xs.size)
    res_b = rng.gen.integers(0, params.m, xs.size)
    return np.where(from_b, res_b + u_l * params.m, xs + u_d * params.m)


def _bits_with_count(count: int, length: int, rng: Rng) -> np.ndarray:
    bits = np.zeros(length, dtype=np.int64)
    bits[rng.gen.choice(length, size=count, replace=False)] = 1
    return bits


def randomizer_R(x: int, params: RelAggParams, rng: Rng) -> np.ndarray:
    """Binary vector of length ``msg_len``; ones placed uniformly at random."""
    _check_x(x, params.m)
    count = int(sample_ones_count([x], params, rng)[0])
    return _bits_with_count(count, params.msg_len, rng)


def naive_randomizer_Rbar(x: int, params: RelAggParams, rng: Rng) -> np.ndarray:
    """As :func:`randomizer_R` with the mixture weight forced to zero."""
    return randomizer_R(x, params.with_p(0.0), rng)


def analyzer_post(bits, m: int) -> int:
    """Count of ones mod ``m``."""
    if isinstance(bits, MessageBatch):
        bits = bits.rows
    return int(np.asarray(bits).sum()) % m


def labeled_randomizer(x_vec: Sequence[int], params: RelAggParams, rng: Rng) -> np.ndarray:
    """Rows ``(j, bit)``: one :func:`randomizer_R` output per coordinate, tagged with ``j``."""
    blocks = []
    for j, x in enumerate(x_vec):
        bits = randomizer_R(int(x), params, rng)
        blocks.append(np.column_stack([np.full(bits.size, j, dtype=np.int64), bits]))
    if not blocks:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(blocks)


def labeled_analyzer(rows, m: int, d: int) -> np.ndarray:
    """Per-label count of ones mod ``m``; a missing label counts zero ones."""
    if isinstance(rows, MessageBatch):
        rows = rows.rows
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
    counts = np.bincount(rows[:, 0], weights=rows[:, 1], minlength=d)[:d]
    return counts.astype(np.int64) % m


def shuffle_protocol(params: RelAggParams, *, naive: bool = False) -> Protocol:
    """``S o R^n`` followed by the count-mod-``m`` analyzer, on single-bit rows."""
    rand = naive_randomizer_Rbar if naive else randomizer_R
    return Protocol(
        randomizer=lambda x, rng: rand(x, params, rng),
        intermediary=shuffler,
        analyzer=lambda batch: analyzer_post(batch, params.m),
        d=1,
        m=2,
    )


def labeled_protocol(params: RelAggParams, d: int) -> Protocol:
    return Protocol(
        randomizer=lambda xv, rng: labeled_randomizer(xv, params, rng),
        intermediary=shuffler,
        analyzer=lambda batch: labeled_analyzer(batch, params.m, d),
        d=2,
        m=max(2, d),
    )


class RelaxedAggregator:
    """Intermediary computing coordinatewise sums mod ``m`` through the shuffle construction.

    Each incoming row is treated as one user's residue vector and re-encoded
    with the randomizer. With ``materialize=False`` only the ones count per
    coordinate is sampled, which has the same law as the shuffled bits.
    """

    def __init__(self, params: RelAggParams, *, materialize: bool = False):
        self.params = params
        self.materialize = materialize
        if not materialize:
            _d_and_l(params.t, params.lam)

    def __call__(self, batch: MessageBatch, rng: Rng) -> np.ndarray:
        if batch.m != self.params.m:
            raise ParameterError(f"batch modulus {batch.m} != aggregator modulus {self.params.m}")
        if len(batch) > self.params.n:
            raise ParameterError(f"{len(batch)} rows exceed the {self.params.n} users it was built for")
        d = batch.d
        if len(batch) == 0:
            return np.zeros(d, dtype=np.int64)
        if self.materialize:
            parts = [labeled_randomizer(row, self.params, rng.child(i))
                     for i, row in enumerate(batch.rows)]
            shuffled = shuffler(MessageBatch.concat(parts, 2, max(2, d)), rng.child(len(batch)))
            return labeled_analyzer(shuffled, self.params.m, d)
        counts = sample_ones_count(batch.rows.ravel(), self.params, rng)
        return counts.reshape(batch.rows.shape).sum(axis=0) % self.params.m


def _user_pmf(x: int, params: RelAggParams, p: float) -> Pmf:
    dx = dist.pmf_Dx(x, params.m, params.t, params.lam)
    if p == 0:
        return dx
    b = dist.pmf_B(params.m, params.t, params.lam)
    return dist.mixture([1 - p, p], [dx, b])


def exact_pmf_sum_R(x_vec: Sequence[int], params: RelAggParams, p: Optional[float] = None) -> Pmf:
    """Exact law of the total number of ones emitted by ``len(x_vec)`` randomizers."""
    if not x_vec:
        raise ParameterError("need at least one user")
    if len(x_vec) * params.msg_len > EXACT_GUARD:
        raise ResourceError(f"{len(x_vec)} users x {params.msg_len} bits exceeds {EXACT_GUARD}")
    p = params.p if p is None else p
    for x in x_vec:
        _check_x(x, params.m)
    cache: dict[int, Pmf] = {}
    out = None
    for x in x_vec:
        if x not in cache:
            cache[x] = _user_pmf(int(x), params, p)
        out = cache[x] if out is None else dist.convolve(out, cache[x])
    return out


def exact_llr_pair(x_vec: Sequence[int], x_vec_prime: Sequence[int], params: RelAggParams,
                   p: Optional[float] = None) -> float:
    if len(x_vec) != len(x_vec_prime):
        raise ParameterError("input vectors must have equal length")
    return dist.llr_distance(exact_pmf_sum_R(x_vec, params, p),
                             exact_pmf_sum_R(x_vec_prime, params, p))


def security_pairs(m: int, n: int = 2):
    """All ordered pairs of distinct input vectors with equal sums mod ``m``."""
    inputs = list(itertools.product(range(m), repeat=n))
    for a, b in itertools.combinations(inputs, 2):
        if sum(a) % m == sum(b) % m:
            yield a, b


def worst_pair_llr(params: RelAggParams, n: int = 2) -> tuple[float, tuple, tuple]:
    """Largest exact LLR over all equal-sum input pairs of ``n`` users."""
    pmfs = {x: exact_pmf_sum_R(x, params) for x in itertools.product(range(params.m), repeat=n)}
    worst = (-1.0, (), ())
    for a, b in security_pairs(params.m, n):
        v = dist.llr_distance(pmfs[a], pmfs[b])
        if v > worst[0]:
            worst = (v, a, b)
    return worst


def hybrid_llr(x_vec: Sequence[int], params: RelAggParams) -> float:
    """LLR between the real inputs and ``(sum mod m, 0, ..., 0)``."""
    collapsed = [sum(x_vec) % params.m] + [0] * (len(x_vec) - 1)
    return exact_llr_pair(list(x_vec), collapsed, params)


def corrupt_shift_llr(x_vec, x_vec_prime, injected_ones: int, params: RelAggParams) -> float:
    """Exact LLR after adding a fixed adversarial bit count to both executions."""
    a = exact_pmf_sum_R(x_vec, params).shift(injected_ones)
    b = exact_pmf_sum_R(x_vec_prime, params).shift(injected_ones)
    return dist.llr_distance(a, b)


def miscount_rate(params: RelAggParams, trials: int, seed: int, *, stream_base: int = 0,
                  attack: Optional[Attack] = None) -> float:
    """Fraction of full bit-level executions whose analyzer output differs from the sum mod ``m``.

    Inputs are drawn uniformly per trial from ``Rng(seed, stream_base + trial)``.
    """
    protocol = shuffle_protocol(params)
    attack = attack or Attack.none()
    wrong = 0
    for trial in range(trials):
        rng = Rng(seed, stream_base + trial)
        xs = [int(v) for v in rng.gen.integers(0, params.m, params.n)]
        tr = execute(protocol, xs, attack, rng)
        honest_sum = sum(x for i, x in enumerate(xs) if i not in attack.injections)
        wrong += tr.analyzer_output != honest_sum % params.m
    return wrong / trials
