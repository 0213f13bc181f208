"""Private sums of values in ``[0, 1]`` over a (relaxed) mod-``m`` aggregator.

Users round ``x * g`` randomly to an integer, add the difference of two
Polya(2/n, lam) draws and reduce mod ``m``. Any ``n/2`` honest users
together contribute a full discrete Laplace sample, which is what makes the
sum private. The analyzer undoes the wraparound of slightly negative totals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import dist
from .dist import Pmf, PolyaCdf
from .errors import ParameterError
from .model import Attack, MessageBatch, Protocol, execute, ideal_aggregator
from .rng import Rng


@dataclass(frozen=True)
class SumParams:
    eps: float
    q: float
    n: int
    g: int
    tau: int
    m: int
    lam: float

    @property
    def wrap_threshold(self) -> int:
        """Outputs above this are read as negative totals."""
        return self.n * self.g + 2 * self.tau

    @property
    def error_bound(self) -> float:
        """Rounding plus noise error bound that holds with probability ``>= 1 - (q_hat + 3q)``."""
        return 2 * self.tau / self.g + math.sqrt(math.log(2 / self.q)) / self.eps


def select_params_sum(eps: float, q: float, n: int, g: Optional[int] = None) -> SumParams:
    """``g = ceil(eps sqrt(n))``, ``tau = ceil((g/eps) ln(2/q))``, ``m = n g + 4 tau``, ``lam = exp(-eps/g)``.

    Passing ``g`` overrides the encoding scale (``g = 1`` for binary data)
    while the other fields follow the same rules.
    """
    if not 0 < eps <= 1:
        raise ParameterError(f"eps must lie in (0, 1], got {eps!r}")
    if not 0 < q < 1:
        raise ParameterError(f"q must lie in (0, 1), got {q!r}")
    if int(n) != n or n < 2 or n % 2:
        raise ParameterError(f"n must be an even integer >= 2, got {n!r}")
    n = int(n)
    if g is None:
        g = math.ceil(eps * math.sqrt(n))
    elif int(g) != g or g < 1:
        raise ParameterError(f"g must be a positive integer, got {g!r}")
    g = int(g)
    tau = math.ceil(g / eps * math.log(2 / q))
    m = n * g + 4 * tau
    return SumParams(eps, q, n, g, tau, m, math.exp(-eps / g))


def _check_unit_interval(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.size and (np.any(a < 0) or np.any(a > 1) or not np.all(np.isfinite(a))):
        raise ParameterError("inputs must lie in [0, 1]")
    return a


def encode_round(x, g: int, rng: Rng):
    """``floor(x g) + Ber(frac(x g))``, unbiased for ``x g``."""
    a = _check_unit_interval(x)
    scaled = a * g
    base = np.floor(scaled)
    frac = scaled - base
    out = base.astype(np.int64) + (rng.random(a.shape) < frac)
    return int(out) if np.ndim(x) == 0 else out


def _noise_pairs(size: int, shape: float, lam: float, rng: Rng) -> np.ndarray:
    """``eta+ - eta-`` for ``size`` users, each term Polya(shape, lam)."""
    cdf = PolyaCdf(shape, lam)
    plus = cdf.draw(rng, size)
    minus = cdf.draw(rng, size)
    return plus - minus


def randomize_many(xs, params: SumParams, rng: Rng, *, g: Optional[int] = None,
                   n: Optional[int] = None) -> np.ndarray:
    """Vectorized randomizer: ``(phi + eta+ - eta-) mod m`` for every entry of ``xs``."""
    a = _check_unit_interval(xs)
    g = params.g if g is None else g
    n = params.n if n is None else n
    phi = encode_round(a.ravel(), g, rng)
    noise = _noise_pairs(a.size, 2 / n, params.lam, rng)
    return ((phi + noise) % params.m).reshape(a.shape)


def sum_randomizer(x: float, params: SumParams, rng: Rng) -> int:
    return int(randomize_many(np.array([x]), params, rng)[0])


def sum_analyzer(y: int, params: SumParams) -> float:
    if not 0 <= y < params.m:
        raise ParameterError(f"aggregate {y!r} outside [0, {params.m})")
    if y > params.wrap_threshold:
        return (y - params.m) / params.g
    return y / params.g


def sum_protocol(params: SumParams, intermediary=ideal_aggregator) -> Protocol:
    return Protocol(
        randomizer=lambda x, rng: np.array([[sum_randomizer(x, params, rng)]]),
        intermediary=intermediary,
        analyzer=lambda out: sum_analyzer(int(np.asarray(out).ravel()[0]), params),
        d=1,
        m=params.m,
        randomize_batch=lambda xs, rng: randomize_many(np.asarray(xs, dtype=float), params, rng).reshape(-1, 1),
    )


def run_bounded_sum(inputs: Sequence[float], params: SumParams, rng: Rng,
                    intermediary=ideal_aggregator, attack: Optional[Attack] = None,
                    *, transcript: bool = False):
    """One execution; returns the estimate (and the transcript when asked)."""
    if len(inputs) != params.n:
        raise ParameterError(f"expected {params.n} inputs, got {len(inputs)}")
    tr = execute(sum_protocol(params, intermediary), list(inputs), attack or Attack.none(), rng)
    return (tr.analyzer_output, tr) if transcript else tr.analyzer_output


def central_oracle_H(inputs, g: int, lam: float, rng: Rng, n: Optional[int] = None) -> int:
    """Unreduced noised sum ``sum(phi_i + eta+_i - eta-_i)``; Polya shape is ``2/n``."""
    a = _check_unit_interval(inputs).ravel()
    if a.size == 0:
        return 0
    n = a.size if n is None else n
    phi = encode_round(a, g, rng)
    noise = _noise_pairs(a.size, 2 / n, lam, rng)
    return int(phi.sum() + noise.sum())


def exact_noise_pmf(users: int, n: int, lam: float, tail_cut: float = dist.DEFAULT_TAIL_CUT) -> Pmf:
    """Exact law of ``sum_{i<users} eta+_i - eta-_i`` with Polya(2/n, lam) terms."""
    if users < 1:
        raise ParameterError("need at least one user")
    polya = dist.pmf_polya(2 / n, lam, tail_cut)
    plus = dist.convolve_power(polya, users)
    return dist.convolve(plus, plus.negate())


def exact_pmf_H_binary(bits: Sequence[int], lam: float, n: Optional[int] = None) -> Pmf:
    """Exact law of the central oracle on binary inputs with ``g = 1`` (encodings are exact)."""
    n = len(bits) if n is None else n
    return exact_noise_pmf(len(bits), n, lam).shift(int(sum(bits)))


def llr_on_core(p: Pmf, q: Pmf, mass: float = 1 - 1e-9) -> float:
    """Pointwise LLR restricted to the smallest central window carrying ``mass`` under both."""
    lo, hi = min(p.lo, q.lo), max(p.hi, q.hi)
    a, b = p.on(lo, hi), q.on(lo, hi)
    tail = (1 - mass) / 2
    ca, cb = np.cumsum(a), np.cumsum(b)
    start = max(int(np.searchsorted(ca, tail)), int(np.searchsorted(cb, tail)))
    ra, rb = np.cumsum(a[::-1]), np.cumsum(b[::-1])
    stop = a.size - max(int(np.searchsorted(ra, tail)), int(np.searchsorted(rb, tail)))
    a, b = a[start:stop], b[start:stop]
    if np.any((a == 0) != (b == 0)):
        return math.inf
    live = a > 0
    return float(np.max(np.abs(np.log(a[live]) - np.log(b[live]))))


@dataclass
class NoiseDecomposition:
    tau: int
    lam: float
    q: float
    half_tail_mass: tuple[float, float]
    out_of_range_mass: float
    tv_in_range: float
    passed: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def binary_noise_decomposition_check(params: SumParams, tv_tol: float = 1e-8) -> NoiseDecomposition:
    """Exact check that the two half-population noises are DLap(lam) truncated at ``tau`` w.p. ``>= 1 - 2q``.

    Each half's noise is built by exact convolution of its users' Polya
    differences. Conditioned on both halves lying in ``[-tau, tau]``, the
    total must equal ``DLap_tau * DLap_tau``.
    """
    if params.g != 1:
        raise ParameterError("the binary decomposition needs g = 1")
    half = params.n // 2
    halves = [exact_noise_pmf(half, params.n, params.lam) for _ in range(2)]
    tails, cores = [], []
    for h in halves:
        core = h.on(-params.tau, params.tau)
        tails.append(1.0 - float(core.sum()))
        cores.append(Pmf(-params.tau, core, normalize=True))
    total_in_range = dist.convolve(cores[0], cores[1])
    ref_core = dist.pmf_dlap_trunc(params.tau, 0, params.lam)
    reference = dist.convolve(ref_core, ref_core)
    tv = dist.sd_distance(total_in_range, reference)
    out_mass = 1 - (1 - tails[0]) * (1 - tails[1])
    return NoiseDecomposition(
        tau=params.tau, lam=params.lam, q=params.q,
        half_tail_mass=(tails[0], tails[1]), out_of_range_mass=out_mass,
        tv_in_range=tv, passed=bool(tv <= tv_tol and out_mass <= 2 * params.q),
    )


def dlap_tail_mass(rho: float, tau: int) -> float:
    """Closed-form mass of DLap(rho) outside ``[-tau, tau]``."""
    return 2 * rho ** (tau + 1) / (1 + rho)


def experiment(params: SumParams, trials: int, seed: int,
               intermediary=ideal_aggregator, attack: Optional[Attack] = None,
               inputs_fn: Optional[Callable[[Rng], np.ndarray]] = None,
               stream_base: int = 0):
    """Seeded accuracy trials on i.i.d. uniform inputs; yields one record per trial.

    Trial ``k`` uses ``Rng(seed, stream_base + k)`` and is reported under that index.
    """
    for trial in range(trials):
        rng = Rng(seed, stream_base + trial)
        xs = inputs_fn(rng) if inputs_fn else rng.random(params.n)
        est, tr = run_bounded_sum(xs, params, rng, intermediary, attack, transcript=True)
        attack_users = attack.injections if attack else {}
        true_sum = float(sum(x for i, x in enumerate(xs) if i not in attack_users))
        yield {"trial": stream_base + trial, "true_sum": true_sum, "estimate": float(est),
               "abs_error": abs(float(est) - true_sum)}, tr
