"""Exact finite-support integer distributions.

A :class:`Pmf` stores probabilities densely on the integer interval
``[offset, offset + len(probs) - 1]``. Interior points may carry zero mass
(e.g. the stride-``m`` support of a residue-class distribution); those are
never reported by :meth:`Pmf.items`, and both endpoints always carry positive
mass, so the reported support is tight.
"""
from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from .errors import ParameterError
from .rng import Rng

NORM_TOL = 1e-9
DEFAULT_TAIL_CUT = 1e-12


class Pmf:
    __slots__ = ("offset", "probs")

    def __init__(self, offset: int, probs, *, normalize: bool = False):
        p = np.asarray(probs, dtype=np.float64).ravel()
        if p.size == 0:
            raise ParameterError("a pmf needs at least one point")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ParameterError("probabilities must be finite and non-negative")
        nz = np.flatnonzero(p)
        if nz.size == 0:
            raise ParameterError("a pmf needs positive total mass")
        lo, hi = int(nz[0]), int(nz[-1])
        p = p[lo:hi + 1].copy()
        total = p.sum()
        if normalize:
            p /= total
        elif abs(total - 1.0) > NORM_TOL:
            raise ParameterError(f"probabilities sum to {total!r}, not 1")
        p.setflags(write=False)
        self.offset = int(offset) + lo
        self.probs = p

    @classmethod
    def from_dict(cls, mapping: dict[int, float], *, normalize: bool = False) -> "Pmf":
        if not mapping:
            raise ParameterError("empty mapping")
        lo, hi = min(mapping), max(mapping)
        probs = np.zeros(hi - lo + 1)
        for v, w in mapping.items():
            probs[v - lo] += w
        return cls(lo, probs, normalize=normalize)

    @classmethod
    def point(cls, v: int) -> "Pmf":
        return cls(v, [1.0])

    @property
    def lo(self) -> int:
        return self.offset

    @property
    def hi(self) -> int:
        return self.offset + self.probs.size - 1

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def __getitem__(self, v: int) -> float:
        i = int(v) - self.offset
        if 0 <= i < self.probs.size:
            return float(self.probs[i])
        return 0.0

    def support(self) -> np.ndarray:
        return self.offset + np.flatnonzero(self.probs)

    def items(self) -> Iterator[tuple[int, float]]:
        for i in np.flatnonzero(self.probs):
            yield self.offset + int(i), float(self.probs[i])

    def on(self, lo: int, hi: int) -> np.ndarray:
        """Dense probabilities on ``[lo, hi]``, zero outside the support."""
        out = np.zeros(hi - lo + 1)
        a, b = max(lo, self.lo), min(hi, self.hi)
        if a <= b:
            out[a - lo:b - lo + 1] = self.probs[a - self.lo:b - self.lo + 1]
        return out

    def shift(self, k: int) -> "Pmf":
        return Pmf(self.offset + int(k), self.probs)

    def negate(self) -> "Pmf":
        return Pmf(-self.hi, self.probs[::-1])

    def mean(self) -> float:
        return moment(self, 1)

    def to_json(self) -> list[dict]:
        return [{"point": v, "probability": w} for v, w in self.items()]

    def __eq__(self, other) -> bool:
        return (isinstance(other, Pmf) and self.offset == other.offset
                and np.array_equal(self.probs, other.probs))

    def __repr__(self) -> str:
        return f"Pmf(support=[{self.lo}, {self.hi}], points={self.probs.size})"


def _check_unit(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ParameterError(f"{name} must lie in (0, 1), got {value!r}")


def _check_tail_cut(tail_cut: float) -> None:
    if not 0.0 < tail_cut <= NORM_TOL:
        raise ParameterError(f"tail_cut must lie in (0, 1e-9], got {tail_cut!r}")


def pmf_dlap(rho: float, tail_cut: float = DEFAULT_TAIL_CUT) -> Pmf:
    """Discrete Laplace with mass ``(1-rho)/(1+rho) * rho**|v|``.

    Truncated at the smallest radius whose two-sided omitted mass,
    ``2 rho**(R+1) / (1+rho)``, is below ``tail_cut``; then renormalized.
    """
    _check_unit("rho", rho)
    _check_tail_cut(tail_cut)
    # smallest R with 2 rho^(R+1)/(1+rho) < tail_cut
    radius = max(0, math.floor(math.log(tail_cut * (1 + rho) / 2) / math.log(rho)))
    while 2 * rho ** (radius + 1) / (1 + rho) >= tail_cut:
        radius += 1
    v = np.abs(np.arange(-radius, radius + 1))
    probs = (1 - rho) / (1 + rho) * rho ** v
    return Pmf(-radius, probs, normalize=True)


def pmf_dlap_trunc(tau: int, mu: int, rho: float) -> Pmf:
    """Discrete Laplace restricted to ``[mu - tau, mu + tau]``."""
    if tau < 0 or int(tau) != tau:
        raise ParameterError("tau must be a non-negative integer")
    _check_unit("rho", rho)
    tau = int(tau)
    v = np.abs(np.arange(-tau, tau + 1))
    return Pmf(int(mu) - tau, rho ** v.astype(float), normalize=True)


def _polya_ratio(k: int, r: float, lam: float) -> float:
    return lam * (k + r) / (k + 1)


def pmf_polya(r: float, lam: float, tail_cut: float = DEFAULT_TAIL_CUT) -> Pmf:
    """Polya (negative binomial) pmf ``Pr[k] = C(k+r-1, k) (1-lam)^r lam^k``.

    Built from ``Pr[0] = (1-lam)^r`` and the ratio ``lam (k+r)/(k+1)``. The
    ratio is monotone in ``k`` and tends to ``lam``, which gives a geometric
    bound on the omitted tail; truncation stops once that bound is below
    ``tail_cut``.
    """
    if not r > 0:
        raise ParameterError(f"r must be positive, got {r!r}")
    _check_unit("lam", lam)
    _check_tail_cut(tail_cut)
    probs = [(1 - lam) ** r]
    k = 0
    while True:
        ratio = _polya_ratio(k, r, lam)
        # ratios after k are bounded by max(ratio, lam) < 1
        bound = max(ratio, lam)
        nxt = probs[-1] * ratio
        if bound < 1 and nxt * 1 / (1 - bound) < tail_cut:
            break
        probs.append(nxt)
        k += 1
    return Pmf(0, probs, normalize=True)


def _check_odd_t(t: int) -> None:
    if int(t) != t or t < 1 or t % 2 == 0:
        raise ParameterError(f"t must be an odd positive integer, got {t!r}")


def _check_rate(lam: float) -> None:
    if not lam > 0 or not math.isfinite(lam):
        raise ParameterError(f"lam must be positive, got {lam!r}")


def d_weights(t: int, lam: float) -> np.ndarray:
    """Normalized weights of D on ``{0..t}``, ``∝ exp(-lam |t/2 - u|)``."""
    _check_odd_t(t)
    _check_rate(lam)
    u = np.arange(t + 1)
    # |t/2 - u| is half-integral; doubling keeps the arithmetic exact
    w = np.exp(-lam * np.abs(t - 2 * u) / 2.0)
    return w / w.sum()


def l_weights(t: int, lam: float) -> np.ndarray:
    d = d_weights(t, lam)
    half_lo, half_hi = t // 2, (t + 1) // 2
    u = np.arange(t + 1)
    idx = np.where(u <= half_lo, half_lo - u, u - half_hi)
    return d[idx]


def pmf_D(t: int, lam: float) -> Pmf:
    """Truncated discrete Laplace on ``{0..t}`` centred at ``t/2`` with rate ``lam``.

    ``t`` must be odd. ``lam`` is the exponent rate (scale ``exp(-lam)``);
    any positive rate is accepted.
    """
    return Pmf(0, d_weights(t, lam))


def pmf_L(t: int, lam: float) -> Pmf:
    """Mirror of :func:`pmf_D`: heavy at the ends ``0`` and ``t``, light near ``t/2``."""
    return Pmf(0, l_weights(t, lam))


def _check_residue(x: int, m: int) -> None:
    if m < 2:
        raise ParameterError(f"modulus must be >= 2, got {m!r}")
    if not 0 <= x < m:
        raise ParameterError(f"residue {x!r} outside [0, {m})")


def pmf_Dx(x: int, m: int, t: int, lam: float) -> Pmf:
    """``Pr[x + u m] = D[u]`` for ``u`` in ``0..t``."""
    _check_residue(x, m)
    probs = np.zeros(m * t + 1)
    probs[::m] = d_weights(t, lam)
    return Pmf(x, probs)


def pmf_B(m: int, t: int, lam: float) -> Pmf:
    """``B[x + u m] = L[u] / m`` over ``{0 .. m t + m - 1}``."""
    _check_residue(0, m)
    lw = l_weights(t, lam)
    return Pmf(0, np.repeat(lw / m, m))


def convolve(a: Pmf, b: Pmf) -> Pmf:
    """Exact convolution (direct summation in ascending order)."""
    probs = np.convolve(a.probs, b.probs)
    return Pmf(a.offset + b.offset, probs, normalize=False)


def convolve_power(p: Pmf, k: int) -> Pmf:
    """``k``-fold self-convolution by repeated squaring."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    result = None
    base = p
    while k:
        if k & 1:
            result = base if result is None else convolve(result, base)
        k >>= 1
        if k:
            base = convolve(base, base)
    return result


def mixture(weights: Sequence[float], parts: Sequence[Pmf]) -> Pmf:
    if len(weights) != len(parts) or not parts:
        raise ParameterError("weights and parts must be non-empty and of equal length")
    if any(w < 0 for w in weights) or abs(math.fsum(weights) - 1.0) > 1e-12:
        raise ParameterError("mixture weights must be non-negative and sum to 1")
    lo = min(p.lo for p in parts)
    hi = max(p.hi for p in parts)
    probs = np.zeros(hi - lo + 1)
    for w, p in zip(weights, parts):
        if w:
            probs += w * p.on(lo, hi)
    return Pmf(lo, probs)


def bernoulli(p: float) -> Pmf:
    if not 0 <= p <= 1:
        raise ParameterError("p must lie in [0, 1]")
    return Pmf(0, [1 - p, p])


def sample(p: Pmf, rng: Rng, size=None):
    """Inverse-CDF sampling; returns an int, or an int array when ``size`` is given."""
    cdf = np.cumsum(p.probs)
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, p.probs.size - 1)
    if size is None:
        return p.offset + int(idx)
    return p.offset + idx.astype(np.int64)


class PolyaCdf:
    """Lazily extended CDF of Polya(r, lam) used for unbounded inverse-CDF draws."""

    def __init__(self, r: float, lam: float):
        if not r > 0:
            raise ParameterError(f"r must be positive, got {r!r}")
        _check_unit("lam", lam)
        self.r, self.lam = float(r), float(lam)
        self._term = (1 - lam) ** r
        self._cdf = [self._term]

    def extend_past(self, u: float) -> np.ndarray:
        while self._cdf[-1] <= u:
            k = len(self._cdf) - 1
            self._term *= _polya_ratio(k, self.r, self.lam)
            nxt = self._cdf[-1] + self._term
            if nxt == self._cdf[-1]:
                # the float CDF has saturated below u; the current k is the answer
                break
            self._cdf.append(nxt)
        return np.asarray(self._cdf)

    def draw(self, rng: Rng, size=None):
        u = rng.random(size)
        if np.size(u) == 0:
            return np.zeros(np.shape(u), dtype=np.int64)
        cdf = self.extend_past(float(np.max(u)))
        idx = np.searchsorted(cdf, u, side="right")
        idx = np.minimum(idx, cdf.size - 1)
        if size is None:
            return int(idx)
        return idx.astype(np.int64)


def sample_polya(r: float, lam: float, rng: Rng, size=None):
    """Polya draw(s) by inverse CDF, accumulating the pmf recurrence on the fly."""
    return PolyaCdf(r, lam).draw(rng, size)


def moment(p: Pmf, k: int) -> float:
    if k < 1:
        raise ParameterError("moment order must be >= 1")
    v = p.points.astype(np.float64)
    return float(np.sum(v ** k * p.probs))


def variance(p: Pmf) -> float:
    mu = moment(p, 1)
    return moment(p, 2) - mu * mu


def llr_distance(p: Pmf, q: Pmf) -> float:
    """Log-likelihood-ratio distance ``max |ln(P(E)/Q(E))|``.

    For discrete distributions the maximum over events is attained on a
    single point: if ``P({v}) <= e^eps Q({v})`` for every ``v``, summing over
    the points of any event ``E`` gives ``P(E) <= e^eps Q(E)``. So the
    pointwise maximum over the union support is exact. A point carrying mass
    under one pmf and none under the other yields ``inf``.
    """
    lo, hi = min(p.lo, q.lo), max(p.hi, q.hi)
    a, b = p.on(lo, hi), q.on(lo, hi)
    live = (a > 0) | (b > 0)
    a, b = a[live], b[live]
    if np.any((a == 0) != (b == 0)):
        return math.inf
    return float(np.max(np.abs(np.log(a) - np.log(b))))


def sd_distance(p: Pmf, q: Pmf) -> float:
    """Statistical (total variation) distance, half the L1 distance."""
    lo, hi = min(p.lo, q.lo), max(p.hi, q.hi)
    return 0.5 * float(np.sum(np.abs(p.on(lo, hi) - q.on(lo, hi))))
