"""Exact numeric checks of the pointwise inequalities behind the protocols' guarantees.

Every check evaluates both sides on dense exact pmfs and records the worst
slack ``rhs - lhs`` over all points. A report passes when that slack is at
least ``-SLACK_TOL``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import dist
from .dist import Pmf
from .errors import ParameterError, ResourceError
from .relagg import select_params, t_lower_bound, t_lower_bound_beta

SLACK_TOL = 1e-9
SUPPORT_GUARD = 10**5
POLYA_TV_TOL = 1e-8


@dataclass
class InequalityReport:
    claim: str
    params: dict
    worst_slack: float
    worst_point: dict = field(default_factory=dict)
    checked: int = 0
    tightest_inequality: Optional[float] = None

    @property
    def passed(self) -> bool:
        return bool(self.worst_slack >= -SLACK_TOL)

    def to_json(self) -> dict:
        return {"claim": self.claim, "params": self.params, "worst_slack": self.worst_slack,
                "passed": self.passed, "worst_point": self.worst_point, "checked": self.checked,
                "tightest_inequality": self.tightest_inequality}


class _Tracker:
    """Running minimum of slack with the point where it occurred."""

    def __init__(self):
        self.worst = math.inf
        self.tightest = math.inf
        self.point: dict = {}
        self.checked = 0

    def add(self, slack: np.ndarray, describe, *, equality: bool = False) -> None:
        """Record slacks; equality checks pass ``-|lhs - rhs|``."""
        slack = np.asarray(slack, dtype=np.float64)
        if slack.size == 0:
            return
        self.checked += slack.size
        i = int(np.argmin(slack))
        if not equality:
            self.tightest = min(self.tightest, float(slack.flat[i]))
        if slack.flat[i] < self.worst:
            self.worst = float(slack.flat[i])
            self.point = describe(i)

    def report(self, claim: str, params: dict) -> InequalityReport:
        worst = 0.0 if self.checked == 0 else self.worst
        tight = None if math.isinf(self.tightest) else self.tightest
        return InequalityReport(claim, params, worst, self.point, self.checked, tight)


def _guard(m: int, t: int) -> None:
    if m * t > SUPPORT_GUARD:
        raise ResourceError(f"m*t = {m * t} exceeds {SUPPORT_GUARD}")


def _check_mtl(m: int, t: int, lam: float) -> None:
    if int(m) != m or m < 2:
        raise ParameterError("m must be an integer >= 2")
    if int(t) != t or t < 1 or t % 2 == 0:
        raise ParameterError("t must be a positive odd integer")
    if not lam > 0:
        raise ParameterError("lam must be positive")


@lru_cache(maxsize=16)
def _pieces(m: int, t: int, lam: float):
    """Dense arrays on a common grid ``[0, size)``: every ``D_x * D_y``, ``D_x * B`` and ``B * B``."""
    d_x = [dist.pmf_Dx(x, m, t, lam) for x in range(m)]
    b = dist.pmf_B(m, t, lam)
    size = 2 * m * (t + 1)
    dense = lambda p: p.on(0, size - 1)
    dd = {(a, c): dense(dist.convolve(d_x[a], d_x[c])) for a in range(m) for c in range(a, m)}
    db = [dense(dist.convolve(d_x[a], b)) for a in range(m)]
    bb = dense(dist.convolve(b, b))
    return dd, db, bb


def _alpha(dd, x1: int, x2: int) -> np.ndarray:
    return dd[(min(x1, x2), max(x1, x2))]


def _params(m, t, lam, p=None, **extra) -> dict:
    out = {"m": int(m), "t": int(t), "lam": float(lam)}
    if p is not None:
        out["p"] = float(p)
    out.update(extra)
    return out


def verify_alpha_bounds(m: int, t: int, lam: float, p: float) -> InequalityReport:
    """Both-direction bound ``alpha_z <= e^{4 lam} alpha'_z + lam p^2 delta_z`` over all equal-sum pairs.

    Pairs with equal unreduced sums are checked for exact equality instead.
    """
    _check_mtl(m, t, lam)
    _guard(m, t)
    dd, _, bb = _pieces(m, t, float(lam))
    tr = _Tracker()
    grow = math.exp(4 * lam)
    inputs = list(itertools.product(range(m), repeat=2))
    for (x1, x2), (y1, y2) in itertools.product(inputs, inputs):
        if (x1 + x2) % m != (y1 + y2) % m or (x1, x2) == (y1, y2):
            continue
        a, a2 = _alpha(dd, x1, x2), _alpha(dd, y1, y2)
        zs = np.flatnonzero((a > 0) | (a2 > 0))
        where = lambda i, x=(x1, x2), y=(y1, y2), zs=zs: {"x": list(x), "x_prime": list(y), "z": int(zs[i])}
        if x1 + x2 == y1 + y2:
            tr.add(-np.abs(a[zs] - a2[zs]), where, equality=True)
        else:
            tr.add(grow * a2[zs] + lam * p * p * bb[zs] - a[zs], where)
    hyp = t >= t_lower_bound(m, lam, p)
    return tr.report("alpha-bounds", _params(m, t, lam, p, hypothesis_met=bool(hyp)))


def verify_step_alpha_claims(m: int, t: int, lam: float, p: Optional[float] = None) -> InequalityReport:
    """Per-``v`` bounds for ``x'_1 + x'_2 = x_1 + x_2 + m`` and ``z = x_1 + x_2 + v m``.

    Checks the ``e^lam`` bounds with the additive ``D[.] D[0]`` term, the
    ``3 lam`` absorption of that term for ``v`` away from the ends, equality of
    both sides at every other ``z`` and, when ``p`` is given, the ``lam p^2 delta_z``
    bound on the extreme ``v``.
    """
    _check_mtl(m, t, lam)
    _guard(m, t)
    dd, _, bb = _pieces(m, t, float(lam))
    d = dist.pmf_D(t, lam).on(0, t)
    d0 = d[0]
    v = np.arange(2 * t + 2)
    low_half = v <= t
    tail = np.where(low_half, d[np.minimum(v, t)], d[np.clip(2 * t + 1 - v, 0, t)]) * d0
    e_lam = math.exp(lam)
    inv = 1 / lam
    mid_low = (v >= inv) & low_half
    mid_high = (v >= t + 1) & (v <= 2 * t + 1 - inv)
    extreme = (v < inv) | (v > 2 * t + 1 - inv)

    tr = _Tracker()
    inputs = list(itertools.product(range(m), repeat=2))
    for (x1, x2), (y1, y2) in itertools.product(inputs, inputs):
        s = x1 + x2
        if y1 + y2 != s + m:
            continue
        a_full, a2_full = _alpha(dd, x1, x2), _alpha(dd, y1, y2)
        z = s + v * m
        a, a2 = a_full[z], a2_full[z]

        def where(i, name, x=(x1, x2), y=(y1, y2)):
            return {"x": list(x), "x_prime": list(y), "v": int(i), "check": name}

        first = np.where(low_half, e_lam * a2 + tail - a, e_lam * a + tail - a2)
        second = np.where(low_half, e_lam * a - a2, e_lam * a2 - a)
        tr.add(first, lambda i: where(i, "additive"))
        tr.add(second, lambda i: where(i, "multiplicative"))
        idx = np.flatnonzero(mid_low)
        tr.add(3 * lam * a2[idx] - tail[idx], lambda i: where(idx[i], "absorb-low"))
        idx = np.flatnonzero(mid_high)
        tr.add(3 * lam * a[idx] - tail[idx], lambda i: where(idx[i], "absorb-high"))
        if p is not None:
            idx = np.flatnonzero(extreme)
            tr.add(lam * p * p * bb[z[idx]] - tail[idx], lambda i: where(idx[i], "extreme"))
        off = np.ones(a_full.size, dtype=bool)
        off[z] = False
        gap = np.abs(a_full[off] - a2_full[off])
        pos = np.flatnonzero(off)
        tr.add(-gap, lambda i: {"x": [x1, x2], "x_prime": [y1, y2], "z": int(pos[i]), "check": "equal"},
               equality=True)
    extra = {}
    if p is not None:
        extra["hypothesis_met"] = bool(t >= t_lower_bound(m, lam, p))
    return tr.report("alpha-step-claims", _params(m, t, lam, p, **extra))


def verify_beta_bounds(m: int, t: int, lam: float, p: float) -> InequalityReport:
    """``(D_x * B)[z] <= e^{4 lam} (D_x' * B)[z] + lam p (B * B)[z]`` for all ``x, x'`` and ``z``."""
    _check_mtl(m, t, lam)
    _guard(m, t)
    _, db, bb = _pieces(m, t, float(lam))
    grow = math.exp(4 * lam)
    tr = _Tracker()
    for x, y in itertools.product(range(m), repeat=2):
        zs = np.flatnonzero((db[x] > 0) | (db[y] > 0))
        tr.add(grow * db[y][zs] + lam * p * bb[zs] - db[x][zs],
               lambda i, x=x, y=y, zs=zs: {"x": x, "x_prime": y, "z": int(zs[i])})
    hyp = t >= t_lower_bound_beta(m, lam, p)
    return tr.report("beta-bounds", _params(m, t, lam, p, hypothesis_met=bool(hyp)))


def dlap_trunc_tau(lam: float, margin: int = 0) -> int:
    return math.ceil(math.log(10) / math.log(1 / lam)) + margin


def verify_dlap_trunc_moments(lam_grid: Iterable[float], margin: int = 0) -> InequalityReport:
    """Zero mean, ``E[eta^2] < 5/(1-lam)^2`` and ``E[eta^4] < 60/(1-lam)^4`` for truncated discrete Laplace."""
    tr = _Tracker()
    grid = [float(v) for v in lam_grid]
    for lam in grid:
        if not 0 < lam < 1:
            raise ParameterError(f"lam must lie in (0, 1), got {lam!r}")
        tau = dlap_trunc_tau(lam, margin)
        core = dist.pmf_dlap_trunc(tau, 0, lam)
        m1, m2, m4 = (dist.moment(core, k) for k in (1, 2, 4))
        checks = [("mean", -abs(m1), True), ("second", 5 / (1 - lam) ** 2 - m2, False),
                  ("fourth", 60 / (1 - lam) ** 4 - m4, False)]
        for name, slack, eq in checks:
            tr.add(np.array([slack]), lambda i, lam=lam, tau=tau, name=name:
                   {"lam": lam, "tau": tau, "moment": name}, equality=eq)
    return tr.report("dlap-trunc-moments", {"lam_grid": grid, "margin": int(margin)})


def polya_difference_sum(n: int, rho: float) -> Pmf:
    """Exact law of ``sum_{i<n} eta+_i - eta-_i`` with Polya(1/n, rho) terms."""
    plus = dist.convolve_power(dist.pmf_polya(1 / n, rho), n)
    return dist.convolve(plus, plus.negate())


def verify_polya_divisibility(n_list: Sequence[int] = (1, 2, 4, 8, 16),
                              rho_list: Sequence[float] = (0.3, 0.5, 0.9)) -> InequalityReport:
    """Signed sums of ``n`` Polya(1/n) pairs against DLap(rho): TV within ``POLYA_TV_TOL`` and zero mean."""
    tr = _Tracker()
    for n, rho in itertools.product(n_list, rho_list):
        if int(n) != n or n < 1:
            raise ParameterError("n must be a positive integer")
        total = polya_difference_sum(int(n), float(rho))
        tv = dist.sd_distance(total, dist.pmf_dlap(rho))
        where = lambda i, n=n, rho=rho, tv=tv: {"n": int(n), "rho": float(rho), "tv": tv}
        tr.add(np.array([POLYA_TV_TOL - tv]), where)
        tr.add(np.array([-abs(total.mean())]), where, equality=True)
    return tr.report("polya-divisibility", {"n_list": [int(n) for n in n_list],
                                            "rho_list": [float(r) for r in rho_list]})


@dataclass
class NoPerfectSecurity:
    m: int
    t: int
    lam: float
    prob_zero_first: float
    prob_zero_second: float
    llr: float

    @property
    def passed(self) -> bool:
        return self.prob_zero_first > 0 and self.prob_zero_second == 0 and math.isinf(self.llr)

    def to_json(self) -> dict:
        return {"claim": "no-perfect-security",
                "params": {"m": self.m, "t": self.t, "lam": self.lam},
                "prob_zero_first": self.prob_zero_first, "prob_zero_second": self.prob_zero_second,
                "llr": "inf" if math.isinf(self.llr) else self.llr, "passed": self.passed}


def demo_no_perfect_security(m: int, t: Optional[int] = None, lam: Optional[float] = None) -> NoPerfectSecurity:
    """Two users, no ``B`` component: inputs ``(0, 0)`` can emit zero ones, ``(1, m-1)`` cannot."""
    if int(m) != m or m < 2:
        raise ParameterError("m must be an integer >= 2")
    if t is None or lam is None:
        base = select_params(m, 2, 0.4, 0.1)
        t = base.t if t is None else t
        lam = base.lam if lam is None else lam
    first = dist.convolve(dist.pmf_Dx(0, m, t, lam), dist.pmf_Dx(0, m, t, lam))
    second = dist.convolve(dist.pmf_Dx(1, m, t, lam), dist.pmf_Dx(m - 1, m, t, lam))
    return NoPerfectSecurity(int(m), int(t), float(lam), first[0], second[0],
                             dist.llr_distance(first, second))


DEFAULT_LAM_GRID = (math.exp(-0.5), math.exp(-1), math.exp(-2), 0.5, 0.9)


def run_all(ms: Sequence[int] = (2, 3), n: int = 2, eps_hat: float = 0.4,
            q_hat: float = 0.1) -> list[Any]:
    """Every check on the default grid; each entry has ``passed`` and ``to_json``."""
    out: list[Any] = []
    for m in ms:
        pr = select_params(m, n, eps_hat, q_hat)
        out.append(verify_alpha_bounds(m, pr.t, pr.lam, pr.p))
        out.append(verify_step_alpha_claims(m, pr.t, pr.lam, pr.p))
        out.append(verify_beta_bounds(m, pr.t, pr.lam, pr.p))
        out.append(demo_no_perfect_security(m, pr.t, pr.lam))
    out.append(verify_dlap_trunc_moments(DEFAULT_LAM_GRID))
    out.append(verify_polya_divisibility())
    return out
