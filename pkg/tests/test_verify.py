import math

import pytest

from puredp import dist
from puredp.errors import ResourceError
from puredp.relagg import select_params, smallest_odd_at_least, t_lower_bound_beta
from puredp.verify import (InequalityReport, demo_no_perfect_security, dlap_trunc_tau,
                           run_all, verify_alpha_bounds, verify_beta_bounds,
                           verify_dlap_trunc_moments, verify_polya_divisibility,
                           verify_step_alpha_claims)


@pytest.fixture(scope="module", params=[2, 3])
def grid(request):
    return select_params(request.param, 2, 0.4, 0.1)


def test_report_pass_flag():
    assert InequalityReport("x", {}, -1e-10).passed
    assert not InequalityReport("x", {}, -1e-8).passed


def test_alpha_bounds_pass(grid):
    rep = verify_alpha_bounds(grid.m, grid.t, grid.lam, grid.p)
    assert rep.passed and rep.params["hypothesis_met"]
    assert rep.checked > 0
    assert rep.tightest_inequality > 0


def test_step_claims_pass(grid):
    rep = verify_step_alpha_claims(grid.m, grid.t, grid.lam, grid.p)
    assert rep.passed


def test_step_claims_without_p():
    pr = select_params(2, 2, 0.4, 0.1)
    assert verify_step_alpha_claims(2, pr.t, pr.lam).passed


def test_beta_bounds_pass(grid):
    rep = verify_beta_bounds(grid.m, grid.t, grid.lam, grid.p)
    assert rep.passed and rep.params["hypothesis_met"]


def test_beta_at_its_own_minimal_t():
    lam, p = 0.05, 0.05
    t = smallest_odd_at_least(t_lower_bound_beta(2, lam, p))
    assert verify_beta_bounds(2, t, lam, p).passed


def test_alpha_bounds_far_below_hypothesis_is_flagged():
    # a tiny t breaks the hypothesis; the report must say so
    rep = verify_alpha_bounds(2, 21, 0.05, 0.05)
    assert not rep.params["hypothesis_met"]


def test_guard():
    with pytest.raises(ResourceError):
        verify_alpha_bounds(200, 1001, 0.05, 0.05)


def test_reports_deterministic(grid):
    a = verify_beta_bounds(grid.m, grid.t, grid.lam, grid.p)
    b = verify_beta_bounds(grid.m, grid.t, grid.lam, grid.p)
    assert a.worst_slack == b.worst_slack and a.worst_point == b.worst_point


def test_moment_checks():
    assert dlap_trunc_tau(0.5) == 4
    assert dlap_trunc_tau(0.9) == 22
    rep = verify_dlap_trunc_moments([0.5, 0.9, math.exp(-2)])
    assert rep.passed
    core = dist.pmf_dlap_trunc(22, 0, 0.9)
    assert dist.moment(core, 4) < 60 / 0.1 ** 4
    assert dist.moment(dist.pmf_dlap_trunc(3, 0, 0.5), 2) == pytest.approx(1.909091, abs=1e-6)


def test_polya_divisibility():
    rep = verify_polya_divisibility([1, 2, 8], [0.5])
    assert rep.passed
    assert rep.worst_point["tv"] <= 1e-8


def test_no_perfect_security():
    for m in (2, 3, 4):
        r = demo_no_perfect_security(m)
        d0 = dist.pmf_D(r.t, r.lam)[0]
        assert r.prob_zero_first == pytest.approx(d0 * d0, rel=1e-12)
        assert r.prob_zero_second == 0
        assert math.isinf(r.llr)
        assert r.passed
        assert r.to_json()["llr"] == "inf"


def test_run_all():
    reports = run_all()
    assert len(reports) == 10
    assert all(r.passed for r in reports)
