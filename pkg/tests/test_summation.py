import math

import numpy as np
import pytest

from puredp import dist, summation
from puredp.errors import ParameterError
from puredp.model import Attack
from puredp.rng import Rng
from puredp.summation import (binary_noise_decomposition_check, central_oracle_H, dlap_tail_mass,
                              encode_round, exact_noise_pmf, exact_pmf_H_binary, experiment,
                              llr_on_core, run_bounded_sum, select_params_sum, sum_analyzer,
                              sum_randomizer)


@pytest.fixture
def silent(monkeypatch):
    """Suppress the Polya noise so outputs are the bare encodings."""
    monkeypatch.setattr(summation, "_noise_pairs",
                        lambda size, shape, lam, rng: np.zeros(size, dtype=np.int64))


def test_params_examples():
    p = select_params_sum(1, 0.05, 100)
    assert (p.g, p.tau, p.m) == (10, 37, 1148)
    assert p.lam == pytest.approx(0.904837, abs=1e-6)
    big = select_params_sum(1, 0.05, 10000)
    assert (big.g, big.tau, big.m) == (100, 369, 1001476)


def test_params_binary_override():
    p = select_params_sum(1, 0.05, 4, g=1)
    assert (p.g, p.tau, p.m) == (1, 4, 20)
    assert p.lam == pytest.approx(math.exp(-1))


@pytest.mark.parametrize("args", [(0, 0.05, 4), (1.5, 0.05, 4), (1, 1.0, 4), (1, 0.05, 5),
                                  (1, 0.05, 0)])
def test_params_rejects(args):
    with pytest.raises(ParameterError):
        select_params_sum(*args)


@pytest.mark.parametrize("eps,q,n", [(0.1, 0.3, 2), (0.5, 0.01, 64), (1, 1e-4, 1000)])
def test_params_invariants(eps, q, n):
    p = select_params_sum(eps, q, n)
    assert p.g >= 1 and 0 < p.lam < 1
    assert p.m > p.n * p.g + 2 * p.tau


def test_encode_round_edges():
    rng = Rng(0)
    assert np.all(encode_round(np.zeros(50), 7, rng) == 0)
    assert np.all(encode_round(np.ones(50), 7, rng) == 7)
    with pytest.raises(ParameterError):
        encode_round(1.2, 7, rng)


def test_encode_round_quarter():
    v = encode_round(np.full(100000, 0.25), 10, Rng(1))
    assert set(np.unique(v)) == {2, 3}
    assert abs(np.mean(v == 3) - 0.5) < 0.01


def test_randomizer_silent(silent):
    p = select_params_sum(1, 0.05, 100)
    assert sum_randomizer(0.0, p, Rng(0)) == 0
    assert sum_randomizer(1.0, p, Rng(0)) == p.g


def test_randomizer_range():
    p = select_params_sum(1, 0.05, 100)
    ys = summation.randomize_many(Rng(2).random(5000), p, Rng(3))
    assert ys.min() >= 0 and ys.max() < p.m


def test_analyzer_examples():
    p = select_params_sum(1, 0.05, 100)
    assert sum_analyzer(500, p) == 50.0
    assert sum_analyzer(1147, p) == pytest.approx(-0.1)
    assert sum_analyzer(0, p) == 0.0
    # boundary goes to the non-wrapping branch
    assert sum_analyzer(p.wrap_threshold, p) == p.wrap_threshold / p.g
    assert sum_analyzer(p.wrap_threshold + 1, p) < 0
    with pytest.raises(ParameterError):
        sum_analyzer(p.m, p)


def test_analyzer_total():
    p = select_params_sum(1, 0.05, 100)
    vals = [sum_analyzer(y, p) for y in range(p.m)]
    assert all(math.isfinite(v) for v in vals)


def test_run_silent_zero(silent):
    p = select_params_sum(1, 0.05, 100)
    assert run_bounded_sum([0.0] * 100, p, Rng(0)) == 0.0


def test_run_silent_exact_on_grid(silent):
    p = select_params_sum(1, 0.05, 100)
    xs = [0.3] * 50 + [0.7] * 50
    assert run_bounded_sum(xs, p, Rng(0)) == pytest.approx(50.0)


def test_run_length_check():
    p = select_params_sum(1, 0.05, 100)
    with pytest.raises(ParameterError):
        run_bounded_sum([0.5] * 99, p, Rng(0))


def test_central_oracle():
    assert central_oracle_H([], 3, 0.5, Rng(0)) == 0
    xs = np.full(40, 0.5)
    vals = [central_oracle_H(xs, 4, 0.5, Rng(3, k)) for k in range(4000)]
    # E = g * sum = 80; noise var = 2 * Var(DLap(0.5)) = 8
    assert abs(np.mean(vals) - 80) < 4 * math.sqrt(8 / 4000) + 0.05


def test_oracle_noise_is_double_dlap():
    lam = math.exp(-0.5)
    total = exact_noise_pmf(6, 6, lam)
    d = dist.pmf_dlap(lam)
    assert dist.sd_distance(total, dist.convolve(d, d)) < 1e-8


def test_binary_decomposition():
    p = select_params_sum(1, 0.05, 4, g=1)
    rep = binary_noise_decomposition_check(p)
    assert rep.passed
    assert rep.tv_in_range <= 1e-8
    w = dlap_tail_mass(p.lam, p.tau)
    assert rep.half_tail_mass[0] == pytest.approx(w, abs=1e-9)
    assert 2 * w <= 2 * p.q


def test_decomposition_requires_binary():
    with pytest.raises(ParameterError):
        binary_noise_decomposition_check(select_params_sum(1, 0.05, 100))


def test_tail_mass_closed_form():
    rho, tau = 0.6, 5
    direct = 1 - dist.pmf_dlap(rho).on(-tau, tau).sum()
    assert dlap_tail_mass(rho, tau) == pytest.approx(direct, abs=1e-11)


def test_privacy_smoke_binary():
    lam = math.exp(-1)
    base = [0, 1, 0, 1]
    for i in range(4):
        nb = list(base)
        nb[i] = 1 - nb[i]
        llr = llr_on_core(exact_pmf_H_binary(base, lam), exact_pmf_H_binary(nb, lam))
        assert llr <= 1 + 0.01


def test_experiment_records_and_determinism():
    p = select_params_sum(1, 0.05, 100)
    a = [r for r, _ in experiment(p, 5, seed=4)]
    b = [r for r, _ in experiment(p, 5, seed=4)]
    assert a == b
    assert list(a[0]) == ["trial", "true_sum", "estimate", "abs_error"]
    chunk = [r for r, _ in experiment(p, 2, seed=4, stream_base=3)]
    assert chunk == a[3:5]


def test_experiment_dropout_true_sum():
    p = select_params_sum(1, 0.05, 100)
    rec, tr = next(experiment(p, 1, seed=1, attack=Attack.dropout(range(50))))
    assert rec["true_sum"] == pytest.approx(sum(tr.inputs[50:]))


def test_accuracy_small():
    p = select_params_sum(1, 0.05, 100)
    errs = [r["abs_error"] for r, _ in experiment(p, 300, seed=6)]
    assert np.mean(np.array(errs) <= p.error_bound) >= 1 - 3 * 0.05 - 4 * math.sqrt(0.15 / 300)
