import math

import pytest

from beliefcover import bounds as B


def test_closed_form_matches_full_bound_without_abstraction_term():
    # at the balancing radius the stat and discretization terms are equal
    kw = dict(n=10_000, delta=0.1, F_card=8, Rmax=1.0, gamma=0.5)
    eps = B.balanced_eps(L_Q=2.0, **kw)
    full = B.compute_bound_ds(4.0, L_Q=2.0, L_pi=0.0, L_V=0.0, eps=eps, **kw)
    closed = B.balanced_bound(4.0, **kw)
    lphi = B.ds_L_phi(1.0, 0.5, 2.0, 0.0, 0.0)
    assert full - lphi * eps == pytest.approx(2 / (1 - 0.5) * math.sqrt(2 * B.ds_stat_term(**kw)))
    # the closed form doubles the leading term, which absorbs the abstraction term in regime
    assert closed == pytest.approx(2 * (full - lphi * eps))
    assert B.balanced_regime(L_Q=2.0, L_pi=0.0, L_V=0.0, **kw) and full <= closed


def test_bounds_shrink_in_n():
    vals = [B.compute_bound_ds(2.0, n, 0.1, 8, 1.0, 0.5, 1.0, 0.0, 0.0, 0.0) for n in (1e3, 1e4, 1e5)]
    assert vals[0] > vals[1] > vals[2]
    f = [B.compute_bound_fdvf(1.0, n, 0.1, 3, 2.0, 1.5, 1.0, 1.0, 0.0) for n in (1e3, 1e5)]
    assert f[0] / f[1] == pytest.approx(10.0)


def test_hoeffding_band_value():
    assert B.hoeffding_band(1e5, 0.01, 1.0, 0.5) == pytest.approx(math.sqrt(8 * 16 / 1e5 * math.log(200)))


def test_regime_flag_and_gamma_check():
    assert not B.balanced_regime(10, 0.1, 8, 1.0, 0.5, 1.0, 1e4, 1e4)
    with pytest.raises(ValueError):
        B.compute_bound_ds(1.0, 10, 0.1, 2, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0)


def test_default_constant():
    assert B.default_c() == pytest.approx(1406 + math.sqrt(80736))
