import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mclab import coupling as cp
from mclab.model import DiscreteMeasure, Interval, InversePower, PiecewiseLinear

IDENT = PiecewiseLinear(((0.0, 0.0), (1.0, 1.0)))


def test_disagreement_formulas():
    assert cp.disagreement_probability(1, 2) == 0.5
    assert cp.disagreement_probability(3, 3) == 0.0
    assert cp.disagreement_probability(1, 2, "maximal") == pytest.approx(0.25)
    assert cp.disagreement_probability(1, 5, "maximal") == pytest.approx(0.5349922439811376)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.sampled_from(["superposition", "maximal"]))
def test_marginals_are_exponential(a, b, method):
    rng = np.random.default_rng(int(a * 1000 + b))
    x, y = cp.couple_exponentials(a, b, rng, size=40_000, method=method)
    for v, lam in ((x, a), (y, b)):
        assert abs(v.mean() - 1 / lam) < 5 / lam / math.sqrt(len(v))
        # the upper tail at the median
        assert abs(np.mean(v > math.log(2) / lam) - 0.5) < 5 * 0.5 / math.sqrt(len(v))


def test_superposition_faster_clock_never_later():
    x, y = cp.couple_exponentials(1.0, 4.0, np.random.default_rng(0), size=10_000)
    assert np.all(y <= x)


def test_scalar_and_invalid_rates(rng):
    x, y = cp.couple_exponentials(2.0, 2.0, rng)
    assert isinstance(x, float) and x == y
    with pytest.raises(cp.InvalidRate):
        cp.couple_exponentials(-1.0, 2.0, rng)


def test_transport_plan(interval):
    mu = DiscreteMeasure(interval, [0.0, 1.0], [0.5, 0.5])
    nu, plan = cp.split_atoms(mu, [0.01, -0.02], interval)
    assert plan.max_displacement(interval) == pytest.approx(0.02)
    assert plan.prokhorov_upper(interval) <= 0.02 + 1e-12
    cp.TransportPlan.identity(mu)
    with pytest.raises(cp.InvalidPlan):
        cp.TransportPlan(mu, nu, ((0, 0, 0.5), (1, 1, 0.5)))


def test_params_validation():
    with pytest.raises(ValueError):
        cp.CouplingParams(0.1, 0.5, 0.2, 1.0)
    assert cp.CouplingParams(0.01, 0.1, 1.0, 0.5).eps_small_enough
    assert not cp.CouplingParams(0.05, 0.1, 1.0, 0.5).eps_small_enough


def _setup():
    sp = Interval()
    mu = DiscreteMeasure(sp, [0.0, 0.5, 1.0], [0.3, 0.3, 0.4])
    eps = 1e-4
    d = eps**2 / 2
    _, plan = cp.split_atoms(mu, [d, -d, -d], sp)
    return sp, mu, plan, cp.CouplingParams(eps, 0.4, 2.5, 0.002)


def test_pgood_bound_terms():
    sp, mu, _, params = _setup()
    terms = cp.pgood_bound(mu, 4, params, sp, InversePower(1.0))
    assert terms["g1"] == 0.0 and terms["g6"] == 0.0
    assert terms["g2"] == pytest.approx(4e-4)
    assert terms["g4"] == pytest.approx(6 * -math.expm1(-2.5 * 0.002))
    assert terms["total"] == pytest.approx(0.03659153041648749, rel=1e-9)


def test_good_outcomes_stay_close():
    sp, mu, plan, params = _setup()
    rng = np.random.default_rng(5)
    good = 0
    for _ in range(300):
        c = cp.build_coupled(plan, 4, sp, InversePower(1.0), rng)
        rep = cp.classify(c, params)
        if rep.good:
            good += 1
            assert cp.sup_diff(c, IDENT, params.t_star) <= params.eps
    assert good > 250


def test_sup_diff_is_zero_for_identical_systems(rng):
    sp = Interval()
    mu = DiscreteMeasure(sp, [0.0, 1.0], [0.5, 0.5])
    c = cp.build_coupled(cp.TransportPlan.identity(mu), 8, sp, InversePower(1.0), rng)
    assert cp.sup_diff(c, IDENT, 0.0) == 0.0
    assert cp.classify(c, cp.CouplingParams(0.0, 0.5, 2.0, 0.0)).g4 is False


def test_export_goodness(tmp_path, rng):
    sp, mu, plan, params = _setup()
    c = cp.build_coupled(plan, 4, sp, InversePower(1.0), rng)
    cp.export_goodness([(0, cp.classify(c, params), 0.0)], tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "replicate,g1,g2,g3,g4,g5,g6,good,sup_diff"


def test_feller_demo_first_moment_gap_vanishes():
    sp = Interval()
    mu = DiscreteMeasure(sp, [0.0, 1.0], [0.5, 0.5])
    nu = DiscreteMeasure(sp, [0.01, 1.0], [0.5, 0.5])
    rows = cp.feller_demo(mu, [(0.01, nu)], IDENT, 1.0, sp, InversePower(1.0))
    disp, m1, m2, m3 = rows[0]
    assert m1 == pytest.approx(0.005, abs=1e-10)
    assert m2 >= 0 and m3 >= 0
