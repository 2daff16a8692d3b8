import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from mclab import oracle as orc
from mclab.model import DiscreteMeasure, FiniteSpace, Interval, InversePower, PiecewiseLinear
from mclab.stats import absorption_law

# frozen from the uniformized transient for masses (0.2, 0.3, 0.5) at 0, 0.3, 1 with phi = 1/x
PI_03 = [0.1775378544119728, 0.15771850256718808, 0.02239312785665074, 0.04198711473122012,
         0.10561506868338483, 0.21872363222655622, 0.0781155829380558, 0.04043755165143492,
         0.07363452253974194, 0.08383704239379451]
PI_10 = [0.00314511519386847, 0.10212561127630333, 0.00382692684168114, 0.00717548782815214,
         0.06838768612252455, 0.10915657904030038, 0.03898449251439299, 0.13051668774376252,
         0.22589435985234535, 0.31078705358666925]


@pytest.mark.parametrize("n, count", [(1, 1), (2, 3), (3, 10), (4, 41)])
def test_state_counts(n, count):
    assert len(orc.enumerate_states(n)) == count


def test_capacity():
    with pytest.raises(orc.CapacityError):
        orc.enumerate_states(5)


def test_generator_rows_sum_to_zero(mu3, interval, inv):
    o = orc.oracle_for(mu3, interval, inv)
    assert np.allclose(o.Q.sum(axis=1), 0)
    assert o.Q[o.initial, o.initial] == pytest.approx(-(1 / 0.3 + 1 + 1 / 0.7))


def test_frozen_transients(mu3, interval, inv):
    o = orc.oracle_for(mu3, interval, inv)
    assert [s.owner for s in o.states][:3] == [(0, 1, 2), (0, 0, 2), (0, 1, 0)]
    assert np.allclose(orc.transient(o, 0.3), PI_03, atol=1e-12)
    assert np.allclose(orc.transient(o, 1.0), PI_10, atol=1e-12)


@pytest.mark.parametrize("t", [0.0, 0.05, 0.3, 1.0, 4.0])
def test_uniformization_matches_matrix_exponential(mu3, interval, inv, t):
    o = orc.oracle_for(mu3, interval, inv)
    ref = o.initial_vector() @ expm(o.Q * t)
    assert np.max(np.abs(orc.transient(o, t) - ref)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_semigroup(s, u):
    sp = Interval()
    mu = DiscreteMeasure(sp, [0.0, 0.3, 0.6, 1.0], [0.1, 0.2, 0.3, 0.4])
    o = orc.oracle_for(mu, sp, InversePower(1.0))
    lhs = orc.transient(o, s + u)
    rhs = orc.transient_from(o, orc.transient(o, s), u)
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_absorption_law_equals_masses(interval, inv):
    mu = DiscreteMeasure(interval, [0.0, 0.3, 0.6, 1.0], [0.1, 0.2, 0.3, 0.4])
    assert np.allclose(absorption_law(orc.oracle_for(mu, interval, inv)), mu.masses, atol=1e-12)


def test_pair_moment_closed_form(interval, inv):
    mu = DiscreteMeasure(interval, [0.0, 1.0], [0.5, 0.5])
    o = orc.oracle_for(mu, interval, inv)
    assert orc.exact_pair_moment(o, 0, 1, 1.0, interval, inv) == pytest.approx(0.25 * math.exp(-1), abs=1e-10)
    with pytest.raises(ValueError):
        orc.exact_pair_moment(o, 0, 0, 1.0, interval, inv)


def test_pair_moments_on_a_finite_space():
    sp = FiniteSpace(np.array([[0, 1, 2], [1, 0, 1.5], [2, 1.5, 0]], dtype=float))
    phi = InversePower(1.0)
    mu = DiscreteMeasure(sp, [0, 1, 2], [0.5, 0.3, 0.2])
    o = orc.oracle_for(mu, sp, phi)
    for i, j in ((0, 1), (0, 2), (1, 2)):
        assert orc.exact_pair_moment(o, i, j, 0.7, sp, phi) == pytest.approx(
            orc.pair_moment_closed_form(mu, sp, phi, i, j, 0.7), abs=1e-10
        )


def test_martingale_mean(mu3, interval, inv):
    f = PiecewiseLinear(((0.0, 0.0), (1.0, 1.0)))
    o = orc.oracle_for(mu3, interval, inv)
    for t in (0.1, 1.0, 5.0):
        assert orc.moment_of_f(o, t, f, interval, 1) == pytest.approx(mu3.integrate(f), abs=1e-10)


def test_law_of_f_sums_to_one(mu3, interval, inv):
    law = orc.law_of_f(orc.oracle_for(mu3, interval, inv), 0.5, PiecewiseLinear(((0, 0), (1, 1))), interval)
    assert sum(law.values()) == pytest.approx(1.0)


def test_degenerate_input():
    sp = FiniteSpace(np.array([[0.0, 1.0], [1.0, 0.0]]))
    mu = DiscreteMeasure(sp, [0, 1], [0.5, 0.5], check=False)
    mu_bad = DiscreteMeasure(sp, [0, 0], [0.5, 0.5], check=False)
    orc.oracle_for(mu, sp, InversePower(1.0))
    with pytest.raises(orc.DegenerateInput):
        orc.oracle_for(mu_bad, sp, InversePower(1.0))


def test_meeting_trees():
    # every valid ordered list of (loser, winner) merges on three live tokens
    trees = orc.enumerate_meeting_trees(3)
    assert len(trees) == 7
    assert len(orc.enumerate_meeting_trees(3, realizable=False)) == 8
    assert len(orc.enumerate_meeting_trees(2)) == 2
    only = orc.enumerate_meeting_trees(2, pattern=[0, 0])
    assert len(only) == 1 and only[0].groups == ((1, 2),)


def test_observed_trees_are_enumerated():
    from mclab.model import Euclidean, UniformBox
    from mclab.tokens import TokenSystem, evolve

    trees = set(orc.enumerate_meeting_trees(3))
    for seed in range(30):
        s = TokenSystem.init(UniformBox((0.0,), (1.0,)), 3, Euclidean(1), InversePower(1.0), np.random.default_rng(seed))
        assert orc.observed_tree(evolve(s, 2.0), [0, 1, 2]) in trees


def test_export_transient(tmp_path, mu3, interval, inv):
    path = tmp_path / "t.csv"
    orc.export_transient(orc.oracle_for(mu3, interval, inv), 0.3, path)
    rows = path.read_text().splitlines()
    assert rows[0] == "state_id,partition_repr,survivors,probability"
    assert rows[1].startswith("0,1|2|3,1 2 3,")
    assert len(rows) == 11
