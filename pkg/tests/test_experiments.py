import json
import math

import pytest

from mclab import experiments as ex
from mclab.model import Constant, Interval, InversePower, Tabulated
from mclab.stats import TestConfig


def test_bounded_reference_values():
    phi = InversePower(1.0)
    # the lower-bound expression, evaluated directly
    expected = 0.5 * (1 / 3) * (1 - math.exp(-3)) * math.exp(-2)
    assert ex.route_lower_bound(phi, 0.5, 1.0) == pytest.approx(expected)
    assert ex.route_lower_bound(phi, 0.5, 1.0) == pytest.approx(0.021432889372921204)
    assert ex.liminf_bound(Constant(1.0), 0.0, 1.0) == pytest.approx(0.25 * (1 - math.exp(-1)) * math.exp(-1))


def test_limit_law_has_no_two_thirds():
    for phi in (InversePower(1.0), Constant(2.0)):
        law = ex.limit_law(phi, 1.0)
        assert law[2] == 0.0
        a = float(phi(1.0))
        assert law[1] == pytest.approx(math.exp(-a))
        assert sum(law) == pytest.approx(1.0)


def test_bounded_counterexample_inverse_power():
    res = ex.bounded_phi_counterexample(InversePower(1.0), 0.5, 1.0, TestConfig(replicates=50_000))
    assert res.passed
    row = dict(zip(res.columns, res.rows[0]))
    assert row["oracle_2_3"] == pytest.approx(0.11171826291939574, abs=1e-12)
    assert "feller" not in res.verdicts


def test_bounded_counterexample_constant_rate(tmp_path):
    res = ex.bounded_phi_counterexample(Constant(1.0), [0.5, 2**-6], 1.0, TestConfig(replicates=20_000))
    assert res.verdicts["feller"] == "non-Feller gap persists"
    _, meta = res.write(tmp_path, 0)
    assert json.load(open(meta))["verdicts"]["feller"] == "non-Feller gap persists"
    with pytest.raises(ValueError):
        ex.bounded_phi_counterexample(Constant(1.0), 0.7, 1.0, TestConfig())


def test_sparse_placement_and_rate():
    pts = ex.place_sparse(InversePower(1.0), ex.inverse_power_rule(3.0), 5)
    assert pts == pytest.approx([0.0, 8.0, 35.0, 99.0, 224.0])
    q = ex.q_hat(ex.inverse_power_rule(3.0), 20)
    assert q == pytest.approx(sum(2 * (i - 1) / i**3 for i in range(1, 21)))
    assert q == pytest.approx(0.7905908039091726)


def test_sparse_placement_rejects_non_decreasing_rates():
    with pytest.raises(ex.ConstructionError):
        ex.place_sparse(Constant(1.0), ex.inverse_power_rule(3.0), 4)
    with pytest.raises(ex.ConstructionError):
        ex.place_sparse(Tabulated((0.5, 2.0), (2.0, 1.0)), ex.inverse_power_rule(3.0), 4)


def test_sparse_support_trivial_cases():
    cfg = TestConfig(replicates=200)
    assert ex.sparse_support(ex.inverse_power_rule(3.0), 1, 1.0, cfg).column("p_no_meeting") == [1.0]
    assert ex.sparse_support(ex.inverse_power_rule(3.0), 6, 0.0, cfg).column("p_no_meeting") == [1.0]
    res = ex.sparse_support(ex.inverse_power_rule(3.0), 20, 1.0, TestConfig(replicates=20_000))
    assert res.passed


def test_kingman_sweep_schema(tmp_path):
    m = ex.equal_atoms(20)
    res = ex.kingman_sweep(m, m.locations, [0.25, 0.5], TestConfig(replicates=500), Interval(), InversePower(1.0))
    assert res.columns == ["t", "mean_count", "stderr", "bound", "verdict"]
    assert res.column("bound") == pytest.approx([8.0, 4.0])
    csv_path, _ = res.write(tmp_path / "out", 1)
    assert open(csv_path).readline().strip() == "t,mean_count,stderr,bound,verdict"


def test_tv_convergence_decreases():
    from mclab.model import UniformBox

    res = ex.tv_convergence(UniformBox((0.0,), (1.0,)), 0.5, [32, 256], TestConfig(replicates=200), Interval(), InversePower(1.0))
    assert res.passed


def test_experiment_result_invariants():
    with pytest.raises(ValueError):
        ex.ExperimentResult("x", {}, ["a"], [])
    with pytest.raises(ValueError):
        ex.ExperimentResult("x", {}, ["a"], [(1, 2)])


def test_registry_reproducible():
    a = ex.run_named("sparse_support", TestConfig(replicates=1000, base_seed=9))
    b = ex.run_named("sparse_support", TestConfig(replicates=1000, base_seed=9))
    assert a.rows == b.rows
    with pytest.raises(KeyError):
        ex.run_named("nope", TestConfig())
