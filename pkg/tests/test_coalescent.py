import math

import numpy as np
import pytest

from mclab.coalescent import (
    Absorbed,
    DegenerateState,
    MCState,
    NotAbsorbed,
    coalescence_time,
    final_location_law,
    location_masses,
    run,
    run_ensemble,
    simulate_ensemble,
    state_codes,
    step,
)
from mclab.model import DiscreteMeasure, FiniteSpace, InversePower


def test_step_conserves_mass(mu3, interval, inv, rng):
    state = MCState(mu3)
    while True:
        out = step(state, inv, interval, rng)
        if out is Absorbed:
            break
        state, ev = out
        assert state.measure.masses.sum() == pytest.approx(1.0)
        assert ev.time > 0
    assert len(state.measure) == 1
    assert not Absorbed


def test_run_until_absorbed(mu3, interval, inv, rng):
    traj, final = run(mu3, inv, interval, None, rng)
    assert traj.absorbed and len(traj) == 2
    assert coalescence_time(traj) == traj[-1].time
    times = [e.time for e in traj]
    assert times == sorted(times)
    assert final.measure.masses.tolist() == [1.0]


def test_horizon_stops_early(mu3, interval, inv, rng):
    traj, final = run(mu3, inv, interval, 1e-9, rng)
    assert len(traj) == 0 and final.clock == 1e-9
    with pytest.raises(NotAbsorbed):
        coalescence_time(traj)


def test_single_atom_absorbed_immediately(interval, inv, rng):
    mu = DiscreteMeasure.point_mass(interval, 0.4)
    assert step(MCState(mu), inv, interval, rng) is Absorbed
    traj, _ = run(mu, inv, interval, None, rng)
    assert traj.absorbed and coalescence_time(traj) == 0.0


def test_coincident_atoms_are_degenerate(rng):
    sp = FiniteSpace(np.array([[0.0, 1.0], [1.0, 0.0]]))
    mu = DiscreteMeasure(sp, [0, 0], [0.5, 0.5], check=False)
    with pytest.raises(DegenerateState):
        run(mu, InversePower(1.0), sp, None, rng)


def test_trajectory_csv(tmp_path, mu3, interval, inv, rng):
    traj, _ = run(mu3, inv, interval, None, rng)
    p = tmp_path / "traj.csv"
    traj.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "time,loser_idx,winner_idx,mass"
    assert len(lines) == 3


def test_first_jump_is_exponential(mu3, interval, inv, rng):
    ens = simulate_ensemble(mu3, inv, interval, 20_000, rng)
    total = 1 / 0.3 + 1 + 1 / 0.7
    m = ens.first_jump_time.mean()
    assert abs(m - 1 / total) < 4 * (1 / total) / math.sqrt(20_000)
    assert np.all(ens.absorption_time >= ens.first_jump_time)


def test_snapshots_are_consistent(mu3, interval, inv, rng):
    ens = simulate_ensemble(mu3, inv, interval, 2000, rng, times=[0.0, 0.5, 50.0])
    assert np.all(ens.owners[0] == np.arange(3))
    lm = location_masses(ens.owners[1], mu3.masses)
    assert np.allclose(lm.sum(axis=1), 1.0)
    # owner maps are idempotent
    o = ens.owners[1]
    assert np.array_equal(np.take_along_axis(o, o.astype(np.int64), axis=1), o)
    assert np.all(np.sum(ens.owners[2] == np.arange(3), axis=1) == 1)


def test_ensemble_blocks_match_unblocked_statistics(interval, inv):
    mu = DiscreteMeasure(interval, list(np.linspace(0, 1, 30)), [1 / 30] * 30)
    ens = simulate_ensemble(mu, inv, interval, 3000, np.random.default_rng(0), times=[0.5])
    alive = (ens.owners[0] == np.arange(30)).sum(axis=1)
    assert ens.owners.shape == (1, 3000, 30)
    assert 1 <= alive.min() and alive.mean() < 30


def test_state_codes_are_unique():
    from mclab.oracle import enumerate_states

    codes = [int(state_codes(np.array(s.owner))) for s in enumerate_states(4)]
    assert len(set(codes)) == 41


def test_run_ensemble_is_thread_invariant(mu3, interval, inv):
    a = run_ensemble(mu3, inv, interval, 10_000, 7, "k", times=[0.3], threads=1)
    b = run_ensemble(mu3, inv, interval, 10_000, 7, "k", times=[0.3], threads=4)
    assert np.array_equal(a.owners, b.owners)
    assert np.array_equal(a.absorption_time, b.absorption_time)


def test_final_location_law_total(mu3, interval, inv, rng):
    law = final_location_law(mu3, inv, interval, 5000, rng)
    assert sum(law.values()) == 5000
    assert set(law) == set(mu3.locations)
