"""Exact simulation of the finite Metric Coalescent jump process.

Atoms ``i`` and ``j`` meet at rate ``phi(d(s_i, s_j))``; at a meeting atom
``i`` absorbs ``j`` with probability ``p_i / (p_i + p_j)`` and keeps its own
location.  Scheduling is the total-rate (Gillespie) form.

Two entry points are provided: :func:`step` / :func:`run` follow a single
trajectory event by event, and :func:`simulate_ensemble` advances many
independent replicates at once with numpy, recording which surviving atom
owns every initial atom.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import DiscreteMeasure, MetricSpace, RateFunction, _column_order_indices, pair_rates


BLOCK_ELEMENTS = 1 << 17


class DegenerateState(RuntimeError):
    pass


class NotAbsorbed(RuntimeError):
    pass


@dataclass(frozen=True)
class MCState:
    measure: DiscreteMeasure
    clock: float = 0.0


@dataclass(frozen=True)
class MergeEvent:
    time: float
    loser_location: object
    winner_location: object
    transferred_mass: float
    loser_idx: int = -1
    winner_idx: int = -1


class _Absorbed:
    def __repr__(self):
        return "Absorbed"

    def __bool__(self):
        return False


Absorbed = _Absorbed()


@dataclass
class Trajectory:
    initial: DiscreteMeasure
    events: list = field(default_factory=list)
    absorbed: bool = False

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, k):
        return self.events[k]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "loser_idx", "winner_idx", "mass"])
            for ev in self.events:
                w.writerow([f"{ev.time:.17g}", ev.loser_idx, ev.winner_idx, f"{ev.transferred_mass:.17g}"])


def _pick_pair(rates: np.ndarray, total: float, u: float) -> int:
    cum = np.cumsum(rates)
    p = int(np.searchsorted(cum, u * total, side="right"))
    # guard against u * total landing on the float tail of the cumsum
    p = min(p, len(rates) - 1)
    while rates[p] == 0.0:
        p -= 1
    return p


def step(state: MCState, phi: RateFunction, space: MetricSpace, rng: np.random.Generator):
    """One jump of the chain; returns ``(new_state, event)`` or ``Absorbed``."""
    mu = state.measure
    k = len(mu)
    if k == 1:
        return Absorbed
    rates = pair_rates(space, phi, mu.array)
    total = float(rates.sum())
    if not math.isfinite(total) or total <= 0:
        raise DegenerateState(f"total meeting rate is {total}")
    jj, ii = _column_order_indices(k)
    dt = rng.exponential(1.0 / total)
    p = _pick_pair(rates, total, rng.random())
    i, j = int(ii[p]), int(jj[p])
    m = mu.masses
    if rng.random() < m[i] / (m[i] + m[j]):
        win, lose = i, j
    else:
        win, lose = j, i
    masses = m.copy()
    masses[win] += masses[lose]
    keep = [a for a in range(k) if a != lose]
    new = DiscreteMeasure(space, [mu.locations[a] for a in keep], masses[keep], check=False)
    ev = MergeEvent(
        time=state.clock + dt,
        loser_location=mu.locations[lose],
        winner_location=mu.locations[win],
        transferred_mass=float(m[lose]),
        loser_idx=lose,
        winner_idx=win,
    )
    return MCState(new, state.clock + dt), ev


def run(
    measure: DiscreteMeasure,
    phi: RateFunction,
    space: MetricSpace,
    horizon: float | None,
    rng: np.random.Generator,
):
    """Jump until ``horizon`` (``None`` runs until one atom is left).

    Returns ``(trajectory, final_state)``.  Event indices refer to atoms of
    the initial measure.  Only the loser's pair rates change at a merge
    because the winner keeps its location.
    """
    k = len(measure)
    traj = Trajectory(initial=measure)
    limit = math.inf if horizon is None else float(horizon)
    rates = pair_rates(space, phi, measure.array)
    if not np.all(np.isfinite(rates)):
        raise DegenerateState("coincident atoms have an infinite meeting rate")
    jj, ii = _column_order_indices(k)
    masses = measure.masses.copy()
    alive = np.ones(k, dtype=bool)
    clock = 0.0
    n_alive = k
    while n_alive > 1:
        total = float(rates.sum())
        if total <= 0:
            raise DegenerateState("alive atoms with zero total meeting rate never coalesce")
        dt = rng.exponential(1.0 / total)
        if clock + dt > limit:
            break
        clock += dt
        p = _pick_pair(rates, total, rng.random())
        i, j = int(ii[p]), int(jj[p])
        if rng.random() < masses[i] / (masses[i] + masses[j]):
            win, lose = i, j
        else:
            win, lose = j, i
        traj.events.append(
            MergeEvent(clock, measure.locations[lose], measure.locations[win], float(masses[lose]), lose, win)
        )
        masses[win] += masses[lose]
        masses[lose] = 0.0
        alive[lose] = False
        rates[(ii == lose) | (jj == lose)] = 0.0
        n_alive -= 1
    traj.absorbed = n_alive == 1
    keep = np.nonzero(alive)[0]
    final = DiscreteMeasure(space, [measure.locations[a] for a in keep], masses[keep], check=False)
    return traj, MCState(final, clock if horizon is None else limit)


def coalescence_time(trajectory: Trajectory) -> float:
    if not trajectory.absorbed:
        raise NotAbsorbed("run stopped at its horizon before reaching a point mass")
    return trajectory.events[-1].time if trajectory.events else 0.0


# ---------------------------------------------------------------------------
# vectorised ensembles


@dataclass
class Ensemble:
    """Replicate outcomes of :func:`simulate_ensemble`.

    ``owners[k, r, a]`` is the surviving atom holding initial atom ``a`` at
    ``times[k]`` in replicate ``r``; ``final_owner`` is the same after the
    simulation stopped.  ``absorption_time`` is ``inf`` for replicates that
    had not coalesced by ``t_max``.
    """

    times: np.ndarray
    owners: np.ndarray
    final_owner: np.ndarray
    absorption_time: np.ndarray
    first_jump_time: np.ndarray

    @property
    def replicates(self) -> int:
        return self.final_owner.shape[0]

    @staticmethod
    def concat(parts: Sequence["Ensemble"]) -> "Ensemble":
        return Ensemble(
            times=parts[0].times,
            owners=np.concatenate([p.owners for p in parts], axis=1),
            final_owner=np.concatenate([p.final_owner for p in parts], axis=0),
            absorption_time=np.concatenate([p.absorption_time for p in parts]),
            first_jump_time=np.concatenate([p.first_jump_time for p in parts]),
        )


def location_masses(owner: np.ndarray, masses: np.ndarray) -> np.ndarray:
    """Mass sitting at each initial atom's location given an owner array ``(..., n)``."""
    n = owner.shape[-1]
    onehot = owner[..., :, None] == np.arange(n)
    return np.einsum("...ab,a->...b", onehot, masses)


def state_codes(owner: np.ndarray) -> np.ndarray:
    """Integer code of each owner vector (base ``n`` digits, atom 0 most significant)."""
    n = owner.shape[-1]
    weights = n ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return owner.astype(np.int64) @ weights


def simulate_ensemble(
    measure: DiscreteMeasure,
    phi: RateFunction,
    space: MetricSpace,
    replicates: int,
    rng: np.random.Generator,
    times: Sequence[float] = (),
    t_max: float | None = None,
    ranks: np.ndarray | None = None,
) -> Ensemble:
    """Run ``replicates`` independent chains, snapshotting at ``times``.

    Chains stop at ``t_max`` (default: the last snapshot time, or absorption
    when ``times`` is empty and ``t_max`` is ``None``).

    With ``ranks`` (shape ``(replicates, n)``) the winner of every meeting is
    the atom of lower rank instead of a mass-weighted coin.  Ranks drawn as
    the first-appearance order of IID samples reproduce the lowest-token rule
    of the token process.
    """
    n = len(measure)
    times = np.asarray(sorted(times), dtype=float)
    if t_max is None:
        t_max = float(times[-1]) if len(times) else math.inf
    base = pair_rates(space, phi, measure.array)
    if not np.all(np.isfinite(base)):
        raise DegenerateState("coincident atoms have an infinite meeting rate")
    R = int(replicates)
    # keep the (rows, pairs) work arrays small enough to be recycled by the
    # allocator; fresh multi-megabyte buffers every step dominate otherwise
    rows = max(64, BLOCK_ELEMENTS // max(len(base), 1))
    if R > rows:
        parts = []
        for lo in range(0, R, rows):
            sub = None if ranks is None else ranks[lo : lo + rows]
            parts.append(simulate_ensemble(measure, phi, space, min(rows, R - lo), rng, times, t_max, sub))
        return Ensemble.concat(parts)
    jj, ii = _column_order_indices(n)
    owner = np.tile(np.arange(n, dtype=np.int16), (R, 1))
    alive = np.ones((R, n), dtype=bool)
    mass = np.tile(measure.masses, (R, 1))
    clock = np.zeros(R)
    owners_out = np.empty((len(times), R, n), dtype=np.int16)
    absorbed_at = np.full(R, math.inf)
    first_jump = np.full(R, math.inf)
    if n == 1:
        owners_out[:] = 0
        absorbed_at[:] = 0.0
        return Ensemble(times, owners_out, owner, absorbed_at, first_jump)
    active = np.arange(R)
    for n_alive in range(n, 1, -1):
        if len(active) == 0:
            break
        al = alive[active]
        rates = base * (al[:, ii] & al[:, jj])
        total = rates.sum(axis=1)
        dt = rng.standard_exponential(len(active)) / total
        new_clock = clock[active] + dt
        for k, tk in enumerate(times):
            hit = (clock[active] <= tk) & (tk < new_clock)
            if hit.any():
                owners_out[k, active[hit]] = owner[active[hit]]
        jumping = new_clock <= t_max
        active = active[jumping]
        if len(active) == 0:
            break
        rates = rates[jumping]
        total = total[jumping]
        clock[active] = new_clock[jumping]
        if n_alive == n:
            first_jump[active] = clock[active]
        u = rng.random(len(active)) * total
        cum = np.cumsum(rates, axis=1)
        p = (cum <= u[:, None]).sum(axis=1)
        p = np.minimum(p, rates.shape[1] - 1)
        # a pair with zero rate can only be chosen through float round-off at the top end
        bad = rates[np.arange(len(active)), p] == 0
        while bad.any():
            p[bad] -= 1
            bad = rates[np.arange(len(active)), p] == 0
        i, j = ii[p], jj[p]
        mi = mass[active, i]
        mj = mass[active, j]
        if ranks is None:
            i_wins = rng.random(len(active)) < mi / (mi + mj)
        else:
            i_wins = ranks[active, i] < ranks[active, j]
        win = np.where(i_wins, i, j)
        lose = np.where(i_wins, j, i)
        mass[active, win] += mass[active, lose]
        mass[active, lose] = 0.0
        alive[active, lose] = False
        sub = owner[active]
        sub = np.where(sub == lose[:, None], win[:, None].astype(np.int16), sub)
        owner[active] = sub
        if n_alive == 2:
            absorbed_at[active] = clock[active]
    # the state is frozen after each replicate's last jump
    for k, tk in enumerate(times):
        late = clock <= tk
        owners_out[k, late] = owner[late]
    return Ensemble(times, owners_out, owner, absorbed_at, first_jump)


def run_ensemble(
    measure: DiscreteMeasure,
    phi: RateFunction,
    space: MetricSpace,
    replicates: int,
    seed: int,
    key,
    times: Sequence[float] = (),
    t_max: float | None = None,
    threads: int = 1,
) -> Ensemble:
    """Chunked, seeded :func:`simulate_ensemble`."""
    from .rng import map_chunks

    parts = map_chunks(
        lambda r, size: simulate_ensemble(measure, phi, space, size, r, times=times, t_max=t_max),
        replicates,
        seed,
        key,
        threads=threads,
    )
    return Ensemble.concat(parts)


def final_location_law(
    measure: DiscreteMeasure,
    phi: RateFunction,
    space: MetricSpace,
    replicates: int,
    rng: np.random.Generator,
) -> dict:
    """Counts of the absorbing location over ``replicates`` runs."""
    ens = simulate_ensemble(measure, phi, space, replicates, rng)
    survivor = ens.final_owner[:, 0]
    counts = np.bincount(survivor, minlength=len(measure))
    return {measure.locations[a]: int(c) for a, c in enumerate(counts)}
