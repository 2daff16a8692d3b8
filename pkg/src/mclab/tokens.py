"""The N-token process: IID locations, fixed exponential meeting clocks and
the coalescing ownership partition.

Token ``j`` can only be absorbed by a lower token, and it is absorbed by the
first lower token ``i`` whose clock ``t_ij`` rings while ``i`` is still
alive.  Writing ``D_i`` for the death time of token ``i`` (``inf`` for token
0), that gives the recursion

    D_j = min{ t_ij : i < j, t_ij < D_i },     parent P_j = argmin,

which produces the whole history in one pass over the clock columns.  The
literal "sort every clock and scan" procedure is kept as
:func:`evolve_by_scan`; the two agree exactly and the tests cross-check them.

Clocks use the column-ordered condensed layout from :mod:`mclab.model`, so
the clocks among the first ``M`` tokens are a prefix slice.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import (
    DiscreteMeasure,
    FiniteSpace,
    InitialMeasure,
    MetricSpace,
    RateFunction,
    _column_order_indices,
)

DEFAULT_CAP = 4096


class CapacityError(ValueError):
    pass


def sample_clocks(space: MetricSpace, phi: RateFunction, arr: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Condensed meeting times: ``Exp(phi(d))`` for distinct points, 0 for coincident ones."""
    n = len(arr)
    labels = space.equal_rows(arr)
    jj, ii = _column_order_indices(n)
    same = labels[ii] == labels[jj]
    clocks = np.zeros(len(jj))
    if (~same).any():
        rates = np.asarray(phi(space.pairwise(arr)), dtype=float).reshape(-1)
        clocks[~same] = rng.standard_exponential(int((~same).sum())) / rates[~same]
    return clocks


def death_times(clocks: np.ndarray, n: int):
    """Death times ``D`` and parents ``P`` from condensed clocks.

    ``clocks`` may carry leading batch axes: shape ``(..., n(n-1)/2)``.
    Ties go to the lowest index, which is how coincident groups collapse
    into their lowest token.
    """
    batch = clocks.shape[:-1]
    D = np.full(batch + (n,), np.inf)
    P = np.tile(np.arange(n, dtype=np.int64), batch + (1,))
    for j in range(1, n):
        col = clocks[..., j * (j - 1) // 2 : j * (j + 1) // 2]
        live = np.where(col < D[..., :j], col, np.inf)
        k = np.argmin(live, axis=-1)
        dj = np.take_along_axis(live, k[..., None], axis=-1)[..., 0]
        D[..., j] = dj
        P[..., j] = np.where(np.isfinite(dj), k, j)
    return D, P


def owners_at(D: np.ndarray, P: np.ndarray, t: float) -> np.ndarray:
    """Owner of every token at time ``t`` (batched like :func:`death_times`)."""
    n = D.shape[-1]
    own = np.where(D <= t, P, np.arange(n))
    while True:
        nxt = np.take_along_axis(own, own, axis=-1)
        if np.array_equal(nxt, own):
            return own
        own = nxt


@dataclass(frozen=True)
class Meeting:
    time: float
    winner: int
    loser: int


@dataclass
class PartitionState:
    time: float
    owner: np.ndarray
    events: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.owner)

    @property
    def blocks(self) -> dict:
        out: dict = {}
        for i, u in enumerate(self.owner.tolist()):
            out.setdefault(u, []).append(i)
        return out

    @property
    def alive(self) -> np.ndarray:
        return np.nonzero(self.owner == np.arange(self.N))[0]


@dataclass(eq=False)
class TokenSystem:
    """IID token locations plus the full condensed clock array."""

    space: MetricSpace
    phi: RateFunction
    locations: np.ndarray
    clocks: np.ndarray
    labels: np.ndarray
    _history: tuple | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return len(self.locations)

    @classmethod
    def init(
        cls,
        measure: InitialMeasure,
        N: int,
        space: MetricSpace,
        phi: RateFunction,
        rng: np.random.Generator,
        cap: int = DEFAULT_CAP,
    ) -> "TokenSystem":
        if N < 1:
            raise ValueError("need at least one token")
        if N > cap:
            raise CapacityError(f"N={N} exceeds the token cap {cap}")
        arr = measure.sample_array(space, rng, N)
        return cls.from_locations(arr, space, phi, rng)

    @classmethod
    def from_locations(cls, arr, space, phi, rng) -> "TokenSystem":
        arr = np.asarray(arr)
        clocks = sample_clocks(space, phi, arr, rng)
        return cls(space, phi, arr, clocks, space.equal_rows(arr))

    def clock(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        i, j = min(i, j), max(i, j)
        return float(self.clocks[j * (j - 1) // 2 + i])

    def restrict(self, M: int) -> "TokenSystem":
        if not 1 <= M <= self.N:
            raise ValueError(f"restriction size must lie in [1, {self.N}]")
        if M == self.N:
            return self
        sub = TokenSystem(
            self.space,
            self.phi,
            self.locations[:M],
            self.clocks[: M * (M - 1) // 2],
            self.space.equal_rows(self.locations[:M]),
        )
        if self._history is not None:
            sub._history = (self._history[0][:M], self._history[1][:M])
        return sub

    def history(self):
        """``(D, P)``: death time and absorbing token of every token."""
        if self._history is None:
            self._history = death_times(self.clocks, self.N)
        return self._history

    def point(self, i: int):
        return self.space.point_at(self.locations, i)


def evolve(system: TokenSystem, t: float) -> PartitionState:
    if t < 0:
        raise ValueError("time must be nonnegative")
    D, P = system.history()
    own = owners_at(D, P, t)
    order = np.lexsort((np.arange(system.N), D))
    events = [Meeting(float(D[j]), int(P[j]), int(j)) for j in order if D[j] <= t]
    return PartitionState(float(t), own, events)


def evolve_by_scan(system: TokenSystem, t: float) -> PartitionState:
    """Reference implementation: sort all clocks and apply nontrivial meetings in order.

    Zero clocks are handled as location groups absorbed into their lowest token.
    """
    N = system.N
    owner = np.arange(N)
    alive = np.ones(N, dtype=bool)
    events = []
    labels = system.labels
    first: dict = {}
    for i in range(N):
        lab = int(labels[i])
        if lab in first:
            owner[i] = first[lab]
            alive[i] = False
            events.append(Meeting(0.0, first[lab], i))
        else:
            first[lab] = i
    jj, ii = _column_order_indices(N)
    c = system.clocks
    pos = c > 0
    order = np.lexsort((jj[pos], ii[pos], c[pos]))
    times, lo, hi = c[pos][order], ii[pos][order], jj[pos][order]
    for s, i, j in zip(times, lo, hi):
        if s > t:
            break
        if alive[i] and alive[j]:
            alive[j] = False
            owner[owner == j] = i
            events.append(Meeting(float(s), int(i), int(j)))
    return PartitionState(float(t), owner, events)


def empirical_measure(system: TokenSystem, state: PartitionState) -> DiscreteMeasure:
    counts = np.bincount(state.owner, minlength=system.N)
    keep = np.nonzero(counts)[0]
    locs = [system.point(int(k)) for k in keep]
    return DiscreteMeasure(system.space, locs, counts[keep] / system.N, check=False)


def block_sizes(owner: np.ndarray) -> np.ndarray:
    """Block size keyed by owner (zero for dead tokens), batched over leading axes."""
    n = owner.shape[-1]
    flat = owner.reshape(-1, n)
    out = np.zeros_like(flat)
    rows = np.repeat(np.arange(len(flat)), n)
    np.add.at(out, (rows, flat.reshape(-1)), 1)
    return out.reshape(owner.shape)


def block_masses(state: PartitionState) -> list:
    sizes = block_sizes(state.owner)
    sizes = np.sort(sizes[sizes > 0])[::-1]
    return (sizes / state.N).tolist()


def dust_fraction(state: PartitionState) -> float:
    sizes = block_sizes(state.owner)
    return float(np.sum(sizes == 1)) / state.N


def tv_distance(m1: DiscreteMeasure, m2: DiscreteMeasure) -> float:
    a = m1.as_dict()
    b = m2.as_dict()
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))


def count_alive_in(state: PartitionState, system: TokenSystem, region: Callable) -> int:
    return sum(1 for k in state.alive if region(system.point(int(k))))


def export_partition(system: TokenSystem, state: PartitionState, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["token", "owner", "location_repr"])
        for i, u in enumerate(state.owner.tolist()):
            w.writerow([i, u, repr(system.point(i))])


# ---------------------------------------------------------------------------
# batches of independent systems


def pathwise_tv_check(D: np.ndarray, P: np.ndarray, N: int, t0: float):
    """Sup over ``t >= t0`` of ``d_TV(mu^N_t, mu^M_t)`` versus its value at ``t0``.

    ``D, P`` describe an ``M``-token system whose first ``N`` tokens form the
    smaller one.  Both measures are kept as integer token counts per owner,
    so the comparison is exact; the returned numerators are
    ``2*N*M*d_TV``.  Owners stand in for locations because two
    alive tokens never share a location.
    """
    M = len(D)
    own = owners_at(D, P, t0)
    cM = np.bincount(own, minlength=M).astype(np.int64)
    cN = np.bincount(own[:N], minlength=M).astype(np.int64)
    start = int(np.abs(cN * M - cM * N).sum())
    num = start
    worst = start
    order = np.argsort(D, kind="stable")
    for j in order:
        tau = D[j]
        if not math.isfinite(tau):
            break
        if tau <= t0:
            continue
        p = P[j]
        # the absorbing token is alive at tau, so it is its own owner
        for k in (j, p):
            num -= abs(int(cN[k]) * M - int(cM[k]) * N)
        cM[p] += cM[j]
        cM[j] = 0
        cN[p] += cN[j]
        cN[j] = 0
        for k in (j, p):
            num += abs(int(cN[k]) * M - int(cM[k]) * N)
        worst = max(worst, num)
    return start, worst


def batch_pair_distances(space: MetricSpace, locs: np.ndarray) -> np.ndarray:
    """Condensed distances for a batch of location arrays ``(R, N, ...)``."""
    N = locs.shape[1]
    jj, ii = _column_order_indices(N)
    if isinstance(space, FiniteSpace):
        return space.distances[locs[:, ii], locs[:, jj]]
    a = locs[:, ii]
    b = locs[:, jj]
    if locs.ndim == 2:
        return np.abs(a - b)
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def batch_clocks(space: MetricSpace, phi: RateFunction, locs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    d = batch_pair_distances(space, locs)
    same = d == 0
    with np.errstate(divide="ignore"):
        rates = np.asarray(phi(d), dtype=float)
    e = rng.standard_exponential(d.shape)
    return np.where(same, 0.0, e / np.where(same, 1.0, rates))


def batch_histories(
    measure: InitialMeasure,
    N: int,
    space: MetricSpace,
    phi: RateFunction,
    R: int,
    rng: np.random.Generator,
    max_clocks: int = 4_000_000,
):
    """Yield ``(locs, D, P)`` for ``R`` independent systems in memory-bounded batches."""
    if N > DEFAULT_CAP:
        raise CapacityError(f"N={N} exceeds the token cap {DEFAULT_CAP}")
    L = max(1, N * (N - 1) // 2)
    per = max(1, max_clocks // L)
    done = 0
    while done < R:
        size = min(per, R - done)
        locs = measure.sample_array(space, rng, size * N)
        locs = locs.reshape((size, N) + locs.shape[1:])
        clocks = batch_clocks(space, phi, locs, rng)
        D, P = death_times(clocks, N)
        yield locs, D, P
        done += size


def sample_batch(measure, N, space, phi, R, rng):
    """``R`` independent systems: locations ``(R, N, ...)`` and clocks ``(R, L)``."""
    locs = measure.sample_array(space, rng, R * N)
    locs = locs.reshape((R, N) + locs.shape[1:])
    return locs, batch_clocks(space, phi, locs, rng)
