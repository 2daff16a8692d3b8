"""Metric spaces, rate kernels, probability measures and test functions.

Points are plain Python values so they can be hashed and compared exactly:

* ``Euclidean(d)`` points are tuples of ``d`` floats,
* ``Interval()`` points are floats in ``[0, 1]``,
* ``FiniteSpace`` points are integer indices.

Every space also converts lists of points to a numpy array (``as_array``) and
back (``point_at``) so the simulators can work on arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ModelError(ValueError):
    pass


class InvalidPoint(ModelError):
    pass


class InvalidInput(ModelError):
    pass


class DomainError(ModelError):
    pass


class MeasureError(ModelError):
    pass


class MassSumViolation(MeasureError):
    pass


class NonPositiveMass(MeasureError):
    pass


class DistinctnessViolation(MeasureError):
    pass


# ---------------------------------------------------------------------------
# metric spaces


class MetricSpace:
    """Base class. Subclasses implement ``check``, ``as_array`` and ``pairwise``."""

    def distance(self, a, b) -> float:
        a = self.check(a)
        b = self.check(b)
        return float(self.pairwise(self.as_array([a, b]))[0])

    def check(self, p):
        raise NotImplementedError

    def as_array(self, points) -> np.ndarray:
        raise NotImplementedError

    def point_at(self, arr: np.ndarray, i: int):
        raise NotImplementedError

    def pairwise(self, arr: np.ndarray) -> np.ndarray:
        """Distances of all pairs ``i < j`` in column order.

        Entry ``j*(j-1)//2 + i`` holds ``d(arr[i], arr[j])``; see
        :func:`pair_index`.
        """
        raise NotImplementedError

    def cross(self, arr_a: np.ndarray, arr_b: np.ndarray) -> np.ndarray:
        """Full ``len(a) x len(b)`` distance matrix."""
        raise NotImplementedError

    def equal_rows(self, arr: np.ndarray) -> np.ndarray:
        """Integer labels such that ``labels[i] == labels[j]`` iff the points coincide."""
        if arr.ndim == 1:
            _, labels = np.unique(arr, return_inverse=True)
        else:
            _, labels = np.unique(arr, axis=0, return_inverse=True)
        return labels.reshape(-1)


def pair_index(i: int, j: int) -> int:
    """Position of pair ``(i, j)``, ``i < j``, in the column-ordered condensed layout.

    Column ``j`` occupies ``[j(j-1)/2, j(j+1)/2)`` so the pairs among the
    first ``M`` points form the prefix of length ``M(M-1)/2``.
    """
    if i > j:
        i, j = j, i
    return j * (j - 1) // 2 + i


def condensed_from_square(square: np.ndarray) -> np.ndarray:
    n = square.shape[-1]
    jj, ii = _column_order_indices(n)
    return square[..., ii, jj]


def _column_order_indices(n: int):
    jj = np.repeat(np.arange(n), np.arange(n))
    ii = np.concatenate([np.arange(j) for j in range(n)]) if n > 1 else np.zeros(0, dtype=int)
    return jj, ii.astype(int)


@dataclass(frozen=True)
class Euclidean(MetricSpace):
    dim: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInput("dimension must be >= 1")

    def check(self, p):
        t = tuple(float(x) for x in np.atleast_1d(p))
        if len(t) != self.dim:
            raise InvalidPoint(f"expected {self.dim} coordinates, got {len(t)}")
        return t

    def as_array(self, points) -> np.ndarray:
        arr = np.asarray([self.check(p) for p in points], dtype=float)
        return arr.reshape(len(points), self.dim)

    def point_at(self, arr, i):
        return tuple(float(x) for x in arr[i])

    def cross(self, a, b):
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))

    def pairwise(self, arr):
        return condensed_from_square(self.cross(arr, arr))


@dataclass(frozen=True)
class Interval(MetricSpace):
    """The unit interval with ``|x - y|``."""

    dim = 1

    def check(self, p):
        x = float(np.asarray(p).reshape(-1)[0]) if np.ndim(p) else float(p)
        if not 0.0 <= x <= 1.0:
            raise InvalidPoint(f"{x} is outside [0, 1]")
        return x

    def as_array(self, points):
        return np.asarray([self.check(p) for p in points], dtype=float)

    def point_at(self, arr, i):
        return float(arr[i])

    def cross(self, a, b):
        return np.abs(a[:, None] - b[None, :])

    def pairwise(self, arr):
        return condensed_from_square(self.cross(arr, arr))


@dataclass(frozen=True, eq=False)
class FiniteSpace(MetricSpace):
    distances: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))

    def __post_init__(self):
        d = np.array(self.distances, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise InvalidInput("distance matrix must be square")
        if np.any(d < 0) or np.any(np.diag(d) != 0):
            raise InvalidInput("distance matrix needs a zero diagonal and nonnegative entries")
        if not np.array_equal(d, d.T):
            raise InvalidInput("distance matrix must be symmetric")
        n = d.shape[0]
        if np.any(d[~np.eye(n, dtype=bool)] <= 0):
            raise InvalidInput("distinct points must be at positive distance")
        # d[i,k] <= d[i,j] + d[j,k] for every triple
        if np.any(d[:, None, :] > d[:, :, None] + d[None, :, :] + 1e-12):
            raise InvalidInput("triangle inequality fails")
        d.setflags(write=False)
        object.__setattr__(self, "distances", d)

    @property
    def size(self) -> int:
        return self.distances.shape[0]

    def check(self, p):
        if isinstance(p, (float, np.floating)) and not float(p).is_integer():
            raise InvalidPoint(f"{p} is not an index")
        k = int(p)
        if not 0 <= k < self.size:
            raise InvalidPoint(f"index {k} outside a space of {self.size} points")
        return k

    def as_array(self, points):
        return np.asarray([self.check(p) for p in points], dtype=np.int64)

    def point_at(self, arr, i):
        return int(arr[i])

    def cross(self, a, b):
        return self.distances[np.ix_(a, b)]

    def pairwise(self, arr):
        return condensed_from_square(self.cross(arr, arr))

    def __hash__(self):
        return hash(self.distances.tobytes())

    def __eq__(self, other):
        return isinstance(other, FiniteSpace) and np.array_equal(self.distances, other.distances)


def distance(space: MetricSpace, a, b) -> float:
    return space.distance(a, b)


# ---------------------------------------------------------------------------
# rate functions


class RateFunction:
    """Meeting-rate kernel ``phi``; calling it on distances returns rates.

    ``rate(0)`` is ``inf`` for kernels that diverge at the origin; such a value
    means the two points merge instantly.
    """

    satisfies_h2 = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise DomainError("distances must be nonnegative")
        out = self._eval(x)
        return float(out) if out.ndim == 0 else out

    def _eval(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def is_decreasing(self) -> bool:
        return False


@dataclass(frozen=True)
class InversePower(RateFunction):
    alpha: float = 1.0
    satisfies_h2 = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidInput("exponent must be positive")

    def _eval(self, x):
        with np.errstate(divide="ignore"):
            return np.where(x > 0, np.power(np.where(x > 0, x, 1.0), -self.alpha), np.inf)

    def is_decreasing(self):
        return True


@dataclass(frozen=True)
class Constant(RateFunction):
    level: float = 1.0

    def __post_init__(self):
        if not self.level > 0:
            raise InvalidInput("constant rate must be positive")

    def _eval(self, x):
        return np.full_like(x, self.level, dtype=float)


@dataclass(frozen=True, eq=False)
class Tabulated(RateFunction):
    """Piecewise-linear kernel through knots ``(xs[k], ys[k])`` on ``[xs[0], xs[-1]]``."""

    xs: tuple = (1.0, 2.0)
    ys: tuple = (1.0, 1.0)

    def __post_init__(self):
        xs = tuple(float(v) for v in self.xs)
        ys = tuple(float(v) for v in self.ys)
        if len(xs) != len(ys) or len(xs) < 2:
            raise InvalidInput("need at least two knots of matching length")
        if xs[0] <= 0 or any(b <= a for a, b in zip(xs, xs[1:])):
            raise InvalidInput("knots must be positive and strictly increasing")
        # positivity on a piecewise-linear function reduces to the knot values
        if any(y <= 0 for y in ys):
            raise InvalidInput("tabulated rate must be positive (H1)")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def _eval(self, x):
        if np.any((x < self.xs[0]) | (x > self.xs[-1])):
            raise DomainError(f"tabulated rate is defined on [{self.xs[0]}, {self.xs[-1]}]")
        return np.interp(x, self.xs, self.ys)

    def is_decreasing(self):
        return all(b < a for a, b in zip(self.ys, self.ys[1:]))


def rate(phi: RateFunction, x: float) -> float:
    return phi(x)


def pair_rates(space: MetricSpace, phi: RateFunction, arr: np.ndarray) -> np.ndarray:
    """Condensed (column-ordered) array of ``phi(d(p_i, p_j))``."""
    return np.asarray(phi(space.pairwise(arr)), dtype=float).reshape(-1)


def phi_min(space: MetricSpace, phi: RateFunction, points) -> float:
    """Smallest pairwise rate over a finite point cloud."""
    if len(points) < 2:
        raise InvalidInput("phi_min needs at least two points")
    return float(np.min(pair_rates(space, phi, space.as_array(points))))


# ---------------------------------------------------------------------------
# measures

MASS_TOL = 1e-9


class InitialMeasure:
    """Anything that can hand out IID location samples."""

    def sample_array(self, space: MetricSpace, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, space: MetricSpace, rng: np.random.Generator):
        return space.point_at(self.sample_array(space, rng, 1), 0)


class DiscreteMeasure(InitialMeasure):
    """Finitely supported probability measure ``sum_k p_k delta(s_k)``.

    ``space`` is needed to canonicalise locations and to check distinctness.
    Pass ``check=False`` to build a measure that :func:`validate` can inspect.
    """

    def __init__(self, space: MetricSpace, locations: Sequence, masses: Sequence[float], check: bool = True):
        self.space = space
        self.locations = tuple(space.check(p) for p in locations)
        self.masses = np.asarray(masses, dtype=float).reshape(-1)
        self.masses.setflags(write=False)
        if len(self.locations) != len(self.masses):
            raise MeasureError("locations and masses differ in length")
        if check:
            err = validate(self)
            if err is not None:
                raise err

    @classmethod
    def from_dict(cls, space: MetricSpace, atoms: dict, check: bool = True) -> "DiscreteMeasure":
        return cls(space, list(atoms.keys()), list(atoms.values()), check=check)

    @classmethod
    def point_mass(cls, space: MetricSpace, location) -> "DiscreteMeasure":
        return cls(space, [location], [1.0])

    def __len__(self):
        return len(self.locations)

    def __iter__(self):
        return iter(zip(self.locations, self.masses.tolist()))

    def __repr__(self):
        inner = ", ".join(f"{loc!r}: {m:.6g}" for loc, m in self)
        return f"DiscreteMeasure({{{inner}}})"

    @property
    def array(self) -> np.ndarray:
        return self.space.as_array(self.locations)

    def mass_at(self, location) -> float:
        location = self.space.check(location)
        for loc, m in self:
            if loc == location:
                return m
        return 0.0

    def as_dict(self) -> dict:
        return {loc: m for loc, m in self}

    def integrate(self, f) -> float:
        return float(np.dot(self.masses, np.asarray(f(self.array), dtype=float)))

    def sample_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cdf = np.cumsum(self.masses)
        cdf /= cdf[-1]
        return np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(self) - 1)

    def sample_array(self, space, rng, size):
        return self.array[self.sample_indices(rng, size)]


def validate(measure: DiscreteMeasure) -> MeasureError | None:
    """Return the first violated measure invariant, or ``None``."""
    m = measure.masses
    if len(m) == 0:
        return MassSumViolation("measure has no atoms")
    if np.any(~np.isfinite(m)) or np.any(m <= 0):
        return NonPositiveMass(f"masses must be strictly positive, got {m.tolist()}")
    total = float(np.sum(m))
    if abs(total - 1.0) > MASS_TOL:
        return MassSumViolation(f"masses sum to {total}, not 1")
    if len(set(measure.locations)) != len(measure.locations):
        return DistinctnessViolation("atom locations must be pairwise distinct")
    return None


@dataclass(frozen=True)
class UniformBox(InitialMeasure):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise InvalidInput("box needs lo < hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def sample_array(self, space, rng, size):
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        u = lo + (hi - lo) * rng.random((size, len(lo)))
        if isinstance(space, Interval):
            if len(lo) != 1 or lo[0] < 0 or hi[0] > 1:
                raise InvalidInput("box must lie inside [0, 1] for the interval")
            return u[:, 0]
        if isinstance(space, Euclidean):
            if len(lo) != space.dim:
                raise InvalidInput("box dimension does not match the space")
            return u
        raise InvalidInput("uniform boxes need a Euclidean space or the interval")


@dataclass(frozen=True)
class Mixture(InitialMeasure):
    components: tuple
    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != len(self.components) or not w:
            raise InvalidInput("one weight per component is required")
        if any(x <= 0 for x in w) or abs(sum(w) - 1.0) > MASS_TOL:
            raise InvalidInput("mixture weights must be positive and sum to 1")
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", w)

    def sample_array(self, space, rng, size):
        cdf = np.cumsum(self.weights)
        which = np.minimum(np.searchsorted(cdf / cdf[-1], rng.random(size), side="right"), len(cdf) - 1)
        first = self.components[0].sample_array(space, rng, 0)
        out = np.empty((size,) + first.shape[1:], dtype=first.dtype)
        for k, comp in enumerate(self.components):
            idx = np.nonzero(which == k)[0]
            if len(idx):
                out[idx] = comp.sample_array(space, rng, len(idx))
        return out


def sample(measure: InitialMeasure, space: MetricSpace, rng: np.random.Generator):
    return measure.sample(space, rng)


# ---------------------------------------------------------------------------
# test functions


def _scalar_coord(arr: np.ndarray, axis: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    return arr if arr.ndim == 1 else arr[:, axis]


class TestFunction:
    """Bounded continuous ``f`` evaluated on point arrays.

    ``f_max`` bounds ``|f|``; ``modulus(alpha)`` returns a distance below which
    ``f`` moves by at most ``alpha``.
    """

    __test__ = False  # not a pytest class
    f_max: float = math.inf

    def __call__(self, arr) -> np.ndarray:
        raise NotImplementedError

    def modulus(self, alpha: float) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class CoordinateProjection(TestFunction):
    axis: int = 0
    bound: float = math.inf

    @property
    def f_max(self):
        return self.bound

    def __call__(self, arr):
        return _scalar_coord(arr, self.axis)

    def modulus(self, alpha):
        return alpha


@dataclass(frozen=True)
class PiecewiseLinear(TestFunction):
    """Linear interpolation through ``knots`` (``(x, y)`` pairs); constant outside."""

    knots: tuple = ((0.0, 0.0), (1.0, 1.0))
    axis: int = 0

    def __post_init__(self):
        knots = tuple((float(x), float(y)) for x, y in self.knots)
        xs = [k[0] for k in knots]
        if len(knots) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
            raise InvalidInput("knots need strictly increasing x")
        object.__setattr__(self, "knots", knots)

    @property
    def f_max(self):
        return max(abs(y) for _, y in self.knots)

    @property
    def lipschitz(self) -> float:
        return max(abs((y1 - y0) / (x1 - x0)) for (x0, y0), (x1, y1) in zip(self.knots, self.knots[1:]))

    def __call__(self, arr):
        xs, ys = zip(*self.knots)
        return np.interp(_scalar_coord(arr, self.axis), xs, ys)

    def modulus(self, alpha):
        lip = self.lipschitz
        return math.inf if lip == 0 else alpha / lip


@dataclass(frozen=True)
class IndicatorSmoothed(TestFunction):
    """1 within ``radius`` of ``center``, ramping linearly to 0 over ``ramp``."""

    center: tuple = (0.5,)
    radius: float = 0.1
    ramp: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if self.radius < 0 or self.ramp <= 0:
            raise InvalidInput("radius must be >= 0 and ramp > 0")

    f_max = 1.0

    def __call__(self, arr):
        arr = np.asarray(arr, dtype=float)
        c = np.asarray(self.center)
        if arr.ndim == 1:
            r = np.abs(arr - c[0])
        else:
            r = np.sqrt(np.sum((arr - c) ** 2, axis=1))
        return np.clip((self.radius + self.ramp - r) / self.ramp, 0.0, 1.0)

    def modulus(self, alpha):
        return alpha * self.ramp


@dataclass(frozen=True)
class ConstantFunction(TestFunction):
    value: float = 1.0

    @property
    def f_max(self):
        return abs(self.value)

    def __call__(self, arr):
        return np.full(len(arr), self.value, dtype=float)

    def modulus(self, alpha):
        return math.inf


@dataclass(frozen=True, eq=False)
class FiniteValues(TestFunction):
    """Arbitrary values on the points of a finite space."""

    values: tuple = (0.0,)

    @property
    def f_max(self):
        return max(abs(v) for v in self.values)

    def __call__(self, arr):
        return np.asarray(self.values, dtype=float)[np.asarray(arr, dtype=np.int64)]

    def modulus(self, alpha):
        # any two distinct points of a finite space are a positive distance apart
        return 0.0
