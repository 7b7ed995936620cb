"""Domain types, constraint sets, centering constants and error metrics.

Column layout of every observation matrix is fixed: covariates first, then
interventions, then outcomes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

SYMMETRY_TOL = 1e-9


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Bounds:
    """Constraint constants: entry bound ``alpha``, row l1 bound ``beta`` and
    the support half-width ``x_max``."""

    alpha: float
    beta: float
    x_max: float

    def __post_init__(self):
        for name in ("alpha", "beta", "x_max"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InvalidArgument(f"{name} must be positive, got {v!r}")
            object.__setattr__(self, name, float(v))

    def widened(self, extra):
        return Bounds(self.alpha, self.beta, self.x_max + extra)


@dataclass(frozen=True)
class Dims:
    p_v: int
    p_a: int
    p_y: int
    n: int = 1

    def __post_init__(self):
        for name in ("p_v", "p_a", "p_y"):
            if int(getattr(self, name)) < 0:
                raise InvalidArgument(f"{name} must be nonnegative")
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.p < 1:
            raise InvalidArgument("p = p_v + p_a + p_y must be at least 1")
        if int(self.n) < 1:
            raise InvalidArgument("n must be at least 1")
        object.__setattr__(self, "n", int(self.n))

    @property
    def p(self):
        return self.p_v + self.p_a + self.p_y

    @property
    def v_slice(self):
        return slice(0, self.p_v)

    @property
    def a_slice(self):
        return slice(self.p_v, self.p_v + self.p_a)

    @property
    def y_slice(self):
        return slice(self.p_v + self.p_a, self.p)

    def with_n(self, n):
        return Dims(self.p_v, self.p_a, self.p_y, n)


def _symmetrized(mat, what):
    m = np.asarray(mat, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgument(f"{what} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgument(f"{what} has non-finite entries")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > SYMMETRY_TOL:
        raise InvalidArgument(f"{what} is not symmetric (max asymmetry {asym:.3g})")
    if asym > 0:
        m = 0.5 * (m + m.T)
    return m


@dataclass(frozen=True)
class PopulationMatrix:
    """Shared symmetric interaction matrix.

    Inputs whose asymmetry is below ``SYMMETRY_TOL`` are symmetrized, anything
    larger is rejected.
    """

    theta_mat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta_mat", _frozen(_symmetrized(self.theta_mat, "interaction matrix")))

    @property
    def p(self):
        return self.theta_mat.shape[0]

    @classmethod
    def zeros(cls, p):
        return cls(np.zeros((p, p)))


@dataclass(frozen=True)
class UnitFields:
    """Per-unit external fields, one row per unit."""

    fields: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.fields, dtype=float)
        if f.ndim != 2:
            raise InvalidArgument("unit fields must be an n x p matrix")
        if not np.all(np.isfinite(f)):
            raise InvalidArgument("unit fields have non-finite entries")
        object.__setattr__(self, "fields", _frozen(f))

    @property
    def n(self):
        return self.fields.shape[0]

    @property
    def p(self):
        return self.fields.shape[1]


@dataclass(frozen=True)
class ExtendedParams:
    population: PopulationMatrix
    units: UnitFields

    def __post_init__(self):
        if self.units.p != self.population.p:
            raise InvalidArgument(
                f"unit fields have {self.units.p} columns but the interaction matrix is "
                f"{self.population.p} x {self.population.p}"
            )

    @property
    def n(self):
        return self.units.n

    @property
    def p(self):
        return self.population.p

    @property
    def theta(self):
        return self.population.theta_mat

    @property
    def fields(self):
        return self.units.fields

    @classmethod
    def zeros(cls, n, p):
        return cls(PopulationMatrix.zeros(p), UnitFields(np.zeros((n, p))))

    @classmethod
    def from_arrays(cls, theta, fields):
        return cls(PopulationMatrix(theta), UnitFields(fields))


@dataclass(frozen=True)
class Dataset:
    """Observations, one row ``(v, a, y)`` per unit, all inside ``[-x_max, x_max]``."""

    X: np.ndarray
    dims: Dims
    x_max: float

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise InvalidArgument("data must be an n x p matrix")
        if X.shape[1] != self.dims.p:
            raise InvalidArgument(f"data has {X.shape[1]} columns, dims say p={self.dims.p}")
        if not np.all(np.isfinite(X)):
            raise InvalidArgument("data has non-finite entries")
        worst = np.max(np.abs(X)) if X.size else 0.0
        if worst > self.x_max:
            i, t = np.unravel_index(np.argmax(np.abs(X)), X.shape)
            raise InvalidArgument(
                f"entry ({i}, {t}) = {X[i, t]!r} lies outside [-{self.x_max}, {self.x_max}]"
            )
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "dims", self.dims.with_n(X.shape[0]))
        object.__setattr__(self, "x_max", float(self.x_max))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def V(self):
        return self.X[:, self.dims.v_slice]

    @property
    def A(self):
        return self.X[:, self.dims.a_slice]

    @property
    def Y(self):
        return self.X[:, self.dims.y_slice]

    def subset(self, rows):
        return Dataset(self.X[rows], self.dims, self.x_max)


@dataclass(frozen=True)
class JointParams:
    """Natural parameters ``(phi, Phi)`` of the generating joint density."""

    phi: np.ndarray
    Phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float).ravel()
        Phi = _symmetrized(self.Phi, "Phi")
        if Phi.shape[0] != phi.size:
            raise InvalidArgument("phi and Phi disagree in dimension")
        object.__setattr__(self, "phi", _frozen(phi))
        object.__setattr__(self, "Phi", _frozen(Phi))

    @property
    def p(self):
        return self.phi.size


def centering_constants(x_max):
    """Means of ``x`` and ``x**2`` under the uniform law on ``[-x_max, x_max]``."""
    if not np.isfinite(x_max) or x_max <= 0:
        raise InvalidArgument(f"x_max must be positive, got {x_max!r}")
    return 0.0, x_max * x_max / 3.0


def mse(u_hat, u_tilde):
    u_hat = np.asarray(u_hat, dtype=float).ravel()
    u_tilde = np.asarray(u_tilde, dtype=float).ravel()
    if u_hat.shape != u_tilde.shape:
        raise InvalidArgument(f"length mismatch: {u_hat.size} vs {u_tilde.size}")
    if u_hat.size == 0:
        raise InvalidArgument("mse of empty vectors")
    d = u_hat - u_tilde
    return float(np.dot(d, d) / d.size)


def norm_2inf(M):
    """Largest row l2 norm."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[None, :]
    if M.size == 0:
        raise InvalidArgument("(2,inf)-norm of an empty matrix")
    return float(np.max(np.sqrt(np.sum(M * M, axis=1))))


@dataclass(frozen=True)
class Violation:
    kind: str  # "asymmetry" | "entry_bound" | "row_l1" | "field_bound"
    location: tuple
    magnitude: float


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple = field(default_factory=tuple)

    @property
    def feasible(self):
        return not self.violations

    def __bool__(self):
        # truthy when something is wrong, so ``if report:`` reads naturally
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def kinds(self):
        return [v.kind for v in self.violations]


def population_violations(theta, bounds, tol=0.0):
    theta = np.asarray(theta, dtype=float)
    out = []
    asym = np.abs(theta - theta.T)
    for t, u in zip(*np.nonzero(np.triu(asym > tol, 1))):
        out.append(Violation("asymmetry", (int(t), int(u)), float(asym[t, u])))
    over = np.triu(np.abs(theta) > bounds.alpha + tol)
    for t, u in zip(*np.nonzero(over)):
        out.append(Violation("entry_bound", (int(t), int(u)), float(abs(theta[t, u]) - bounds.alpha)))
    rows = np.sum(np.abs(theta), axis=1)
    for t in np.nonzero(rows > bounds.beta + tol)[0]:
        out.append(Violation("row_l1", (int(t),), float(rows[t] - bounds.beta)))
    return out


def field_violations(fields, bounds, tol=0.0):
    fields = np.asarray(fields, dtype=float)
    out = []
    for i, t in zip(*np.nonzero(np.abs(fields) > bounds.alpha + tol)):
        out.append(Violation("field_bound", (int(i), int(t)), float(abs(fields[i, t]) - bounds.alpha)))
    return out


def validate(params, bounds, tol=0.0):
    """Report every violated constraint of ``params``; empty iff feasible.

    ``tol`` is an absolute slack applied to each inequality.
    """
    if params.units.p != params.population.p:
        raise InvalidArgument("dimension mismatch between fields and interaction matrix")
    v = population_violations(params.theta, bounds, tol) + field_violations(params.fields, bounds, tol)
    return FeasibilityReport(tuple(v))
