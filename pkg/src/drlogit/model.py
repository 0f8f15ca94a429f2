"""Core types and estimating-function kernels.

The target model is a logistic partially linear model for a binary
response: P(Y=1 | Z, X) = expit(beta' Z + g(X)), where Z holds the
covariates of interest and g is an unrestricted function of the
remaining covariates X.  Working models are linear in a user-declared
feature basis b(X): an outcome model g(X; alpha) = alpha' b(X), and a
covariate-mean model for E(Z | Y=0, X) with per-component Gaussian or
Bernoulli families.

This module houses the value types, numerically careful link and
residual evaluations, the instrument matrices phi(X) entering the
doubly robust estimating function, the estimating-function kernels
themselves, and exact finite-support laws used as enumeration oracles.
All functions are pure; nothing here holds mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

__all__ = [
    "EstimationError",
    "ConvergenceError",
    "SingularMatrixError",
    "expit",
    "BasisTerm",
    "Basis",
    "Dataset",
    "OutcomeModelParams",
    "CovariateModelParams",
    "InstrumentSpec",
    "LinearInstrument",
    "BinaryInstrument",
    "FiniteLaw",
    "logistic_finite_law",
    "response_prob",
    "calibrated_residual",
    "calibrated_residual_y1",
    "covariate_means",
    "instrument_matrix",
    "instrument_matrices",
    "ee_dr",
    "ee_dr_y1",
    "ee_instrument",
    "ortho_complement_identity_gap",
]


class EstimationError(RuntimeError):
    """Base class for numerical-estimation failures."""


class ConvergenceError(EstimationError):
    """A solver did not reach its tolerance (possible separation or no root)."""


class SingularMatrixError(EstimationError):
    """A matrix that must be inverted is singular or too ill-conditioned."""


# Condition numbers beyond this are treated as a broken configuration,
# not a numerical detail to smooth over.
COND_LIMIT = 1e12


def expit(c):
    """Inverse logit 1 / (1 + exp(-c)), stable on both tails.

    Uses the sign of c to pick the overflow-free branch, so arguments of
    magnitude well beyond 700 neither overflow nor underflow to garbage.
    Accepts scalars or arrays; returns a float for scalar input.
    """
    arr = np.asarray(c, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    return float(out[0]) if scalar else out


def _scalar_expit(c: float) -> float:
    # hot-path scalar version of the same sign-split evaluation
    if c >= 0.0:
        return 1.0 / (1.0 + math.exp(-c))
    e = math.exp(c)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# Feature basis
# ---------------------------------------------------------------------------

TermKind = Literal["intercept", "linear", "square", "interaction"]


@dataclass(frozen=True)
class BasisTerm:
    """One feature: intercept, coordinate j, its square, or a product j*k."""

    kind: TermKind
    j: int = 0
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("intercept", "linear", "square", "interaction"):
            raise ValueError(f"unknown basis term kind {self.kind!r}")
        if self.kind != "intercept" and self.j < 0:
            raise ValueError("basis term index must be nonnegative")
        if self.kind == "interaction" and self.k < 0:
            raise ValueError("basis term index must be nonnegative")


@dataclass(frozen=True)
class Basis:
    """Deterministic feature map x -> b(x); the first term is the intercept."""

    terms: tuple[BasisTerm, ...]

    def __post_init__(self):
        if len(self.terms) == 0:
            raise ValueError("basis needs at least the intercept term")
        if self.terms[0].kind != "intercept":
            raise ValueError("first basis term must be the intercept")

    @property
    def m(self) -> int:
        return len(self.terms)

    @classmethod
    def linear_in(cls, q: int) -> "Basis":
        """Intercept plus all q raw coordinates."""
        return cls((BasisTerm("intercept"), *(BasisTerm("linear", j) for j in range(q))))

    def plus(self, *terms: BasisTerm) -> "Basis":
        return Basis(self.terms + tuple(terms))

    def covers(self, other: "Basis") -> bool:
        """True when every term of `other` is present here."""
        return set(other.terms) <= set(self.terms)

    def design(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the basis on rows of x; returns an (n, m) matrix."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, q = x.shape
        cols = []
        for t in self.terms:
            if t.kind == "intercept":
                cols.append(np.ones(n))
                continue
            if t.j >= q or (t.kind == "interaction" and t.k >= q):
                raise ValueError(f"basis term {t} references a coordinate beyond q={q}")
            if t.kind == "linear":
                cols.append(x[:, t.j])
            elif t.kind == "square":
                cols.append(x[:, t.j] ** 2)
            else:
                cols.append(x[:, t.j] * x[:, t.k])
        return np.column_stack(cols)

    def row(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the basis at a single point; returns an (m,) vector."""
        return self.design(np.asarray(x, dtype=float)[None, :])[0]


# ---------------------------------------------------------------------------
# Data and parameter containers
# ---------------------------------------------------------------------------


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """n observations of a binary response y, covariates of interest z (p
    columns) and other covariates x (q columns)."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 1 or y.size == 0:
            raise ValueError("y must be a nonempty 1-d array")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("y values must be exactly 0 or 1")
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if z.ndim != 2 or x.ndim != 2:
            raise ValueError("z and x must be 2-d arrays")
        n = y.shape[0]
        if z.shape[0] != n or x.shape[0] != n:
            raise ValueError("y, z, x must have the same number of rows")
        yi = np.array(y, dtype=np.int64, copy=True)
        yi.setflags(write=False)
        object.__setattr__(self, "y", yi)
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "x", _readonly(x))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def q(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class OutcomeModelParams:
    """Coefficients of the working outcome model expit(beta'z + alpha'b(x))."""

    beta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if not (np.isfinite(beta).all() and np.isfinite(alpha).all()):
            raise ValueError("outcome-model coefficients must be finite")
        object.__setattr__(self, "beta", _readonly(beta))
        object.__setattr__(self, "alpha", _readonly(alpha))


Family = Literal["gaussian", "bernoulli"]


@dataclass(frozen=True)
class CovariateModelParams:
    """Per-component working model for E(Z | Y=y0, X).

    Row j of `gamma` holds the coefficients of component j on b(X); the
    component mean is gamma_j'b(x) for a Gaussian family and
    expit(gamma_j'b(x)) for a Bernoulli one.  `resid_var` holds the
    residual variance of Gaussian components (ignored, conventionally
    NaN, for Bernoulli ones).
    """

    gamma: np.ndarray
    families: tuple[Family, ...]
    resid_var: np.ndarray

    def __post_init__(self):
        gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        rv = np.atleast_1d(np.asarray(self.resid_var, dtype=float))
        fams = tuple(self.families)
        if gamma.shape[0] != len(fams) or rv.shape[0] != len(fams):
            raise ValueError("gamma rows, families and resid_var must align")
        for j, fam in enumerate(fams):
            if fam not in ("gaussian", "bernoulli"):
                raise ValueError(f"unknown family {fam!r} for component {j}")
            if fam == "gaussian" and not rv[j] > 0:
                raise ValueError(f"Gaussian component {j} needs resid_var > 0")
        if not np.isfinite(gamma).all():
            raise ValueError("covariate-model coefficients must be finite")
        object.__setattr__(self, "gamma", _readonly(gamma))
        object.__setattr__(self, "resid_var", _readonly(rv))
        object.__setattr__(self, "families", fams)

    @property
    def p(self) -> int:
        return len(self.families)


Variant = Literal["identity", "simple", "optimal"]


@dataclass(frozen=True)
class InstrumentSpec:
    """Choice of the p x p instrument matrix phi(X).

    identity: the identity matrix.
    simple:   expit(alpha'b(x)) times the identity.
    optimal:  variance-minimizing matrix built from conditional moments of
              Z given (Y=0, X) under the declared families; Gaussian
              components are integrated by Gauss-Hermite quadrature of
              order `gh_order`, Bernoulli ones by exact two-point sums.
    """

    variant: Variant = "simple"
    gh_order: int = 21

    def __post_init__(self):
        if self.variant not in ("identity", "simple", "optimal"):
            raise ValueError(f"unknown instrument variant {self.variant!r}")
        if self.gh_order < 5 or self.gh_order % 2 == 0:
            raise ValueError("gh_order must be odd and at least 5")


@dataclass(frozen=True)
class LinearInstrument:
    """u(z, x) = phi(x) z for the general-instrument estimating function."""

    spec: InstrumentSpec


@dataclass(frozen=True)
class BinaryInstrument:
    """Tabulated u for scalar binary Z: u0(x) at z=0, u1(x) at z=1."""

    u0: Callable[[np.ndarray], np.ndarray]
    u1: Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Working-model evaluations
# ---------------------------------------------------------------------------


def covariate_means(covar: CovariateModelParams, x: np.ndarray, basis: Basis) -> np.ndarray:
    """Model means of Z given the conditioning response level, per row of x.

    Returns an (n, p) array; Gaussian components are linear in b(x),
    Bernoulli ones pass through expit.
    """
    bx = basis.design(x)
    lin = bx @ covar.gamma.T
    out = np.empty_like(lin)
    for j, fam in enumerate(covar.families):
        out[:, j] = expit(lin[:, j]) if fam == "bernoulli" else lin[:, j]
    return out


def _eta(z: np.ndarray, x: np.ndarray, params: OutcomeModelParams, basis: Basis) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != params.beta.shape:
        raise ValueError(f"z has shape {z.shape}, beta has shape {params.beta.shape}")
    bx = basis.row(np.atleast_1d(np.asarray(x, dtype=float)))
    if bx.shape != params.alpha.shape:
        raise ValueError(f"basis gives {bx.shape[0]} features, alpha has {params.alpha.shape[0]}")
    return float(params.beta @ z + params.alpha @ bx)


def response_prob(z, x, params: OutcomeModelParams, basis: Basis) -> float:
    """P(Y=1 | Z=z, X=x) under the working model, expit(beta'z + alpha'b(x))."""
    return expit(_eta(z, x, params, basis))


def _check_y(y) -> int:
    if y not in (0, 1):
        raise ValueError("y must be 0 or 1")
    return int(y)


def calibrated_residual(y, z, x, params: OutcomeModelParams, basis: Basis) -> float:
    """Inverse-probability residual y/pi - 1 = y*exp(-eta) - (1-y).

    This is the residual of calibrated (rather than maximum likelihood)
    logistic fitting; it equals (y - pi)/pi whenever pi is in (0, 1).
    """
    y = _check_y(y)
    if y == 0:
        return -1.0
    return math.exp(-_eta(z, x, params, basis))


def calibrated_residual_y1(y, z, x, params: OutcomeModelParams, basis: Basis) -> float:
    """Mirror residual anchored at Y=1: y - (1-y)*exp(eta) = (y - pi)/(1 - pi)."""
    y = _check_y(y)
    if y == 1:
        return 1.0
    return -math.exp(_eta(z, x, params, basis))


# ---------------------------------------------------------------------------
# Instrument matrices phi(X)
# ---------------------------------------------------------------------------

_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_hermite_points(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes t and probability weights w with sum(w)=1 such that
    E[h(Z)] for Z ~ N(m, s2) is approximated by sum w_k h(m + sqrt(2 s2) t_k)."""
    if order not in _GH_CACHE:
        t, w = np.polynomial.hermite.hermgauss(order)
        _GH_CACHE[order] = (t, w / math.sqrt(math.pi))
    return _GH_CACHE[order]


def _optimal_instrument_batch(
    x: np.ndarray,
    outcome: OutcomeModelParams,
    covar: CovariateModelParams,
    basis: Basis,
    order: int,
    *,
    condition_on_y1: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Variance-minimizing phi(x) per row, with condition numbers.

    phi(x) = A(x) B(x)^{-1} where A = E[(Z-f)(Z-f)' | Y=y0, x] and
    B = E[w (Z-f)(Z-f)' | Y=y0, x], with weight w = 1/pi for the Y=0
    conditioning and 1/(1-pi) for the Y=1 mirror.  Components of Z are
    treated as mutually independent under their declared families.
    """
    p = covar.p
    if outcome.beta.shape[0] != p:
        raise ValueError("beta and covariate model disagree on dim(Z)")
    n_gauss = sum(1 for f in covar.families if f == "gaussian")
    if n_gauss > 3:
        raise ValueError("optimal instrument with more than 3 Gaussian components: "
                         "tensor quadrature refused")
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    n = x2.shape[0]
    f = covariate_means(covar, x2, basis)
    g = basis.design(x2) @ outcome.alpha
    beta = outcome.beta

    node_vals: list[np.ndarray] = []
    node_wts: list[np.ndarray | None] = []
    for j, fam in enumerate(covar.families):
        if fam == "gaussian":
            t, w = gauss_hermite_points(order)
            node_vals.append(math.sqrt(2.0 * covar.resid_var[j]) * t)  # residual offsets
            node_wts.append(w)
        else:
            node_vals.append(np.array([0.0, 1.0]))  # z values
            node_wts.append(None)
    sizes = [v.shape[0] for v in node_vals]
    grid = np.indices(sizes).reshape(p, -1).T  # (N, p) node indices
    N = grid.shape[0]

    mats = np.empty((n, p, p))
    conds = np.empty(n)
    chunk = max(1, int(2_000_000 // max(N * p, 1)))
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        fc, gc = f[sl], g[sl]
        c = fc.shape[0]
        resid = np.empty((c, N, p))
        wts = np.ones((c, N))
        bz = np.zeros((c, N))
        for j, fam in enumerate(covar.families):
            ij = grid[:, j]
            if fam == "gaussian":
                r = node_vals[j][ij][None, :]
                resid[:, :, j] = r
                wts = wts * node_wts[j][ij][None, :]
                zj = fc[:, j][:, None] + r
            else:
                zj = np.broadcast_to(node_vals[j][ij][None, :], (c, N))
                pj = fc[:, j][:, None]
                resid[:, :, j] = zj - pj
                wts = wts * np.where(zj > 0.5, pj, 1.0 - pj)
            bz = bz + beta[j] * zj
        eta = gc[:, None] + bz
        with np.errstate(over="ignore"):
            inv_prob = 1.0 + np.exp(eta if condition_on_y1 else -eta)
        a_mat = np.einsum("cn,cnj,cnk->cjk", wts, resid, resid)
        b_mat = np.einsum("cn,cn,cnj,cnk->cjk", wts, inv_prob, resid, resid)
        with np.errstate(all="ignore"):
            cnd = np.linalg.cond(b_mat)
        cnd = np.where(np.isfinite(cnd), cnd, np.inf)
        if np.any(cnd > COND_LIMIT) or not np.isfinite(b_mat).all():
            worst = int(np.argmax(cnd))
            raise SingularMatrixError(
                f"optimal instrument: inner moment matrix has condition number "
                f"{cnd[worst]:.3g} > {COND_LIMIT:.0e} at row {lo + worst}")
        mats[sl] = np.linalg.solve(b_mat, a_mat).transpose(0, 2, 1)
        conds[sl] = cnd
    return mats, conds


def instrument_matrices(
    spec: InstrumentSpec,
    x: np.ndarray,
    outcome: OutcomeModelParams,
    covar: CovariateModelParams,
    basis: Basis,
    *,
    condition_on_y1: bool = False,
) -> np.ndarray:
    """Evaluate phi at every row of x; returns an (n, p, p) array."""
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    n = x2.shape[0]
    p = covar.p
    if spec.variant == "identity":
        return np.broadcast_to(np.eye(p), (n, p, p)).copy()
    if spec.variant == "simple":
        g = basis.design(x2) @ outcome.alpha
        scale = expit(-g if condition_on_y1 else g)
        return np.atleast_1d(scale)[:, None, None] * np.eye(p)[None, :, :]
    mats, _ = _optimal_instrument_batch(
        x2, outcome, covar, basis, spec.gh_order, condition_on_y1=condition_on_y1)
    return mats


def instrument_matrix(
    spec: InstrumentSpec,
    x: np.ndarray,
    outcome: OutcomeModelParams,
    covar: CovariateModelParams,
    basis: Basis,
    *,
    condition_on_y1: bool = False,
    return_cond: bool = False,
):
    """phi at a single point x; with return_cond=True also reports the
    condition number of the inverted moment matrix (1 for the scalar
    identity and simple variants)."""
    x1 = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
    if spec.variant == "optimal":
        mats, conds = _optimal_instrument_batch(
            x1, outcome, covar, basis, spec.gh_order, condition_on_y1=condition_on_y1)
        return (mats[0], float(conds[0])) if return_cond else mats[0]
    mat = instrument_matrices(spec, x1, outcome, covar, basis,
                              condition_on_y1=condition_on_y1)[0]
    return (mat, 1.0) if return_cond else mat


# ---------------------------------------------------------------------------
# Estimating-function kernels
# ---------------------------------------------------------------------------


def ee_dr(y, z, x, beta, alpha, covar: CovariateModelParams,
          instrument: InstrumentSpec, basis: Basis) -> np.ndarray:
    """Doubly robust estimating function
    {y*exp(-beta'z - alpha'b(x)) - (1-y)} phi(x) {z - f(x)}.

    Unbiased for the true beta whenever the outcome model or the
    covariate-mean model is correctly specified, for any phi.
    """
    params = OutcomeModelParams(beta, alpha)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    phi = instrument_matrix(instrument, x, params, covar, basis)
    resid = z - covariate_means(covar, np.atleast_1d(x), basis)[0]
    return calibrated_residual(y, z, x, params, basis) * (phi @ resid)


def ee_dr_y1(y, z, x, beta, alpha, covar1: CovariateModelParams,
             instrument: InstrumentSpec, basis: Basis) -> np.ndarray:
    """Mirror of ee_dr conditioning on Y=1: the residual anchors at Y=1 and
    f models E(Z | Y=1, X)."""
    params = OutcomeModelParams(beta, alpha)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    phi = instrument_matrix(instrument, x, params, covar1, basis, condition_on_y1=True)
    resid = z - covariate_means(covar1, np.atleast_1d(x), basis)[0]
    return calibrated_residual_y1(y, z, x, params, basis) * (phi @ resid)


def ee_instrument(y, z, x, beta, alpha, covar: CovariateModelParams,
                  u: LinearInstrument | BinaryInstrument, basis: Basis) -> np.ndarray:
    """General-instrument estimating function
    {y/pi - 1} {u(z, x) - E[u | Y=0, x]}.

    For a linear instrument u = phi(x) z the centering is exact,
    E[u | Y=0, x] = phi(x) f(x), for any Z family.  Tabulated instruments
    are supported for scalar binary Z only, where the conditional mean is
    an exact two-point sum.
    """
    params = OutcomeModelParams(beta, alpha)
    y = _check_y(y)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    eta = _eta(z, x, params, basis)
    # y/pi - 1 evaluated in the stable factored form (1-pi)/pi for y=1.
    w = _scalar_expit(-eta) / _scalar_expit(eta) if y == 1 else -1.0

    if isinstance(u, LinearInstrument):
        phi = instrument_matrix(u.spec, x, params, covar, basis)
        centered = phi @ (z - covariate_means(covar, np.atleast_1d(x), basis)[0])
        return w * centered
    if isinstance(u, BinaryInstrument):
        if covar.p != 1 or covar.families[0] != "bernoulli":
            raise ValueError("tabulated instruments only support scalar binary Z; "
                             "continuous Z is limited to linear-in-Z instruments")
        if z[0] not in (0.0, 1.0):
            raise ValueError("tabulated instrument evaluated at a non-binary z")
        f = covariate_means(covar, np.atleast_1d(x), basis)[0, 0]
        u0 = np.atleast_1d(np.asarray(u.u0(np.asarray(x, dtype=float)), dtype=float))
        u1 = np.atleast_1d(np.asarray(u.u1(np.asarray(x, dtype=float)), dtype=float))
        uval = u1 if z[0] == 1.0 else u0
        return w * (uval - ((1.0 - f) * u0 + f * u1))
    raise TypeError(f"unsupported instrument type {type(u).__name__}")


# ---------------------------------------------------------------------------
# Exact finite-support laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteLaw:
    """A finite joint law of (Y, Z, X): support rows with probabilities."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    prob: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        pr = np.asarray(self.prob, dtype=float)
        if z.shape[0] != y.shape[0]:
            z = z.T
        if x.shape[0] != y.shape[0]:
            x = x.T
        if not np.isin(y, (0, 1)).all():
            raise ValueError("finite-law y values must be 0 or 1")
        if (pr < 0).any():
            raise ValueError("finite-law probabilities must be nonnegative")
        if not (y.shape[0] == z.shape[0] == x.shape[0] == pr.shape[0]):
            raise ValueError("finite-law arrays must have matching lengths")
        yi = np.array(y, dtype=np.int64)
        yi.setflags(write=False)
        object.__setattr__(self, "y", yi)
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "prob", _readonly(pr))

    @property
    def size(self) -> int:
        return self.y.shape[0]

    def check_normalized(self, tol: float = 1e-10) -> None:
        s = float(self.prob.sum())
        if abs(s - 1.0) > tol:
            raise ValueError(f"law not normalized: probabilities sum to {s!r}")

    def expectation(self, fn: Callable[[int, np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        """Exact E[fn(Y, Z, X)] by enumeration over the support."""
        total = None
        for i in range(self.size):
            v = np.atleast_1d(np.asarray(
                fn(int(self.y[i]), self.z[i], self.x[i]), dtype=float))
            total = v * self.prob[i] if total is None else total + v * self.prob[i]
        return total


def logistic_finite_law(
    beta: np.ndarray,
    g_of_x: Callable[[np.ndarray], float],
    x_points: np.ndarray,
    x_probs: np.ndarray,
    z_support: np.ndarray,
    pz_given_y0: np.ndarray,
) -> FiniteLaw:
    """Finite law from the odds-ratio factorization
    p(y, z | x) proportional to exp(beta'z * y) p(z | Y=0, x) p(y | Z=0, x),
    with P(Y=1 | Z=0, x) = expit(g(x)).

    By construction the law satisfies P(Y=1 | Z=z, X=x) =
    expit(beta'z + g(x)) exactly, and p(z | Y=0, x) is exactly the
    declared table, which makes correct/incorrect working-model scenarios
    unambiguous.  `pz_given_y0[k, l]` is P(Z = z_support[l] | Y=0, x_k).
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    if x_points.shape[0] != np.asarray(x_probs).shape[0]:
        x_points = x_points.T
    x_probs = np.asarray(x_probs, dtype=float)
    z_support = np.atleast_2d(np.asarray(z_support, dtype=float))
    if z_support.shape[1] != beta.shape[0]:
        z_support = z_support.T
    pz = np.atleast_2d(np.asarray(pz_given_y0, dtype=float))

    ys, zs, xs, ps = [], [], [], []
    for k in range(x_points.shape[0]):
        xk = x_points[k]
        e0 = expit(float(g_of_x(xk)))
        w = []
        for l in range(z_support.shape[0]):
            zl = z_support[l]
            w.append((0, zl, (1.0 - e0) * pz[k, l]))
            w.append((1, zl, e0 * pz[k, l] * math.exp(float(beta @ zl))))
        c = sum(t[2] for t in w)
        for yv, zl, wv in w:
            ys.append(yv)
            zs.append(zl)
            xs.append(xk)
            ps.append(x_probs[k] * wv / c)
    return FiniteLaw(np.array(ys), np.array(zs), np.array(xs), np.array(ps))


def ortho_complement_identity_gap(
    h: Callable[[np.ndarray, np.ndarray], np.ndarray],
    law: FiniteLaw,
) -> float:
    """Exact-enumeration check of the conditioning identity
    E[h pi (1-pi) | X] = P(Y=0 | X) E[h pi | Y=0, X],
    where pi(z, x) = P(Y=1 | Z=z, X=x) is computed from the law itself.

    Returns the maximum absolute discrepancy over the X support (and over
    components of h).  Requires a normalized law with every pi strictly
    inside (0, 1) and P(Y=0 | X) > 0 for every supported x.
    """
    law.check_normalized()
    groups: dict[bytes, list[int]] = {}
    for i in range(law.size):
        groups.setdefault(law.x[i].tobytes(), []).append(i)

    worst = 0.0
    for idx in groups.values():
        idx = np.asarray(idx)
        px = float(law.prob[idx].sum())
        if px <= 0.0:
            continue
        p_y0 = float(law.prob[idx[law.y[idx] == 0]].sum())
        if p_y0 == 0.0:
            raise ValueError("P(Y=0 | X=x) is zero for a supported x; "
                             "the Y=0 conditioning is undefined")
        zgroups: dict[bytes, list[int]] = {}
        for i in idx:
            zgroups.setdefault(law.z[i].tobytes(), []).append(int(i))
        lhs = None
        rhs = None
        for zidx in zgroups.values():
            zidx = np.asarray(zidx)
            pz = float(law.prob[zidx].sum())
            p1 = float(law.prob[zidx[law.y[zidx] == 1]].sum())
            pi = p1 / pz
            if not 0.0 < pi < 1.0:
                raise ValueError("pi(z, x) must be strictly inside (0, 1) "
                                 "on the whole support")
            hval = np.atleast_1d(np.asarray(
                h(law.z[zidx[0]], law.x[zidx[0]]), dtype=float))
            term_l = (pz / px) * pi * (1.0 - pi) * hval
            term_r = ((pz - p1) / px) * pi * hval
            lhs = term_l if lhs is None else lhs + term_l
            rhs = term_r if rhs is None else rhs + term_r
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst
