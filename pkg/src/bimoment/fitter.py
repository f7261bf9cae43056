"""Moment-equation fitter for covariate-adjusted bipartite network models.

The model gives every actor ``i`` a heterogeneity parameter ``alpha_i``,
every event ``j`` a parameter ``beta_j`` (with ``beta_n`` pinned to zero
for identifiability), and the edge covariates a coefficient vector
``gamma``.  Edge weights are drawn independently from a family whose
mean at predictor ``pi_ij = alpha_i + beta_j + z_ij @ gamma`` is
``mu(pi_ij)``.

Fitting equates observed degrees and covariate-weighted edge totals with
their model expectations:

    sum_k mu(pi_ik) = d_i                 (one equation per actor)
    sum_k mu(pi_kj) = b_j                 (events 1..n-1; the n-th
                                           equation is linearly dependent
                                           through the total-weight
                                           identity and is dropped)
    sum_ij z_ij mu(pi_ij) = sum_ij z_ij x_ij

The solver is a two-stage Newton scheme:  an inner Newton solve of the
degree equations at fixed ``gamma`` (the Jacobian is diagonally dominant
with two diagonal blocks plus a dense cross block, solved exactly via a
Schur complement on the actor block), and an outer Newton iteration on
the profiled covariate residuals whose Jacobian is the p x p information
matrix assembled from exact structured solves.

A solution need not exist (a zero-degree actor under a positive mean
function, for instance); divergence is detected and reported as
``NonExistenceError`` rather than looping forever.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.linalg

from .data import BipartiteGraph, CovariateTensor, degrees
from .errors import (
    DataError,
    DomainError,
    IllPosedError,
    MaxIterationsError,
    ModelDegeneracyError,
    NonExistenceError,
    SingularJacobianError,
)
from .families import ModelFamily

# Divergence guard: beyond this magnitude every shipped family is fully
# saturated, so a parameter escaping it signals nonexistence.
PARAM_CAP = 40.0


@dataclass(frozen=True)
class ParameterSet:
    """Model parameters (alpha, beta, gamma) with ``beta[-1]`` pinned to 0."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        for name, arr in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if beta[-1] != 0.0:
            raise ValueError("beta[-1] must be exactly 0 (identifiability pin)")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def m(self) -> int:
        return self.alpha.shape[0]

    @property
    def n(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    @property
    def theta(self) -> np.ndarray:
        """Free degree parameters: alpha followed by beta[:-1]."""
        return np.concatenate([self.alpha, self.beta[:-1]])

    @classmethod
    def zeros(cls, m: int, n: int, p: int) -> "ParameterSet":
        return cls(alpha=np.zeros(m), beta=np.zeros(n), gamma=np.zeros(p))

    @classmethod
    def from_theta(cls, theta: np.ndarray, gamma: np.ndarray, m: int, n: int) -> "ParameterSet":
        theta = np.asarray(theta, dtype=float)
        beta = np.zeros(n)
        beta[: n - 1] = theta[m:]
        return cls(alpha=theta[:m], beta=beta, gamma=gamma)

    def linear_predictor(self, covariates: CovariateTensor) -> np.ndarray:
        """The m x n matrix pi_ij = alpha_i + beta_j + z_ij @ gamma."""
        pi = self.alpha[:, None] + self.beta[None, :]
        if self.p:
            pi = pi + covariates.values @ self.gamma
        return pi


@dataclass(frozen=True)
class FitOptions:
    """Solver controls.  Tolerances are sup-norm residual bounds."""

    tol_inner: float = 1e-8
    tol_outer: float = 1e-8
    max_inner: int = 100
    max_outer: int = 50
    max_halvings: int = 30
    init: str = "zero"  # "zero" | "degree"

    def __post_init__(self):
        if self.tol_inner <= 0 or self.tol_outer <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.init not in ("zero", "degree"):
            raise ValueError(f"unknown init rule {self.init!r}")


@dataclass(frozen=True)
class MomentResiduals:
    """Degree residuals (length m+n-1) and covariate residuals (length p)."""

    degree: np.ndarray
    covariate: np.ndarray

    @property
    def degree_norm(self) -> float:
        return float(np.abs(self.degree).max()) if self.degree.size else 0.0

    @property
    def covariate_norm(self) -> float:
        return float(np.abs(self.covariate).max()) if self.covariate.size else 0.0


class StructuredJacobian:
    """Jacobian of the degree residuals in its structured form.

    With slopes ``w_ij = mu'(pi_ij) > 0`` the matrix is

        [ diag(row sums of w)      w[:, :n-1]          ]
        [ w[:, :n-1]^T             diag(col sums of w) ]

    which is symmetric, nonnegative, diagonally dominant (the actor rows
    carry a surplus of ``w_in``, the dropped event column) and therefore
    positive definite.  Solves go through the Schur complement on the
    actor block: only the dense (n-1) x (n-1) complement is factored.
    """

    def __init__(self, slopes: np.ndarray):
        slopes = np.asarray(slopes, dtype=float)
        if slopes.ndim != 2:
            raise ValueError("slopes must be an m x n matrix")
        if not np.all(np.isfinite(slopes)) or np.any(slopes <= 0.0):
            raise ModelDegeneracyError(
                "mean slopes must be strictly positive over all pairs"
            )
        self.slopes = slopes
        self.m, self.n = slopes.shape
        self.dim = self.m + self.n - 1

    @cached_property
    def diag_alpha(self) -> np.ndarray:
        return self.slopes.sum(axis=1)

    @cached_property
    def diag_beta(self) -> np.ndarray:
        return self.slopes[:, :-1].sum(axis=0)

    @property
    def cross(self) -> np.ndarray:
        return self.slopes[:, :-1]

    @cached_property
    def diag(self) -> np.ndarray:
        """All m+n-1 diagonal entries."""
        return np.concatenate([self.diag_alpha, self.diag_beta])

    @cached_property
    def tail_weights(self) -> np.ndarray:
        """Per-row diagonal surplus (the implicit coupling to the dropped
        event): ``mu'(pi_in)`` for actor rows, zero for event rows."""
        return np.concatenate([self.slopes[:, -1], np.zeros(self.n - 1)])

    @cached_property
    def v_tail(self) -> float:
        """Total coupling weight, i.e. the dropped event's diagonal entry."""
        return float(self.slopes[:, -1].sum())

    @cached_property
    def _schur_factor(self):
        """Cholesky factor of diag_beta - cross^T diag_alpha^{-1} cross."""
        if self.n == 1:
            return None
        g = self.cross / self.diag_alpha[:, None]
        complement = np.diag(self.diag_beta) - self.cross.T @ g
        try:
            return scipy.linalg.cho_factor(complement, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"Schur complement not PD: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``V x = rhs`` exactly; accepts a vector or a matrix of
        stacked right-hand sides."""
        rhs = np.asarray(rhs, dtype=float)
        vector_in = rhs.ndim == 1
        r = rhs.reshape(self.dim, -1)
        ra, rb = r[: self.m], r[self.m :]
        xa0 = ra / self.diag_alpha[:, None]
        if self.n == 1:
            x = xa0
        else:
            xb = scipy.linalg.cho_solve(self._schur_factor, rb - self.cross.T @ xa0)
            xa = xa0 - (self.cross @ xb) / self.diag_alpha[:, None]
            x = np.vstack([xa, xb])
        return x[:, 0] if vector_in else x

    def inverse_blocks(self):
        """Blocks of the exact inverse needed by the inference formulas:
        the actor-diagonal, the dense actor-event block, and the dense
        event block.  Returns ``(inv_alpha_diag, inv_cross, inv_beta)``.
        """
        if self.n == 1:
            return 1.0 / self.diag_alpha, np.zeros((self.m, 0)), np.zeros((0, 0))
        inv_beta = scipy.linalg.cho_solve(self._schur_factor, np.eye(self.n - 1))
        g = self.cross / self.diag_alpha[:, None]
        inv_cross = -g @ inv_beta
        inv_alpha_diag = 1.0 / self.diag_alpha + np.einsum(
            "ij,ij->i", g @ inv_beta, g
        )
        return inv_alpha_diag, inv_cross, inv_beta

    def dense(self) -> np.ndarray:
        """Materialize the full (m+n-1) x (m+n-1) matrix (for tests and
        small-scale oracles)."""
        v = np.zeros((self.dim, self.dim))
        v[: self.m, : self.m] = np.diag(self.diag_alpha)
        v[self.m :, self.m :] = np.diag(self.diag_beta)
        v[: self.m, self.m :] = self.cross
        v[self.m :, : self.m] = self.cross.T
        return v

    def summary(self) -> dict:
        """Diagnostics: slope range and diagonal range at this point."""
        return {
            "slope_min": float(self.slopes.min()),
            "slope_max": float(self.slopes.max()),
            "diag_min": float(self.diag.min()),
            "diag_max": float(self.diag.max()),
            "v_tail": self.v_tail,
        }


@dataclass(frozen=True)
class IterationRecord:
    """One outer-iteration row of the convergence trace."""

    outer_iteration: int
    inner_iterations: int
    degree_norm: float
    covariate_norm: float


@dataclass(frozen=True)
class FitResult:
    """A fitted model together with everything inference needs."""

    params: ParameterSet
    residuals: MomentResiduals
    converged: bool
    trace: tuple
    jacobian_summary: dict
    graph: BipartiteGraph
    covariates: CovariateTensor
    family: ModelFamily
    options: FitOptions

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_edges(self) -> int:
        """Total number of dyads N = m * n."""
        return self.graph.m * self.graph.n

    @cached_property
    def predictor(self) -> np.ndarray:
        return self.params.linear_predictor(self.covariates)

    @cached_property
    def jacobian(self) -> StructuredJacobian:
        return build_jacobian(self.params, self.covariates, self.family)


def degree_residuals(
    params: ParameterSet,
    graph: BipartiteGraph,
    covariates: CovariateTensor,
    family: ModelFamily,
) -> np.ndarray:
    """Expected-minus-observed degrees for all actors and events 1..n-1."""
    mu = family.mean(params.linear_predictor(covariates))
    deg = degrees(graph)
    return np.concatenate(
        [mu.sum(axis=1) - deg.d, mu[:, :-1].sum(axis=0) - deg.b[:-1]]
    )


def covariate_residuals(
    params: ParameterSet,
    graph: BipartiteGraph,
    covariates: CovariateTensor,
    family: ModelFamily,
) -> np.ndarray:
    """Covariate-weighted expected-minus-observed edge totals (length p)."""
    if covariates.p == 0:
        return np.zeros(0)
    mu = family.mean(params.linear_predictor(covariates))
    return np.einsum("ijk,ij->k", covariates.values, mu - graph.weights)


def build_jacobian(
    params: ParameterSet, covariates: CovariateTensor, family: ModelFamily
) -> StructuredJacobian:
    """Structured Jacobian of the degree residuals at ``params``."""
    slopes = family.mean_d1(params.linear_predictor(covariates))
    return StructuredJacobian(slopes)


def solve_structured(jacobian: StructuredJacobian, rhs: np.ndarray) -> np.ndarray:
    """Exact solve of the structured system (Schur complement path)."""
    return jacobian.solve(rhs)


def _check_feasible_degrees(graph: BipartiteGraph, family: ModelFamily):
    """Fail fast on degree configurations that rule out a finite solution.

    Any family here has strictly positive means, so zero degrees are
    unreachable; for binary support, saturated degrees are as well.  The
    event-n equation is dropped from the system but is implied by the
    others, so its degree is checked too.
    """
    deg = degrees(graph)
    zero_d = np.nonzero(deg.d == 0)[0]
    zero_b = np.nonzero(deg.b == 0)[0]
    if zero_d.size:
        raise NonExistenceError(
            f"actor {graph.actor_labels[zero_d[0]]!r} has degree 0; "
            "the degree equations have no finite solution"
        )
    if zero_b.size:
        raise NonExistenceError(
            f"event {graph.event_labels[zero_b[0]]!r} has degree 0; "
            "the degree equations have no finite solution"
        )
    if family.support == "binary":
        full_d = np.nonzero(deg.d == graph.n)[0]
        full_b = np.nonzero(deg.b == graph.m)[0]
        if full_d.size:
            raise NonExistenceError(
                f"actor {graph.actor_labels[full_d[0]]!r} is connected to every "
                "event; the degree equations have no finite solution"
            )
        if full_b.size:
            raise NonExistenceError(
                f"event {graph.event_labels[full_b[0]]!r} is connected to every "
                "actor; the degree equations have no finite solution"
            )


def _degree_init(graph: BipartiteGraph, family: ModelFamily) -> np.ndarray:
    """Method-of-moments warm start for the degree parameters."""
    deg = degrees(graph)
    m, n = graph.m, graph.n
    if family.support == "binary":
        eps = 1.0 / (2.0 * max(m, n))
        pa = np.clip(deg.d / n, eps, 1 - eps)
        pb = np.clip(deg.b / m, eps, 1 - eps)
        alpha = np.log(pa / (1 - pa))
        beta_full = np.log(pb / (1 - pb))
    else:
        alpha = np.log((deg.d + 1.0) / n)
        beta_full = np.log((deg.b + 1.0) / m)
    beta_free = beta_full[:-1] - beta_full[-1]
    return np.concatenate([alpha / 2.0, beta_free / 2.0])


def solve_degree_params(
    gamma: np.ndarray,
    graph: BipartiteGraph,
    covariates: CovariateTensor,
    family: ModelFamily,
    options: FitOptions = FitOptions(),
    warm_start: np.ndarray = None,
) -> tuple:
    """Newton solve of the degree equations at fixed ``gamma``.

    Returns ``(params, trace)`` where ``trace`` is the sup-norm residual
    per iteration.  Raises ``NonExistenceError`` when the iteration
    diverges or the iteration cap is hit: by the theory a finite solution
    exists only with high probability, and divergence is the observable
    signature of the exceptional event.
    """
    _check_feasible_degrees(graph, family)
    m, n = graph.m, graph.n
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    if warm_start is not None:
        theta = np.asarray(warm_start, dtype=float).copy()
    elif options.init == "degree":
        theta = _degree_init(graph, family)
    else:
        theta = np.zeros(m + n - 1)

    def residual(th):
        params = ParameterSet.from_theta(th, gamma, m, n)
        return params, degree_residuals(params, graph, covariates, family)

    params, f = residual(theta)
    norm = float(np.abs(f).max())
    trace = [norm]
    for _ in range(options.max_inner):
        if norm <= options.tol_inner:
            return params, tuple(trace)
        jac = build_jacobian(params, covariates, family)
        step = jac.solve(f)
        scale = 1.0
        accepted = False
        for _ in range(options.max_halvings + 1):
            trial = theta - scale * step
            try:
                trial_params, trial_f = residual(trial)
            except DomainError:
                # trial point left the family's working domain
                scale *= 0.5
                continue
            trial_norm = float(np.abs(trial_f).max())
            if trial_norm < norm:
                theta, params, f, norm = trial, trial_params, trial_f, trial_norm
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            # a stall at the numerical floor is still a solution when the
            # residual is already within the requested tolerance
            if norm <= options.tol_inner:
                return params, tuple(trace)
            raise NonExistenceError(
                "degree-equation Newton stalled under full damping; "
                "no finite solution found",
                trace=trace,
            )
        trace.append(norm)
        if np.abs(theta).max() > PARAM_CAP:
            raise NonExistenceError(
                f"degree parameter escaped [-{PARAM_CAP:g}, {PARAM_CAP:g}]; "
                "the moment equations appear to have no finite solution",
                trace=trace,
            )
    if norm <= options.tol_inner:
        return params, tuple(trace)
    raise NonExistenceError(
        f"inner Newton did not reach tolerance in {options.max_inner} iterations",
        trace=trace,
    )


def profiled_residuals(
    gamma: np.ndarray,
    graph: BipartiteGraph,
    covariates: CovariateTensor,
    family: ModelFamily,
    options: FitOptions = FitOptions(),
    warm_start: np.ndarray = None,
) -> np.ndarray:
    """Covariate residuals evaluated at the profiled degree parameters
    (the inner solve at this ``gamma``)."""
    q, _params, _trace = _profiled(gamma, graph, covariates, family, options, warm_start)
    return q


def _profiled(gamma, graph, covariates, family, options, warm_start=None):
    params, trace = solve_degree_params(
        gamma, graph, covariates, family, options, warm_start
    )
    q = covariate_residuals(params, graph, covariates, family)
    return q, params, trace


def profile_jacobian(
    params: ParameterSet, covariates: CovariateTensor, family: ModelFamily
) -> np.ndarray:
    """Jacobian of the profiled covariate residuals with respect to gamma.

    For exponential families this is the Fisher information of the
    concentrated likelihood, and its inverse is the asymptotic covariance
    of the coefficient estimate.  Assembled with exact structured solves:

        H = sum_ij z z^T mu'  -  C V^{-1} C^T

    where ``C`` collects the mixed derivatives of the covariate residuals
    in the degree parameters.  Raises ``IllPosedError`` if the result is
    not symmetric positive definite.
    """
    p = covariates.p
    if p == 0:
        return np.zeros((0, 0))
    slopes = family.mean_d1(params.linear_predictor(covariates))
    jac = StructuredJacobian(slopes)
    z = covariates.values
    a = np.einsum("ijk,ijl,ij->kl", z, z, slopes)
    c = mixed_moment_derivative(covariates, slopes)
    h = a - c @ jac.solve(c.T)
    h = 0.5 * (h + h.T)
    try:
        np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise IllPosedError(
            "profiled information matrix is not positive definite; "
            "the coefficient estimate is ill-posed (degenerate covariates?)"
        ) from exc
    return h


def mixed_moment_derivative(
    covariates: CovariateTensor, slopes: np.ndarray
) -> np.ndarray:
    """The p x (m+n-1) matrix of covariate-residual derivatives in the
    degree parameters: column i is ``sum_j z_ij mu'_ij``, column m+j is
    ``sum_i z_ij mu'_ij`` (events 1..n-1)."""
    z = covariates.values
    cols_alpha = np.einsum("ijk,ij->ki", z, slopes)
    cols_beta = np.einsum("ijk,ij->kj", z[:, :-1, :], slopes[:, :-1])
    return np.concatenate([cols_alpha, cols_beta], axis=1)


def fit(
    graph: BipartiteGraph,
    covariates: CovariateTensor = None,
    family: ModelFamily = None,
    options: FitOptions = FitOptions(),
) -> FitResult:
    """Fit the model by the method of moments.

    Outer Newton on ``gamma`` with direction ``-H^{-1} Q`` and step
    halving, refreshing the inner degree solve (warm-started from the
    previous solution) at every trial point.  With ``p = 0`` this reduces
    to the pure bipartite degree model and a single inner solve.
    """
    if family is None:
        raise ValueError("family is required")
    if covariates is None:
        covariates = CovariateTensor.empty(graph.m, graph.n)
    if (covariates.m, covariates.n) != (graph.m, graph.n):
        raise DataError(
            f"covariate dimensions {(covariates.m, covariates.n)} do not match "
            f"graph dimensions {(graph.m, graph.n)}"
        )
    if family.support == "binary" and not graph.is_binary:
        raise DataError("binary family requires a 0/1 weight matrix")

    m, n, p = graph.m, graph.n, covariates.p
    gamma = np.zeros(p)
    # The profiled residuals inherit the inner solve's error, so drive the
    # inner solves well below the outer tolerance (floored near machine
    # precision at the data's scale); the user-facing tolerances still
    # govern the convergence verdict.
    if p:
        deg = degrees(graph)
        floor = 16.0 * np.finfo(float).eps * max(1.0, deg.d.max(), deg.b.max())
        inner_tol = max(min(options.tol_inner, 1e-3 * options.tol_outer), floor)
        inner_options = replace(options, tol_inner=inner_tol)
    else:
        inner_options = options
    q, params, inner_trace = _profiled(gamma, graph, covariates, family, inner_options)
    qnorm = float(np.abs(q).max()) if p else 0.0
    trace = [
        IterationRecord(
            outer_iteration=0,
            inner_iterations=len(inner_trace),
            degree_norm=inner_trace[-1],
            covariate_norm=qnorm,
        )
    ]

    outer_converged = qnorm <= options.tol_outer
    if p and not outer_converged:
        for outer_it in range(1, options.max_outer + 1):
            h = profile_jacobian(params, covariates, family)
            step = np.linalg.solve(h, q)
            scale = 1.0
            accepted = False
            for _ in range(options.max_halvings + 1):
                trial_gamma = gamma - scale * step
                try:
                    trial_q, trial_params, inner_trace = _profiled(
                        trial_gamma, graph, covariates, family, inner_options,
                        warm_start=params.theta,
                    )
                except NonExistenceError:
                    scale *= 0.5
                    continue
                trial_norm = float(np.abs(trial_q).max())
                if trial_norm < qnorm:
                    gamma, params, q, qnorm = (
                        trial_gamma, trial_params, trial_q, trial_norm,
                    )
                    accepted = True
                    break
                scale *= 0.5
            if not accepted:
                raise MaxIterationsError(
                    "outer Newton stalled under full damping",
                    trace=[r.covariate_norm for r in trace],
                )
            trace.append(
                IterationRecord(
                    outer_iteration=outer_it,
                    inner_iterations=len(inner_trace),
                    degree_norm=inner_trace[-1],
                    covariate_norm=qnorm,
                )
            )
            if qnorm <= options.tol_outer:
                outer_converged = True
                break
        if not outer_converged:
            raise MaxIterationsError(
                f"outer Newton did not reach tolerance in {options.max_outer} "
                "iterations",
                trace=[r.covariate_norm for r in trace],
            )

    residuals = MomentResiduals(
        degree=degree_residuals(params, graph, covariates, family),
        covariate=covariate_residuals(params, graph, covariates, family),
    )
    converged = (
        residuals.degree_norm <= options.tol_inner
        and residuals.covariate_norm <= options.tol_outer
    )
    jac = build_jacobian(params, covariates, family)
    return FitResult(
        params=params,
        residuals=residuals,
        converged=converged,
        trace=tuple(trace),
        jacobian_summary=jac.summary(),
        graph=graph,
        covariates=covariates,
        family=family,
        options=options,
    )
