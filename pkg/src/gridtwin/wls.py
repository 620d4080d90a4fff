"""Classical weighted-least-squares state estimation.

Gauss-Newton on r(x) = z - h(x) with the normal equations (J'WJ) d = J'W r,
W = diag(1/sigma^2). The Jacobian comes from central differences; steps that
increase the weighted objective are halved up to ten times. Missing rows are
simply deleted, which is exactly what makes the classical formulation
fragile once masking removes observability.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NoConvergence, RankDeficient
from .feeder import flat_state, state_to_voltages
from .telemetry import measure_many

COND_LIMIT = 1e12


@dataclass(frozen=True)
class WlsProblem:
    """One estimation instance: schema-bound measurements plus weights.

    `weights` are the diagonal of W = R^-1; by default 1/sigma^2 from the
    schema. `mask` (True = missing) is optional; estimate_wls removes masked
    rows before solving.
    """

    schema: object
    Y: np.ndarray
    z: np.ndarray
    weights: np.ndarray
    mask: np.ndarray | None = None

    @classmethod
    def from_schema(cls, schema, Y, z, mask=None, weights=None):
        if weights is None:
            weights = 1.0 / schema.sigmas**2
        weights = np.asarray(weights, dtype=float)
        if np.any(weights <= 0):
            raise ValueError("weights must be strictly positive")
        if len(z) != len(schema) or len(weights) != len(schema):
            raise ValueError("measurement/weight length does not match schema")
        return cls(schema=schema, Y=Y, z=np.asarray(z, dtype=float), weights=weights, mask=mask)

    @property
    def n_states(self):
        return self.schema.feeder.n_states

    @property
    def redundancy_ratio(self):
        return len(self.z) / self.n_states


@dataclass(frozen=True)
class StateEstimate:
    x: np.ndarray  # [Re(v); Im(v)] over non-slack phase-nodes
    iterations: int
    residual: float  # final weighted objective (z-h)'W(z-h)
    converged: bool


def h_eval(schema, Y, x):
    """Measurement function over the rectangular state vector."""
    v = state_to_voltages(schema.feeder, np.asarray(x, dtype=float))
    return measure_many(v[:, None], Y, schema)[:, 0]


def jacobian_fd(schema, Y, x, step=1e-6):
    """Central-difference Jacobian of h at x, one column per state entry."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    n = len(x)
    xs = np.repeat(x[:, None], 2 * n, axis=1)
    cols = np.arange(n)
    xs[cols, 2 * cols] += step
    xs[cols, 2 * cols + 1] -= step
    feeder = schema.feeder
    vm = np.empty((feeder.n_nodes, 2 * n), dtype=complex)
    for k in range(2 * n):
        vm[:, k] = state_to_voltages(feeder, xs[:, k])
    hs = measure_many(vm, Y, schema)
    return (hs[:, 0::2] - hs[:, 1::2]) / (2 * step)


def drop_missing(problem):
    """Delete masked rows from z, weights, and the schema view."""
    if problem.mask is None:
        return problem
    keep = np.flatnonzero(~np.asarray(problem.mask, dtype=bool))
    return replace(
        problem,
        schema=problem.schema.subset(keep),
        z=problem.z[keep],
        weights=problem.weights[keep],
        mask=None,
    )


def _normal_matrix(J, w):
    return (J.T * w) @ J


def estimate_wls(problem, x0=None, tol=1e-8, max_iter=40):
    """Gauss-Newton WLS solve with objective-descent damping.

    Stops when the infinity-norm of the update falls below tol. Raises
    RankDeficient when the normal matrix fails Cholesky or its condition
    estimate exceeds 1e12 (the masked-out unobservable case), NoConvergence
    when damping cannot find a descent step or iterations run out.
    """
    problem = drop_missing(problem)
    schema, Y, z, w = problem.schema, problem.Y, problem.z, problem.weights
    n = problem.n_states
    if len(z) < n:
        raise RankDeficient(f"{len(z)} measurements cannot determine {n} states")
    x = np.array(flat_state(schema.feeder) if x0 is None else x0, dtype=float)

    def objective(xv):
        r = z - h_eval(schema, Y, xv)
        return float(r @ (w * r))

    f = objective(x)
    for iteration in range(1, max_iter + 1):
        r = z - h_eval(schema, Y, x)
        J = jacobian_fd(schema, Y, x)
        A = _normal_matrix(J, w)
        if np.linalg.cond(A) > COND_LIMIT:
            raise RankDeficient(
                f"normal matrix condition estimate exceeds {COND_LIMIT:g} at iteration {iteration}"
            )
        try:
            factor = cho_factor(A)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient(f"Cholesky failed at iteration {iteration}") from exc
        delta = cho_solve(factor, J.T @ (w * r))
        if np.max(np.abs(delta)) <= tol:
            x = x + delta
            return StateEstimate(x=x, iterations=iteration, residual=objective(x), converged=True)
        alpha = 1.0
        for _ in range(11):
            trial = x + alpha * delta
            f_trial = objective(trial)
            if f_trial <= f:
                break
            alpha *= 0.5
        else:
            raise NoConvergence(
                f"no descent step after 10 halvings at iteration {iteration}",
                iterations=iteration,
            )
        x, f = trial, f_trial

    raise NoConvergence(f"Gauss-Newton did not converge in {max_iter} iterations",
                        iterations=max_iter)


def feasibility_check(problem, x0=None):
    """Cheap observability probe at a single point (no iterations).

    Applies the same detection rule as estimate_wls (row count, Cholesky,
    condition limit) to the Jacobian at x0. Returns True when a Gauss-Newton
    step is well-posed.
    """
    problem = drop_missing(problem)
    n = problem.n_states
    if len(problem.z) < n:
        return False
    x = np.array(flat_state(problem.schema.feeder) if x0 is None else x0, dtype=float)
    J = jacobian_fd(problem.schema, problem.Y, x)
    A = _normal_matrix(J, problem.weights)
    if np.linalg.cond(A) > COND_LIMIT:
        return False
    try:
        cho_factor(A)
    except np.linalg.LinAlgError:
        return False
    return True
