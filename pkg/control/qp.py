"""
The per-step CLF-CBF quadratic program.

Problems are tiny and dense: two controls, one or two CLF slacks and a few
dozen inequality rows. They are solved with a dual active-set method
(Goldfarb-Idnani): start from the unconstrained minimiser and add the most
violated constraint until none is left, dropping constraints whose
multipliers would turn negative. Infeasibility shows up as a constraint that
can be neither satisfied by a primal step nor made room for by a dual step.

Conventions: rows read ``A z >= b``; multipliers are non-negative and satisfy
``Q z + q - A^T lam - lam_lb + lam_ub = 0``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings
from scipy.linalg import LinAlgError, cho_factor, cho_solve

logger = logging.getLogger(__name__)

OPTIMAL = 'optimal'
INFEASIBLE = 'infeasible'
MAX_ITER = 'max_iter'

STATUS_CHOICES = (
    (OPTIMAL, 'Optimal'),
    (INFEASIBLE, 'Infeasible'),
    (MAX_ITER, 'Iteration limit'),
)

CLF_ROW = 'clf'
CBF_ROW = 'cbf'

# Rows shorter than this are treated as constant
ZERO_ROW = 1e-14


class QpFailure(Exception):
    """Raised by the controller when a step's QP has no optimal solution."""

    def __init__(self, solution, diagnostics=None):
        super().__init__(f"QP {solution.status} after {solution.iterations} iterations")
        self.solution = solution
        self.diagnostics = diagnostics


def _positive_definite(matrix, name):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[0] != matrix.shape[1] or not np.allclose(matrix, matrix.T):
        raise ValueError(f"{name} must be a symmetric square matrix")
    try:
        cho_factor(matrix)
    except LinAlgError:
        raise ValueError(f"{name} is not positive definite") from None
    return matrix


@dataclass(frozen=True, eq=False)
class QpProblem:
    """minimise 1/2 z^T Q z + q^T z  s.t.  A z >= b,  lb <= z <= ub."""

    Q: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_controls: int = 2
    row_kinds: tuple = ()

    def __post_init__(self):
        Q = _positive_definite(self.Q, "objective matrix")
        n = Q.shape[0]
        q = np.asarray(self.q, dtype=float).reshape(n)
        A = np.asarray(self.A, dtype=float).reshape(-1, n)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        lb = np.asarray(self.lb, dtype=float).reshape(n)
        ub = np.asarray(self.ub, dtype=float).reshape(n)
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"{A.shape[0]} constraint rows but {b.shape[0]} right-hand sides")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(q))):
            raise ValueError("constraint rows and linear term must be finite")
        if np.any(lb > ub):
            raise ValueError("lower bounds exceed upper bounds")
        kinds = tuple(self.row_kinds) or (CBF_ROW,) * A.shape[0]
        if len(kinds) != A.shape[0]:
            raise ValueError("one row kind per constraint row is required")
        for name, value in (('Q', Q), ('q', q), ('A', A), ('b', b), ('lb', lb), ('ub', ub), ('row_kinds', kinds)):
            object.__setattr__(self, name, value)

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.A.shape[0]

    def objective(self, z):
        return float(0.5 * z @ self.Q @ z + self.q @ z)

    def dump(self, stream):
        """Write the instance as plain-text matrices."""
        def line(values):
            return ' '.join(format(float(v), '.17g') for v in values)

        stream.write(f"# qp n={self.n} m={self.m} n_controls={self.n_controls}\n")
        stream.write("Q\n")
        for row in self.Q:
            stream.write(line(row) + "\n")
        stream.write("q\n" + line(self.q) + "\n")
        stream.write("rows (a . z >= b)\n")
        for kind, row, rhs in zip(self.row_kinds, self.A, self.b):
            stream.write(f"{kind} {line(row)} >= {format(float(rhs), '.17g')}\n")
        stream.write("lb\n" + line(self.lb) + "\n")
        stream.write("ub\n" + line(self.ub) + "\n")


@dataclass(frozen=True, eq=False)
class QpSolution:
    z: np.ndarray
    duals: np.ndarray
    lower_duals: np.ndarray
    upper_duals: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    active: tuple = field(default=())

    @property
    def optimal(self):
        return self.status == OPTIMAL


@dataclass(frozen=True)
class KktReport:
    """Absolute violations of each optimality condition."""

    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def worst(self):
        return max(self.stationarity, self.primal, self.dual, self.complementarity)

    def passed(self, tol=None):
        tol = settings.KKT_CHECK_TOLERANCE if tol is None else tol
        return self.worst <= tol


def assemble(clf_rows, cbf_rows, bounds, weights):
    """Build the QP over z = (u, delta).

    ``weights`` is ``(R, H)``: the objective is 1/2 u^T R u + delta^T H delta.
    One slack per CLF in use; a leading block of ``H`` is taken when it is
    larger than needed.
    """
    R = _positive_definite(weights[0], "control weight R")
    H = _positive_definite(weights[1], "slack weight H")
    n_controls = R.shape[0]
    if bounds.u_min.shape != (n_controls,):
        raise ValueError(f"input bounds have {bounds.u_min.shape[0]} entries for {n_controls} controls")
    n_slack = 1 + max((row.slack_index for row in clf_rows), default=0)
    if H.shape[0] < n_slack:
        raise ValueError(f"slack weight H is {H.shape[0]}x{H.shape[0]} but {n_slack} slacks are needed")
    H = H[:n_slack, :n_slack]
    n = n_controls + n_slack

    Q = np.zeros((n, n))
    Q[:n_controls, :n_controls] = R
    Q[n_controls:, n_controls:] = 2.0 * H

    A = np.zeros((len(clf_rows) + len(cbf_rows), n))
    b = np.zeros(A.shape[0])
    kinds = []
    for k, row in enumerate(clf_rows):
        if np.shape(row.a_u) != (n_controls,):
            raise ValueError(f"CLF row '{row.name}' has {np.size(row.a_u)} coefficients for {n_controls} controls")
        # a_u . u + b <= delta  ->  -a_u . u + delta >= b
        A[k, :n_controls] = -np.asarray(row.a_u)
        A[k, n_controls + row.slack_index] = 1.0
        b[k] = row.b
        kinds.append(CLF_ROW)
    offset = len(clf_rows)
    for k, row in enumerate(cbf_rows, start=offset):
        if np.shape(row.a_u) != (n_controls,):
            raise ValueError(f"CBF row has {np.size(row.a_u)} coefficients for {n_controls} controls")
        A[k, :n_controls] = row.a_u
        b[k] = -row.b
        kinds.append(CBF_ROW)

    lb = np.concatenate([bounds.u_min, np.full(n_slack, -np.inf)])
    ub = np.concatenate([bounds.u_max, np.full(n_slack, np.inf)])
    return QpProblem(Q, np.zeros(n), A, b, lb, ub, n_controls, tuple(kinds))


def _constraint_set(problem):
    """All inequalities, bounds included, as unit-normal rows ``N z >= c``."""
    n = problem.n
    normals = [problem.A]
    rhs = [problem.b]
    lower = np.flatnonzero(np.isfinite(problem.lb))
    upper = np.flatnonzero(np.isfinite(problem.ub))
    normals += [np.eye(n)[lower], -np.eye(n)[upper]]
    rhs += [problem.lb[lower], -problem.ub[upper]]
    N = np.vstack(normals)
    c = np.concatenate(rhs)
    scale = np.linalg.norm(N, axis=1)
    usable = scale > ZERO_ROW
    safe = np.where(usable, scale, 1.0)
    return N / safe[:, None], c / safe, scale, usable, lower, upper


def _split_duals(problem, lam, scale, lower, upper):
    raw = np.where(scale > ZERO_ROW, lam / np.where(scale > ZERO_ROW, scale, 1.0), 0.0)
    m = problem.m
    duals = raw[:m]
    lower_duals = np.zeros(problem.n)
    upper_duals = np.zeros(problem.n)
    lower_duals[lower] = raw[m:m + len(lower)]
    upper_duals[upper] = raw[m + len(lower):]
    return duals, lower_duals, upper_duals


def _most_violated(N, c, z, usable, active, tol):
    slack = N @ z - c
    slack[~usable] = np.inf
    slack[active] = np.inf
    if not len(slack):
        return None
    p = int(np.argmin(slack))
    return p if slack[p] < -tol else None


def _polish(Q, q, N, c, active, lam, tol, refinements=2):
    """Solve the KKT system of the active set directly, with iterative refinement.

    Returns ``None`` when the system is singular or a multiplier comes out negative.
    """
    if not active:
        return None
    n, k = Q.shape[0], len(active)
    Na = N[active]
    kkt = np.block([[Q, -Na.T], [Na, np.zeros((k, k))]])
    rhs = np.concatenate([-q, c[active]])
    try:
        sol = np.linalg.solve(kkt, rhs)
        for _ in range(refinements):
            sol = sol + np.linalg.solve(kkt, rhs - kkt @ sol)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)) or sol[n:].min() < -tol * max(1.0, np.abs(sol[n:]).max()):
        return None
    polished_lam = np.zeros_like(lam)
    polished_lam[active] = np.maximum(sol[n:], 0.0)
    return sol[:n], polished_lam


def solve(problem, tol=None, max_iter=None):
    """Dual active-set solve; never raises on infeasibility, reports ``status``.

    Every pass ends on a polished solve of the active set's KKT system. A
    solution is reported ``optimal`` only when :func:`check_kkt` certifies it.
    """
    tol = settings.QP_TOLERANCE if tol is None else tol
    max_iter = settings.QP_MAX_ITER if max_iter is None else max_iter

    Q, q = problem.Q, problem.q
    N, c, scale, usable, lower, upper = _constraint_set(problem)
    factor = cho_factor(Q)

    def qinv(v):
        return cho_solve(factor, v)

    def finish(z, lam, status, iterations, active):
        duals, lower_duals, upper_duals = _split_duals(problem, lam, scale, lower, upper)
        report = check_kkt(problem, QpSolution(z, duals, lower_duals, upper_duals, status, 0.0, iterations))
        if status == OPTIMAL and not report.passed():
            logger.debug("QP not certified: worst KKT violation %.3g", report.worst)
            status = MAX_ITER
        return QpSolution(z, duals, lower_duals, upper_duals, status, report.worst, iterations, tuple(active))

    lam = np.zeros(len(c))
    z = -qinv(q)
    active = []
    iterations = 0

    # Constant rows 0 >= c cannot be fixed by any z
    if np.any(~usable & (c > tol)):
        return finish(z, lam, INFEASIBLE, iterations, active)

    while True:
        p = _most_violated(N, c, z, usable, active, tol)
        if p is None:
            polished = _polish(Q, q, N, c, active, lam, tol)
            if polished is not None:
                z, lam = polished
                p = _most_violated(N, c, z, usable, active, tol)
            if p is None:
                break

        # Bring row p into the active set, dropping blockers on the way
        while True:
            if iterations >= max_iter:
                return finish(z, lam, MAX_ITER, iterations, active)
            iterations += 1

            n_p = N[p]
            qinv_np = qinv(n_p)
            if active:
                Na = N[active].T
                qinv_na = qinv(Na)
                r = np.linalg.solve(Na.T @ qinv_na, Na.T @ qinv_np)
                step = qinv_np - qinv_na @ r
            else:
                r = np.zeros(0)
                step = qinv_np

            curvature = step @ n_p
            s_p = n_p @ z - c[p]
            primal_t = -s_p / curvature if curvature > 1e-12 * (n_p @ qinv_np) else np.inf

            dual_t, blocker = np.inf, None
            for k, j in enumerate(active):
                if r[k] > 0.0 and lam[j] / r[k] < dual_t:
                    dual_t, blocker = lam[j] / r[k], k

            t = min(primal_t, dual_t)
            if not np.isfinite(t):
                logger.debug("QP infeasible: row %d cannot be satisfied", p)
                return finish(z, lam, INFEASIBLE, iterations, active)

            if np.isfinite(primal_t):
                z = z + t * step
            for k, j in enumerate(active):
                lam[j] -= t * r[k]
            lam[p] += t

            if t == primal_t:
                active.append(p)
                break
            lam[active[blocker]] = 0.0
            del active[blocker]

    return finish(z, lam, OPTIMAL, iterations, active)


def check_kkt(problem, solution):
    """Independent post-hoc certificate on the original (unscaled) rows."""
    z = solution.z
    lam, lam_lb, lam_ub = solution.duals, solution.lower_duals, solution.upper_duals
    gradient = problem.Q @ z + problem.q - problem.A.T @ lam - lam_lb + lam_ub
    stationarity = float(np.abs(gradient).max())

    row_slack = problem.A @ z - problem.b
    finite_lb = np.isfinite(problem.lb)
    finite_ub = np.isfinite(problem.ub)
    lb_slack = z[finite_lb] - problem.lb[finite_lb]
    ub_slack = problem.ub[finite_ub] - z[finite_ub]
    all_slack = np.concatenate([row_slack, lb_slack, ub_slack])
    primal = float(max(0.0, -all_slack.min())) if all_slack.size else 0.0

    multipliers = np.concatenate([lam, lam_lb, lam_ub])
    dual = float(max(0.0, -multipliers.min())) if multipliers.size else 0.0

    products = np.concatenate([lam * row_slack, lam_lb[finite_lb] * lb_slack, lam_ub[finite_ub] * ub_slack])
    complementarity = float(np.abs(products).max()) if products.size else 0.0
    return KktReport(stationarity, primal, dual, complementarity)
