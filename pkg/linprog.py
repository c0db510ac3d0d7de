import logging
import numpy as np
from scipy.optimize import linprog as scipy_linprog
from exceptions import DimensionError

'''
Dense linear programming kernel. Star-set predicates are small (a few hundred rows at most),
so a two-phase tableau simplex with Bland's rule is exact enough and fully deterministic.

Every variable is free. Internally mu = mu_plus - mu_minus with both parts nonnegative.
'''

LP_TOL = 1e-9
MAX_PIVOTS = 50000

OPTIMAL = 'optimal'
INFEASIBLE = 'infeasible'
UNBOUNDED = 'unbounded'


class LinearProgram():
    def __init__(self, objective, constraint_matrix, constraint_rhs, sense = 'maximize'):
        '''
        Arguments:
            objective (array(m)) -- coefficients c of the linear functional
            constraint_matrix (array(rows, m)) -- matrix A of the feasible region {mu : A mu <= b}
            constraint_rhs (array(rows)) -- vector b
            sense ('maximize', 'minimize') -- optimization direction
        '''
        objective = np.asarray(objective, dtype = float).reshape(-1)
        constraint_matrix = np.asarray(constraint_matrix, dtype = float)
        constraint_rhs = np.asarray(constraint_rhs, dtype = float).reshape(-1)
        if constraint_matrix.ndim == 1:
            constraint_matrix = constraint_matrix.reshape(-1, len(objective)) if len(objective) > 0 else constraint_matrix.reshape(-1, 0)
        if constraint_matrix.ndim != 2:
            raise DimensionError('constraint matrix must be 2-D, got {} dims'.format(constraint_matrix.ndim))
        if constraint_matrix.shape[0] != len(constraint_rhs):
            raise DimensionError('constraint matrix has {} rows but rhs has length {}'.format(
                constraint_matrix.shape[0], len(constraint_rhs)
            ))
        if constraint_matrix.shape[1] != len(objective):
            raise DimensionError('constraint matrix has {} columns but objective has length {}'.format(
                constraint_matrix.shape[1], len(objective)
            ))
        if sense not in ('maximize', 'minimize'):
            raise ValueError('sense must be \'maximize\' or \'minimize\', got {}'.format(sense))
        self.objective = objective
        self.constraint_matrix = constraint_matrix
        self.constraint_rhs = constraint_rhs
        self.sense = sense


class LPResult():
    '''
    Outcome of solve(). Infeasible and unbounded programs are statuses, not errors.
    optimal_value and optimizer are None unless status == OPTIMAL.
    '''
    def __init__(self, status, optimal_value = None, optimizer = None, pivots = 0):
        self.status = status
        self.optimal_value = optimal_value
        self.optimizer = optimizer
        self.pivots = pivots

    @property
    def is_optimal(self):
        return self.status == OPTIMAL

    def __repr__(self):
        return 'LPResult(status={}, optimal_value={})'.format(self.status, self.optimal_value)


def _pivot(T, row, col):
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])


def _bland_simplex(T, basis, tol):
    '''
    DO NOT CALL DIRECTLY
    Runs Bland's-rule simplex (minimization) on a tableau whose last row holds the reduced
    costs and whose last column holds the rhs. Modifies T and basis in place.

    Returns:
        status (str) -- OPTIMAL or UNBOUNDED
        pivots (int) -- number of pivots performed
    '''
    n_rows = T.shape[0] - 1
    pivots = 0
    while True:
        costs = T[-1, :-1]
        candidates = np.flatnonzero(costs < -tol)
        if len(candidates) == 0:
            return OPTIMAL, pivots
        col = candidates[0]
        column = T[:n_rows, col]
        positive = np.flatnonzero(column > tol)
        if len(positive) == 0:
            return UNBOUNDED, pivots
        ratios = T[positive, -1] / column[positive]
        best = ratios.min()
        # ties go to the smallest basic variable index
        tied = positive[ratios <= best + tol * max(1.0, abs(best))]
        row = tied[np.argmin([basis[i] for i in tied])]
        _pivot(T, row, col)
        basis[row] = col
        pivots += 1
        if pivots > MAX_PIVOTS:
            raise RuntimeError('simplex exceeded {} pivots'.format(MAX_PIVOTS))


def _solve_simplex(lp, tol):
    A = lp.constraint_matrix
    b = lp.constraint_rhs
    c = lp.objective if lp.sense == 'minimize' else -lp.objective
    n_rows, m = A.shape

    if n_rows == 0:
        if np.all(np.abs(c) <= tol):
            return LPResult(OPTIMAL, 0.0, np.zeros(m))
        return LPResult(UNBOUNDED)

    # columns: mu_plus (m), mu_minus (m), slack (n_rows), artificial (one per negative rhs row)
    negative = np.flatnonzero(b < 0)
    n_art = len(negative)
    n_struct = 2 * m + n_rows
    T = np.zeros((n_rows + 1, n_struct + n_art + 1))
    T[:n_rows, :m] = A
    T[:n_rows, m:2 * m] = -A
    T[:n_rows, 2 * m:n_struct] = np.eye(n_rows)
    T[:n_rows, -1] = b
    T[negative, :n_struct] *= -1
    T[negative, -1] *= -1

    basis = [2 * m + i for i in range(n_rows)]
    for k, i in enumerate(negative):
        T[i, n_struct + k] = 1.0
        basis[i] = n_struct + k

    pivots = 0
    scale = max(1.0, float(np.abs(b).max()))
    if n_art > 0:
        # phase 1: minimize the sum of artificials
        T[-1, n_struct:n_struct + n_art] = 1.0
        for i in negative:
            T[-1] -= T[i]
        status, count = _bland_simplex(T, basis, tol)
        pivots += count
        if -T[-1, -1] > tol * scale * 10:
            return LPResult(INFEASIBLE, pivots = pivots)

        # drive leftover artificials out of the basis, dropping redundant rows
        keep = []
        for i in range(n_rows):
            if basis[i] >= n_struct:
                row = T[i, :n_struct]
                candidates = np.flatnonzero(np.abs(row) > tol)
                if len(candidates) == 0:
                    continue
                _pivot(T, i, candidates[0])
                basis[i] = candidates[0]
                pivots += 1
            keep.append(i)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        T = np.hstack([T[:, :n_struct], T[:, -1:]])
        n_rows = len(keep)

    # phase 2
    cost = np.zeros(n_struct)
    cost[:m] = c
    cost[m:2 * m] = -c
    T[-1, :] = 0.0
    T[-1, :n_struct] = cost
    for i in range(n_rows):
        if cost[basis[i]] != 0.0:
            T[-1] -= cost[basis[i]] * T[i]
    status, count = _bland_simplex(T, basis, tol)
    pivots += count
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, pivots = pivots)

    z = np.zeros(n_struct)
    for i in range(n_rows):
        z[basis[i]] = T[i, -1]
    mu = z[:m] - z[m:2 * m]
    value = float(lp.objective @ mu)
    return LPResult(OPTIMAL, value, mu, pivots)


def _solve_highs(lp):
    c = lp.objective if lp.sense == 'minimize' else -lp.objective
    m = len(c)
    if lp.constraint_matrix.shape[0] == 0:
        if np.all(c == 0):
            return LPResult(OPTIMAL, 0.0, np.zeros(m))
        return LPResult(UNBOUNDED)
    result = scipy_linprog(
        c,
        A_ub = lp.constraint_matrix,
        b_ub = lp.constraint_rhs,
        bounds = [(None, None)] * m,
        method = 'highs'
    )
    if result.status == 2:
        return LPResult(INFEASIBLE)
    if result.status == 3:
        return LPResult(UNBOUNDED)
    if result.status != 0:
        raise RuntimeError('highs backend failed: {}'.format(result.message))
    mu = np.asarray(result.x, dtype = float)
    return LPResult(OPTIMAL, float(lp.objective @ mu), mu)


def solve(lp, tol = LP_TOL, backend = 'simplex'):
    '''
    Solves a linear program over free variables.

    Arguments:
        lp (LinearProgram) -- the program
        tol (float) -- pivot and zero-test tolerance
        backend ('simplex', 'highs') -- 'simplex' is the native dense tableau solver, 'highs' hands the program to scipy

    Returns:
        result (LPResult) -- status plus optimum and optimizer when the status is OPTIMAL
    '''
    if backend == 'simplex':
        result = _solve_simplex(lp, tol)
    elif backend == 'highs':
        result = _solve_highs(lp)
    else:
        raise ValueError('Unrecognized LP backend: {}'.format(backend))
    logging.debug('LP --- {} rows x {} vars, {} in {} pivots'.format(
        lp.constraint_matrix.shape[0], lp.constraint_matrix.shape[1], result.status, result.pivots
    ))
    return result


def is_feasible(A, b, tol = LP_TOL, backend = 'simplex'):
    '''
    Decides whether {mu : A mu <= b} is nonempty.
    '''
    A = np.asarray(A, dtype = float)
    lp = LinearProgram(np.zeros(A.shape[1]), A, b, sense = 'minimize')
    return solve(lp, tol = tol, backend = backend).status != INFEASIBLE
