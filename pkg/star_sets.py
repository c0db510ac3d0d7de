import logging
import numpy as np
from exceptions import DimensionError, EmptySetError
from linprog import LinearProgram, solve, is_feasible, INFEASIBLE, UNBOUNDED, LP_TOL

'''
Star sets <c, V, P>: the set {c + V mu : A mu <= b}. Closed under affine maps, Minkowski sums
and concatenation, which is everything the reachability pipeline needs.

Stars are immutable after construction. A star built from a box on mu (from_box, the inflating
hypercubes, and anything mapped or summed from those) remembers the box; bounds and membership
on such stars are answered in closed form instead of through LPs.
'''

MEMBERSHIP_TOL = 1e-7


class Box():
    def __init__(self, lower, upper):
        '''
        Arguments:
            lower (array(d)) -- componentwise lower bounds
            upper (array(d)) -- componentwise upper bounds, equal to lower in degenerate dims
        '''
        lower = np.asarray(lower, dtype = float).reshape(-1)
        upper = np.asarray(upper, dtype = float).reshape(-1)
        if lower.shape != upper.shape:
            raise DimensionError('box bounds have lengths {} and {}'.format(len(lower), len(upper)))
        if len(lower) == 0:
            raise DimensionError('box must have at least one dimension')
        if np.any(lower > upper):
            bad = np.flatnonzero(lower > upper)
            raise ValueError('box lower bound exceeds upper bound in dims {}'.format(bad.tolist()))
        self.lower = lower
        self.upper = upper

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, x, tol = 0.0):
        x = np.asarray(x, dtype = float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def covers(self, other, tol = 0.0):
        '''
        True if this box contains the other box.
        '''
        return bool(np.all(self.lower <= other.lower + tol) and np.all(self.upper >= other.upper - tol))

    def to_dict(self):
        return {'lower': self.lower.tolist(), 'upper': self.upper.tolist()}

    def __repr__(self):
        return 'Box(lower={}, upper={})'.format(self.lower.tolist(), self.upper.tolist())


def _frozen(array):
    array = np.array(array, dtype = float)
    array.setflags(write = False)
    return array


class StarSet():
    def __init__(self, center, basis, A, b, mu_box = None, lp_backend = 'simplex'):
        '''
        Arguments:
            center (array(d)) -- center c
            basis (array(d, m)) -- basis matrix V, one column per predicate variable
            A (array(rows, m)) -- predicate matrix
            b (array(rows)) -- predicate rhs, the predicate is A mu <= b
            mu_box (tuple(array(m), array(m))) -- if the predicate is exactly a box on mu, its (lower, upper). optional
            lp_backend ('simplex', 'highs') -- LP backend used for this star and everything derived from it
        '''
        center = np.asarray(center, dtype = float).reshape(-1)
        basis = np.asarray(basis, dtype = float)
        if basis.ndim == 1:
            basis = basis.reshape(len(center), -1)
        A = np.asarray(A, dtype = float)
        b = np.asarray(b, dtype = float).reshape(-1)
        if len(center) < 1:
            raise DimensionError('star dimension must be at least 1')
        if basis.shape[0] != len(center):
            raise DimensionError('basis has {} rows but center has length {}'.format(basis.shape[0], len(center)))
        if basis.shape[1] < 1:
            raise DimensionError('star needs at least one predicate variable')
        if A.ndim == 1:
            A = A.reshape(-1, basis.shape[1])
        if A.shape[1] != basis.shape[1]:
            raise DimensionError('predicate has {} variables but basis has {} columns'.format(A.shape[1], basis.shape[1]))
        if A.shape[0] != len(b):
            raise DimensionError('predicate has {} rows but rhs has length {}'.format(A.shape[0], len(b)))

        self.center = _frozen(center)
        self.basis = _frozen(basis)
        self.A = _frozen(A)
        self.b = _frozen(b)
        self.mu_box = None if mu_box is None else (_frozen(mu_box[0]), _frozen(mu_box[1]))
        self.lp_backend = lp_backend

        # lazily filled caches
        self._mu_bounds = None
        self._outer_box = None
        self._empty = None

    @property
    def dim(self):
        return len(self.center)

    @property
    def n_vars(self):
        return self.basis.shape[1]

    @classmethod
    def from_predicate_box(cls, center, basis, mu_lower, mu_upper, lp_backend = 'simplex'):
        '''
        Star whose predicate is mu_lower <= mu <= mu_upper.
        '''
        mu_lower = np.asarray(mu_lower, dtype = float).reshape(-1)
        mu_upper = np.asarray(mu_upper, dtype = float).reshape(-1)
        m = len(mu_lower)
        A = np.vstack([np.eye(m), -np.eye(m)])
        b = np.concatenate([mu_upper, -mu_lower])
        return cls(center, basis, A, b, mu_box = (mu_lower, mu_upper), lp_backend = lp_backend)

    @classmethod
    def from_box(cls, box, lp_backend = 'simplex'):
        '''
        Star with center at the box midpoint, identity basis, and |mu_j| <= half-width_j.

        Arguments:
            box (Box) -- the box
        '''
        mid = (box.lower + box.upper) / 2.0
        half = (box.upper - box.lower) / 2.0
        return cls.from_predicate_box(mid, np.eye(box.dim), -half, half, lp_backend = lp_backend)

    @classmethod
    def point(cls, x, lp_backend = 'simplex'):
        x = np.asarray(x, dtype = float).reshape(-1)
        return cls.from_predicate_box(x, np.zeros((len(x), 1)), [0.0], [0.0], lp_backend = lp_backend)

    def _lp(self, objective, sense, A = None, b = None):
        A = self.A if A is None else A
        b = self.b if b is None else b
        return solve(LinearProgram(objective, A, b, sense = sense), backend = self.lp_backend)

    def affine_map(self, W, u = None):
        '''
        Image of the star under x -> W x + u. The predicate is unchanged.

        Arguments:
            W (array(k, d)) -- linear part
            u (array(k)) -- offset, zero if None
        '''
        W = np.asarray(W, dtype = float)
        if W.ndim == 1:
            W = W.reshape(1, -1)
        if W.shape[1] != self.dim:
            raise DimensionError('map has {} columns but star has dimension {}'.format(W.shape[1], self.dim))
        u = np.zeros(W.shape[0]) if u is None else np.asarray(u, dtype = float).reshape(-1)
        if len(u) != W.shape[0]:
            raise DimensionError('offset has length {} but map has {} rows'.format(len(u), W.shape[0]))
        result = StarSet(W @ self.center + u, W @ self.basis, self.A, self.b, mu_box = self.mu_box, lp_backend = self.lp_backend)
        result._mu_bounds = self._mu_bounds
        result._empty = self._empty
        return result

    def minkowski_sum(self, other):
        '''
        {x + y : x in self, y in other}. Bases are stacked side by side and predicates are
        combined block-diagonally.
        '''
        if other.dim != self.dim:
            raise DimensionError('cannot add stars of dimension {} and {}'.format(self.dim, other.dim))
        return _block_combine([self, other], stack_outputs = False)

    def add_constraints(self, C, d):
        '''
        Star with the extra predicate rows C mu <= d.
        '''
        C = np.asarray(C, dtype = float).reshape(-1, self.n_vars)
        d = np.asarray(d, dtype = float).reshape(-1)
        return StarSet(self.center, self.basis, np.vstack([self.A, C]), np.concatenate([self.b, d]), lp_backend = self.lp_backend)

    def is_empty(self):
        '''
        True iff the predicate is infeasible.
        '''
        if self._empty is None:
            if self.mu_box is not None:
                self._empty = bool(np.any(self.mu_box[0] > self.mu_box[1]))
            else:
                self._empty = not is_feasible(self.A, self.b, backend = self.lp_backend)
        return self._empty

    def predicate_bounds(self):
        '''
        Range of every predicate variable, one pair of LPs per variable (cached).

        Returns:
            lower, upper (array(m), array(m)) -- bounds on mu, possibly infinite
        '''
        if self._mu_bounds is not None:
            return self._mu_bounds
        if self.mu_box is not None:
            self._mu_bounds = self.mu_box
            return self._mu_bounds
        m = self.n_vars
        lower = np.empty(m)
        upper = np.empty(m)
        for j in range(m):
            e = np.zeros(m)
            e[j] = 1.0
            for sense, target in (('minimize', lower), ('maximize', upper)):
                result = self._lp(e, sense)
                if result.status == INFEASIBLE:
                    self._empty = True
                    raise EmptySetError('star predicate is infeasible')
                if result.status == UNBOUNDED:
                    target[j] = -np.inf if sense == 'minimize' else np.inf
                else:
                    target[j] = result.optimal_value
        self._empty = False
        self._mu_bounds = (lower, upper)
        return self._mu_bounds

    def _interval_box(self):
        lower_mu, upper_mu = self.predicate_bounds()
        pos = np.clip(self.basis, 0.0, None)
        neg = np.clip(self.basis, None, 0.0)
        with np.errstate(invalid = 'ignore'):
            lo = self.center + np.nan_to_num(pos * lower_mu, nan = 0.0).sum(axis = 1) + np.nan_to_num(neg * upper_mu, nan = 0.0).sum(axis = 1)
            hi = self.center + np.nan_to_num(pos * upper_mu, nan = 0.0).sum(axis = 1) + np.nan_to_num(neg * lower_mu, nan = 0.0).sum(axis = 1)
        return Box(lo, hi)

    def bounds(self, method = 'lp', dims = None):
        '''
        Axis-aligned bounds of the star.

        Arguments:
            method ('lp', 'interval') -- 'lp' is exact (two LPs per dimension), 'interval' is a sound outer box
                derived from the mu ranges
            dims (list(int)) -- restrict to these dimensions (returned box has len(dims) entries). all if None

        Returns:
            box (Box) -- the bounds
        '''
        if method not in ('lp', 'interval'):
            raise ValueError('Unrecognized bounds method: {}'.format(method))
        if self.is_empty():
            raise EmptySetError('cannot bound an empty star')
        if method == 'interval' or self.mu_box is not None:
            # over a box predicate the interval box is the exact LP box
            box = self._interval_box()
            if dims is None:
                return box
            return Box(box.lower[dims], box.upper[dims])

        dims = range(self.dim) if dims is None else dims
        lower, upper = [], []
        for i in dims:
            row = self.basis[i]
            if not np.any(row):
                lower.append(self.center[i])
                upper.append(self.center[i])
                continue
            low = self._lp(row, 'minimize')
            high = self._lp(row, 'maximize')
            if low.status == INFEASIBLE or high.status == INFEASIBLE:
                raise EmptySetError('star predicate is infeasible')
            lower.append(-np.inf if low.status == UNBOUNDED else self.center[i] + low.optimal_value)
            upper.append(np.inf if high.status == UNBOUNDED else self.center[i] + high.optimal_value)
        return Box(lower, upper)

    def outer_box(self):
        if self._outer_box is None:
            self._outer_box = self._interval_box()
        return self._outer_box

    def contains(self, x, tol = MEMBERSHIP_TOL):
        '''
        True iff some mu satisfies V mu = x - c and A mu <= b, with tol slack on every row.

        Arguments:
            x (array(d)) -- the query point
            tol (float) -- slack added to every predicate and equality row
        '''
        x = np.asarray(x, dtype = float).reshape(-1)
        if len(x) != self.dim:
            raise DimensionError('point has length {} but star has dimension {}'.format(len(x), self.dim))
        if self.is_empty():
            return False
        if not self.outer_box().contains(x, tol = tol):
            return False
        target = x - self.center

        if self.mu_box is not None and self.n_vars == self.dim:
            # square basis over a box: solve directly when well conditioned
            try:
                if np.linalg.cond(self.basis) < 1e8:
                    mu = np.linalg.solve(self.basis, target)
                    lo, hi = self.mu_box
                    return bool(np.all(mu >= lo - tol) and np.all(mu <= hi + tol))
            except np.linalg.LinAlgError:
                pass

        A = np.vstack([self.A, self.basis, -self.basis])
        b = np.concatenate([self.b, target, -target]) + tol
        return is_feasible(A, b, backend = self.lp_backend)

    def reduce_predicate(self):
        '''
        Equivalent star whose predicate keeps the mu interval bounds plus only those original rows
        not already implied by them.
        '''
        lower, upper = self.predicate_bounds()
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            return self
        worst = np.clip(self.A, 0.0, None) @ upper + np.clip(self.A, None, 0.0) @ lower
        needed = worst > self.b + LP_TOL
        m = self.n_vars
        A = np.vstack([np.eye(m), -np.eye(m), self.A[needed]])
        b = np.concatenate([upper, -lower, self.b[needed]])
        logging.debug('SETS --- predicate reduction kept {} of {} rows'.format(int(needed.sum()), len(self.b)))
        if not np.any(needed):
            return StarSet.from_predicate_box(self.center, self.basis, lower, upper, lp_backend = self.lp_backend)
        return StarSet(self.center, self.basis, A, b, lp_backend = self.lp_backend)

    def sample(self, count, rng, max_tries = 100):
        '''
        Draws points of the star by rejection sampling mu inside its interval bounds.
        Meant for tests and diagnostics, not for anything that needs a particular distribution.

        Arguments:
            count (int) -- number of points
            rng (numpy Generator) -- random source
            max_tries (int) -- rejection rounds before giving up

        Returns:
            points (array(count', d)) -- count' <= count member points
        '''
        lower, upper = self.predicate_bounds()
        accepted = []
        total = 0
        for _ in range(max_tries):
            mu = rng.uniform(lower, upper, size = (count, self.n_vars))
            if self.mu_box is None:
                mu = mu[np.all(mu @ self.A.T <= self.b + LP_TOL, axis = 1)]
            accepted.append(mu)
            total += len(mu)
            if total >= count:
                break
        mu = np.vstack(accepted)[:count]
        return self.center + mu @ self.basis.T

    def to_dict(self):
        '''
        JSON-ready representation: center, basis and A row-major with explicit dims, and b.
        '''
        return {
            'center': self.center.tolist(),
            'basis': {'rows': self.basis.shape[0], 'cols': self.basis.shape[1], 'data': self.basis.reshape(-1).tolist()},
            'A': {'rows': self.A.shape[0], 'cols': self.A.shape[1], 'data': self.A.reshape(-1).tolist()},
            'b': self.b.tolist(),
            'mu_box': None if self.mu_box is None else [self.mu_box[0].tolist(), self.mu_box[1].tolist()],
        }

    @classmethod
    def from_dict(cls, data, lp_backend = 'simplex'):
        basis = np.asarray(data['basis']['data'], dtype = float).reshape(data['basis']['rows'], data['basis']['cols'])
        A = np.asarray(data['A']['data'], dtype = float).reshape(data['A']['rows'], data['A']['cols'])
        mu_box = data.get('mu_box')
        if mu_box is not None:
            mu_box = (np.asarray(mu_box[0], dtype = float), np.asarray(mu_box[1], dtype = float))
        return cls(data['center'], basis, A, data['b'], mu_box = mu_box, lp_backend = lp_backend)

    def __repr__(self):
        return 'StarSet(dim={}, vars={}, rows={})'.format(self.dim, self.n_vars, len(self.b))


def _block_combine(parts, stack_outputs):
    '''
    DO NOT CALL DIRECTLY
    Shared body of minkowski_sum (outputs added) and concatenate (outputs stacked).
    '''
    n_vars = [s.n_vars for s in parts]
    total_vars = sum(n_vars)
    rows = sum(len(s.b) for s in parts)
    A = np.zeros((rows, total_vars))
    b = np.concatenate([s.b for s in parts])
    if stack_outputs:
        basis = np.zeros((sum(s.dim for s in parts), total_vars))
        center = np.concatenate([s.center for s in parts])
    else:
        basis = np.zeros((parts[0].dim, total_vars))
        center = np.sum([s.center for s in parts], axis = 0)
    r = c = d = 0
    for s in parts:
        A[r:r + len(s.b), c:c + s.n_vars] = s.A
        if stack_outputs:
            basis[d:d + s.dim, c:c + s.n_vars] = s.basis
            d += s.dim
        else:
            basis[:, c:c + s.n_vars] = s.basis
        r += len(s.b)
        c += s.n_vars
    mu_box = None
    if all(s.mu_box is not None for s in parts):
        mu_box = (np.concatenate([s.mu_box[0] for s in parts]), np.concatenate([s.mu_box[1] for s in parts]))
    return StarSet(center, basis, A, b, mu_box = mu_box, lp_backend = parts[0].lp_backend)


def concatenate(parts):
    '''
    Stacks stars into one star of dimension sum(d_q): stacked centers, block-diagonal basis,
    conjunction of predicates.

    Arguments:
        parts (list(StarSet)) -- nonempty list of stars
    '''
    if len(parts) == 0:
        raise ValueError('cannot concatenate an empty list of stars')
    if len(parts) == 1:
        return parts[0]
    return _block_combine(parts, stack_outputs = True)


def union_bounds(stars, method = 'lp'):
    '''
    Smallest box containing the lp (or interval) bounds of every nonempty star in the list.
    '''
    boxes = [s.bounds(method = method) for s in stars if not s.is_empty()]
    if len(boxes) == 0:
        raise EmptySetError('all stars in the union are empty')
    return Box(np.min([box.lower for box in boxes], axis = 0), np.max([box.upper for box in boxes], axis = 0))
