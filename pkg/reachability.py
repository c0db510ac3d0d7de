import logging
import time
import numpy as np
from exceptions import DimensionError, StarBlowupError
from star_sets import StarSet

'''
Star-set propagation through ReLU networks.

exact: every straddling neuron splits a star in two (x_i >= 0 kept, x_i <= 0 zeroed), so the
output is a list whose union is exactly the image of the input set.
approx: every straddling neuron gets one new predicate variable bounded by the ReLU triangle,
giving a single star that over-approximates the image.

Neurons are handled layer by layer in ascending index, and children are emitted keep-branch
first, so the output order is fixed by the split path alone.
'''

MAX_STARS = 4096


def _zero_dim(star, i):
    M = np.eye(star.dim)
    M[i, i] = 0.0
    return star.affine_map(M)


def _split_star(star, budget):
    '''
    DO NOT CALL DIRECTLY
    Applies the exact ReLU to one star, dimension by dimension.

    Arguments:
        star (StarSet) -- nonempty input star
        budget (int) -- most pieces this star may produce. StarBlowupError is raised after the first dimension that exceeds it

    Returns:
        stars (list(StarSet)) -- nonempty pieces, in split-path order
    '''
    pending = [star]
    for i in range(star.dim):
        next_pending = []
        for s in pending:
            box = s.bounds(method = 'lp', dims = [i])
            low, high = box.lower[0], box.upper[0]
            if low >= 0:
                next_pending.append(s)
                continue
            if high <= 0:
                next_pending.append(_zero_dim(s, i))
                continue
            c_i = s.center[i]
            v_i = s.basis[i]
            # x_i >= 0  <=>  -v_i mu <= c_i
            keep = s.add_constraints(-v_i, [c_i])
            # x_i <= 0  <=>  v_i mu <= -c_i
            zero = s.add_constraints(v_i, [-c_i])
            if not keep.is_empty():
                next_pending.append(keep)
            if not zero.is_empty():
                next_pending.append(_zero_dim(zero, i))
        # pieces never merge, so the count only grows with i
        if len(next_pending) > budget:
            raise StarBlowupError(budget)
        pending = next_pending
    return pending


def relu_exact(stars, max_stars = MAX_STARS):
    '''
    Exact ReLU image of a union of stars.

    Arguments:
        stars (list(StarSet)) -- nonempty input stars
        max_stars (int) -- abort with StarBlowupError once more stars than this are produced

    Returns:
        stars (list(StarSet)) -- pieces whose union equals ReLU of the input union
    '''
    result = []
    for star in stars:
        try:
            result.extend(_split_star(star, max_stars - len(result)))
        except StarBlowupError as e:
            raise StarBlowupError(max_stars) from e
    return result


def relu_approx(star, bound_method = 'lp'):
    '''
    Single-star over-approximation of the ReLU image using the triangle relaxation.

    Arguments:
        star (StarSet) -- nonempty input star
        bound_method ('lp', 'interval') -- how the pre-activation ranges are computed. 'interval' is faster and gives a looser triangle

    Returns:
        star (StarSet) -- superset of the exact image
    '''
    box = star.bounds(method = bound_method)
    lower, upper = box.lower, box.upper
    crossing = np.flatnonzero((lower < 0) & (upper > 0))
    positive = lower >= 0
    if len(crossing) == 0:
        M = np.diag(positive.astype(float))
        return star.affine_map(M)

    m = star.n_vars
    k = len(crossing)
    d = star.dim
    center = np.where(positive, star.center, 0.0)
    basis = np.zeros((d, m + k))
    basis[positive, :m] = star.basis[positive]

    A_rows = [np.hstack([star.A, np.zeros((len(star.b), k))])]
    b_rows = [star.b]
    for t, i in enumerate(crossing):
        y = m + t
        basis[i, y] = 1.0
        v_i = star.basis[i]
        c_i = star.center[i]
        l_i, u_i = lower[i], upper[i]
        slope = u_i / (u_i - l_i)
        rows = np.zeros((3, m + k))
        rhs = np.zeros(3)
        # y >= 0
        rows[0, y] = -1.0
        # y >= c_i + v_i mu
        rows[1, :m] = v_i
        rows[1, y] = -1.0
        rhs[1] = -c_i
        # y <= slope * (c_i + v_i mu - l_i)
        rows[2, :m] = -slope * v_i
        rows[2, y] = 1.0
        rhs[2] = slope * (c_i - l_i)
        A_rows.append(rows)
        b_rows.append(rhs)
    return StarSet(center, basis, np.vstack(A_rows), np.concatenate(b_rows), lp_backend = star.lp_backend)


def network_reach(net, input_star, mode = 'approx', max_stars = MAX_STARS, bound_method = 'lp', reduce_predicates = False):
    '''
    Propagates a star through a ReLU network (affine layers with ReLU on every hidden layer).

    Arguments:
        net (surrogates.MLP) -- the network. normalizers are folded into the first and last layers
        input_star (StarSet) -- set of network inputs
        mode ('exact', 'approx') -- propagation method
        max_stars (int) -- exact-mode blow-up guard
        bound_method ('lp', 'interval') -- approx mode only. exact mode always uses LP bounds
        reduce_predicates (bool) -- drop redundant predicate rows after every hidden layer

    Returns:
        stars (list(StarSet)) -- output stars. approx mode returns a single star
    '''
    if mode not in ('exact', 'approx'):
        raise ValueError('Unrecognized reach mode: {}'.format(mode))
    if input_star.dim != net.layer_widths[0]:
        raise DimensionError('input star has dimension {} but network expects {}'.format(input_star.dim, net.layer_widths[0]))

    layers = net.affine_layers()
    stars = [input_star]
    start = time.time()
    for idx, (W, bias) in enumerate(layers):
        stars = [s.affine_map(W, bias) for s in stars]
        if idx == len(layers) - 1:
            break
        if mode == 'exact':
            try:
                stars = relu_exact(stars, max_stars = max_stars)
            except StarBlowupError as e:
                raise StarBlowupError(max_stars, layer = idx) from e
        else:
            stars = [relu_approx(stars[0], bound_method = bound_method)]
        if reduce_predicates:
            stars = [s.reduce_predicate() for s in stars]
        logging.debug('REACH --- layer {} done, {} stars'.format(idx, len(stars)))
    logging.info('REACH --- {} mode through {} layers produced {} stars in {} seconds'.format(
        mode, len(layers), len(stars), time.time() - start
    ))
    return stars
