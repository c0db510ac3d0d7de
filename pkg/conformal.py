import json
import logging
import math
import os
from fractions import Fraction
import numpy as np
from exceptions import DimensionError, InfeasibleCalibration, MissingArtifactError
from star_sets import StarSet
from surrogates import SegmentPlan, segment_targets

'''
Statistical core: prediction errors, the per-segment PCA error model, residuals, robust
conformal calibration, and the inflating hypercubes built from them.

Prediction errors are stored per segment. A block of segment q has n * T_q columns in step-major
order (column (k - t_q) * n + l is component l of step k) and either one row or one row per
trajectory, so every function here works on single errors and on batches alike.
'''

def _floor(values):
    '''
    Floors a nonnegative scaling vector at 1e-12 of its largest entry, so no entry is zero.
    '''
    values = np.asarray(values, dtype = float)
    floor = 1e-12 * (values.max() if len(values) else 0.0) + 1e-300
    return np.maximum(values, floor)


class PredictionError():
    def __init__(self, blocks):
        '''
        Arguments:
            blocks (dict(int: array)) -- per-segment errors PE^q, each of shape (n * T_q,) or (count, n * T_q)
        '''
        if len(blocks) == 0:
            raise ValueError('prediction error needs at least one segment')
        self.blocks = {int(q): np.asarray(v, dtype = float) for q, v in blocks.items()}
        self.segments = sorted(self.blocks)
        ndims = {v.ndim for v in self.blocks.values()}
        if len(ndims) != 1:
            raise DimensionError('segment blocks mix single errors and batches')
        if ndims == {2} and len({v.shape[0] for v in self.blocks.values()}) != 1:
            raise DimensionError('segment blocks hold different numbers of samples')

    @property
    def batched(self):
        return self.blocks[self.segments[0]].ndim == 2

    @property
    def count(self):
        return self.blocks[self.segments[0]].shape[0] if self.batched else 1

    def stacked(self):
        '''
        All segments side by side, (n * sum T_q,) or (count, n * sum T_q).
        '''
        return np.concatenate([self.blocks[q] for q in self.segments], axis = -1)

    def row(self, i):
        return PredictionError({q: v[i] for q, v in self.blocks.items()})

    @classmethod
    def stack(cls, errors):
        '''
        Batch of single errors sharing their segments.
        '''
        segments = errors[0].segments
        return cls({q: np.vstack([e.blocks[q] for e in errors]) for q in segments})


def prediction_errors(s0, trajectory, nets, plan, segments = None):
    '''
    R^j = true component - predicted component for one or many trajectories.

    Arguments:
        s0 (array(n) or array(count, n)) -- initial state(s)
        trajectory (array(K, n) or array(count, K, n)) -- s_1 ... s_K
        nets (dict(int: surrogates.MLP)) -- surrogate of every requested segment
        plan (SegmentPlan) -- segmentation
        segments (list(int)) -- segments to evaluate, every key of nets if None

    Returns:
        pe (PredictionError) -- per-segment errors
    '''
    s0 = np.asarray(s0, dtype = float)
    trajectory = np.asarray(trajectory, dtype = float)
    single = trajectory.ndim == 2
    S0 = np.atleast_2d(s0)
    T = trajectory[None] if single else trajectory
    if T.shape[1] != plan.K:
        raise DimensionError('trajectory has {} steps but the plan horizon is {}'.format(T.shape[1], plan.K))
    if T.shape[0] != S0.shape[0]:
        raise DimensionError('{} initial states for {} trajectories'.format(S0.shape[0], T.shape[0]))
    segments = sorted(nets) if segments is None else segments
    blocks = {}
    for q in segments:
        truth = segment_targets(T, plan, q)
        predicted = nets[q].forward(S0)
        if predicted.shape != truth.shape:
            raise DimensionError('segment {} network predicts {} values but the segment holds {}'.format(
                q, predicted.shape[1], truth.shape[1]
            ))
        blocks[q] = truth[0] - predicted[0] if single else truth - predicted
    return PredictionError(blocks)


class ErrorModel():
    def __init__(self, plan, segments, means, eigvecs, eigvals, omega, calibration = None):
        '''
        Arguments:
            plan (SegmentPlan) -- segmentation the model was fitted on
            segments (list(int)) -- segments covered, ascending
            means (dict(int: array)) -- mean prediction error of every segment
            eigvecs (dict(int: array)) -- orthonormal eigenvector matrix V^q of every segment, columns in descending eigenvalue order
            eigvals (dict(int: array)) -- matching eigenvalues
            omega (array) -- scaling factors over all covered segments, concatenated in segment order
            calibration (CalibrationResult) -- attached once calibrate has run. optional
        '''
        self.plan = plan
        self.segments = list(segments)
        self.means = means
        self.eigvecs = eigvecs
        self.eigvals = eigvals
        self.omega = np.asarray(omega, dtype = float)
        self.calibration = calibration
        self._slices = {}
        start = 0
        for q in self.segments:
            width = len(means[q])
            self._slices[q] = slice(start, start + width)
            start += width
        if start != len(self.omega):
            raise DimensionError('omega has length {} but the segments hold {} errors'.format(len(self.omega), start))

    def omega_of(self, q):
        return self.omega[self._slices[q]]

    def to_dict(self):
        return {
            'plan': self.plan.to_dict(),
            'segments': self.segments,
            'means': {str(q): self.means[q].tolist() for q in self.segments},
            'eigvecs': {str(q): {'rows': self.eigvecs[q].shape[0], 'cols': self.eigvecs[q].shape[1], 'data': self.eigvecs[q].reshape(-1).tolist()} for q in self.segments},
            'eigvals': {str(q): self.eigvals[q].tolist() for q in self.segments},
            'omega': self.omega.tolist(),
            'calibration': None if self.calibration is None else self.calibration.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        segments = [int(q) for q in data['segments']]
        eigvecs = {}
        for q in segments:
            E = data['eigvecs'][str(q)]
            eigvecs[q] = np.asarray(E['data'], dtype = float).reshape(E['rows'], E['cols'])
        calibration = data.get('calibration')
        return cls(
            SegmentPlan.from_dict(data['plan']),
            segments,
            {q: np.asarray(data['means'][str(q)], dtype = float) for q in segments},
            eigvecs,
            {q: np.asarray(data['eigvals'][str(q)], dtype = float) for q in segments},
            data['omega'],
            calibration = None if calibration is None else CalibrationResult.from_dict(calibration),
        )


class BaselineModel():
    '''
    Scaling of the max-residual baseline: alpha_j = 1 / max_i |R_i^j| over the training errors.
    '''
    def __init__(self, plan, segments, alpha, calibration = None):
        self.plan = plan
        self.segments = list(segments)
        self.alpha = np.asarray(alpha, dtype = float)
        self.calibration = calibration
        self._slices = {}
        start = 0
        for q in self.segments:
            width = plan.lengths[q] * (len(self.alpha) // sum(plan.lengths[s] for s in self.segments))
            self._slices[q] = slice(start, start + width)
            start += width

    def alpha_of(self, q):
        return self.alpha[self._slices[q]]

    def to_dict(self):
        return {
            'plan': self.plan.to_dict(),
            'segments': self.segments,
            'alpha': self.alpha.tolist(),
            'calibration': None if self.calibration is None else self.calibration.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        calibration = data.get('calibration')
        return cls(
            SegmentPlan.from_dict(data['plan']),
            [int(q) for q in data['segments']],
            data['alpha'],
            calibration = None if calibration is None else CalibrationResult.from_dict(calibration),
        )


def _as_batch(train_errors):
    if isinstance(train_errors, PredictionError):
        return train_errors if train_errors.batched else PredictionError.stack([train_errors])
    return PredictionError.stack(list(train_errors))


def _principal_axes(block):
    '''
    Mean, eigenvalues (descending) and eigenvectors of one segment's errors, with population
    normalization and each eigenvector's first nonzero entry made positive.
    '''
    mean = block.mean(axis = 0)
    centered = block - mean
    cov = centered.T @ centered / block.shape[0]
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(-values, kind = 'stable')
    values = values[order]
    vectors = vectors[:, order]
    for j in range(vectors.shape[1]):
        nonzero = np.flatnonzero(np.abs(vectors[:, j]) > 1e-12)
        if len(nonzero) and vectors[nonzero[0], j] < 0:
            vectors[:, j] = -vectors[:, j]
    return mean, values, vectors


def fit_error_model(train_errors, plan):
    '''
    Fits the per-segment PCA error model on training prediction errors.

    Arguments:
        train_errors (PredictionError or list(PredictionError)) -- training errors, batched or as a list
        plan (SegmentPlan) -- segmentation

    Returns:
        model (ErrorModel) -- means, eigenvectors and the omega scaling (training max of |r_j|, floored)
    '''
    batch = _as_batch(train_errors)
    if batch.count < 2:
        raise ValueError('need at least 2 training errors to fit the error model, got {}'.format(batch.count))
    means, eigvecs, eigvals = {}, {}, {}
    for q in batch.segments:
        block = batch.blocks[q]
        if block.shape[0] < block.shape[1]:
            logging.warning('CONFORMAL --- segment {} has {} samples for {} error dims; covariance is rank deficient'.format(
                q, block.shape[0], block.shape[1]
            ))
        means[q], eigvals[q], eigvecs[q] = _principal_axes(block)
    model = ErrorModel(plan, batch.segments, means, eigvecs, eigvals, np.ones(batch.stacked().shape[1]))
    r = map_to_principal(batch, model)
    model.omega = _floor(np.abs(r).max(axis = 0))
    logging.info('CONFORMAL --- fitted error model over {} segments from {} samples'.format(len(batch.segments), batch.count))
    return model


def map_to_principal(pe, model):
    '''
    r^q = V^q^T (PE^q - mean^q) for every segment, concatenated.
    '''
    parts = []
    for q in model.segments:
        if q not in pe.blocks:
            raise DimensionError('prediction error has no block for segment {}'.format(q))
        block = pe.blocks[q]
        if block.shape[-1] != len(model.means[q]):
            raise DimensionError('segment {} error has length {} but the model expects {}'.format(q, block.shape[-1], len(model.means[q])))
        parts.append((block - model.means[q]) @ model.eigvecs[q])
    return np.concatenate(parts, axis = -1)


def reconstruct(r, model):
    '''
    Inverse of map_to_principal: PE^q = mean^q + V^q r^q.
    '''
    r = np.asarray(r, dtype = float)
    if r.shape[-1] != len(model.omega):
        raise DimensionError('principal vector has length {} but the model expects {}'.format(r.shape[-1], len(model.omega)))
    return PredictionError({q: model.means[q] + r[..., model._slices[q]] @ model.eigvecs[q].T for q in model.segments})


def residual_pca(r, model):
    '''
    rho = max_j |r^j| / omega_j.
    '''
    r = np.asarray(r, dtype = float)
    if r.shape[-1] != len(model.omega):
        raise DimensionError('principal vector has length {} but omega has length {}'.format(r.shape[-1], len(model.omega)))
    return np.max(np.abs(r) / model.omega, axis = -1)


def fit_baseline_alpha(train_errors):
    '''
    alpha_j = 1 / max_i |R_i^j| over training errors, with the max floored away from zero.
    '''
    batch = _as_batch(train_errors)
    return 1.0 / _floor(np.abs(batch.stacked()).max(axis = 0))


def residual_baseline(pe, alpha):
    '''
    R = max_j alpha_j |R^j|.
    '''
    values = pe.stacked() if isinstance(pe, PredictionError) else np.asarray(pe, dtype = float)
    alpha = np.asarray(alpha, dtype = float)
    if values.shape[-1] != len(alpha):
        raise DimensionError('error has length {} but alpha has length {}'.format(values.shape[-1], len(alpha)))
    return np.max(alpha * np.abs(values), axis = -1)


def robust_rank(L, delta, tau):
    '''
    l* = ceil((L + 1)(1 + 1/L)(delta + tau)), evaluated in exact rational arithmetic on the
    given floats.

    Arguments:
        L (int) -- number of calibration residuals, at least 1
        delta (float) -- confidence level in (0, 1)
        tau (float) -- total variation bound, at least 0

    Returns:
        rank (int) -- 1-based rank into the sorted residuals

    Raises InfeasibleCalibration when the rank exceeds L.
    '''
    rank = _rank_value(L, delta, tau)
    if rank > L:
        raise InfeasibleCalibration(rank, L, delta, tau, required_calibration_size(delta, tau))
    return rank


def _rank_value(L, delta, tau):
    if int(L) != L or L < 1:
        raise ValueError('L must be a positive integer, got {}'.format(L))
    if not 0.0 < delta < 1.0:
        raise ValueError('delta must lie in (0, 1), got {}'.format(delta))
    if tau < 0.0:
        raise ValueError('tau must be nonnegative, got {}'.format(tau))
    L = int(L)
    value = Fraction(L + 1) * Fraction(L + 1, L) * (Fraction(delta) + Fraction(tau))
    return math.ceil(value)


def required_calibration_size(delta, tau):
    '''
    Smallest L whose robust rank does not exceed L, or None if delta + tau >= 1.
    '''
    s = Fraction(delta) + Fraction(tau)
    if s >= 1:
        return None
    # (L + 1)^2 / L * s <= L  <=>  L >= (s + sqrt(s)) / (1 - s), up to float error in the root
    estimate = (float(s) + math.sqrt(float(s))) / (1.0 - float(s))
    upper = math.ceil(estimate) + 2
    for L in range(max(1, math.floor(estimate) - 2), upper + 1):
        if _rank_value(L, delta, tau) <= L:
            return L
    return upper


class CalibrationResult():
    def __init__(self, residuals, rank, rho_star, delta, tau):
        '''
        Arguments:
            residuals (array(L)) -- calibration residuals sorted non-decreasingly
            rank (int) -- l*, 1-based
            rho_star (float) -- the residual at rank l*
            delta (float) -- confidence level
            tau (float) -- total variation bound
        '''
        self.residuals = np.asarray(residuals, dtype = float)
        self.rank = int(rank)
        self.rho_star = float(rho_star)
        self.delta = float(delta)
        self.tau = float(tau)

    @property
    def L(self):
        return len(self.residuals)

    def to_dict(self):
        return {
            'L': self.L,
            'delta': self.delta,
            'tau': self.tau,
            'rank': self.rank,
            'rho_star': self.rho_star,
            'residuals': self.residuals.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data['residuals'], data['rank'], data['rho_star'], data['delta'], data['tau'])


def calibrate(calib_residuals, delta, tau):
    '''
    Sorts the calibration residuals and picks the one at the robust rank.

    Arguments:
        calib_residuals (array(L)) -- finite residuals of the calibration trajectories
        delta (float) -- confidence level
        tau (float) -- total variation bound

    Returns:
        result (CalibrationResult) -- sorted residuals, rank and rho*
    '''
    residuals = np.asarray(calib_residuals, dtype = float).reshape(-1)
    if len(residuals) == 0:
        raise ValueError('need at least one calibration residual')
    if not np.all(np.isfinite(residuals)):
        raise ValueError('calibration residuals must be finite')
    ordered = np.sort(residuals, kind = 'stable')
    rank = robust_rank(len(ordered), delta, tau)
    rho_star = ordered[rank - 1]
    logging.info('CONFORMAL --- calibrated on L = {}: rank {}, rho* = {} (delta = {}, tau = {})'.format(
        len(ordered), rank, rho_star, delta, tau
    ))
    return CalibrationResult(ordered, rank, rho_star, delta, tau)


def inflating_hypercube_pca(model, rho_star, q, lp_backend = 'simplex'):
    '''
    Star <mean^q, V^q, |mu_j| <= omega_j rho*> bounding segment q's prediction error.
    '''
    if rho_star < 0:
        raise ValueError('rho* must be nonnegative, got {}'.format(rho_star))
    half = model.omega_of(q) * rho_star
    return StarSet.from_predicate_box(model.means[q], model.eigvecs[q], -half, half, lp_backend = lp_backend)


def inflating_hypercube_baseline(alpha, R_star, lp_backend = 'simplex'):
    '''
    Origin-centered axis-aligned star with half-widths R* / alpha_j.
    '''
    if R_star < 0:
        raise ValueError('R* must be nonnegative, got {}'.format(R_star))
    alpha = np.asarray(alpha, dtype = float)
    half = R_star / alpha
    return StarSet.from_predicate_box(np.zeros(len(alpha)), np.eye(len(alpha)), -half, half, lp_backend = lp_backend)


def log_volume(half_widths):
    '''
    Sum of log edge lengths of a hypercube, -inf when any edge is zero.
    '''
    with np.errstate(divide = 'ignore'):
        return float(np.sum(np.log(2.0 * np.asarray(half_widths, dtype = float))))


def save_model(model, path):
    with open(path, 'w', encoding = 'utf-8') as f:
        json.dump(model.to_dict(), f, sort_keys = True, indent = 2)


def load_model(path, cls = ErrorModel):
    if not os.path.exists(path):
        raise MissingArtifactError(path, phase = 'calibrate')
    with open(path, 'r', encoding = 'utf-8') as f:
        return cls.from_dict(json.load(f))
