import functools
import json
import logging
import os
import numpy as np
import pandas as pd
from scipy.linalg import expm
from exceptions import DimensionError, SimulationError, MissingArtifactError
from star_sets import Box

'''
Stochastic difference-equation simulators, s_{k+1} = f(s_k) + v_k with v_k ~ N(0, Sigma_v),
plus the trajectory datasets drawn from them.

Every record gets its own counter-based random stream (Philox keyed by seed, role and record
index), so a dataset does not depend on the order or the grouping in which records are drawn,
and training, calibration and validation data never share a stream even under the same seed.
'''

ROLES = {'train': 1, 'calibration': 2, 'validation': 3, 'deployment': 4}


def _linear2d(S, params, dt):
    a = params['scale']
    theta = params['theta']
    A = a * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return S @ A.T


def _vanderpol_rhs(S, mu):
    x1, x2 = S[:, 0], S[:, 1]
    return np.stack([x2, mu * (1 - x1 ** 2) * x2 - x1], axis = 1)


def _vanderpol2d(S, params, dt):
    mu = params['mu']
    if params.get('integrator', 'euler') == 'rk4':
        k1 = _vanderpol_rhs(S, mu)
        k2 = _vanderpol_rhs(S + dt / 2 * k1, mu)
        k3 = _vanderpol_rhs(S + dt / 2 * k2, mu)
        k4 = _vanderpol_rhs(S + dt * k3, mu)
        return S + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return S + dt * _vanderpol_rhs(S, mu)


def _dubins3d(S, params, dt):
    v = params['speed']
    w = params['turn_rate']
    x, y, heading = S[:, 0], S[:, 1], S[:, 2]
    return np.stack([x + dt * v * np.cos(heading), y + dt * v * np.sin(heading), heading + dt * w], axis = 1)


def quadhover_matrix(params, dt):
    '''
    Discrete transition matrix of the closed-loop quadcopter hover linearization.
    State order: x, y, z, roll, pitch, yaw, vx, vy, vz, p, q, r.
    '''
    g = params['gravity']
    kp_att, kd_att = params['kp_att'], params['kd_att']
    kp_pos, kd_pos = params['kp_pos'], params['kd_pos']
    kp_z, kd_z = params['kp_z'], params['kd_z']
    Ac = np.zeros((12, 12))
    # positions integrate velocities, angles integrate body rates
    Ac[0:6, 6:12] = np.eye(6)
    # small-angle translational dynamics
    Ac[6, 4] = g
    Ac[7, 3] = -g
    Ac[8, 2] = -kp_z
    Ac[8, 8] = -kd_z
    # attitude loop tracking a tilt command from the position loop
    Ac[9, 3] = -kp_att
    Ac[9, 9] = -kd_att
    Ac[9, 1] = kp_att * kp_pos / g
    Ac[9, 7] = kp_att * kd_pos / g
    Ac[10, 4] = -kp_att
    Ac[10, 10] = -kd_att
    Ac[10, 0] = -kp_att * kp_pos / g
    Ac[10, 6] = -kp_att * kd_pos / g
    Ac[11, 5] = -kp_att
    Ac[11, 11] = -kd_att
    return expm(Ac * dt)


@functools.lru_cache(maxsize = 16)
def _cached_quadhover_matrix(items, dt):
    return quadhover_matrix(dict(items), dt)


def _quadhover12d(S, params, dt):
    return S @ _cached_quadhover_matrix(tuple(sorted(params.items())), dt).T


# name: (step function, state dim, default params, default dt, default initial box, default noise std)
BUILTIN_SYSTEMS = {
    'linear2d': (
        _linear2d, 2,
        {'scale': 0.9, 'theta': 0.0},
        1.0,
        ([-1.0, -1.0], [1.0, 1.0]),
        [0.05, 0.05],
    ),
    'vanderpol2d': (
        _vanderpol2d, 2,
        {'mu': 1.0, 'integrator': 'euler'},
        0.05,
        ([1.0, 2.0], [1.5, 2.5]),
        [0.01, 0.01],
    ),
    'dubins3d': (
        _dubins3d, 3,
        {'speed': 1.0, 'turn_rate': 0.2},
        0.1,
        ([-0.1, -0.1, -0.05], [0.1, 0.1, 0.05]),
        [0.01, 0.01, 0.005],
    ),
    'quadhover12d': (
        _quadhover12d, 12,
        {'gravity': 9.81, 'kp_att': 16.0, 'kd_att': 8.0, 'kp_pos': 1.0, 'kd_pos': 2.0, 'kp_z': 4.0, 'kd_z': 4.0},
        0.05,
        ([-0.1] * 3 + [-0.05] * 3 + [0.0] * 6, [0.1] * 3 + [0.05] * 3 + [0.0] * 6),
        [0.05] * 6 + [0.01] * 6,
    ),
}


def noise_factor(cov):
    '''
    Matrix L with L L^T = cov. Cholesky when cov is positive definite, otherwise the symmetric
    square root with negative eigenvalues clipped to zero.
    '''
    cov = np.asarray(cov, dtype = float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        values, vectors = np.linalg.eigh((cov + cov.T) / 2)
        return vectors * np.sqrt(np.clip(values, 0.0, None))


class SystemSpec():
    def __init__(self, name, noise_cov, init_lower, init_upper, params = None, dt = None):
        '''
        Arguments:
            name (str) -- one of BUILTIN_SYSTEMS
            noise_cov (array(n, n)) -- process noise covariance Sigma_v, positive semidefinite
            init_lower (array(n)) -- lower corner of the initial set I
            init_upper (array(n)) -- upper corner of the initial set I
            params (dict) -- step function parameters, defaults filled in
            dt (float) -- sample time, system default if None
        '''
        if name not in BUILTIN_SYSTEMS:
            raise ValueError('Unrecognized system name: {}. Known systems are {}'.format(name, sorted(BUILTIN_SYSTEMS)))
        step, n, default_params, default_dt, _, _ = BUILTIN_SYSTEMS[name]
        noise_cov = np.asarray(noise_cov, dtype = float)
        init_lower = np.asarray(init_lower, dtype = float).reshape(-1)
        init_upper = np.asarray(init_upper, dtype = float).reshape(-1)
        if noise_cov.shape != (n, n):
            raise DimensionError('{} needs a {}x{} noise covariance, got {}'.format(name, n, n, noise_cov.shape))
        if not np.allclose(noise_cov, noise_cov.T):
            raise ValueError('noise covariance must be symmetric')
        if np.linalg.eigvalsh(noise_cov).min() < -1e-10 * max(1.0, np.abs(noise_cov).max()):
            raise ValueError('noise covariance must be positive semidefinite')
        if init_lower.shape != (n,) or init_upper.shape != (n,):
            raise DimensionError('{} needs initial bounds of length {}'.format(name, n))
        if np.any(init_lower > init_upper):
            raise ValueError('initial set is empty: lower bound exceeds upper bound')
        merged = dict(default_params)
        merged.update(params or {})
        self.name = name
        self.state_dim = n
        self.params = merged
        self.dt = float(default_dt if dt is None else dt)
        self.noise_cov = noise_cov
        self.init_lower = init_lower
        self.init_upper = init_upper
        self._step = step
        self._factor = noise_factor(noise_cov)

    @classmethod
    def from_config(cls, cfg):
        '''
        Builds a spec from the 'system' config section. Noise is given either as a full
        'noise_cov' matrix or as 'noise_std' (scalar or per-dimension) with an optional common
        'noise_correlation' between every pair of dimensions.
        '''
        name = cfg['name']
        _, n, _, _, default_box, default_std = BUILTIN_SYSTEMS[name]
        if cfg.get('noise_cov') is not None:
            cov = np.asarray(cfg['noise_cov'], dtype = float)
        else:
            std = np.broadcast_to(np.asarray(cfg.get('noise_std', default_std), dtype = float), (n,))
            corr = float(cfg.get('noise_correlation', 0.0))
            R = np.full((n, n), corr)
            np.fill_diagonal(R, 1.0)
            cov = R * np.outer(std, std)
        lower = cfg.get('init_lower', default_box[0])
        upper = cfg.get('init_upper', default_box[1])
        return cls(name, cov, lower, upper, params = cfg.get('params'), dt = cfg.get('dt'))

    def step(self, S):
        '''
        Noise-free dynamics f applied to every row of S.
        '''
        return self._step(np.atleast_2d(S), self.params, self.dt)

    @property
    def initial_box(self):
        return Box(self.init_lower, self.init_upper)

    def to_dict(self):
        return {
            'name': self.name,
            'state_dim': self.state_dim,
            'params': self.params,
            'dt': self.dt,
            'noise_cov': self.noise_cov.tolist(),
            'init_lower': self.init_lower.tolist(),
            'init_upper': self.init_upper.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data['name'], data['noise_cov'], data['init_lower'], data['init_upper'], params = data['params'], dt = data['dt'])

    def __eq__(self, other):
        return isinstance(other, SystemSpec) and self.to_dict() == other.to_dict()


def record_rng(seed, role, index):
    '''
    Counter-based random stream of one dataset record.
    '''
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), ROLES[role], int(index)])))


def sample_noise(spec, count, rng):
    '''
    count draws of the process noise v ~ N(0, Sigma_v).
    '''
    return rng.standard_normal((count, spec.state_dim)) @ spec._factor.T


def simulate_batch(spec, S0, noise):
    '''
    Rolls out every record together.

    Arguments:
        spec (SystemSpec) -- the system
        S0 (array(count, n)) -- initial states
        noise (array(count, K, n)) -- process noise of every record and step

    Returns:
        trajectories (array(count, K, n)) -- s_1 ... s_K of every record
    '''
    S = np.array(S0, dtype = float, ndmin = 2)
    count, K, n = noise.shape
    if S.shape != (count, n):
        raise DimensionError('initial states have shape {} but noise expects ({}, {})'.format(S.shape, count, n))
    out = np.empty((count, K, n))
    with np.errstate(over = 'ignore', invalid = 'ignore'):
        for k in range(K):
            S = spec.step(S) + noise[:, k, :]
            if not np.all(np.isfinite(S)):
                raise SimulationError(spec.name, k + 1)
            out[:, k, :] = S
    return out


def simulate(spec, s0, K, rng, check_initial = True):
    '''
    One trajectory s_1 ... s_K from s0.

    Arguments:
        spec (SystemSpec) -- the system
        s0 (array(n)) -- initial state
        K (int) -- number of steps
        rng (numpy Generator) -- noise source
        check_initial (bool) -- reject s0 outside the initial set

    Returns:
        trajectory (array(K, n)) -- the states after s0
    '''
    s0 = np.asarray(s0, dtype = float).reshape(-1)
    if len(s0) != spec.state_dim:
        raise DimensionError('initial state has length {} but {} has dimension {}'.format(len(s0), spec.name, spec.state_dim))
    if check_initial and not spec.initial_box.contains(s0, tol = 1e-12):
        raise ValueError('initial state {} lies outside the initial set; pass check_initial = False to override'.format(s0.tolist()))
    noise = sample_noise(spec, K, rng).reshape(1, K, spec.state_dim)
    return simulate_batch(spec, s0.reshape(1, -1), noise)[0]


def shift(spec, covariance_scale):
    '''
    Deployment copy of a spec whose process noise covariance is scaled by covariance_scale.
    '''
    if covariance_scale <= 0:
        raise ValueError('covariance scale must be positive, got {}'.format(covariance_scale))
    data = spec.to_dict()
    data['noise_cov'] = (np.asarray(data['noise_cov']) * covariance_scale).tolist()
    return SystemSpec.from_dict(data)


class TrajectoryDataset():
    def __init__(self, spec, K, initial_states, trajectories, role, seed):
        '''
        Arguments:
            spec (SystemSpec) -- system the records were drawn from
            K (int) -- steps per trajectory
            initial_states (array(count, n)) -- s0 of every record
            trajectories (array(count, K, n)) -- s_1 ... s_K of every record
            role ('train', 'calibration', 'validation', 'deployment') -- what the records are for
            seed (int) -- base seed of the record streams
        '''
        if role not in ROLES:
            raise ValueError('Unrecognized dataset role: {}'.format(role))
        initial_states = np.asarray(initial_states, dtype = float)
        trajectories = np.asarray(trajectories, dtype = float)
        if trajectories.ndim != 3 or trajectories.shape[1] != K or trajectories.shape[0] != initial_states.shape[0]:
            raise DimensionError('trajectories have shape {}, expected ({}, {}, n)'.format(trajectories.shape, initial_states.shape[0], K))
        self.spec = spec
        self.K = int(K)
        self.initial_states = initial_states
        self.trajectories = trajectories
        self.role = role
        self.seed = int(seed)

    @property
    def count(self):
        return self.initial_states.shape[0]

    def to_frame(self):
        '''
        Long table with one row per (trajectory, step); k = 0 holds s0.
        '''
        count, K, n = self.trajectories.shape
        states = np.concatenate([self.initial_states[:, None, :], self.trajectories], axis = 1)
        frame = pd.DataFrame(states.reshape(-1, n), columns = ['x{}'.format(i + 1) for i in range(n)])
        frame.insert(0, 'k', np.tile(np.arange(K + 1), count))
        frame.insert(0, 'traj_id', np.repeat(np.arange(count), K + 1))
        return frame

    def save(self, path):
        '''
        Writes the CSV at path and a JSON sidecar (spec, seed, role) next to it.
        '''
        self.to_frame().to_csv(path, index = False, float_format = '%.17g')
        with open(sidecar_path(path), 'w', encoding = 'utf-8') as f:
            json.dump({'spec': self.spec.to_dict(), 'K': self.K, 'role': self.role, 'seed': self.seed, 'count': self.count}, f, sort_keys = True, indent = 2)

    @classmethod
    def load(cls, path):
        if not os.path.exists(path) or not os.path.exists(sidecar_path(path)):
            raise MissingArtifactError(path, phase = 'simulate')
        with open(sidecar_path(path), 'r', encoding = 'utf-8') as f:
            meta = json.load(f)
        frame = pd.read_csv(path, float_precision = 'round_trip')
        frame = frame.sort_values(['traj_id', 'k'], kind = 'stable')
        n = meta['spec']['state_dim']
        states = frame[['x{}'.format(i + 1) for i in range(n)]].to_numpy().reshape(meta['count'], meta['K'] + 1, n)
        return cls(SystemSpec.from_dict(meta['spec']), meta['K'], states[:, 0, :], states[:, 1:, :], meta['role'], meta['seed'])


def sidecar_path(path):
    return os.path.splitext(path)[0] + '.json'


def make_dataset(spec, K, count, role, seed):
    '''
    count i.i.d. records with s0 ~ uniform(I).

    Arguments:
        spec (SystemSpec) -- the system
        K (int) -- steps per trajectory
        count (int) -- number of records, at least 1
        role (str) -- dataset role, also part of every record's stream key
        seed (int) -- base seed

    Returns:
        dataset (TrajectoryDataset) -- the records
    '''
    if count < 1:
        raise ValueError('dataset needs at least one record, got count = {}'.format(count))
    if role not in ROLES:
        raise ValueError('Unrecognized dataset role: {}'.format(role))
    n = spec.state_dim
    S0 = np.empty((count, n))
    noise = np.empty((count, K, n))
    for i in range(count):
        rng = record_rng(seed, role, i)
        S0[i] = rng.uniform(spec.init_lower, spec.init_upper)
        noise[i] = sample_noise(spec, K, rng)
    trajectories = simulate_batch(spec, S0, noise)
    logging.info('SYSTEMS --- drew {} {} records of {} steps from {} (seed {})'.format(count, role, K, spec.name, seed))
    return TrajectoryDataset(spec, K, S0, trajectories, role, seed)
