import logging
import os
import time
import numpy as np
import pandas as pd
import conformal
import surrogates
from exceptions import ConfigError, DimensionError, MissingArtifactError
from reachability import network_reach
from shared_objects import SharedNumpyArray
from star_sets import MEMBERSHIP_TOL, StarSet, concatenate, union_bounds
from surrogates import MLP, SegmentPlan, TrainConfig
from systems import SystemSpec, TrajectoryDataset, make_dataset, shift
from utils import PhaseTimer, memory_mb, parallel_map, read_json, setup_logging, write_json

'''
Orchestration of the whole method: datasets, segment surrogates, the surrogate flowpipe, the
error model with its calibration, inflating hypercubes, the confident flowpipe, and coverage
validation. FlowpipeRunner ties the phases to files in one output folder.
'''

PHASES = ['simulate', 'train', 'reach', 'calibrate', 'inflate', 'validate', 'report']
VALIDATION_CHUNK = 250


class Flowpipe():
    def __init__(self, segments, plan, state_dim, kind = 'surrogate', metadata = None):
        '''
        Arguments:
            segments (dict(int: list(StarSet))) -- star union of every computed segment
            plan (SegmentPlan) -- segmentation the stars belong to
            state_dim (int) -- n
            kind ('surrogate', 'confident') -- what the stars bound
            metadata (dict) -- delta, tau, rho*, mode, hypercube info and so on
        '''
        if kind not in ('surrogate', 'confident'):
            raise ValueError('Unrecognized flowpipe kind: {}'.format(kind))
        for q, stars in segments.items():
            if len(stars) == 0:
                raise ValueError('segment {} has no stars'.format(q))
            expected = state_dim * plan.lengths[q]
            for star in stars:
                if star.dim != expected:
                    raise DimensionError('segment {} star has dimension {}, expected n * T_q = {}'.format(q, star.dim, expected))
        self.segments = {int(q): list(stars) for q, stars in sorted(segments.items())}
        self.plan = plan
        self.state_dim = int(state_dim)
        self.kind = kind
        self.metadata = dict(metadata or {})

    @property
    def segment_indices(self):
        return list(self.segments)

    def contains_segment(self, q, x, tol = MEMBERSHIP_TOL):
        '''
        Membership in the union of segment q's stars.
        '''
        return any(star.contains(x, tol = tol) for star in self.segments[q])

    def first_violation(self, trajectory, tol = MEMBERSHIP_TOL):
        '''
        First segment whose stacked states fall outside its star union, None for a hit.

        Arguments:
            trajectory (array(K, n)) -- s_1 ... s_K
        '''
        for q in self.segments:
            steps = self.plan.steps(q)
            if not self.contains_segment(q, trajectory[steps.start:steps.stop].reshape(-1), tol = tol):
                return q
        return None

    def concatenated(self):
        '''
        Whole-trajectory star over the computed segments. Needs exactly one star per segment.
        '''
        if any(len(stars) != 1 for stars in self.segments.values()):
            raise ValueError('concatenation needs a single star per segment; exact-mode unions are not supported')
        return concatenate([stars[0] for stars in self.segments.values()])

    def bounds_frame(self, method = 'lp'):
        '''
        Per-step, per-component bounds of every computed segment, one row per (step, component).
        Steps are 1-based state indices k, components 1-based.
        '''
        rows = []
        n = self.state_dim
        for q, stars in self.segments.items():
            box = union_bounds(stars, method = method)
            for t, k in enumerate(self.plan.steps(q)):
                for l in range(n):
                    rows.append((q, k + 1, l + 1, box.lower[t * n + l], box.upper[t * n + l]))
        return pd.DataFrame(rows, columns = ['segment', 'step', 'component', 'lower', 'upper'])

    def to_dict(self):
        return {
            'kind': self.kind,
            'plan': self.plan.to_dict(),
            'state_dim': self.state_dim,
            'metadata': self.metadata,
            'segments': [
                {'segment': q, 'steps': [k + 1 for k in self.plan.steps(q)], 'stars': [s.to_dict() for s in stars]}
                for q, stars in self.segments.items()
            ],
        }

    @classmethod
    def from_dict(cls, data, lp_backend = 'simplex'):
        segments = {
            int(entry['segment']): [StarSet.from_dict(s, lp_backend = lp_backend) for s in entry['stars']]
            for entry in data['segments']
        }
        return cls(segments, SegmentPlan.from_dict(data['plan']), data['state_dim'], kind = data['kind'], metadata = data['metadata'])

    def save(self, path):
        write_json(self.to_dict(), path)

    @classmethod
    def load(cls, path, lp_backend = 'simplex'):
        if not os.path.exists(path):
            raise MissingArtifactError(path)
        return cls.from_dict(read_json(path), lp_backend = lp_backend)


class CoverageReport():
    def __init__(self, trials, hits, delta, violations, composition_violations = 0, log_volume_pca = None, log_volume_baseline = None, residual = None):
        '''
        Arguments:
            trials (int) -- M, number of deployment trajectories
            hits (int) -- trajectories lying entirely inside the flowpipe
            delta (float) -- target confidence
            violations (dict(int: int)) -- how many trajectories first left the flowpipe at each segment
            composition_violations (int) -- trials whose error was in the hypercube and whose surrogate prediction was in the surrogate flowpipe, but which still missed
            log_volume_pca (float) -- sum of log edge lengths of the PCA hypercubes
            log_volume_baseline (float) -- same for the baseline hypercubes
            residual ('pca', 'baseline') -- which hypercubes inflated the validated flowpipe
        '''
        if hits > trials:
            raise ValueError('hits ({}) cannot exceed trials ({})'.format(hits, trials))
        self.trials = int(trials)
        self.hits = int(hits)
        self.delta = float(delta)
        self.violations = {int(q): int(v) for q, v in sorted(violations.items())}
        self.composition_violations = int(composition_violations)
        self.log_volume_pca = log_volume_pca
        self.log_volume_baseline = log_volume_baseline
        self.residual = residual

    @property
    def coverage(self):
        return self.hits / self.trials

    def to_dict(self):
        return {
            'trials': self.trials,
            'hits': self.hits,
            'coverage': self.coverage,
            'delta': self.delta,
            'first_violation_histogram': {str(q): v for q, v in self.violations.items()},
            'composition_violations': self.composition_violations,
            'log_volume_pca': _json_float(self.log_volume_pca),
            'log_volume_baseline': _json_float(self.log_volume_baseline),
            'residual': self.residual,
        }


def _json_float(value):
    # JSON has no infinities
    if value is None or np.isfinite(value):
        return value
    return str(value)


def reach_wrapper(args):
    '''
    DO NOT CALL DIRECTLY
    Used for parallelization of surrogate reachability over segments.

    Arguments:
        args (tuple) -- a tuple that should contain four fields
            args[0] (int) -- segment index
            args[1] (MLP) -- the segment surrogate
            args[2] (StarSet) -- initial-state star
            args[3] (dict) -- keyword arguments of network_reach
    Returns:
        q (int) -- segment index
        stars (list(StarSet)) -- reach result
    '''
    q, net, input_star, options = args
    start = time.time()
    stars = network_reach(net, input_star, **options)
    logging.info('CHILD --- pid: {}. Completed reach of segment {} in {} seconds. Currently using {} MB memory.'.format(
        os.getpid(), q, time.time() - start, memory_mb()
    ))
    return q, stars


def surrogate_flowpipe(nets, plan, initial_box, mode = 'approx', threads = 1, max_stars = 4096, bound_method = 'lp', lp_backend = 'simplex', reduce_predicates = False, segments = None):
    '''
    Reach set of every segment surrogate over the initial-state box.

    Arguments:
        nets (dict(int: MLP)) -- surrogates trained on plan
        plan (SegmentPlan) -- segmentation
        initial_box (star_sets.Box) -- initial set I
        mode ('exact', 'approx') -- star propagation method
        threads (int) -- worker count for the map over segments
        segments (list(int)) -- segments to compute, every key of nets if None

    Returns:
        flowpipe (Flowpipe) -- kind 'surrogate'
    '''
    segments = sorted(nets) if segments is None else list(segments)
    missing = [q for q in segments if q not in nets]
    if missing:
        raise ValueError('no surrogate for segments {}'.format(missing))
    n = initial_box.dim
    input_star = StarSet.from_box(initial_box, lp_backend = lp_backend)
    options = {'mode': mode, 'max_stars': max_stars, 'bound_method': bound_method, 'reduce_predicates': reduce_predicates}
    tasks = [(q, nets[q], input_star, options) for q in segments]
    results = parallel_map(reach_wrapper, tasks, threads = threads)
    return Flowpipe(dict(results), plan, n, kind = 'surrogate', metadata = {'mode': mode})


def confident_flowpipe(surrogate, hypercubes, metadata = None):
    '''
    X = X_bar (+) dX: every surrogate star of segment q summed with the hypercube of segment q.

    Arguments:
        surrogate (Flowpipe) -- kind 'surrogate'
        hypercubes (dict(int: StarSet)) -- inflating hypercube of every surrogate segment
        metadata (dict) -- merged into the surrogate metadata

    Returns:
        flowpipe (Flowpipe) -- kind 'confident'
    '''
    if surrogate.kind != 'surrogate':
        raise ValueError('confident flowpipes are built from surrogate flowpipes, got kind {}'.format(surrogate.kind))
    segments = {}
    for q, stars in surrogate.segments.items():
        if q not in hypercubes:
            raise DimensionError('no inflating hypercube for segment {}'.format(q))
        segments[q] = [star.minkowski_sum(hypercubes[q]) for star in stars]
    merged = dict(surrogate.metadata)
    merged.update(metadata or {})
    return Flowpipe(segments, surrogate.plan, surrogate.state_dim, kind = 'confident', metadata = merged)


def validate_wrapper(args):
    '''
    DO NOT CALL DIRECTLY
    Used for parallelization of coverage validation over chunks of trajectories.

    Arguments:
        args (tuple) -- a tuple that should contain five fields
            args[0] (SharedNumpyArray) -- initial states of every trial, (M, n)
            args[1] (SharedNumpyArray) -- trajectories of every trial, (M, K, n)
            args[2] (range) -- trial indices of this chunk
            args[3] (Flowpipe) -- confident flowpipe
            args[4] (tuple or None) -- (surrogate Flowpipe, nets, hypercubes) for the composition check
    Returns:
        outcomes (list(tuple)) -- (first violating segment or -1, composition violated) per trial
    '''
    shared_s0, shared_traj, chunk, flowpipe, composition = args
    start = time.time()
    S0 = shared_s0.read()
    T = shared_traj.read()
    outcomes = []
    for i in chunk:
        first = flowpipe.first_violation(T[i])
        broken = False
        if first is not None and composition is not None:
            surrogate, nets, hypercubes = composition
            broken = _composition_holds(S0[i], T[i], surrogate, nets, hypercubes)
        outcomes.append((-1 if first is None else first, broken))
    logging.info('CHILD --- pid: {}. Checked trials {} to {} in {} seconds. Currently using {} MB memory.'.format(
        os.getpid(), chunk.start, chunk.stop - 1, time.time() - start, memory_mb()
    ))
    return outcomes


def _composition_holds(s0, trajectory, surrogate, nets, hypercubes):
    '''
    True when the prediction error of every segment lies in its hypercube and every surrogate
    prediction lies in the surrogate flowpipe, i.e. the trial should have been a hit.
    '''
    for q in surrogate.segments:
        steps = surrogate.plan.steps(q)
        truth = trajectory[steps.start:steps.stop].reshape(-1)
        predicted = nets[q].forward(s0)
        if not hypercubes[q].contains(truth - predicted):
            return False
        if not surrogate.contains_segment(q, predicted):
            return False
    return True


def validate_coverage(flowpipe, spec, trials, seed, threads = 1, composition = None):
    '''
    Monte-Carlo coverage of a confident flowpipe under the deployment system.

    Arguments:
        flowpipe (Flowpipe) -- kind 'confident'
        spec (SystemSpec) -- deployment system, possibly shifted
        trials (int) -- M >= 1
        seed (int) -- base seed of the deployment records
        threads (int) -- worker count
        composition (tuple) -- (surrogate Flowpipe, nets, hypercubes), enables the composition check. optional

    Returns:
        report (CoverageReport) -- hits, coverage and the first-violation histogram
    '''
    if trials < 1:
        raise ValueError('need at least one validation trial')
    if flowpipe.kind != 'confident':
        logging.warning('VALIDATE --- validating a {} flowpipe'.format(flowpipe.kind))
    dataset = make_dataset(spec, flowpipe.plan.K, trials, 'deployment', seed)
    shared_s0 = SharedNumpyArray(dataset.initial_states)
    shared_traj = SharedNumpyArray(dataset.trajectories)
    try:
        tasks = [
            (shared_s0, shared_traj, range(start, min(start + VALIDATION_CHUNK, trials)), flowpipe, composition)
            for start in range(0, trials, VALIDATION_CHUNK)
        ]
        outcomes = [o for chunk in parallel_map(validate_wrapper, tasks, threads = threads) for o in chunk]
    finally:
        shared_s0.unlink()
        shared_traj.unlink()
    violations = {}
    for first, _ in outcomes:
        if first >= 0:
            violations[first] = violations.get(first, 0) + 1
    hits = sum(1 for first, _ in outcomes if first < 0)
    broken = sum(1 for _, b in outcomes if b)
    if broken:
        logging.warning('VALIDATE --- {} trials missed although error and prediction were both inside their sets'.format(broken))
    report = CoverageReport(trials, hits, flowpipe.metadata.get('delta', float('nan')), violations, composition_violations = broken,
                            residual = flowpipe.metadata.get('residual'))
    logging.info('VALIDATE --- coverage {} over {} trials (target {})'.format(report.coverage, trials, report.delta))
    return report


def segment_log_volumes(error_model, baseline_model):
    '''
    Per-segment hypercube log-volumes of both residual modes at their calibrated thresholds.
    '''
    rho_star = error_model.calibration.rho_star
    R_star = baseline_model.calibration.rho_star
    rows = []
    for q in error_model.segments:
        rows.append({
            'segment': q,
            'log_volume_pca': conformal.log_volume(error_model.omega_of(q) * rho_star),
            'log_volume_baseline': conformal.log_volume(R_star / baseline_model.alpha_of(q)),
        })
    return pd.DataFrame(rows, columns = ['segment', 'log_volume_pca', 'log_volume_baseline'])


def compare_methods(error_model, baseline_model, pca_report = None, baseline_report = None):
    '''
    Hypercube volumes of the PCA and baseline residuals side by side, with the coverage of each
    confident flowpipe when available.

    Returns:
        summary (dict) -- totals, log ratio and ratio of the inflation volumes, coverages
        per_segment (pandas DataFrame) -- per-segment log-volumes
    '''
    per_segment = segment_log_volumes(error_model, baseline_model)
    total_pca = float(per_segment['log_volume_pca'].sum())
    total_baseline = float(per_segment['log_volume_baseline'].sum())
    if np.isfinite(total_pca) and np.isfinite(total_baseline):
        log_ratio = total_pca - total_baseline
        with np.errstate(over = 'ignore'):
            ratio = float(np.exp(log_ratio))
    else:
        log_ratio = ratio = None
    summary = {
        'log_volume_pca': _json_float(total_pca),
        'log_volume_baseline': _json_float(total_baseline),
        'log_volume_ratio': log_ratio,
        'volume_ratio': _json_float(ratio),
        'rho_star_pca': error_model.calibration.rho_star,
        'rho_star_baseline': baseline_model.calibration.rho_star,
        'coverage_pca': None if pca_report is None else pca_report.coverage,
        'coverage_baseline': None if baseline_report is None else baseline_report.coverage,
    }
    logging.info('REPORT --- PCA log-volume {}, baseline log-volume {}'.format(total_pca, total_baseline))
    return summary, per_segment


def build_plan(config):
    plan_cfg = config['plan']
    try:
        if plan_cfg['segment_lengths'] is not None:
            return SegmentPlan(plan_cfg['K'], plan_cfg['segment_lengths'])
        return SegmentPlan.uniform(plan_cfg['K'], plan_cfg['segment_length'])
    except ValueError as e:
        raise ConfigError('plan', str(e))


def build_spec(config):
    try:
        return SystemSpec.from_config(config['system'])
    except (ValueError, KeyError, DimensionError) as e:
        raise ConfigError('system', str(e))


class FlowpipeRunner():
    def __init__(self, config, out_folder, threads = 1):
        '''
        Runs the phases of one config against one output folder. Every phase reads the artifacts
        of the earlier phases from the folder and writes its own.

        Arguments:
            config (dict) -- checked config, see utils.validate_config
            out_folder (str) -- artifact folder
            threads (int) -- worker count
        '''
        self.config = config
        self.out_folder = out_folder
        self.threads = threads
        setup_logging(out_folder, 'pcadreach')
        self.timer = PhaseTimer(out_folder)
        self.plan = build_plan(config)
        self.spec = build_spec(config)
        self.segments = self.plan.segments_from(config['plan']['start_step'])
        if len(self.segments) == 0:
            raise ConfigError('plan.start_step', 'no segment starts at or after step {}'.format(config['plan']['start_step']))
        self.lp_backend = config['reach']['lp_backend']
        for folder in ('datasets', 'models'):
            if not os.path.exists(os.path.join(out_folder, folder)):
                os.makedirs(os.path.join(out_folder, folder))

    def path(self, *parts):
        return os.path.join(self.out_folder, *parts)

    def dataset_path(self, role):
        return self.path('datasets', '{}.csv'.format(role))

    def model_path(self, q):
        return self.path('models', 'segment_{:04d}.json'.format(q))

    def _require(self, path, phase):
        if not os.path.exists(path):
            raise MissingArtifactError(path, phase = phase)
        return path

    def run_phase(self, phase):
        if phase not in PHASES:
            raise ValueError('Unrecognized phase: {}'.format(phase))
        return self.timer.run(phase, getattr(self, phase))

    def run(self, start_phase = 'simulate'):
        '''
        Chains every phase from start_phase on.
        '''
        if start_phase not in PHASES:
            raise ConfigError('--phase', 'unknown phase {}, expected one of {}'.format(start_phase, PHASES))
        for phase in PHASES[PHASES.index(start_phase):]:
            self.run_phase(phase)

    def simulate(self):
        run_cfg = self.config['run']
        sizes = {'train': run_cfg['train_size'], 'calibration': run_cfg['calibration_size'], 'validation': run_cfg['validation_size']}
        for role, count in sizes.items():
            if count < 1:
                continue
            dataset = make_dataset(self.spec, self.plan.K, count, role, run_cfg['seed'])
            dataset.save(self.dataset_path(role))
            logging.info('SIMULATE --- wrote {} {} trajectories'.format(count, role))

    def _load_dataset(self, role):
        return TrajectoryDataset.load(self._require(self.dataset_path(role), 'simulate'))

    def train(self):
        cfg = TrainConfig.from_dict(self.config['train'])
        train_set = self._load_dataset('train')
        validation = self._load_dataset('validation') if os.path.exists(self.dataset_path('validation')) else None
        anchors = surrogates.anchor_segments(self.segments, self.config['train']['train_stride'])
        logging.info('PARENT --- Training {} of {} segments, the rest are interpolated'.format(len(anchors), len(self.segments)))
        tasks = [(train_set, self.plan, q, cfg, validation) for q in anchors]
        results = parallel_map(surrogates.train_wrapper, tasks, threads = self.threads, context = 'spawn')
        trained = {q: MLP.from_dict(data) for q, data in results}
        nets = surrogates.fill_by_interpolation(trained, self.segments)
        rows = []
        for q in self.segments:
            surrogates.save(nets[q], self.model_path(q))
            summary = nets[q].training_summary or {}
            if q in trained:
                logging.info('PARENT --- Segment {} train rmse {}, validation rmse {}'.format(q, summary.get('train_rmse'), summary.get('validation_rmse')))
            rows.append({
                'segment': q,
                'interpolated': q not in trained,
                'train_rmse': summary.get('train_rmse'),
                'validation_rmse': summary.get('validation_rmse'),
            })
        pd.DataFrame(rows).to_csv(self.path('training.csv'), index = False)

    def load_nets(self):
        return {q: surrogates.load(self._require(self.model_path(q), 'train')) for q in self.segments}

    def reach(self):
        reach_cfg = self.config['reach']
        flowpipe = surrogate_flowpipe(
            self.load_nets(),
            self.plan,
            self.spec.initial_box,
            mode = reach_cfg['mode'],
            threads = self.threads,
            max_stars = reach_cfg['max_stars'],
            bound_method = reach_cfg['bound_method'],
            lp_backend = self.lp_backend,
            reduce_predicates = reach_cfg['reduce_predicates'],
            segments = self.segments,
        )
        flowpipe.save(self.path('surrogate_flowpipe.json'))

    def calibrate(self):
        '''
        Fits both error models on the training errors and calibrates both on the calibration errors.
        '''
        conf = self.config['conformal']
        nets = self.load_nets()
        train_set = self._load_dataset('train')
        calib_set = self._load_dataset('calibration')
        train_pe = conformal.prediction_errors(train_set.initial_states, train_set.trajectories, nets, self.plan, self.segments)
        calib_pe = conformal.prediction_errors(calib_set.initial_states, calib_set.trajectories, nets, self.plan, self.segments)

        model = conformal.fit_error_model(train_pe, self.plan)
        alpha = conformal.fit_baseline_alpha(train_pe)
        baseline = conformal.BaselineModel(self.plan, self.segments, alpha)

        pca_residuals = conformal.residual_pca(conformal.map_to_principal(calib_pe, model), model)
        baseline_residuals = conformal.residual_baseline(calib_pe, alpha)
        model.calibration = conformal.calibrate(pca_residuals, conf['delta'], conf['tau'])
        baseline.calibration = conformal.calibrate(baseline_residuals, conf['delta'], conf['tau'])

        write_json(model.to_dict(), self.path('error_model.json'))
        write_json(baseline.to_dict(), self.path('baseline_model.json'))
        write_json({
            'L': model.calibration.L,
            'delta': conf['delta'],
            'tau': conf['tau'],
            'rank': model.calibration.rank,
            'rho_star_pca': model.calibration.rho_star,
            'rho_star_baseline': baseline.calibration.rho_star,
        }, self.path('calibration.json'))

    def load_models(self):
        model = conformal.load_model(self._require(self.path('error_model.json'), 'calibrate'))
        baseline = conformal.load_model(self._require(self.path('baseline_model.json'), 'calibrate'), cls = conformal.BaselineModel)
        return model, baseline

    def hypercubes(self, residual):
        model, baseline = self.load_models()
        if residual == 'pca':
            rho_star = model.calibration.rho_star
            return {q: conformal.inflating_hypercube_pca(model, rho_star, q, lp_backend = self.lp_backend) for q in model.segments}, rho_star
        R_star = baseline.calibration.rho_star
        return {q: conformal.inflating_hypercube_baseline(baseline.alpha_of(q), R_star, lp_backend = self.lp_backend) for q in baseline.segments}, R_star

    def confident_path(self, residual):
        return self.path('confident_flowpipe_{}.json'.format(residual))

    def inflate(self):
        surrogate = Flowpipe.load(self._require(self.path('surrogate_flowpipe.json'), 'reach'), lp_backend = self.lp_backend)
        conf = self.config['conformal']
        for residual in ('pca', 'baseline'):
            cubes, threshold = self.hypercubes(residual)
            flowpipe = confident_flowpipe(surrogate, cubes, metadata = {
                'delta': conf['delta'],
                'tau': conf['tau'],
                'residual': residual,
                'threshold': threshold,
            })
            flowpipe.save(self.confident_path(residual))

    def _validate(self, residual):
        flowpipe = Flowpipe.load(self._require(self.confident_path(residual), 'inflate'), lp_backend = self.lp_backend)
        surrogate = Flowpipe.load(self._require(self.path('surrogate_flowpipe.json'), 'reach'), lp_backend = self.lp_backend)
        cubes, _ = self.hypercubes(residual)
        val_cfg = self.config['validate']
        deployment = shift(self.spec, val_cfg['covariance_scale']) if val_cfg['covariance_scale'] != 1.0 else self.spec
        report = validate_coverage(flowpipe, deployment, val_cfg['trials'], val_cfg['seed'], threads = self.threads,
                                   composition = (surrogate, self.load_nets(), cubes))
        model, baseline = self.load_models()
        volumes = segment_log_volumes(model, baseline)
        report.log_volume_pca = float(volumes['log_volume_pca'].sum())
        report.log_volume_baseline = float(volumes['log_volume_baseline'].sum())
        return report

    def validate(self):
        residual = self.config['conformal']['residual']
        report = self._validate(residual)
        write_json(report.to_dict(), self.path('coverage_{}.json'.format(residual)))

    def report(self):
        '''
        Both coverages, the volume comparison and the per-step bounds of the primary confident flowpipe.
        '''
        reports = {}
        for residual in ('pca', 'baseline'):
            path = self.path('coverage_{}.json'.format(residual))
            if not os.path.exists(path):
                write_json(self._validate(residual).to_dict(), path)
            reports[residual] = read_json(path)
        model, baseline = self.load_models()
        summary, per_segment = compare_methods(model, baseline)
        summary['coverage_pca'] = reports['pca']['coverage']
        summary['coverage_baseline'] = reports['baseline']['coverage']
        summary['composition_violations'] = reports['pca']['composition_violations'] + reports['baseline']['composition_violations']
        summary['residual'] = self.config['conformal']['residual']
        summary['delta'] = self.config['conformal']['delta']
        summary['tau'] = self.config['conformal']['tau']
        write_json(summary, self.path('report.json'))
        per_segment.to_csv(self.path('volumes.csv'), index = False, float_format = '%.17g')

        primary = Flowpipe.load(self.confident_path(summary['residual']), lp_backend = self.lp_backend)
        primary.bounds_frame().to_csv(self.path('bounds.csv'), index = False, float_format = '%.17g')

    def export_concatenated(self):
        primary = Flowpipe.load(self._require(self.confident_path(self.config['conformal']['residual']), 'inflate'), lp_backend = self.lp_backend)
        write_json(primary.concatenated().to_dict(), self.path('concatenated_flowpipe.json'))
