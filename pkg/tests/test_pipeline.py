import os
import numpy as np
import pandas as pd
import pytest
import conformal
import pipeline
import surrogates
from conftest import linear_mlp, random_mlp
from pipeline import CoverageReport, Flowpipe, FlowpipeRunner, confident_flowpipe, surrogate_flowpipe, validate_coverage
from star_sets import Box, StarSet
from surrogates import SegmentPlan
from systems import SystemSpec, make_dataset
from utils import read_json, validate_config


def rotation(scale, theta):
    return scale * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])


def exact_linear_nets(K, scale = 0.9, theta = 0.3):
    '''
    Noise-free predictors s_{q+1} = A^(q+1) s0 of linear2d with unit segments.
    '''
    A = rotation(scale, theta)
    return {q: linear_mlp(np.linalg.matrix_power(A, q + 1), np.zeros(2)) for q in range(K)}


def write_nets(runner, nets):
    for q, net in nets.items():
        surrogates.save(net, runner.model_path(q))


def test_zero_weight_nets_give_points():
    plan = SegmentPlan.uniform(3, 1)
    nets = {q: linear_mlp(np.zeros((2, 2)), [q, -q]) for q in range(3)}
    flowpipe = surrogate_flowpipe(nets, plan, Box([-1.0, -1.0], [1.0, 1.0]))
    assert flowpipe.kind == 'surrogate'
    frame = flowpipe.bounds_frame()
    np.testing.assert_allclose(frame['lower'], frame['upper'])
    assert list(frame['lower']) == [0.0, 0.0, 1.0, -1.0, 2.0, -2.0]


def test_surrogate_predictions_lie_in_the_flowpipe(rng):
    plan = SegmentPlan(4, [1, 3])
    nets = {0: random_mlp(rng, [2, 5, 2]), 1: random_mlp(rng, [2, 4, 6])}
    box = Box([-0.5, -0.5], [0.5, 0.5])
    for mode in ('exact', 'approx'):
        flowpipe = surrogate_flowpipe(nets, plan, box, mode = mode)
        for s0 in rng.uniform(box.lower, box.upper, size = (30, 2)):
            for q in (0, 1):
                assert flowpipe.contains_segment(q, nets[q].forward(s0), tol = 1e-6)


def test_confident_flowpipe_sums():
    plan = SegmentPlan.uniform(1, 1)
    surrogate = Flowpipe({0: [StarSet.from_box(Box([0.0, 0.0], [1.0, 1.0]))]}, plan, 2)
    same = confident_flowpipe(surrogate, {0: StarSet.point([0.0, 0.0])})
    assert same.kind == 'confident'
    np.testing.assert_allclose(same.bounds_frame()['upper'], [1.0, 1.0])

    wider = confident_flowpipe(surrogate, {0: StarSet.from_box(Box([-0.5, 0.0], [0.5, 2.0]))}, metadata = {'delta': 0.9})
    frame = wider.bounds_frame()
    np.testing.assert_allclose(frame['lower'], [-0.5, 0.0])
    np.testing.assert_allclose(frame['upper'], [1.5, 3.0])
    assert wider.metadata['delta'] == 0.9
    assert wider.contains_segment(0, [0.5, 0.5])

    with pytest.raises(ValueError):
        confident_flowpipe(wider, {0: StarSet.point([0.0, 0.0])})
    with pytest.raises(Exception):
        confident_flowpipe(surrogate, {0: StarSet.point([0.0, 0.0, 0.0])})


def test_flowpipe_dimension_checked():
    plan = SegmentPlan.uniform(2, 2)
    with pytest.raises(Exception):
        Flowpipe({0: [StarSet.point([0.0, 0.0])]}, plan, 2)


def test_flowpipe_file_and_bounds(tmp_path):
    plan = SegmentPlan(5, [2, 3])
    segments = {1: [StarSet.from_box(Box(np.zeros(6), np.arange(1.0, 7.0)))]}
    flowpipe = Flowpipe(segments, plan, 2, kind = 'confident', metadata = {'delta': 0.95, 'tau': 0.0})
    frame = flowpipe.bounds_frame()
    assert len(frame) == 2 * 3
    assert list(frame['step']) == [3, 3, 4, 4, 5, 5]
    assert list(frame['component']) == [1, 2, 1, 2, 1, 2]
    path = os.path.join(tmp_path, 'flowpipe.json')
    flowpipe.save(path)
    loaded = Flowpipe.load(path)
    assert loaded.kind == 'confident'
    assert loaded.segment_indices == [1]
    pd.testing.assert_frame_equal(loaded.bounds_frame(), frame)
    assert loaded.concatenated().dim == 6


def test_concatenated_needs_single_stars():
    plan = SegmentPlan.uniform(2, 1)
    star = StarSet.from_box(Box([0.0], [1.0]))
    flowpipe = Flowpipe({0: [star, star], 1: [star]}, plan, 1)
    with pytest.raises(ValueError):
        flowpipe.concatenated()
    single = Flowpipe({0: [star], 1: [star]}, plan, 1)
    assert single.concatenated().dim == 2


def test_huge_flowpipe_covers_everything():
    spec = SystemSpec.from_config({'name': 'linear2d'})
    plan = SegmentPlan.uniform(3, 1)
    huge = StarSet.from_box(Box([-1e6, -1e6], [1e6, 1e6]))
    flowpipe = Flowpipe({q: [huge] for q in range(3)}, plan, 2, kind = 'confident', metadata = {'delta': 0.9})
    report = validate_coverage(flowpipe, spec, 40, 0)
    assert report.coverage == 1.0
    assert report.violations == {}


def test_point_flowpipe_covers_nothing():
    spec = SystemSpec.from_config({'name': 'linear2d'})
    plan = SegmentPlan.uniform(3, 1)
    flowpipe = Flowpipe({q: [StarSet.point([0.0, 0.0])] for q in range(3)}, plan, 2, kind = 'confident')
    report = validate_coverage(flowpipe, spec, 40, 0)
    assert report.hits == 0
    assert report.violations == {0: 40}
    with pytest.raises(ValueError):
        validate_coverage(flowpipe, spec, 0, 0)


def test_coverage_report_fields():
    report = CoverageReport(10, 9, 0.9, {2: 1}, log_volume_pca = -np.inf)
    data = report.to_dict()
    assert data['coverage'] == 0.9
    assert data['first_violation_histogram'] == {'2': 1}
    assert data['log_volume_pca'] == '-inf'
    with pytest.raises(ValueError):
        CoverageReport(5, 6, 0.9, {})


def build_confident(residual, K = 5, train_size = 400, calib_size = 1000, delta = 0.9):
    spec = SystemSpec.from_config({'name': 'linear2d', 'params': {'scale': 0.9, 'theta': 0.3}, 'noise_std': 0.05, 'noise_correlation': 0.5})
    plan = SegmentPlan.uniform(K, 1)
    nets = exact_linear_nets(K)
    train = make_dataset(spec, K, train_size, 'train', 1)
    calib = make_dataset(spec, K, calib_size, 'calibration', 1)
    train_pe = conformal.prediction_errors(train.initial_states, train.trajectories, nets, plan)
    calib_pe = conformal.prediction_errors(calib.initial_states, calib.trajectories, nets, plan)
    model = conformal.fit_error_model(train_pe, plan)
    alpha = conformal.fit_baseline_alpha(train_pe)
    if residual == 'pca':
        rho = conformal.calibrate(conformal.residual_pca(conformal.map_to_principal(calib_pe, model), model), delta, 0.0).rho_star
        cubes = {q: conformal.inflating_hypercube_pca(model, rho, q) for q in range(K)}
    else:
        R = conformal.calibrate(conformal.residual_baseline(calib_pe, alpha), delta, 0.0).rho_star
        baseline = conformal.BaselineModel(plan, list(range(K)), alpha)
        cubes = {q: conformal.inflating_hypercube_baseline(baseline.alpha_of(q), R) for q in range(K)}
    surrogate = surrogate_flowpipe(nets, plan, spec.initial_box)
    confident = confident_flowpipe(surrogate, cubes, metadata = {'delta': delta, 'residual': residual})
    return spec, surrogate, nets, cubes, confident


def test_validation_counts_are_consistent():
    spec, surrogate, nets, cubes, confident = build_confident('pca', K = 3, train_size = 200, calib_size = 200)
    report = validate_coverage(confident, spec, 120, 5, composition = (surrogate, nets, cubes))
    assert report.hits + sum(report.violations.values()) == 120
    assert report.composition_violations == 0
    again = validate_coverage(confident, spec, 120, 5, threads = 2)
    assert again.to_dict()['hits'] == report.hits


@pytest.mark.slow
@pytest.mark.parametrize('residual', ['pca', 'baseline'])
def test_confident_flowpipe_reaches_its_coverage(residual):
    spec, surrogate, nets, cubes, confident = build_confident(residual, calib_size = 2000)
    report = validate_coverage(confident, spec, 2000, 17, composition = (surrogate, nets, cubes))
    assert report.coverage >= 0.9 - 3 * np.sqrt(0.9 * 0.1 / 2000)
    assert report.composition_violations == 0


def test_compare_methods_prefers_pca_on_correlated_noise(small_config, tmp_path):
    config = validate_config(dict(small_config, system = dict(small_config['system'], noise_correlation = 0.95),
                                  run = {'seed': 3, 'train_size': 400, 'calibration_size': 300}))
    runner = FlowpipeRunner(config, str(tmp_path), threads = 1)
    runner.simulate()
    write_nets(runner, exact_linear_nets(4))
    runner.calibrate()
    model, baseline = runner.load_models()
    summary, per_segment = pipeline.compare_methods(model, baseline)
    assert len(per_segment) == 4
    assert summary['log_volume_pca'] < summary['log_volume_baseline']
    assert summary['volume_ratio'] < 1.0


def test_runner_phases_and_artifacts(small_config, tmp_path):
    config = validate_config(small_config)
    runner = FlowpipeRunner(config, str(tmp_path), threads = 1)
    runner.run_phase('simulate')
    write_nets(runner, exact_linear_nets(4))
    for phase in ('reach', 'calibrate', 'inflate', 'validate', 'report'):
        runner.run_phase(phase)
    for name in ('surrogate_flowpipe.json', 'error_model.json', 'baseline_model.json', 'calibration.json',
                 'confident_flowpipe_pca.json', 'confident_flowpipe_baseline.json', 'coverage_pca.json',
                 'report.json', 'bounds.csv', 'volumes.csv', 'timings.csv'):
        assert os.path.exists(os.path.join(tmp_path, name)), name
    bounds = pd.read_csv(os.path.join(tmp_path, 'bounds.csv'))
    assert len(bounds) == 2 * 4
    assert list(bounds.columns) == ['segment', 'step', 'component', 'lower', 'upper']
    assert np.all(bounds['lower'] <= bounds['upper'])
    timings = pd.read_csv(os.path.join(tmp_path, 'timings.csv'))
    assert set(timings['phase']) == {'simulate', 'reach', 'calibrate', 'inflate', 'validate', 'report'}
    runner.export_concatenated()
    assert os.path.exists(os.path.join(tmp_path, 'concatenated_flowpipe.json'))


def test_start_step_restricts_segments(small_config, tmp_path):
    config = validate_config(dict(small_config, plan = {'K': 4, 'segment_length': 1, 'start_step': 2}))
    runner = FlowpipeRunner(config, str(tmp_path), threads = 1)
    assert runner.segments == [2, 3]
    runner.simulate()
    nets = exact_linear_nets(4)
    write_nets(runner, {q: nets[q] for q in (2, 3)})
    runner.reach()
    runner.calibrate()
    model, _ = runner.load_models()
    assert model.segments == [2, 3]
    assert len(model.omega) == 4
    flowpipe = Flowpipe.load(os.path.join(tmp_path, 'surrogate_flowpipe.json'))
    assert flowpipe.segment_indices == [2, 3]


def test_runner_outputs_are_reproducible(small_config, tmp_path):
    config = validate_config(small_config)
    outputs = []
    for name, threads in (('one', 1), ('two', 2)):
        folder = os.path.join(tmp_path, name)
        runner = FlowpipeRunner(config, folder, threads = threads)
        runner.simulate()
        write_nets(runner, exact_linear_nets(4))
        for phase in ('reach', 'calibrate', 'inflate', 'validate', 'report'):
            runner.run_phase(phase)
        files = {}
        for artifact in ('confident_flowpipe_pca.json', 'report.json', 'coverage_pca.json', 'bounds.csv'):
            with open(os.path.join(folder, artifact), 'rb') as f:
                files[artifact] = f.read()
        outputs.append(files)
    assert outputs[0] == outputs[1]


@pytest.mark.slow
def test_coverage_holds_under_covariance_shift(tmp_path):
    config = validate_config({
        'system': {'name': 'linear2d', 'params': {'scale': 0.9, 'theta': 0.3}, 'noise_std': 0.05, 'noise_correlation': 0.9},
        'plan': {'K': 10, 'segment_length': 1},
        'conformal': {'delta': 0.95, 'tau': 0.04},
        'validate': {'trials': 4000, 'seed': 11, 'covariance_scale': 1.2},
        'run': {'seed': 5, 'train_size': 2000, 'calibration_size': 1000},
    })
    runner = FlowpipeRunner(config, str(tmp_path), threads = 2)
    runner.simulate()
    write_nets(runner, exact_linear_nets(10))
    for phase in ('reach', 'calibrate', 'inflate', 'validate'):
        runner.run_phase(phase)
    model, _ = runner.load_models()
    assert model.calibration.rank == 992
    report = read_json(os.path.join(tmp_path, 'coverage_pca.json'))
    assert report['trials'] == 4000
    assert report['coverage'] >= 0.94
    assert report['composition_violations'] == 0
