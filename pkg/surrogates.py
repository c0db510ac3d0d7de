import json
import logging
import os
import time
import numpy as np
import psutil
from sklearn.preprocessing import StandardScaler
from exceptions import DimensionError, ModelFormatError

'''
Per-segment ReLU surrogates F_q(s0; theta_q). Each one maps an initial state to the stacked
states of one trajectory segment. Training goes through keras; everything after training
(forward passes, reachability, interpolation, files) works on plain float64 numpy arrays held
by the MLP class below.
'''

FORMAT_VERSION = 1


class Normalizer():
    '''
    Per-dimension affine normalizer, normalize(x) = (x - offset) / scale.
    '''
    def __init__(self, scale, offset):
        scale = np.asarray(scale, dtype = float).reshape(-1)
        offset = np.asarray(offset, dtype = float).reshape(-1)
        if scale.shape != offset.shape:
            raise DimensionError('normalizer scale and offset differ in length')
        if np.any(scale <= 0):
            raise ValueError('normalizer scale must be positive')
        self.scale = scale
        self.offset = offset

    @classmethod
    def identity(cls, dim):
        return cls(np.ones(dim), np.zeros(dim))

    @classmethod
    def fit(cls, data, floor = 1e-12):
        '''
        z-score normalizer from the columns of data. Columns with (near) zero spread get scale 1.
        '''
        scaler = StandardScaler().fit(np.asarray(data, dtype = float))
        scale = np.where(scaler.scale_ < floor, 1.0, scaler.scale_)
        return cls(scale, scaler.mean_)

    def normalize(self, x):
        return (x - self.offset) / self.scale

    def denormalize(self, z):
        return z * self.scale + self.offset

    def is_identity(self):
        return bool(np.all(self.scale == 1.0) and np.all(self.offset == 0.0))

    def __eq__(self, other):
        return np.array_equal(self.scale, other.scale) and np.array_equal(self.offset, other.offset)

    def to_dict(self):
        return {'scale': self.scale.tolist(), 'offset': self.offset.tolist()}


class SegmentPlan():
    def __init__(self, K, lengths):
        '''
        Arguments:
            K (int) -- horizon in steps
            lengths (list(int)) -- segment lengths T_q, summing to K

        Attributes:
            offsets (list(int)) -- t_q, the number of steps before segment q (t_0 = 0)
        '''
        lengths = [int(t) for t in lengths]
        if len(lengths) == 0:
            raise ValueError('segment plan needs at least one segment')
        if any(t < 1 for t in lengths):
            raise ValueError('segment lengths must be >= 1, got {}'.format(lengths))
        if sum(lengths) != K:
            raise ValueError('segment lengths sum to {} but K = {}'.format(sum(lengths), K))
        self.K = int(K)
        self.lengths = lengths
        self.offsets = [int(v) for v in np.concatenate([[0], np.cumsum(lengths)[:-1]])]

    @classmethod
    def uniform(cls, K, segment_length = 1):
        if K % segment_length != 0:
            raise ValueError('K = {} is not a multiple of segment_length = {}'.format(K, segment_length))
        return cls(K, [segment_length] * (K // segment_length))

    @property
    def N(self):
        return len(self.lengths)

    def steps(self, q):
        '''
        0-based indices into s_1 ... s_K covered by segment q.
        '''
        self.check_index(q)
        return range(self.offsets[q], self.offsets[q] + self.lengths[q])

    def check_index(self, q):
        if q < 0 or q >= self.N:
            raise IndexError('segment index {} out of range for {} segments'.format(q, self.N))

    def segments_from(self, start_step = 0):
        '''
        Segments whose first step index is >= start_step.
        '''
        return [q for q in range(self.N) if self.offsets[q] >= start_step]

    def to_dict(self):
        return {'K': self.K, 'lengths': self.lengths}

    @classmethod
    def from_dict(cls, data):
        return cls(data['K'], data['lengths'])


class TrainConfig():
    def __init__(self, hidden = (8,), epochs = 300, batch_size = 32, learning_rate = 3e-3, lr_patience = 10, refit_output = True, seed = 0, verbose = 0):
        '''
        Arguments:
            hidden (list(int)) -- hidden layer widths
            epochs (int) -- passes over the training set
            batch_size (int) -- minibatch size
            learning_rate (float) -- initial Adam step size
            lr_patience (int) -- epochs without loss improvement before the step size is halved. 0 keeps it fixed
            refit_output (bool) -- replace the trained output layer by the least-squares fit on the hidden features
            seed (int) -- base seed. segment q trains with seed ^ q
            verbose (int) -- keras verbosity
        '''
        self.hidden = [int(h) for h in hidden]
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.learning_rate = float(learning_rate)
        self.lr_patience = int(lr_patience)
        self.refit_output = bool(refit_output)
        self.seed = int(seed)
        self.verbose = int(verbose)

    @classmethod
    def from_dict(cls, data):
        keys = ['hidden', 'epochs', 'batch_size', 'learning_rate', 'lr_patience', 'refit_output', 'seed', 'verbose']
        return cls(**{k: data[k] for k in keys if k in data})

    def to_dict(self):
        return {
            'hidden': self.hidden,
            'epochs': self.epochs,
            'batch_size': self.batch_size,
            'learning_rate': self.learning_rate,
            'lr_patience': self.lr_patience,
            'refit_output': self.refit_output,
            'seed': self.seed,
            'verbose': self.verbose,
        }


class MLP():
    def __init__(self, weights, biases, input_norm = None, output_norm = None, training_summary = None):
        '''
        Arguments:
            weights (list(array(n_{i+1}, n_i))) -- layer matrices, applied as W x
            biases (list(array(n_{i+1}))) -- layer biases
            input_norm (Normalizer) -- applied to inputs first. identity if None
            output_norm (Normalizer) -- inverted on the outputs last. identity if None
            training_summary (dict) -- optional loss history and errors recorded by train_segment

        Every hidden layer is ReLU, the output layer is linear.
        '''
        if len(weights) == 0 or len(weights) != len(biases):
            raise DimensionError('need one bias per weight matrix and at least one layer')
        weights = [np.array(W, dtype = float) for W in weights]
        biases = [np.array(b, dtype = float).reshape(-1) for b in biases]
        for i, (W, b) in enumerate(zip(weights, biases)):
            if W.ndim != 2 or W.shape[0] != len(b):
                raise DimensionError('layer {} has weight shape {} and bias length {}'.format(i, W.shape, len(b)))
            if i > 0 and W.shape[1] != weights[i - 1].shape[0]:
                raise DimensionError('layer {} expects {} inputs but layer {} gives {}'.format(
                    i, W.shape[1], i - 1, weights[i - 1].shape[0]
                ))
        self.weights = weights
        self.biases = biases
        self.layer_widths = [weights[0].shape[1]] + [W.shape[0] for W in weights]
        self.input_norm = Normalizer.identity(self.layer_widths[0]) if input_norm is None else input_norm
        self.output_norm = Normalizer.identity(self.layer_widths[-1]) if output_norm is None else output_norm
        if len(self.input_norm.scale) != self.layer_widths[0] or len(self.output_norm.scale) != self.layer_widths[-1]:
            raise DimensionError('normalizer sizes do not match layer widths {}'.format(self.layer_widths))
        self.training_summary = training_summary

    def forward(self, s0):
        '''
        Arguments:
            s0 (array(n0) or array(batch, n0)) -- initial state(s)

        Returns:
            out (array(n_out) or array(batch, n_out)) -- denormalized predictions
        '''
        x = np.asarray(s0, dtype = float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.layer_widths[0]:
            raise DimensionError('input has width {} but network expects {}'.format(x.shape[1], self.layer_widths[0]))
        h = self.input_norm.normalize(x)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
        out = self.output_norm.denormalize(h)
        return out[0] if single else out

    def affine_layers(self):
        '''
        Layer list with both normalizers folded in, so that raw inputs map to raw outputs.

        Returns:
            layers (list(tuple(array, array))) -- (W, b) pairs, ReLU between consecutive pairs
        '''
        weights = [W.copy() for W in self.weights]
        biases = [b.copy() for b in self.biases]
        s_in, o_in = self.input_norm.scale, self.input_norm.offset
        biases[0] = biases[0] - weights[0] @ (o_in / s_in)
        weights[0] = weights[0] / s_in
        s_out, o_out = self.output_norm.scale, self.output_norm.offset
        weights[-1] = weights[-1] * s_out[:, None]
        biases[-1] = biases[-1] * s_out + o_out
        return list(zip(weights, biases))

    def fold_normalizers(self):
        '''
        Equivalent network with identity normalizers.
        '''
        layers = self.affine_layers()
        return MLP([W for W, _ in layers], [b for _, b in layers], training_summary = self.training_summary)

    def to_dict(self):
        return {
            'format_version': FORMAT_VERSION,
            'layer_widths': self.layer_widths,
            'weights': [{'rows': W.shape[0], 'cols': W.shape[1], 'data': W.reshape(-1).tolist()} for W in self.weights],
            'biases': [b.tolist() for b in self.biases],
            'input_norm': self.input_norm.to_dict(),
            'output_norm': self.output_norm.to_dict(),
            'training_summary': self.training_summary,
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get('format_version') if isinstance(data, dict) else None
        if version != FORMAT_VERSION:
            raise ModelFormatError('model format version {} is not supported (expected {})'.format(version, FORMAT_VERSION))
        try:
            weights = [np.asarray(W['data'], dtype = float).reshape(W['rows'], W['cols']) for W in data['weights']]
            net = cls(
                weights,
                data['biases'],
                Normalizer(data['input_norm']['scale'], data['input_norm']['offset']),
                Normalizer(data['output_norm']['scale'], data['output_norm']['offset']),
                training_summary = data.get('training_summary'),
            )
        except (KeyError, TypeError, ValueError, DimensionError) as e:
            raise ModelFormatError('malformed model data: {}'.format(e))
        if net.layer_widths != list(data.get('layer_widths', [])):
            raise ModelFormatError('layer_widths {} disagree with weights {}'.format(data['layer_widths'], net.layer_widths))
        return net


def forward(net, s0):
    return net.forward(s0)


def save(net, path):
    '''
    Writes the network as JSON. Floats are written with their shortest round-trip repr, so
    load(save(net)) reproduces every parameter exactly.
    '''
    with open(path, 'w', encoding = 'utf-8') as f:
        json.dump(net.to_dict(), f, sort_keys = True, indent = 2)


def load(path):
    try:
        with open(path, 'r', encoding = 'utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError('cannot parse model file {}: {}'.format(path, e))
    return MLP.from_dict(data)


def interpolate(net_a, net_b, lam):
    '''
    Parameter-space convex combination (1 - lam) * A + lam * B.

    Arguments:
        net_a (MLP) -- network returned at lam = 0
        net_b (MLP) -- network returned at lam = 1
        lam (float) -- mixing weight in [0, 1]
    '''
    if not 0.0 <= lam <= 1.0:
        raise ValueError('interpolation weight must be in [0, 1], got {}'.format(lam))
    if net_a.layer_widths != net_b.layer_widths:
        raise DimensionError('cannot interpolate networks with widths {} and {}'.format(net_a.layer_widths, net_b.layer_widths))
    if not (net_a.input_norm == net_b.input_norm and net_a.output_norm == net_b.output_norm):
        raise DimensionError('cannot interpolate networks with different normalizers; fold them first')
    weights = [(1.0 - lam) * Wa + lam * Wb for Wa, Wb in zip(net_a.weights, net_b.weights)]
    biases = [(1.0 - lam) * ba + lam * bb for ba, bb in zip(net_a.biases, net_b.biases)]
    return MLP(weights, biases, net_a.input_norm, net_a.output_norm)


def segment_targets(trajectories, plan, q):
    '''
    Stacked states of segment q, ordered step-major: column (k - t_q) * n + l is component l of step k.

    Arguments:
        trajectories (array(count, K, n)) -- s_1 ... s_K for every record
        plan (SegmentPlan) -- segmentation
        q (int) -- segment index
    '''
    steps = plan.steps(q)
    block = trajectories[:, steps.start:steps.stop, :]
    return block.reshape(block.shape[0], -1)


def _build_keras_model(widths, cfg, seed):
    import keras
    model = keras.Sequential()
    model.add(keras.Input(shape = (widths[0],)))
    for i, width in enumerate(widths[1:]):
        last = i == len(widths) - 2
        model.add(keras.layers.Dense(
            width,
            activation = None if last else 'relu',
            kernel_initializer = keras.initializers.HeUniform(seed = seed + i),
            bias_initializer = 'zeros',
        ))
    model.compile(optimizer = keras.optimizers.Adam(learning_rate = cfg.learning_rate), loss = 'mse')
    return model


def refit_output_layer(net, X, Y):
    '''
    Network whose output layer is the least-squares fit of the normalized targets on the hidden features
    of X. The hidden layers and both normalizers are kept.

    Arguments:
        net (MLP) -- trained network
        X (array(count, n0)) -- inputs
        Y (array(count, n_out)) -- targets

    Returns:
        net (MLP) -- refitted network. training error on (X, Y) is never above the input network's
    '''
    h = net.input_norm.normalize(np.asarray(X, dtype = float))
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ W.T + b, 0.0)
    features = np.hstack([h, np.ones((h.shape[0], 1))])
    coef, _, rank, _ = np.linalg.lstsq(features, net.output_norm.normalize(np.asarray(Y, dtype = float)), rcond = None)
    if rank < features.shape[1]:
        logging.debug('TRAIN --- output refit on {} of {} features (inactive or duplicate neurons)'.format(rank, features.shape[1]))
    weights = net.weights[:-1] + [coef[:-1].T]
    biases = net.biases[:-1] + [coef[-1]]
    return MLP(weights, biases, net.input_norm, net.output_norm, training_summary = net.training_summary)


def train_segment(dataset, plan, q, cfg, validation = None):
    '''
    Fits the surrogate of segment q on a training dataset.

    Arguments:
        dataset (systems.TrajectoryDataset) -- training trajectories
        plan (SegmentPlan) -- segmentation
        q (int) -- segment index
        cfg (TrainConfig) -- hyperparameters
        validation (systems.TrajectoryDataset) -- optional held-out trajectories for the reported error

    Returns:
        net (MLP) -- trained surrogate, with training_summary holding loss history and RMSEs
    '''
    import keras
    import tensorflow as tf

    plan.check_index(q)
    if dataset.count == 0:
        raise ValueError('cannot train on an empty dataset')
    if dataset.K < plan.offsets[q] + plan.lengths[q]:
        raise DimensionError('trajectories have {} steps but segment {} needs {}'.format(
            dataset.K, q, plan.offsets[q] + plan.lengths[q]
        ))
    start = time.time()
    seed = cfg.seed ^ q
    keras.utils.set_random_seed(seed)
    tf.config.experimental.enable_op_determinism()

    X = dataset.initial_states
    Y = segment_targets(dataset.trajectories, plan, q)
    input_norm = Normalizer.fit(X)
    output_norm = Normalizer.fit(Y)
    widths = [X.shape[1]] + cfg.hidden + [Y.shape[1]]

    model = _build_keras_model(widths, cfg, seed)
    callbacks = []
    if cfg.lr_patience > 0:
        callbacks.append(keras.callbacks.ReduceLROnPlateau(monitor = 'loss', factor = 0.5, patience = cfg.lr_patience, min_lr = 1e-5))
    history = model.fit(
        input_norm.normalize(X).astype('float32'),
        output_norm.normalize(Y).astype('float32'),
        epochs = cfg.epochs,
        batch_size = cfg.batch_size,
        shuffle = True,
        callbacks = callbacks,
        verbose = cfg.verbose,
    )
    dense = [layer for layer in model.layers if len(layer.get_weights()) == 2]
    weights = [np.asarray(layer.get_weights()[0], dtype = float).T for layer in dense]
    biases = [np.asarray(layer.get_weights()[1], dtype = float) for layer in dense]
    keras.backend.clear_session()

    losses = [float(v) for v in history.history['loss']]
    summary = {
        'segment': q,
        'seed': seed,
        'loss': losses,
        'best_loss': [float(v) for v in np.minimum.accumulate(losses)],
    }
    net = MLP(weights, biases, input_norm, output_norm)
    if cfg.refit_output:
        net = refit_output_layer(net, X, Y)
    summary['train_rmse'] = float(np.sqrt(np.mean((net.forward(X) - Y) ** 2)))
    if validation is not None:
        Yv = segment_targets(validation.trajectories, plan, q)
        summary['validation_rmse'] = float(np.sqrt(np.mean((net.forward(validation.initial_states) - Yv) ** 2)))
    net.training_summary = summary
    logging.info('CHILD --- pid: {}. Trained segment {} in {} seconds, train rmse {}, validation rmse {}. Currently using {} MB memory.'.format(
        os.getpid(), q, time.time() - start, summary['train_rmse'], summary.get('validation_rmse'),
        psutil.Process(os.getpid()).memory_info().rss / 1024 ** 2
    ))
    return net


def train_wrapper(args):
    '''
    DO NOT CALL DIRECTLY
    Used for parallelization of segment training.

    Arguments:
        args (tuple) -- a tuple that should contain five fields
            args[0] (systems.TrajectoryDataset) -- training dataset
            args[1] (SegmentPlan) -- segmentation
            args[2] (int) -- segment index
            args[3] (TrainConfig) -- hyperparameters
            args[4] (systems.TrajectoryDataset or None) -- validation dataset
    Returns:
        q (int) -- segment index
        model (dict) -- trained network as its JSON dict (plain data crosses process borders cheaply)
    '''
    dataset, plan, q, cfg, validation = args
    net = train_segment(dataset, plan, q, cfg, validation = validation)
    return q, net.to_dict()


def anchor_segments(segments, stride):
    '''
    Segments that get trained when only every stride-th one is fitted: every stride-th entry of
    the requested list plus the last one. The rest are interpolated.
    '''
    if stride < 1:
        raise ValueError('train_stride must be >= 1')
    anchors = list(segments[::stride])
    if segments and anchors[-1] != segments[-1]:
        anchors.append(segments[-1])
    return anchors


def fill_by_interpolation(nets, segments):
    '''
    Builds the networks of non-anchor segments by interpolating between the neighbouring anchors.

    Arguments:
        nets (dict(int: MLP)) -- trained anchor networks keyed by segment index
        segments (list(int)) -- every segment that needs a network, ascending

    Returns:
        nets (dict(int: MLP)) -- a network for every segment in segments
    '''
    anchors = sorted(nets)
    folded = {q: nets[q].fold_normalizers() for q in anchors}
    result = dict(nets)
    for q in segments:
        if q in nets:
            continue
        left = max(a for a in anchors if a < q)
        right = min(a for a in anchors if a > q)
        lam = (q - left) / (right - left)
        result[q] = interpolate(folded[left], folded[right], lam)
        logging.debug('TRAIN --- segment {} interpolated between {} and {} at {}'.format(q, left, right, lam))
    return result
