import copy
import json
import logging
import multiprocessing as mp
from multiprocessing import Pool
import os
import time
import pandas as pd
import psutil
from dotenv import load_dotenv
from exceptions import ConfigError

'''
Plumbing shared by the pipeline and the command line: config loading and checking, stable JSON
writing, worker-count resolution, the phase timer and the ordered parallel map.
'''

load_dotenv()

THREADS_ENV = 'PCADDREACH_THREADS'
OUT_ENV = 'PCADDREACH_OUT'

_NUMBER = (int, float)
_OPTIONAL_LIST = (list, type(None))

# section -> key -> (accepted types, default)
CONFIG_SCHEMA = {
    'system': {
        'name': (str, 'linear2d'),
        'params': ((dict, type(None)), None),
        'dt': ((int, float, type(None)), None),
        'noise_cov': (_OPTIONAL_LIST, None),
        'noise_std': ((int, float, list, type(None)), None),
        'noise_correlation': (_NUMBER, 0.0),
        'init_lower': (_OPTIONAL_LIST, None),
        'init_upper': (_OPTIONAL_LIST, None),
    },
    'plan': {
        'K': (int, 20),
        'segment_length': (int, 1),
        'segment_lengths': (_OPTIONAL_LIST, None),
        'start_step': (int, 0),
    },
    'train': {
        'hidden': (list, [8]),
        'epochs': (int, 300),
        'batch_size': (int, 32),
        'learning_rate': (_NUMBER, 3e-3),
        'lr_patience': (int, 10),
        'refit_output': (bool, True),
        'seed': (int, 0),
        'train_stride': (int, 1),
        'verbose': (int, 0),
    },
    'reach': {
        'mode': (str, 'approx'),
        'max_stars': (int, 4096),
        'bound_method': (str, 'lp'),
        'lp_backend': (str, 'simplex'),
        'reduce_predicates': (bool, False),
    },
    'conformal': {
        'delta': (_NUMBER, 0.9),
        'tau': (_NUMBER, 0.0),
        'residual': (str, 'pca'),
    },
    'validate': {
        'trials': (int, 1000),
        'seed': (int, 3),
        'covariance_scale': (_NUMBER, 1.0),
    },
    'run': {
        'seed': (int, 0),
        'train_size': (int, 2000),
        'calibration_size': (int, 1000),
        'validation_size': (int, 0),
    },
}

DEFAULT_CONFIG = {section: {key: default for key, (_, default) in keys.items()} for section, keys in CONFIG_SCHEMA.items()}

_CHOICES = {
    'reach.mode': ('exact', 'approx'),
    'reach.bound_method': ('lp', 'interval'),
    'reach.lp_backend': ('simplex', 'highs'),
    'conformal.residual': ('pca', 'baseline'),
}


def _check_type(path, value, types):
    # bool is an int subclass, so it never passes as a number
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(path, 'expected {}, got bool'.format(types))
    if not isinstance(value, types):
        raise ConfigError(path, 'expected {}, got {}'.format(types, type(value).__name__))


def validate_config(raw):
    '''
    Checks a raw config dict against CONFIG_SCHEMA and fills in defaults.

    Arguments:
        raw (dict) -- parsed config file

    Returns:
        config (dict) -- complete config with every section and key

    Raises ConfigError naming the offending key path.
    '''
    if not isinstance(raw, dict):
        raise ConfigError('<root>', 'config must be a JSON object')
    config = copy.deepcopy(DEFAULT_CONFIG)
    for section, values in raw.items():
        if section not in CONFIG_SCHEMA:
            raise ConfigError(section, 'unknown section')
        if not isinstance(values, dict):
            raise ConfigError(section, 'section must be a JSON object')
        for key, value in values.items():
            path = '{}.{}'.format(section, key)
            if key not in CONFIG_SCHEMA[section]:
                raise ConfigError(path, 'unknown key')
            _check_type(path, value, CONFIG_SCHEMA[section][key][0])
            if path in _CHOICES and value not in _CHOICES[path]:
                raise ConfigError(path, 'must be one of {}, got {}'.format(_CHOICES[path], value))
            config[section][key] = value

    if not 0.0 < config['conformal']['delta'] < 1.0:
        raise ConfigError('conformal.delta', 'must lie in (0, 1)')
    if config['conformal']['tau'] < 0.0:
        raise ConfigError('conformal.tau', 'must be nonnegative')
    for path in ('plan.K', 'plan.segment_length', 'train.epochs', 'train.batch_size', 'train.train_stride',
                 'reach.max_stars', 'validate.trials', 'run.train_size', 'run.calibration_size'):
        section, key = path.split('.')
        if config[section][key] < 1:
            raise ConfigError(path, 'must be >= 1')
    for path in ('plan.start_step', 'train.lr_patience'):
        section, key = path.split('.')
        if config[section][key] < 0:
            raise ConfigError(path, 'must be >= 0')
    if config['train']['learning_rate'] <= 0:
        raise ConfigError('train.learning_rate', 'must be positive')
    if config['validate']['covariance_scale'] <= 0:
        raise ConfigError('validate.covariance_scale', 'must be positive')
    if config['run']['train_size'] < 2:
        raise ConfigError('run.train_size', 'the error model needs at least 2 training trajectories')
    return config


def load_config(path):
    '''
    Reads and checks a JSON config file.
    '''
    if not os.path.exists(path):
        raise ConfigError('<file>', 'config file {} does not exist'.format(path))
    with open(path, 'r', encoding = 'utf-8') as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError('<file>', 'config file {} is not valid JSON: {}'.format(path, e))
    return validate_config(raw)


def write_json(obj, path):
    '''
    Writes obj with sorted keys and a 2-space indent so artifacts diff cleanly.
    '''
    folder = os.path.dirname(path)
    if folder and not os.path.exists(folder):
        os.makedirs(folder)
    with open(path, 'w', encoding = 'utf-8') as f:
        json.dump(obj, f, sort_keys = True, indent = 2)
        f.write('\n')


def read_json(path):
    with open(path, 'r', encoding = 'utf-8') as f:
        return json.load(f)


def resolve_threads(threads = None):
    '''
    Worker count: the --threads flag, else PCADDREACH_THREADS, else 1. Zero means one worker per CPU.
    '''
    if threads is None:
        value = os.getenv(THREADS_ENV)
        threads = int(value) if value else 1
    if threads < 0:
        raise ConfigError('--threads', 'must be >= 0, got {}'.format(threads))
    if threads == 0:
        threads = mp.cpu_count()
    return threads


def resolve_out(out = None, config_path = None):
    '''
    Output folder: the --out flag, else PCADDREACH_OUT, else runs/<config name>.
    '''
    if out:
        return out
    if os.getenv(OUT_ENV):
        return os.getenv(OUT_ENV)
    stem = os.path.splitext(os.path.basename(config_path or 'default'))[0]
    return os.path.join('runs', stem)


def memory_mb():
    return psutil.Process(os.getpid()).memory_info().rss / 1024 ** 2


def setup_logging(out_folder, name):
    if not os.path.exists(out_folder):
        os.makedirs(out_folder)
    logging.basicConfig(
        filename = os.path.join(out_folder, '{}.log'.format(name)),
        encoding = 'utf-8',
        level = logging.DEBUG,
    )


def parallel_map(fn, tasks, threads = 1, context = None):
    '''
    Ordered map of a module-level wrapper over task tuples. One thread runs in-process. With more
    threads, a requested start method is used even for a single task.

    Arguments:
        fn (function) -- *_wrapper function taking one tuple
        tasks (list(tuple)) -- arguments of every call
        threads (int) -- worker count
        context (str) -- multiprocessing start method, e.g. 'spawn'. default start method if None

    Returns:
        results (list) -- results in task order
    '''
    tasks = list(tasks)
    if threads <= 1 or len(tasks) == 0 or (len(tasks) == 1 and context is None):
        return [fn(task) for task in tasks]
    processes = min(threads, len(tasks))
    if context is None:
        with Pool(processes) as pool:
            return pool.map(fn, tasks)
    with mp.get_context(context).Pool(processes) as pool:
        return pool.map(fn, tasks)


class PhaseTimer():
    '''
    Records how long every pipeline phase takes and keeps timings.csv in the output folder current.
    '''
    def __init__(self, out_folder):
        self.path = os.path.join(out_folder, 'timings.csv')
        self.timings = {}
        if os.path.exists(self.path):
            frame = pd.read_csv(self.path)
            self.timings = dict(zip(frame['phase'], frame['seconds']))

    def record(self, phase, seconds):
        self.timings[phase] = seconds
        frame = pd.DataFrame({'phase': list(self.timings), 'seconds': list(self.timings.values())})
        frame.to_csv(self.path, index = False)

    def run(self, phase, fn, *args, **kwargs):
        '''
        Calls fn, logging the start, the end and the duration of the phase.
        '''
        logging.info('PARENT --- Started {} at {}'.format(phase, time.ctime()))
        start = time.time()
        result = fn(*args, **kwargs)
        seconds = time.time() - start
        self.record(phase, seconds)
        logging.info('PARENT --- Finished {} at {}, took {} seconds. Currently using {} MB memory.'.format(
            phase, time.ctime(), seconds, memory_mb()
        ))
        return result
