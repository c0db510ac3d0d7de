'''
Error categories shared by every module. The CLI maps each category to its own exit code
(see main.py), so raise the most specific one you can.
'''

class PcadReachError(Exception):
    '''
    Base class for everything this package raises on purpose.
    '''
    exit_code = 1


class DimensionError(PcadReachError):
    pass


class EmptySetError(PcadReachError):
    pass


class ModelFormatError(PcadReachError):
    pass


class ConfigError(PcadReachError):
    '''
    Raised when a config file does not validate.

    Arguments:
        key (str) -- dotted path of the offending key, e.g. 'conformal.delta'
        message (str) -- what is wrong with it
    '''
    exit_code = 2

    def __init__(self, key, message):
        self.key = key
        super().__init__('config key \'{}\': {}'.format(key, message))


class MissingArtifactError(PcadReachError):
    exit_code = 3

    def __init__(self, path, phase = None):
        self.path = path
        self.phase = phase
        hint = '' if phase is None else ' (run the \'{}\' phase first)'.format(phase)
        super().__init__('missing artifact: {}{}'.format(path, hint))


class InfeasibleCalibration(PcadReachError):
    '''
    The robust conformal rank exceeds the number of calibration residuals.

    Arguments:
        rank (int) -- the rank that was asked for
        L (int) -- number of calibration residuals available
        delta (float) -- confidence level
        tau (float) -- total variation bound
        required_L (int or None) -- smallest calibration size that would work, None if no size works (delta + tau >= 1)
    '''
    exit_code = 4

    def __init__(self, rank, L, delta, tau, required_L):
        self.rank = rank
        self.L = L
        self.delta = delta
        self.tau = tau
        self.required_L = required_L
        if required_L is None:
            hint = 'no calibration size works for delta + tau = {}'.format(delta + tau)
        else:
            hint = 'collect at least L = {} calibration trajectories or lower delta/tau'.format(required_L)
        super().__init__('infeasible calibration: rank l* = {} > L = {} (delta = {}, tau = {}); {}'.format(
            rank, L, delta, tau, hint
        ))


class StarBlowupError(PcadReachError):
    exit_code = 5

    def __init__(self, limit, layer = None):
        self.limit = limit
        self.layer = layer
        super().__init__(
            'exact-star propagation exceeded max_stars = {} (layer {}); switch reach.mode to \'approx\' or raise the limit'.format(limit, layer)
        )


class SimulationError(PcadReachError):
    exit_code = 6

    def __init__(self, system, step):
        self.system = system
        self.step = step
        super().__init__('non-finite state in system \'{}\' at step {}'.format(system, step))
