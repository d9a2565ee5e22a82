'''Exception hierarchy shared by every esnet module.

Each class also derives from the builtin that a plain caller would catch,
so ``except ValueError`` style handling keeps working.
'''


class ESNetError(Exception):
    '''Root of all esnet errors'''


class ShapeError(ESNetError, ValueError):
    '''A tensor shape, broadcast or divisibility requirement was violated'''


class GraphError(ESNetError, RuntimeError):
    '''Misuse of the computation graph (non-scalar loss, consumed graph, ...)'''


class NumericalError(ESNetError, FloatingPointError):
    '''NaN or Inf showed up where finite values are required'''


class ConfigError(ESNetError, ValueError):
    '''Bad experiment configuration, override or schedule string'''


class DataError(ESNetError, IOError):
    '''Malformed file, missing dataset or impossible crop'''


class GroundTruthAccessError(DataError):
    '''Ground truth was requested from a sample stripped for unsupervised use'''


class EvaluationError(ESNetError, ValueError):
    '''A metric could not be computed (e.g. no valid pixels)'''


class EmptyValidMaskWarning(UserWarning):
    '''A supervised loss was asked to average over zero valid pixels'''


class ImageRangeWarning(UserWarning):
    '''An image passed to SSIM lies outside [0, 1]'''
