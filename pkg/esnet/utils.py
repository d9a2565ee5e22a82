import logging

import numpy as np

from esnet.exceptions import ShapeError

logger = logging.getLogger('esnet')

PLEVEL = 0
DEFAULT_SEED = 20200


def vprint(level, txt, *args):
    '''Log ``txt.format(*args)`` when the verbosity is at least ``level``'''
    if PLEVEL >= level:
        logger.info(txt.format(*args))


def set_verbosity(level):
    '''Set the module-wide verbosity used by `vprint`

    Args:
        level (int): 0 silences the library, higher values are chattier

    Returns:
        int: the previous level
    '''
    global PLEVEL
    previous = PLEVEL
    PLEVEL = int(level)
    return previous


def make_rng(seed=None):
    '''Build the numpy Generator every stochastic routine takes

    Args:
        seed (int or np.random.Generator, optional): seed, or an existing
            generator which is returned unchanged. Defaults to `DEFAULT_SEED`.

    Returns:
        np.random.Generator
    '''
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(DEFAULT_SEED if seed is None else seed)


def child_seed(rng):
    '''Draw a fresh integer seed from ``rng`` (for per-stage/per-epoch streams)'''
    return int(rng.integers(0, 2 ** 31 - 1))


def check_divisible(height, width, factor=64, what='input'):
    '''Raise ShapeError unless both spatial sizes divide by ``factor``'''
    if height % factor or width % factor:
        raise ShapeError('{} size {}x{} is not divisible by {} (height={}, width={})'.format(
            what, height, width, factor, height % factor, width % factor))
