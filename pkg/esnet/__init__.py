try:
	import numpy
except ImportError:
	raise ImportError('numpy cannot be imported. esnet runs every tensor kernel on numpy, install it with `pip install numpy`')
if tuple(int(v) for v in numpy.__version__.split('.')[:2]) < (1, 17):
	raise ImportWarning('numpy version {} lacks numpy.random.Generator. Upgrade to numpy 1.17 or higher.'.format(numpy.__version__))
import logging
logging.getLogger('esnet').addHandler(logging.NullHandler())

__version__ = '0.1.0'
