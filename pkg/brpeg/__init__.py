# Licensed under a 3-clause BSD style license - see LICENSE.rst

try:
    from .version import __version__  # noqa
except ImportError:
    __version__ = ''

from .grid import *  # noqa
from .mcam import *  # noqa
from .levelk import *  # noqa
from .simulate import *  # noqa
from .inference import *  # noqa
from .config import *  # noqa
