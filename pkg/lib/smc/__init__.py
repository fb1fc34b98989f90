from .functional import *
from .pfilter import *
