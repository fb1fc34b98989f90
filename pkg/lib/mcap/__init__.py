from .loess import *
from .mcap import *
from .profile import *
