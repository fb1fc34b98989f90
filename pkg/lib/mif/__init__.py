from .cooling import *
from .mif2 import *
