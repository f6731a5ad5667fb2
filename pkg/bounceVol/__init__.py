from .diagnostics import *
from .enums import *
from .exceptions import *
from .harness import *
from .polytope import *
from .reports import *
from .sampler import *
from .streams import *
from .utils import PolytopeReader as PolytopeReader
from .utils import PolytopeWriter as PolytopeWriter
from .volume import *
