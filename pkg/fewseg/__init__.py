"""
fewseg
~~~~~~

Few-shot semantic segmentation by dense comparison and iterative
refinement, on a small numpy autograd.
"""

__version__ = "0.1.0a1"
__license__ = "MIT"
__notice__ = "Copyright (c) fewseg developers 2024-2026"
__author__ = "fewseg developers"
__url__ = "https://github.com/fewseg/fewseg"


# Sort alphabatically
# Exception: Imports like 'from fewseg import events as events' should
# be kept on top. The command line (fewseg.cli) is not re-exported.

from fewseg import events as events
from fewseg.backbone import *
from fewseg.cache import *
from fewseg.checkpoint import *
from fewseg.comparison import *
from fewseg.config import *
from fewseg.enums import *
from fewseg.episodes import *
from fewseg.evaluation import *
from fewseg.exceptions import *
from fewseg.flags import *
from fewseg.fusion import *
from fewseg.gradcheck import *
from fewseg.imageio import *
from fewseg.metrics import *
from fewseg.ops import *
from fewseg.protocols import *
from fewseg.refinement import *
from fewseg.segmenter import *
from fewseg.shapes import *
from fewseg.state import *
from fewseg.tensor import *
from fewseg.training import *
