from .version import __version__, __versiondate__
from .numerics import *
from .parameters import *
from .playground import *
from .world_model import *
from .curriculum import *
from .task_graph import *
from .goal_proposal import *
from .control import *
from .orchestrator import *
from .analysis import *
from .plotting import *
