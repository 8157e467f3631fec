from .configuration import *
from .corpus import *
from .summarize import *
from .embed import *
from .reduce import *
from .cluster import *
from .topics import *
from .evaluation import *
from .runner import *
from .synthetic import *
