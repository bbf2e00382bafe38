from .activations import ActivationKind
from .network import Network, NetworkSpec, build_network
from .normact import NormActLayer, RunningStats
from .presets import Preset
from .tensor import Tensor

__author__ = "The normact developers"
__email__ = ""
__version__ = "0.1.0"
