"""Mass-conserving recurrent networks for rainfall-runoff modelling.

Submodules: ``autodiff`` (scalar reverse-mode tape), ``mcp`` (single node),
``network`` (layered networks), ``lstm`` (baseline), ``metrics`` (KGE),
``dataio`` (CSV, split, spin-up, synthetic data), ``trainer`` (Adam with
restarts), ``pruning``, ``checkpoint``, ``plotting`` and ``cli``.
"""

from .checkpoint import load as load_checkpoint, parse_model_spec, save as save_checkpoint
from .dataio import Dataset, load_csv, split, synth_generate
from .lstm import LstmModel, LstmSpec, lstm_count_parameters
from .mcp import Sharing, compute_gates, node_step
from .metrics import annual_distribution, kge
from .network import NetType, NetworkModel, NetworkSpec, count_parameters, forward
from .pruning import PruneMode, enumerate_and_select, prune
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "LstmModel", "LstmSpec", "NetType", "NetworkModel", "NetworkSpec", "PruneMode",
    "Sharing", "TrainConfig", "annual_distribution", "compute_gates", "count_parameters",
    "enumerate_and_select", "forward", "kge", "load_checkpoint", "load_csv",
    "lstm_count_parameters", "node_step", "parse_model_spec", "prune", "save_checkpoint",
    "split", "synth_generate", "train",
]
