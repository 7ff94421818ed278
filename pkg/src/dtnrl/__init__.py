"""Packet-level deep Q-learning forwarding for delay tolerant networks.

The simulator, mobility models, feature pipeline, numpy Q-network, continual
training loop and the baseline strategies live in their own modules; this
namespace re-exports the pieces most scripts need.
"""

from .baselines import RandomPolicy, SeekFocusPolicy, UtilityPolicy, oracle_run
from .cltrain import CLPlan, ReplayStore, balanced_sample, fine_tune, interleave_batches, run_cl
from .config import ConfigError, MobilitySpec, SimConfig, load_config
from .features import DEFAULT_SCHEMA, FeatureSchema
from .policy import DRLPolicy
from .qnet import QNetwork
from .sim import World, collect_metrics, run, simulate, step

__version__ = "0.1.0"
