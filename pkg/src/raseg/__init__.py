"""Retrieval-augmented brain tissue segmentation on synthetic phantoms.

Pipeline: retrieve the most similar labeled database slice for a query,
register it, gate on an L1-overlap similarity score, feed the accepted
label map to a multi-channel encoder-decoder network as a fourth input
channel, and score the result with per-class Dice.
"""

from .core import (
    CLASS_NAMES,
    MODALITIES,
    NUM_CLASSES,
    PALETTE,
    PATCH_SIZE,
    ChannelStack,
    ClassPalette,
    LabelMap,
    Patch,
    Volume,
    extract_patch,
    normalize_intensity,
    onehot_decode,
    onehot_encode,
)
from .evaluation import DiceReport, dice, evaluate_volume, select_best, summarize
from .inference import StitchConfig, assemble_channels, segment_slice, segment_volume
from .network import NetworkConfig, NetworkState, backward, build_network, forward, mse_loss
from .phantom import PhantomSpec, generate_cohort, generate_phantom
from .priors import PriorContext
from .registration import (
    GateDecision,
    RigidTransform2D,
    gate_fourth_channel,
    register,
    similarity,
    warp_labels,
)
from .retrieval import FeatureConfig, RetrievalIndex, build_index, extract_features, query_top_k
from .storage import SubjectManifest, load_volume, make_split, save_volume
from .training import RunRecord, TrainConfig, run_repeated, sample_patches, train

__version__ = "0.1.0"
