"""Desk-scale alignment of fMRI, video, and text streams in one shared
quantized embedding space, trained end to end on synthetic hemodynamic data."""

from .autodiff import (
    Node,
    ParamStore,
    backward,
    check_gradients,
    constant,
    forward_backward,
)
from .codebook import (
    Codebook,
    CodebookConfig,
    codebook_stats,
    commitment_loss,
    ema_update,
    new_codebook,
    quantize,
    straight_through,
)
from .config import RunConfig, config_fingerprint, default_config_text, load_config, parse_config
from .dataio import TripletSample, read_dataset, write_dataset
from .encoders import ModelConfig
from .errors import ConfigError, FormatError, NonFiniteLossError, ShapeError
from .evaluate import RetrievalReport, embed_test_set, full_report, recall_at_k
from .hrf import HrfKernel, hrf_kernel
from .matching import MatchConfig, match_loss, structural_loss, temporal_loss
from .ntcl import NtclConfig, ntcl_bidirectional, ntcl_loss
from .synthdata import SynthConfig, generate_dataset, pre_shift_fmri
from .trainer import (
    TrainConfig,
    TrainState,
    init_state,
    load_checkpoint,
    run_training,
    save_checkpoint,
    total_loss,
    train_step,
)

__version__ = "0.1.0"
