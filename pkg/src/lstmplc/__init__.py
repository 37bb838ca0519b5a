"""Online-adaptive stacked LSTM speech predictor for packet loss concealment.

The hot loops (LSTM forward/backward, row scatter, autocorrelation, RNG fill)
run as numba kernels when numba is importable; set ``LSTMPLC_NO_NUMBA=1`` to
force the pure-numpy implementations.  ``lstmplc.BACKEND`` says which is live.
"""

from ._kernels import BACKEND
from .audio import (AudioBuffer, ChannelCountError, UnsupportedFormatError, WavFormatError, read_wav,
                    segment_frames, write_wav)
from .engine import (CheckpointError, ConfigMismatchError, FrameStream, IntegrityError, PlcSession,
                     UnsupportedVersionError, generate_loss_pattern, load_checkpoint, process_stream,
                     save_checkpoint)
from .lstm import NetworkParams, init_network, network_forward
from .metrics import MetricsReport, lost_frame_metrics, periodic_extrapolation, zero_fill
from .numerics import ConfigurationError, SeededRng
from .optim import AdamConfig, AdamState, adam_step, reset_optimizer
from .predictor import PredictorConfig, build_batch, predict_frame, pretrain, train_on_frame

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AudioBuffer", "ChannelCountError", "UnsupportedFormatError", "WavFormatError", "read_wav",
    "segment_frames", "write_wav", "CheckpointError", "ConfigMismatchError", "FrameStream", "IntegrityError",
    "PlcSession", "UnsupportedVersionError", "generate_loss_pattern", "load_checkpoint", "process_stream",
    "save_checkpoint", "NetworkParams", "init_network", "network_forward", "MetricsReport",
    "lost_frame_metrics", "periodic_extrapolation", "zero_fill", "ConfigurationError", "SeededRng",
    "AdamConfig", "AdamState", "adam_step", "reset_optimizer", "PredictorConfig", "build_batch",
    "predict_frame", "pretrain", "train_on_frame",
]
