"""frameweave: video frame interpolation with a from-scratch 7-layer CNN."""

from .errors import (
    DatasetError,
    DecodeError,
    FormatError,
    FrameweaveError,
    IntegrityError,
    NumericError,
    ParameterError,
    ShapeError,
    StateError,
)
from .tensor import Rng, Tensor, map2
from .layers import (
    ConvLayer,
    ForwardTrace,
    LayerSpec,
    NetworkSpec,
    build_interpolator,
    conv2d_backward,
    conv2d_forward,
    dropout_forward,
    init_params,
    leaky_relu_forward,
    network_backward,
    network_forward,
)
from .losses import LossValue, mse_encoding, mse_pixel, paper_scale_mse, psnr
from .optim import OptimState, adam_step, make_optim_state, sgd_momentum_step
from .frames import (
    Dataset,
    Frame,
    FrameTriplet,
    average_baseline,
    extract_triplets,
    load_dataset,
    read_frame,
    synth_motion_dataset,
    write_frame,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .train import TrainConfig, evaluate, interpolate, make_model_input, train

__version__ = "0.1.0"
