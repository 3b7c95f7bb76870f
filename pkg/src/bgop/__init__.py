"""Hierarchical bi-directional learned video codec.

Intra, flow and residual autoencoders with hyperprior Laplace entropy
models, dyadic GOP scheduling with closed-loop references, a single
rate-distortion training objective across the whole pipeline, and a real
range-coded bitstream (via the sibling rangecoder backend) to check
estimated rates against actual bytes.
"""

from .codec import CodecConfig, VideoCodec
from .entropy import (
    B_MIN,
    LaplaceParams,
    PmfTable,
    QuantizerMode,
    build_pmf_table,
    build_pmf_tables,
    hyper_rate_bits,
    laplace_bin_prob,
    quantize,
    rate_bits,
)
from .errors import (
    BgopError,
    ConfigurationError,
    DataError,
    DecodeError,
    EnvironmentUnavailableError,
    ShapeError,
    TrainingError,
)
from .gop import (
    CodingUnit,
    EncodedGop,
    GopStructure,
    LossBreakdown,
    UnitKind,
    coding_schedule,
    decode_gop,
    decode_sequence,
    encode_gop,
    encode_sequence,
    rd_loss,
)
from .layers import GDN, GdnParams, gdn
from .metrics import RdPoint, bpp, emit_rd_curve, psnr
from .motion import FlowPair, WarpResult, estimate_bidirectional_flow, fuse, motion_compensate, warp
from .training import (
    AugmentationSpec,
    TrainConfig,
    TrainStage,
    evaluate,
    lambda_sweep,
    pretrain_flow_compression,
    pretrain_image,
    train_end_to_end,
)

__version__ = "0.1.0"

__all__ = [
    "B_MIN",
    "AugmentationSpec",
    "BgopError",
    "CodecConfig",
    "CodingUnit",
    "ConfigurationError",
    "DataError",
    "DecodeError",
    "EncodedGop",
    "EnvironmentUnavailableError",
    "FlowPair",
    "GDN",
    "GdnParams",
    "GopStructure",
    "LaplaceParams",
    "LossBreakdown",
    "PmfTable",
    "QuantizerMode",
    "RdPoint",
    "ShapeError",
    "TrainConfig",
    "TrainStage",
    "TrainingError",
    "UnitKind",
    "VideoCodec",
    "WarpResult",
    "bpp",
    "build_pmf_table",
    "build_pmf_tables",
    "coding_schedule",
    "decode_gop",
    "decode_sequence",
    "emit_rd_curve",
    "encode_gop",
    "encode_sequence",
    "estimate_bidirectional_flow",
    "evaluate",
    "fuse",
    "gdn",
    "hyper_rate_bits",
    "lambda_sweep",
    "laplace_bin_prob",
    "motion_compensate",
    "pretrain_flow_compression",
    "pretrain_image",
    "psnr",
    "quantize",
    "rate_bits",
    "rd_loss",
    "train_end_to_end",
    "warp",
]
