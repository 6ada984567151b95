"""nervcp: key-controllable implicit-neural-representation video codec."""

__version__ = "0.1.0"

from .errors import NervcpError
from .frame_io import FrameSequence, load_frames, normalize_timestamps, save_frames, to_grayscale
from .key import (
    MODE_FAE,
    MODE_LAE,
    KeyModule,
    PEConfig,
    key_embed,
    key_mask,
    load_key,
    new_key_module,
    positional_encode,
    pretrain_key,
    save_key,
)
from .model import (
    ModelConfig,
    NervModel,
    build_model,
    load_model,
    pixel_shuffle,
    pixel_unshuffle,
    save_model,
)
from .training import (
    QualityReport,
    TrainConfig,
    composite_loss,
    decode_with_key,
    ms_ssim,
    psnr,
    quality_metrics,
    ssim,
    train_video,
)
from .compression import (
    CompressionReport,
    PruneSpec,
    QuantizedTensor,
    bpp,
    dequantize_tensor,
    finetune_pruned,
    prune_global,
    quantize_model,
    quantize_tensor,
)
from .analysis import (
    CorrelationReport,
    NoiseSpec,
    correlation_coefficient,
    decrypt_without_key,
    entropy,
    generate_noise_mask,
    histogram,
    noise_attack,
    sample_adjacent_pairs,
)
