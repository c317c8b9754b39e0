"""Sound source tracking with importance-weighted adversarial domain adaptation."""

from .acoustics import (
    DomainSamplerConfig,
    MicArray,
    MultichannelAudio,
    RoomSpec,
    Trajectory,
    circular_array_9ch,
    generate_diffuse_noise,
    mix_at_snr,
    render_moving_source,
    rt60_to_absorption,
    sample_scene,
    simulate_rir,
)
from .adaptation import (
    AdaptConfig,
    Discriminator,
    DiscriminatorConfig,
    LambdaSchedule,
    adapt_loop,
    adapt_step,
    compute_importance_weights,
    da_loss,
    dw_loss,
)
from .estimators import AzimuthTracker, ImportanceWeightedAdapter
from .evaluation import BoxplotStats, SequenceMetrics, boxplot_stats, run_u_sweep, sequence_metrics
from .features import DoaTrack, decode_peak, encode_likelihood, energy_vad, stack_reim, stft
from .tracker import CrnnConfig, CrnnModel, TrainConfig, TrainItem, infer, pretrain, sst_loss, toy_config

__version__ = "0.1.0"
