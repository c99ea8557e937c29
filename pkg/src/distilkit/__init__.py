"""distilkit: train a recurrent teacher, cache its truncated per-frame
posteriors, and distill small feed-forward students from them."""

__version__ = "0.1.0"

from .alignments import (  # noqa: F401
    HardAlignment,
    SoftAlignment,
    SparsePosterior,
    estimate_full_cache_bytes,
    hard_from_soft,
    read_cache,
    truncate_to_mass,
    write_cache,
)
from .distillation import (  # noqa: F401
    LossReport,
    SparseTargets,
    cross_entropy,
    generate_soft_alignments,
    kl_divergence,
    logit_gradient,
)
from .layers import (  # noqa: F401
    BlstmParams,
    LstmParams,
    LstmState,
    ModelParams,
    ModelSpec,
    backward,
    blstm_forward,
    forward,
    init_params,
    lstm_step,
    lstm_step_backward,
    student_spec,
    teacher_spec,
    time_convolution,
)
from .training import (  # noqa: F401
    DevSet,
    Schedule,
    TrainConfig,
    default_sweep_grid,
    make_context_windows,
    sweep,
    train,
)
