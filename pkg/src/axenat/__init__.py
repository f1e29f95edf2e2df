"""Aligned cross entropy for non-autoregressive models: loss engine, toy
training harness, decoder, and analysis utilities."""

from .axe import (
    ALIGN,
    SKIP_PREDICTION,
    SKIP_TARGET,
    AlignmentTrace,
    AxeConfig,
    AxeOp,
    DpMatrix,
    LossGradient,
    axe_backtrace,
    axe_forward,
    axe_forward_antidiagonal,
    axe_forward_batch,
    axe_forward_naive,
    axe_gradient,
    axe_loss,
    brute_force_alignments_eq2,
    brute_force_paths,
    min_decision_margin,
    random_instance,
)
from .vocab import (
    EPSILON_ID,
    EPSILON_TOKEN,
    MASK_ID,
    MASK_TOKEN,
    NEG_SENTINEL,
    LogProbMatrix,
    LogProbReport,
    MaskedInput,
    SourceSequence,
    TargetSequence,
    Vocabulary,
    build_vocabulary,
    validate_logprob_matrix,
)
from .objectives import (
    LossKind,
    MaskingDraw,
    ObjectiveResult,
    ObjectiveVariant,
    apply_observed_override,
    draw_masked_input,
    logit_grad_from_logp_grad,
    mask_all,
    mask_partial,
    sequence_objective,
    smooth_grad_chain,
    smooth_log_probs,
)
from .model import (
    AdamState,
    ToyModelConfig,
    adam_step,
    backward,
    forward,
    init_params,
    length_logits_from_source,
    lr_schedule,
)
from .tasks import (
    SyntheticTaskSpec,
    build_task_vocab,
    generate_task_data,
)
from .decoding import (
    DecodeConfig,
    DecodeResult,
    decode,
    scale_length,
    strip_epsilon,
)
from .metrics import (
    AnalysisReport,
    bucketed_quality,
    corpus_bleu,
    position_confidence_profile,
    repetition_rate,
    sequence_quality,
    skip_op_rates,
)
from .training import (
    EvalRecord,
    StepRecord,
    TrainResult,
    TrainState,
    evaluate,
    make_datasets,
    train,
    train_step,
)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
