from .losses import (
    bce_loss,
    finetune_loss,
    finetune_score,
    l2_penalty,
    phase_param_names,
    pair_scores,
    pretrain_loss,
    ranking_loss,
    triplet_score,
)
from .loop import (
    Model,
    PhaseResult,
    TrainingDivergence,
    evaluate_pairs,
    holdout_triples,
    predict_pairs,
    run_phase,
    score_triples,
)
from .pairs import FinetunePair, PretrainBatch, build_finetune_pairs, make_pretrain_batch
