"""repscope: naturalistic learning tasks and behavioral comparison of
representation matrices."""

__version__ = "0.1.0"

from .embeddings import (
    EmbeddingMatrix,
    PcaTransform,
    ScalingParams,
    load_embedding,
    load_manifest,
    load_representations,
    pca_apply,
    pca_fit,
    save_embedding,
    standardize_apply,
    standardize_fit,
)
from .tasks import (
    StimulusDraw,
    TaskSpec,
    Trial,
    bin_loadings,
    generate_task,
    make_category_task,
    make_reward_task,
    sample_stimuli,
    task_from_json,
    task_to_json,
)
from .learners import (
    ArdFit,
    BayesHyperparams,
    LearnerConfig,
    LogisticFit,
    TrajectoryPrediction,
    ard_fit,
    bayes_ridge_predict,
    bayes_ridge_weights,
    fit_bayes_hyperparams,
    fit_logistic,
    grid_search_alpha,
    log_evidence,
    logistic_predict,
    sequential_rollout,
)
from .glmm import GlmmFit, GlmmSpec, fit_glmm, predict_prob
from .choicelog import ChoiceLog, ChoiceRecord, load_log, load_logs, save_log
from .policy import (
    NllScore,
    compare_representations,
    fit_category_behavior_glmm,
    fit_reward_behavior_glmm,
    loo_cv_nll,
    policy_rows,
    scores_to_frame,
    scores_to_json,
)
from .rsa import cka_difference, linear_cka, pairwise_cka
from .behavior import (
    AccuracyTable,
    TTestResult,
    accuracy_summary,
    kendall_tau_b,
    learning_onset,
    smooth_curve,
    t_test_one_sided,
)
from .simulate import (
    AgentConfig,
    RecoveryResult,
    make_synthetic_candidates,
    recovery_experiment,
    simulate_participant,
)

__all__ = [name for name in dir() if not name.startswith("_")]
