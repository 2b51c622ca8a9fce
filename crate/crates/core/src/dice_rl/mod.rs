//! Residual off-policy finetuning of a frozen flow prior.

mod config;
mod finetune;
mod learner;
mod networks;
mod replay;

pub use config::{rlpd_ratio, FinetuneConfig, Reduction, RlpdSchedule};
pub use finetune::{demo_buffer, evaluate, finetune, finetune_observed, DicePolicy, FinetuneRun, MetricsRow};
pub use learner::{
    actor_update, bc_filter, bc_filter_rule, build_batch, critic_update, td_target, td_target_fresh,
    ActorDiagnostics, Batch, BcFilter,
};
pub use networks::{
    add_residual, argmax_first, best_of_n_select, policy_action, ChunkValue, CriticEnsemble, EnsembleView,
    ResidualActor,
};
pub use replay::{sample_mixed_batch, ChunkTransition, LatentBank, ReplayBuffer, ReplayRecord, Source};
