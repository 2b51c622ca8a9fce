//! Finetunability metrics, distribution sharpening, contraction of nearby
//! rollouts and robustness to injected action noise.

mod contraction;
mod finetunability;
mod robustness;

pub use contraction::{
    contraction_curves, expert_contraction, find_anchor_pairs, mean_curve, policy_contraction, AnchorPair,
    ContractionCurve, DemoRef,
};
pub use finetunability::{
    anchor_latents, bad_entropy, good_coverage, normalized_histogram_entropy, pearson, sharpening_along,
    sharpening_scan, Anchor, ChunkSampler, FinetunabilityReport, FnSampler, SharpeningRecord, ENTROPY_BINS,
};
pub use robustness::{points_at_least, robustness_sweep, RobustnessCurve, DEFAULT_NOISE_PROBS};
