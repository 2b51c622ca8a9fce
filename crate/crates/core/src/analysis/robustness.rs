use crate::dice_rl::evaluate;
use crate::envs::GateWorld;
use crate::rollout::{ChunkPolicy, NoiseSpec};
use crate::Error;

pub const DEFAULT_NOISE_PROBS: [f32; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessCurve {
    pub name: String,
    pub probs: Vec<f32>,
    pub success: Vec<f32>,
}

/// Success rate of each policy under per-step action noise at every
/// probability in `probs`. All points and policies share episode seeds.
pub fn robustness_sweep(
    world: &GateWorld,
    policies: &[(&str, &dyn ChunkPolicy)],
    probs: &[f32],
    scale: f32,
    episodes: usize,
    seed: u64,
) -> Result<Vec<RobustnessCurve>, Error> {
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("noise probabilities must lie in [0, 1]".into()));
    }
    policies
        .iter()
        .map(|&(name, policy)| {
            let success = probs
                .iter()
                .map(|&prob| {
                    let noise = NoiseSpec { prob, scale };
                    Ok(evaluate(world, policy, episodes, seed, Some(noise))?.success_rate)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            Ok(RobustnessCurve {
                name: name.to_string(),
                probs: probs.to_vec(),
                success,
            })
        })
        .collect()
}

/// Number of points where `a` is at least `b`.
pub fn points_at_least(a: &RobustnessCurve, b: &RobustnessCurve) -> usize {
    a.success.iter().zip(&b.success).filter(|(x, y)| x >= y).count()
}
