/// One recorded environment step: the observation the action was taken
/// from, the (clipped) action, and the reward it earned.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajStep {
    pub obs: [f32; 2],
    pub action: [f32; 2],
    pub reward: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    /// Observation after the last step.
    pub final_obs: [f32; 2],
    pub success: bool,
    pub gamma: f32,
    /// Discounted return-to-go at every step index.
    pub returns: Vec<f32>,
}

impl Trajectory {
    pub fn new(steps: Vec<TrajStep>, final_obs: [f32; 2], success: bool, gamma: f32) -> Self {
        let rewards: Vec<f32> = steps.iter().map(|s| s.reward).collect();
        let returns = discounted_returns(&rewards, gamma);
        Self {
            steps,
            final_obs,
            success,
            gamma,
            returns,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Observation at step `i`, with `i == len()` giving the final one.
    pub fn obs(&self, i: usize) -> [f32; 2] {
        if i < self.steps.len() {
            self.steps[i].obs
        } else {
            self.final_obs
        }
    }

    pub fn total_reward(&self) -> f32 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// `G_i = Σ_{j≥i} γ^{j−i} r_j`, accumulated backwards in f64.
pub fn discounted_returns(rewards: &[f32], gamma: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; rewards.len()];
    let mut acc = 0.0f64;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] as f64 + gamma as f64 * acc;
        out[i] = acc as f32;
    }
    out
}
