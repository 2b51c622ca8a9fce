use crate::Error;

/// How an ensemble's per-member values are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Min,
    Mean,
}

impl Reduction {
    pub fn apply(self, values: &[f32]) -> f32 {
        match self {
            Reduction::Min => values.iter().copied().fold(f32::INFINITY, f32::min),
            Reduction::Mean => values.iter().sum::<f32>() / values.len() as f32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Reduction::Min => "min",
            Reduction::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "min" => Some(Reduction::Min),
            "mean" => Some(Reduction::Mean),
            _ => None,
        }
    }
}

/// Linear offline-ratio decay from `start` to `end` over `t_ratio` env steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlpdSchedule {
    pub start: f32,
    pub end: f32,
    pub t_ratio: usize,
}

/// Offline sampling ratio at env step `t`.
pub fn rlpd_ratio(t: usize, schedule: &RlpdSchedule) -> f32 {
    if schedule.t_ratio == 0 || t >= schedule.t_ratio {
        return schedule.end;
    }
    let frac = t as f64 / schedule.t_ratio as f64;
    (schedule.start as f64 + (schedule.end as f64 - schedule.start as f64) * frac) as f32
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub horizon: usize,
    pub k: usize,
    pub gamma: f32,
    pub beta: f32,
    pub epsilon: f32,
    /// Good-mode threshold used by the analysis metrics.
    pub alpha: f32,
    pub n_q: usize,
    pub tau: f32,
    pub nstep_span: usize,
    pub grad_steps_per_update: usize,
    pub batch_size: usize,
    pub rlpd: RlpdSchedule,
    pub filter_enabled: bool,
    pub best_of_n_enabled: bool,
    /// Whether held-out evaluation also picks the best of K candidates.
    pub best_of_n_eval: bool,
    pub num_envs: usize,
    pub total_env_steps: usize,
    pub actor_lr: f32,
    pub critic_lr: f32,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub target_reduction: Reduction,
    pub policy_reduction: Reduction,
    /// Reuse the latents and prior samples drawn when a state was visited
    /// instead of redrawing them at every update.
    pub latent_reuse: bool,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            horizon: 4,
            k: 8,
            gamma: 0.99,
            beta: 50.0,
            epsilon: -0.25,
            alpha: 0.8,
            n_q: 5,
            tau: 0.01,
            nstep_span: 3,
            grad_steps_per_update: 5,
            batch_size: 64,
            rlpd: RlpdSchedule {
                start: 0.5,
                end: 0.1,
                t_ratio: 5000,
            },
            filter_enabled: true,
            best_of_n_enabled: true,
            best_of_n_eval: true,
            num_envs: 4,
            total_env_steps: 15000,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            target_reduction: Reduction::Min,
            policy_reduction: Reduction::Mean,
            latent_reuse: true,
            eval_every: 1500,
            eval_episodes: 100,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k < 1 {
            return bad("K must be at least 1");
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        let r = &self.rlpd;
        if !(0.0 <= r.end && r.end <= r.start && r.start <= 1.0) {
            return bad("rlpd ratios must satisfy 0 <= end <= start <= 1");
        }
        if !(self.epsilon <= 0.0) {
            return bad("epsilon must be <= 0");
        }
        if self.nstep_span < 1 {
            return bad("nstep_span must be at least 1");
        }
        if self.n_q < 1 || self.batch_size < 1 || self.num_envs < 1 {
            return bad("n_q, batch_size and num_envs must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if !(self.beta >= 0.0) || !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return bad("beta must be >= 0 and learning rates positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions() {
        assert_eq!(Reduction::Min.apply(&[0.3, -0.2, 0.9]), -0.2);
        assert!((Reduction::Mean.apply(&[0.3, -0.2, 0.9]) - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(Reduction::parse("min"), Some(Reduction::Min));
        assert_eq!(Reduction::parse("max"), None);
    }

    #[test]
    fn default_config_is_valid() {
        FinetuneConfig::default().validate().unwrap();
        let mut c = FinetuneConfig::default();
        c.epsilon = 0.1;
        assert!(c.validate().is_err());
        let mut c = FinetuneConfig::default();
        c.rlpd.end = 0.6;
        assert!(c.validate().is_err());
    }
}
