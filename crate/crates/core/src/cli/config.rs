//! Flat `section.key = value` run configuration.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::bc_flow::PretrainConfig;
use crate::dice_rl::{FinetuneConfig, Reduction};
use crate::envs::GateWorldConfig;
use crate::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct DemoConfig {
    pub count: usize,
    pub noise: f32,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { count: 50, noise: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub k: usize,
    pub anchor_stride: usize,
    pub pair_stride: usize,
    pub pair_min_dist: f32,
    pub pair_max_dist: f32,
    pub max_pairs: usize,
    pub contraction_chunks: usize,
    pub noise_probs: Vec<f32>,
    pub noise_scale: f32,
    pub robustness_episodes: usize,
    pub eval_episodes: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k: 16,
            anchor_stride: 5,
            pair_stride: 3,
            pair_min_dist: 0.01,
            pair_max_dist: 0.1,
            max_pairs: 100,
            contraction_chunks: 15,
            noise_probs: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            noise_scale: 0.5,
            robustness_episodes: 100,
            eval_episodes: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub env: GateWorldConfig,
    pub demos: DemoConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "gateworld-desk".into(),
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs/gateworld-desk"),
            env: GateWorldConfig::default(),
            demos: DemoConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T, Error> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, Error> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| scalar(key, p)).collect()
}

fn array<const N: usize>(key: &str, v: &str) -> Result<[f32; N], Error> {
    let l: Vec<f32> = list(key, v)?;
    l.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {N} comma-separated numbers")))
}

fn flag(key: &str, v: &str) -> Result<bool, Error> {
    match v.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn reduction(key: &str, v: &str) -> Result<Reduction, Error> {
    Reduction::parse(v.trim()).ok_or_else(|| Error::Config(format!("{key}: expected min or mean, got {v:?}")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let k = key;
        let v = value;
        let e = &mut self.env;
        let d = &mut self.demos;
        let p = &mut self.pretrain;
        let f = &mut self.finetune;
        let a = &mut self.analysis;
        match key {
            "experiment.name" => self.name = v.trim().to_string(),
            "experiment.seeds" => self.seeds = list(k, v)?,
            "experiment.out_dir" => self.out_dir = PathBuf::from(v.trim()),

            "env.arena_half_width" => e.arena_half_width = scalar(k, v)?,
            "env.wall_x" => e.wall_x = scalar(k, v)?,
            "env.wall_half_thickness" => e.wall_half_thickness = scalar(k, v)?,
            "env.gate_centers" => e.gate_centers = array(k, v)?,
            "env.gate_half_heights" => e.gate_half_heights = array(k, v)?,
            "env.goal_center" => e.goal_center = array(k, v)?,
            "env.goal_radius" => e.goal_radius = scalar(k, v)?,
            "env.dt" => e.dt = scalar(k, v)?,
            "env.horizon" => e.horizon = scalar(k, v)?,
            "env.start_region" => e.start_region = array(k, v)?,

            "pretrain.demos" => d.count = scalar(k, v)?,
            "pretrain.demo_noise" => d.noise = scalar(k, v)?,

            "pretrain.epochs" => p.epochs = scalar(k, v)?,
            "pretrain.batch_size" => p.batch_size = scalar(k, v)?,
            "pretrain.lr" => p.lr = scalar(k, v)?,
            "pretrain.eval_every" => p.eval_every = scalar(k, v)?,
            "pretrain.checkpoint_every" => p.checkpoint_every = scalar(k, v)?,
            "pretrain.eval_episodes" => p.eval_episodes = scalar(k, v)?,
            "pretrain.hidden" => p.hidden = list(k, v)?,
            "pretrain.flow_steps" => p.flow_steps = scalar(k, v)?,
            "pretrain.horizon" => p.horizon = scalar(k, v)?,

            "finetune.k" => f.k = scalar(k, v)?,
            "finetune.gamma" => f.gamma = scalar(k, v)?,
            "finetune.beta" => f.beta = scalar(k, v)?,
            "finetune.epsilon" => f.epsilon = scalar(k, v)?,
            "finetune.alpha" => f.alpha = scalar(k, v)?,
            "finetune.n_q" => f.n_q = scalar(k, v)?,
            "finetune.tau" => f.tau = scalar(k, v)?,
            "finetune.nstep_span" => f.nstep_span = scalar(k, v)?,
            "finetune.grad_steps_per_update" => f.grad_steps_per_update = scalar(k, v)?,
            "finetune.batch_size" => f.batch_size = scalar(k, v)?,
            "finetune.rlpd_start" => f.rlpd.start = scalar(k, v)?,
            "finetune.rlpd_end" => f.rlpd.end = scalar(k, v)?,
            "finetune.rlpd_t_ratio" => f.rlpd.t_ratio = scalar(k, v)?,
            "finetune.filter_enabled" => f.filter_enabled = flag(k, v)?,
            "finetune.best_of_n_enabled" => f.best_of_n_enabled = flag(k, v)?,
            "finetune.best_of_n_eval" => f.best_of_n_eval = flag(k, v)?,
            "finetune.num_envs" => f.num_envs = scalar(k, v)?,
            "finetune.total_env_steps" => f.total_env_steps = scalar(k, v)?,
            "finetune.actor_lr" => f.actor_lr = scalar(k, v)?,
            "finetune.critic_lr" => f.critic_lr = scalar(k, v)?,
            "finetune.actor_hidden" => f.actor_hidden = list(k, v)?,
            "finetune.critic_hidden" => f.critic_hidden = list(k, v)?,
            "finetune.target_reduction" => f.target_reduction = reduction(k, v)?,
            "finetune.policy_reduction" => f.policy_reduction = reduction(k, v)?,
            "finetune.latent_reuse" => f.latent_reuse = flag(k, v)?,
            "finetune.eval_every" => f.eval_every = scalar(k, v)?,
            "finetune.eval_episodes" => f.eval_episodes = scalar(k, v)?,

            "analysis.k" => a.k = scalar(k, v)?,
            "analysis.anchor_stride" => a.anchor_stride = scalar(k, v)?,
            "analysis.pair_stride" => a.pair_stride = scalar(k, v)?,
            "analysis.pair_min_dist" => a.pair_min_dist = scalar(k, v)?,
            "analysis.pair_max_dist" => a.pair_max_dist = scalar(k, v)?,
            "analysis.max_pairs" => a.max_pairs = scalar(k, v)?,
            "analysis.contraction_chunks" => a.contraction_chunks = scalar(k, v)?,
            "analysis.noise_probs" => a.noise_probs = list(k, v)?,
            "analysis.noise_scale" => a.noise_scale = scalar(k, v)?,
            "analysis.robustness_episodes" => a.robustness_episodes = scalar(k, v)?,
            "analysis.eval_episodes" => a.eval_episodes = scalar(k, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (e, d, p, f, a) = (&self.env, &self.demos, &self.pretrain, &self.finetune, &self.analysis);
        vec![
            ("experiment.name", self.name.clone()),
            ("experiment.seeds", join(&self.seeds)),
            ("experiment.out_dir", self.out_dir.display().to_string()),
            ("env.arena_half_width", e.arena_half_width.to_string()),
            ("env.wall_x", e.wall_x.to_string()),
            ("env.wall_half_thickness", e.wall_half_thickness.to_string()),
            ("env.gate_centers", join(&e.gate_centers)),
            ("env.gate_half_heights", join(&e.gate_half_heights)),
            ("env.goal_center", join(&e.goal_center)),
            ("env.goal_radius", e.goal_radius.to_string()),
            ("env.dt", e.dt.to_string()),
            ("env.horizon", e.horizon.to_string()),
            ("env.start_region", join(&e.start_region)),
            ("pretrain.demos", d.count.to_string()),
            ("pretrain.demo_noise", d.noise.to_string()),
            ("pretrain.epochs", p.epochs.to_string()),
            ("pretrain.batch_size", p.batch_size.to_string()),
            ("pretrain.lr", p.lr.to_string()),
            ("pretrain.eval_every", p.eval_every.to_string()),
            ("pretrain.checkpoint_every", p.checkpoint_every.to_string()),
            ("pretrain.eval_episodes", p.eval_episodes.to_string()),
            ("pretrain.hidden", join(&p.hidden)),
            ("pretrain.flow_steps", p.flow_steps.to_string()),
            ("pretrain.horizon", p.horizon.to_string()),
            ("finetune.k", f.k.to_string()),
            ("finetune.gamma", f.gamma.to_string()),
            ("finetune.beta", f.beta.to_string()),
            ("finetune.epsilon", f.epsilon.to_string()),
            ("finetune.alpha", f.alpha.to_string()),
            ("finetune.n_q", f.n_q.to_string()),
            ("finetune.tau", f.tau.to_string()),
            ("finetune.nstep_span", f.nstep_span.to_string()),
            ("finetune.grad_steps_per_update", f.grad_steps_per_update.to_string()),
            ("finetune.batch_size", f.batch_size.to_string()),
            ("finetune.rlpd_start", f.rlpd.start.to_string()),
            ("finetune.rlpd_end", f.rlpd.end.to_string()),
            ("finetune.rlpd_t_ratio", f.rlpd.t_ratio.to_string()),
            ("finetune.filter_enabled", f.filter_enabled.to_string()),
            ("finetune.best_of_n_enabled", f.best_of_n_enabled.to_string()),
            ("finetune.best_of_n_eval", f.best_of_n_eval.to_string()),
            ("finetune.num_envs", f.num_envs.to_string()),
            ("finetune.total_env_steps", f.total_env_steps.to_string()),
            ("finetune.actor_lr", f.actor_lr.to_string()),
            ("finetune.critic_lr", f.critic_lr.to_string()),
            ("finetune.actor_hidden", join(&f.actor_hidden)),
            ("finetune.critic_hidden", join(&f.critic_hidden)),
            ("finetune.target_reduction", f.target_reduction.name().to_string()),
            ("finetune.policy_reduction", f.policy_reduction.name().to_string()),
            ("finetune.latent_reuse", f.latent_reuse.to_string()),
            ("finetune.eval_every", f.eval_every.to_string()),
            ("finetune.eval_episodes", f.eval_episodes.to_string()),
            ("analysis.k", a.k.to_string()),
            ("analysis.anchor_stride", a.anchor_stride.to_string()),
            ("analysis.pair_stride", a.pair_stride.to_string()),
            ("analysis.pair_min_dist", a.pair_min_dist.to_string()),
            ("analysis.pair_max_dist", a.pair_max_dist.to_string()),
            ("analysis.max_pairs", a.max_pairs.to_string()),
            ("analysis.contraction_chunks", a.contraction_chunks.to_string()),
            ("analysis.noise_probs", join(&a.noise_probs)),
            ("analysis.noise_scale", a.noise_scale.to_string()),
            ("analysis.robustness_episodes", a.robustness_episodes.to_string()),
            ("analysis.eval_episodes", a.eval_episodes.to_string()),
        ]
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Cross-section checks: the finetune horizon follows the pretrain
    /// horizon, and every section validates on its own.
    pub fn resolve(mut self) -> Result<Self, Error> {
        self.finetune.horizon = self.pretrain.horizon;
        self.env.validate()?;
        self.finetune.validate()?;
        if self.pretrain.epochs == 0 || self.pretrain.batch_size == 0 || self.pretrain.horizon == 0 {
            return Err(Error::Config("pretrain epochs, batch_size and horizon must be positive".into()));
        }
        if self.demos.count == 0 {
            return Err(Error::Config("pretrain.demos must be positive".into()));
        }
        if self.analysis.noise_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("analysis.noise_probs must lie in [0, 1]".into()));
        }
        Ok(self)
    }
}

/// Parses config text on top of the defaults. Blank lines and `#` comments
/// are ignored; unknown and repeated keys are errors.
pub fn parse_config(text: &str) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`", n + 1)))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
        }
        cfg.set(key, value)
            .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
    }
    cfg.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default().resolve().unwrap());
    }

    #[test]
    fn assignments_and_errors() {
        let c = parse_config("# comment\nfinetune.beta = 50\nfinetune.k = 4 # trailing\n").unwrap();
        assert_eq!(c.finetune.beta, 50.0);
        assert_eq!(c.finetune.k, 4);
        assert!(parse_config("finetune.bogus = 1").is_err());
        assert!(parse_config("finetune.k = four").is_err());
        assert!(parse_config("finetune.k = 1\nfinetune.k = 2").is_err());
        assert!(parse_config("finetune.k").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.finetune.policy_reduction = Reduction::Min;
        c.analysis.noise_probs = vec![0.25, 0.75];
        c.seeds = vec![7];
        let back = parse_config(&c.to_text()).unwrap();
        assert_eq!(back, c.resolve().unwrap());
    }
}
