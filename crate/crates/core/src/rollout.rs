//! Batched closed-loop evaluation of chunk policies on GateWorld.
//!
//! Every episode owns its own generator streams (reset position, latents,
//! injected noise), so results do not depend on how episodes are batched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::envs::{derive_seed, inject_action_noise, GateWorld, TrajStep, Trajectory};
use crate::grad::Tensor;
use crate::Error;

const RESET_STREAM: u64 = 1;
const LATENT_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Anything that turns observations plus latent draws into action chunks.
pub trait ChunkPolicy {
    /// Steps per chunk.
    fn horizon(&self) -> usize;
    /// Latent vectors consumed per decision (K for best-of-N policies).
    fn candidates(&self) -> usize;
    /// Width of one latent vector.
    fn latent_dim(&self) -> usize;
    /// `obs` is `[n, d_s]`, `latents` is `[n·candidates, latent_dim]` with the
    /// candidates of row i stored contiguously. Returns unclipped chunks
    /// `[n, horizon·2]`.
    fn act(&self, obs: &Tensor, latents: &Tensor) -> Result<Tensor, Error>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub prob: f32,
    pub scale: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    pub episodes: usize,
    pub seed: u64,
    pub noise: Option<NoiseSpec>,
    pub gamma: f32,
    pub record: bool,
}

impl EvalSpec {
    pub fn new(episodes: usize, seed: u64) -> Self {
        Self {
            episodes,
            seed,
            noise: None,
            gamma: 0.99,
            record: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub success: bool,
    pub ret: f32,
    pub steps: usize,
    /// Full per-step trajectory when requested.
    pub trajectory: Option<Trajectory>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub success_rate: f32,
    pub mean_return: f32,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalSummary {
    /// Binomial standard error of the success rate.
    pub fn std_error(&self) -> f32 {
        let n = self.episodes.len().max(1) as f32;
        let p = self.success_rate;
        (p * (1.0 - p) / n).sqrt()
    }
}

pub fn draw_latents<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Splits a flat `[horizon·2]` chunk into per-step actions clipped to `[−1, 1]`.
pub fn executable_chunk(chunk: &[f32]) -> Vec<[f32; 2]> {
    chunk
        .chunks_exact(2)
        .map(|a| [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)])
        .collect()
}

struct Live {
    state: crate::envs::EnvState,
    latent_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    ret: f32,
    steps: Vec<TrajStep>,
}

pub fn run_episodes<P: ChunkPolicy + ?Sized>(
    world: &GateWorld,
    policy: &P,
    spec: &EvalSpec,
) -> Result<EvalSummary, Error> {
    if spec.episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    let k = policy.candidates();
    let zdim = policy.latent_dim();
    let mut live: Vec<Live> = (0..spec.episodes as u64)
        .map(|e| Live {
            state: world.reset(derive_seed(spec.seed, RESET_STREAM, e)),
            latent_rng: ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, LATENT_STREAM, e)),
            noise_rng: ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, NOISE_STREAM, e)),
            ret: 0.0,
            steps: Vec::new(),
        })
        .collect();

    loop {
        let active: Vec<usize> = (0..live.len()).filter(|&i| !live[i].state.terminal).collect();
        if active.is_empty() {
            break;
        }
        let mut obs = Vec::with_capacity(active.len() * 2);
        let mut lat = Vec::with_capacity(active.len() * k * zdim);
        for &i in &active {
            obs.extend_from_slice(&live[i].state.pos);
            lat.extend(draw_latents(&mut live[i].latent_rng, k * zdim));
        }
        let obs = Tensor::matrix(active.len(), 2, obs)?;
        let lat = Tensor::matrix(active.len() * k, zdim, lat)?;
        let chunks = policy.act(&obs, &lat)?;
        for (row, &i) in active.iter().enumerate() {
            let ep = &mut live[i];
            for mut a in executable_chunk(chunks.row(row)) {
                if let Some(n) = spec.noise {
                    a = inject_action_noise(a, &mut ep.noise_rng, n.prob, n.scale);
                }
                let from = ep.state.pos;
                let r = world.step(&mut ep.state, a)?;
                ep.ret += r.reward;
                if spec.record {
                    ep.steps.push(TrajStep {
                        obs: from,
                        action: a,
                        reward: r.reward,
                    });
                }
                if r.terminal {
                    break;
                }
            }
        }
    }

    let episodes: Vec<EpisodeRecord> = live
        .into_iter()
        .map(|ep| EpisodeRecord {
            success: ep.state.success,
            ret: ep.ret,
            steps: ep.state.steps,
            trajectory: spec
                .record
                .then(|| Trajectory::new(ep.steps, ep.state.pos, ep.state.success, spec.gamma)),
        })
        .collect();
    let n = episodes.len() as f32;
    let success_rate = episodes.iter().filter(|e| e.success).count() as f32 / n;
    let mean_return = episodes.iter().map(|e| e.ret).sum::<f32>() / n;
    Ok(EvalSummary {
        success_rate,
        mean_return,
        episodes,
    })
}
