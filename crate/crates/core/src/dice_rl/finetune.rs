use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{rlpd_ratio, FinetuneConfig, Reduction};
use super::learner::{actor_update, build_batch, critic_update, td_target, ActorDiagnostics, BcFilter};
use super::networks::{add_residual, argmax_first, ChunkValue, CriticEnsemble, ResidualActor};
use super::replay::{sample_mixed_batch, ChunkTransition, LatentBank, ReplayBuffer};
use crate::bc_flow::{DemoDataset, FlowPolicy};
use crate::envs::{derive_seed, discounted_returns, EnvState, GateWorld};
use crate::grad::{polyak_update, AdamState, Tensor};
use crate::rollout::{draw_latents, executable_chunk, run_episodes, ChunkPolicy, EvalSpec, EvalSummary, NoiseSpec};
use crate::Error;

const INIT_STREAM: u64 = 30;
const LATENT_STREAM: u64 = 31;
const TRAIN_STREAM: u64 = 32;
const RESET_STREAM: u64 = 33;
const EVAL_STREAM: u64 = 34;
const DEMO_BANK_STREAM: u64 = 35;

/// Prior plus optional residual and critic. Without a residual it is the
/// prior alone; with best-of-N it scores K candidates per decision with the
/// reduced online critic and executes the best.
#[derive(Clone, Copy, Debug)]
pub struct DicePolicy<'a> {
    pub prior: &'a FlowPolicy,
    pub actor: Option<&'a ResidualActor>,
    pub critics: Option<&'a CriticEnsemble>,
    pub k: usize,
    pub best_of_n: bool,
    pub reduction: Reduction,
}

impl<'a> DicePolicy<'a> {
    pub fn prior_only(prior: &'a FlowPolicy) -> Self {
        Self {
            prior,
            actor: None,
            critics: None,
            k: 1,
            best_of_n: false,
            reduction: Reduction::Mean,
        }
    }

    pub fn new(
        prior: &'a FlowPolicy,
        actor: &'a ResidualActor,
        critics: &'a CriticEnsemble,
        k: usize,
        best_of_n: bool,
        reduction: Reduction,
    ) -> Self {
        Self {
            prior,
            actor: Some(actor),
            critics: Some(critics),
            k,
            best_of_n,
            reduction,
        }
    }

    fn selecting(&self) -> bool {
        self.best_of_n && self.critics.is_some() && self.k > 1
    }

    /// Candidate chunks `[n·K, h·d]` for the given latents.
    pub fn candidates_for(&self, s_rep: &Tensor, z: &Tensor) -> Result<Tensor, Error> {
        let base = self.prior.sample(s_rep, z)?;
        match self.actor {
            Some(a) => add_residual(a, s_rep, z, &base),
            None => Ok(base),
        }
    }
}

impl ChunkPolicy for DicePolicy<'_> {
    fn horizon(&self) -> usize {
        self.prior.horizon()
    }

    fn candidates(&self) -> usize {
        if self.selecting() {
            self.k
        } else {
            1
        }
    }

    fn latent_dim(&self) -> usize {
        self.prior.chunk_dim()
    }

    fn act(&self, obs: &Tensor, latents: &Tensor) -> Result<Tensor, Error> {
        let k = self.candidates();
        let s_rep = if k == 1 { obs.clone() } else { obs.repeat_rows(k) };
        let cand = self.candidates_for(&s_rep, latents)?;
        if k == 1 {
            return Ok(cand);
        }
        let critics = self.critics.expect("selecting implies critics");
        let scores = critics.online_view(self.reduction).values(&s_rep, &cand)?;
        let n = obs.rows();
        let mut out = Vec::with_capacity(n * cand.cols());
        for i in 0..n {
            let idx = argmax_first(&scores[i * k..(i + 1) * k]);
            out.extend_from_slice(cand.row(i * k + idx));
        }
        Ok(Tensor::matrix(n, cand.cols(), out)?)
    }
}

/// Held-out evaluation: the episode seeds are derived from `seed` on a
/// stream that training never uses.
pub fn evaluate<P: ChunkPolicy + ?Sized>(
    world: &GateWorld,
    policy: &P,
    episodes: usize,
    seed: u64,
    noise: Option<NoiseSpec>,
) -> Result<EvalSummary, Error> {
    let mut spec = EvalSpec::new(episodes, derive_seed(seed, EVAL_STREAM, 0));
    spec.noise = noise;
    run_episodes(world, policy, &spec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub env_steps: usize,
    pub episodes: usize,
    pub success_rate: f32,
    pub mean_return: f32,
    pub filter_active_frac: f32,
    pub mean_residual_norm: f32,
    pub critic_loss: f32,
    pub actor_loss: f32,
    pub rlpd_ratio: f32,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 9] = [
        "env_steps",
        "episodes",
        "success_rate",
        "mean_return",
        "filter_active_frac",
        "mean_residual_norm",
        "critic_loss",
        "actor_loss",
        "rlpd_ratio",
    ];
}

#[derive(Clone, Debug)]
pub struct FinetuneRun {
    pub actor: ResidualActor,
    pub critics: CriticEnsemble,
    pub metrics: Vec<MetricsRow>,
    pub online_transitions: usize,
    pub env_steps: usize,
    pub episodes: usize,
}

impl FinetuneRun {
    /// First evaluated env-step count whose success reaches `threshold`.
    pub fn steps_to_reach(&self, threshold: f32) -> Option<usize> {
        self.metrics
            .iter()
            .find(|r| r.success_rate >= threshold)
            .map(|r| r.env_steps)
    }

    pub fn final_success(&self) -> f32 {
        self.metrics.last().map(|r| r.success_rate).unwrap_or(0.0)
    }
}

#[derive(Default)]
struct Accum {
    n: usize,
    critic: f64,
    actor: f64,
    filter: f64,
    residual: f64,
}

impl Accum {
    fn add(&mut self, critic: f32, actor: f32, d: &ActorDiagnostics) {
        self.n += 1;
        self.critic += critic as f64;
        self.actor += actor as f64;
        self.filter += d.filter_active_frac as f64;
        self.residual += d.mean_residual_norm as f64;
    }

    fn take(&mut self) -> [f32; 4] {
        let n = self.n.max(1) as f64;
        let out = [self.filter / n, self.residual / n, self.critic / n, self.actor / n].map(|v| v as f32);
        *self = Accum::default();
        out
    }
}

struct EnvSlot {
    state: EnvState,
    rewards: Vec<f32>,
    starts: Vec<usize>,
    pending: Vec<(ChunkTransition, LatentBank)>,
}

/// Builds the read-only demo buffer with a latent bank at every state.
pub fn demo_buffer(
    demos: &DemoDataset,
    prior: &FlowPolicy,
    k: usize,
    seed: u64,
) -> Result<ReplayBuffer, Error> {
    let episodes = demos.transitions();
    let total: usize = episodes.iter().map(|e| e.len()).sum();
    let mut buf = ReplayBuffer::new(total.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DEMO_BANK_STREAM, 0));
    for ep in episodes {
        let mut items = Vec::with_capacity(ep.len());
        for t in ep {
            let bank = LatentBank::draw(prior, &t.s, k, &mut rng)?;
            items.push((t, bank));
        }
        let tail = match items.last() {
            Some((t, _)) if !t.terminal => Some(LatentBank::draw(prior, &t.next_s.clone(), k, &mut rng)?),
            _ => None,
        };
        buf.push_episode(items, tail)?;
    }
    Ok(buf)
}

/// Residual actor-critic finetuning of a frozen prior: parallel
/// environments are stepped round-robin one chunk at a time, finished
/// episodes enter the online buffer with their return-to-go, and after
/// every collection round the learner takes `grad_steps_per_update`
/// critic and actor steps on demo/online mixtures followed by a Polyak
/// update of the target critics.
pub fn finetune(
    world: &GateWorld,
    prior: &FlowPolicy,
    demos: &DemoDataset,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneRun, Error> {
    finetune_observed(world, prior, demos, config, seed, &mut |_| {})
}

/// [`finetune`] with a callback receiving every metrics row as it is made.
pub fn finetune_observed(
    world: &GateWorld,
    prior: &FlowPolicy,
    demos: &DemoDataset,
    config: &FinetuneConfig,
    seed: u64,
    observer: &mut dyn FnMut(&MetricsRow),
) -> Result<FinetuneRun, Error> {
    config.validate()?;
    if prior.horizon() != config.horizon || demos.horizon() != config.horizon {
        return Err(Error::Config("prior, demos and config disagree on the chunk horizon".into()));
    }
    let hd = prior.chunk_dim();
    let ds = prior.obs_dim();
    let k = config.k;

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, INIT_STREAM, 0));
    let mut actor = ResidualActor::init(&config.actor_hidden, ds, hd, &mut init_rng)?;
    let mut critics = CriticEnsemble::init(config.n_q, &config.critic_hidden, ds, hd, &mut init_rng)?;
    let mut actor_adam = AdamState::new(actor.net(), config.actor_lr);
    let mut critic_adams: Vec<AdamState> = critics
        .online
        .iter()
        .map(|m| AdamState::new(m, config.critic_lr))
        .collect();
    let mut latent_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, LATENT_STREAM, 0));
    let mut train_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TRAIN_STREAM, 0));

    let demo = demo_buffer(demos, prior, k, seed)?;
    let mut online = ReplayBuffer::new(config.total_env_steps + config.num_envs * config.horizon);
    let filter = if config.filter_enabled {
        BcFilter::Epsilon(config.epsilon)
    } else {
        BcFilter::Disabled
    };

    let mut episodes_started = 0u64;
    let mut envs: Vec<EnvSlot> = (0..config.num_envs)
        .map(|_| {
            let state = world.reset(derive_seed(seed, RESET_STREAM, episodes_started));
            episodes_started += 1;
            EnvSlot {
                state,
                rewards: Vec::new(),
                starts: Vec::new(),
                pending: Vec::new(),
            }
        })
        .collect();

    let mut env_steps = 0usize;
    let mut episodes_done = 0usize;
    let mut accum = Accum::default();
    let mut metrics = Vec::new();
    let mut next_eval = 0usize;

    let mut emit = |env_steps: usize,
                    episodes: usize,
                    actor: &ResidualActor,
                    critics: &CriticEnsemble,
                    accum: &mut Accum,
                    metrics: &mut Vec<MetricsRow>|
     -> Result<(), Error> {
        let policy = DicePolicy::new(
            prior,
            actor,
            critics,
            k,
            config.best_of_n_enabled && config.best_of_n_eval,
            config.policy_reduction,
        );
        let eval = evaluate(world, &policy, config.eval_episodes.max(1), seed, None)?;
        let [filter_active_frac, mean_residual_norm, critic_loss, actor_loss] = accum.take();
        let row = MetricsRow {
            env_steps,
            episodes,
            success_rate: eval.success_rate,
            mean_return: eval.mean_return,
            filter_active_frac,
            mean_residual_norm,
            critic_loss,
            actor_loss,
            rlpd_ratio: rlpd_ratio(env_steps, &config.rlpd),
        };
        observer(&row);
        metrics.push(row);
        Ok(())
    };

    if config.eval_every > 0 {
        emit(0, 0, &actor, &critics, &mut accum, &mut metrics)?;
        next_eval = config.eval_every;
    }

    while env_steps < config.total_env_steps {
        let n = envs.len();
        let s = Tensor::matrix(n, ds, envs.iter().flat_map(|e| e.state.pos).collect())?;
        let s_rep = s.repeat_rows(k);
        let z = Tensor::matrix(n * k, hd, draw_latents(&mut latent_rng, n * k * hd))?;
        let a_pre = prior.sample(&s_rep, &z)?;
        let a_cur = add_residual(&actor, &s_rep, &z, &a_pre)?;
        let chosen: Vec<usize> = if config.best_of_n_enabled && k > 1 {
            let scores = critics.online_view(config.policy_reduction).values(&s_rep, &a_cur)?;
            (0..n).map(|i| argmax_first(&scores[i * k..(i + 1) * k])).collect()
        } else {
            vec![0; n]
        };

        for (e, slot) in envs.iter_mut().enumerate() {
            let row = e * k + chosen[e];
            let chunk = a_cur.row(row).to_vec();
            let from = slot.state.pos;
            let start = slot.rewards.len();
            let mut reward_sum = 0.0;
            let mut used = 0;
            for a in executable_chunk(&chunk) {
                let r = world.step(&mut slot.state, a)?;
                slot.rewards.push(r.reward);
                reward_sum += r.reward;
                used += 1;
                if r.terminal {
                    break;
                }
            }
            env_steps += used;
            let bank = LatentBank {
                z: z.data()[e * k * hd..(e + 1) * k * hd].to_vec(),
                prior: a_pre.data()[e * k * hd..(e + 1) * k * hd].to_vec(),
            };
            slot.starts.push(start);
            slot.pending.push((
                ChunkTransition {
                    s: from.to_vec(),
                    chunk,
                    reward_sum,
                    next_s: slot.state.pos.to_vec(),
                    terminal: slot.state.success,
                    steps_consumed: used,
                    mc_return: 0.0,
                },
                bank,
            ));

            if slot.state.terminal {
                let returns = discounted_returns(&slot.rewards, config.gamma);
                let mut items = std::mem::take(&mut slot.pending);
                for ((t, _), &st) in items.iter_mut().zip(&slot.starts) {
                    t.mc_return = returns[st];
                }
                let tail = if slot.state.success {
                    None
                } else {
                    Some(LatentBank::draw(prior, &slot.state.pos, k, &mut latent_rng)?)
                };
                online.push_episode(items, tail)?;
                slot.rewards.clear();
                slot.starts.clear();
                slot.state = world.reset(derive_seed(seed, RESET_STREAM, episodes_started));
                episodes_started += 1;
                episodes_done += 1;
            }
        }

        let ratio = rlpd_ratio(env_steps, &config.rlpd);
        for _ in 0..config.grad_steps_per_update {
            let slots = sample_mixed_batch(&demo, &online, ratio, config.batch_size, &mut train_rng)?;
            let mut batch = build_batch(&demo, &online, &slots, config.nstep_span, k)?;
            if !config.latent_reuse {
                batch.refresh_latents(prior, &mut train_rng)?;
            }
            let y = td_target(
                &batch,
                &actor,
                &critics.target_view(config.target_reduction),
                config.gamma,
            )?;
            let c_loss = critic_update(&batch, &mut critics, &mut critic_adams, &y)?;
            let (a_loss, diag) = actor_update(
                &batch,
                &mut actor,
                &mut actor_adam,
                &critics,
                config.policy_reduction,
                config.beta,
                filter,
            )?;
            accum.add(c_loss, a_loss, &diag);
        }
        if config.grad_steps_per_update > 0 {
            for (t, o) in critics.target.iter_mut().zip(&critics.online) {
                polyak_update(t, o, config.tau)?;
            }
        }

        if config.eval_every > 0 && env_steps >= next_eval && env_steps < config.total_env_steps {
            emit(env_steps, episodes_done, &actor, &critics, &mut accum, &mut metrics)?;
            while next_eval <= env_steps {
                next_eval += config.eval_every;
            }
        }
    }
    if config.eval_every > 0 && config.total_env_steps > 0 {
        emit(env_steps, episodes_done, &actor, &critics, &mut accum, &mut metrics)?;
    }

    Ok(FinetuneRun {
        actor,
        critics,
        metrics,
        online_transitions: online.len(),
        env_steps,
        episodes: episodes_done,
    })
}
