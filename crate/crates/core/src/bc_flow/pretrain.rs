use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::DemoDataset;
use super::policy::{flow_loss, flow_loss_value, FlowDraws, FlowPolicy};
use crate::envs::{derive_seed, GateWorld};
use crate::grad::{adam_step, AdamState, Tape, Tensor};
use crate::rollout::{run_episodes, EvalSpec};
use crate::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Roll out the policy at checkpoints whose epoch is a multiple of this
    /// (0 disables rollouts).
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
    pub hidden: Vec<usize>,
    pub flow_steps: usize,
    pub horizon: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 130,
            batch_size: 256,
            lr: 1e-3,
            eval_every: 0,
            checkpoint_every: 50,
            eval_episodes: 200,
            hidden: vec![128, 128, 128],
            flow_steps: 10,
            horizon: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainCheckpoint {
    pub epoch: usize,
    pub policy: FlowPolicy,
    /// Mean minibatch loss over the epoch that produced this checkpoint
    /// (fixed-draw loss for the initial checkpoint).
    pub train_loss: f32,
    /// Loss on a fixed subset of pairs with fixed draws, comparable across
    /// checkpoints.
    pub val_loss: f32,
    pub success_rate: Option<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainRun {
    pub checkpoints: Vec<PretrainCheckpoint>,
    /// Mean training loss of every epoch, in order.
    pub epoch_losses: Vec<f32>,
}

impl PretrainRun {
    pub fn last(&self) -> &PretrainCheckpoint {
        self.checkpoints.last().expect("at least the initial checkpoint")
    }

    pub fn at_epoch(&self, epoch: usize) -> Option<&PretrainCheckpoint> {
        self.checkpoints.iter().find(|c| c.epoch == epoch)
    }
}

const VAL_ROWS: usize = 1024;

fn probe_loss(policy: &FlowPolicy, s: &Tensor, x1: &Tensor, draws: &FlowDraws) -> Result<f32, Error> {
    flow_loss_value(
        |input| policy.net().forward(input).expect("shape checked by flow_inputs"),
        s,
        x1,
        draws,
    )
}

fn gather(t: &Tensor, idx: &[usize]) -> Result<Tensor, Error> {
    let c = t.cols();
    let mut out = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        out.extend_from_slice(t.row(i));
    }
    Ok(Tensor::matrix(idx.len(), c, out)?)
}

/// Adam on the flow-matching loss over shuffled minibatches of BC pairs.
/// `world`, when given, is used for success-rate rollouts at checkpoints.
pub fn pretrain(
    dataset: &DemoDataset,
    config: &PretrainConfig,
    world: Option<&GateWorld>,
    seed: u64,
) -> Result<PretrainRun, Error> {
    if dataset.num_pairs() == 0 {
        return Err(Error::Empty("demo dataset"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("pretrain batch size must be positive".into()));
    }
    if config.horizon != dataset.horizon() {
        return Err(Error::Config(format!(
            "pretrain horizon {} does not match dataset horizon {}",
            config.horizon,
            dataset.horizon()
        )));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 20, 0));
    let mut policy = FlowPolicy::init(&config.hidden, config.flow_steps, config.horizon, 2, 2, &mut init_rng)?;
    let mut adam = AdamState::new(policy.net(), config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 21, 0));

    let (obs, chunks) = dataset.bc_pairs();
    let n = dataset.num_pairs();
    let val_idx: Vec<usize> = (0..n.min(VAL_ROWS)).map(|i| i * n / n.min(VAL_ROWS)).collect();
    let val_s = gather(obs, &val_idx)?;
    let val_x1 = gather(chunks, &val_idx)?;
    let val_draws = FlowDraws::sample(val_idx.len(), policy.chunk_dim(), &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 22, 0)));

    let snapshot = |policy: &FlowPolicy, epoch: usize, train_loss: Option<f32>| -> Result<PretrainCheckpoint, Error> {
        let val_loss = probe_loss(policy, &val_s, &val_x1, &val_draws)?;
        let success_rate = match world {
            Some(w) if config.eval_every > 0 && epoch % config.eval_every == 0 => {
                let spec = EvalSpec::new(config.eval_episodes.max(1), derive_seed(seed, 23, epoch as u64));
                Some(run_episodes(w, policy, &spec)?.success_rate)
            }
            _ => None,
        };
        Ok(PretrainCheckpoint {
            epoch,
            policy: policy.clone(),
            train_loss: train_loss.unwrap_or(val_loss),
            val_loss,
            success_rate,
        })
    };

    let mut checkpoints = vec![snapshot(&policy, 0, None)?];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let s = gather(obs, idx)?;
            let x1 = gather(chunks, idx)?;
            let draws = FlowDraws::sample(idx.len(), policy.chunk_dim(), &mut rng);
            let mut tape = Tape::new();
            let (loss, binding) = flow_loss(&policy, &mut tape, &s, &x1, &draws)?;
            let grads = tape.backward(loss)?;
            adam_step(policy.net_mut(), &grads.mlp(&binding), &mut adam)?;
            total += tape.value(loss).data()[0] as f64;
            batches += 1;
        }
        let mean = (total / batches as f64) as f32;
        epoch_losses.push(mean);
        let due = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
        if due || epoch == config.epochs {
            checkpoints.push(snapshot(&policy, epoch, Some(mean))?);
        }
    }
    Ok(PretrainRun {
        checkpoints,
        epoch_losses,
    })
}
