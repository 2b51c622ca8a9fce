use rand::Rng;

use super::config::Reduction;
use super::networks::{add_residual, ChunkValue, CriticEnsemble, ResidualActor};
use super::replay::{LatentBank, ReplayBuffer, ReplayRecord, Source};
use crate::bc_flow::FlowPolicy;
use crate::grad::{adam_step, AdamState, Tape, Tensor};
use crate::rollout::draw_latents;
use crate::Error;

/// A training mini-batch. Row `i` of `s`/`chunk` owns rows `i·K..(i+1)·K` of
/// the latent tensors. `chains[i]` lists `(reward_sum, steps_consumed)` of
/// the consecutive transitions folded into the target; when `terminal[i]` is
/// false the target bootstraps at `next_s[i]` with the `next_*` latents.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub k: usize,
    pub s: Tensor,
    pub chunk: Tensor,
    pub mc_return: Vec<f32>,
    pub z: Tensor,
    pub prior: Tensor,
    pub chains: Vec<Vec<(f32, usize)>>,
    pub terminal: Vec<bool>,
    pub next_s: Tensor,
    pub next_z: Tensor,
    pub next_prior: Tensor,
    pub sources: Vec<Source>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.rows() == 0
    }

    /// Replaces every stored latent and prior sample with fresh draws.
    pub fn refresh_latents<R: Rng + ?Sized>(&mut self, prior: &FlowPolicy, rng: &mut R) -> Result<(), Error> {
        let hd = prior.chunk_dim();
        let n = self.len();
        let fresh = |s: &Tensor, rng: &mut R| -> Result<(Tensor, Tensor), Error> {
            let z = Tensor::matrix(n * self.k, hd, draw_latents(rng, n * self.k * hd))?;
            let a = prior.sample(&s.repeat_rows(self.k), &z)?;
            Ok((z, a))
        };
        let (z, a) = fresh(&self.s, rng)?;
        let (nz, na) = fresh(&self.next_s, rng)?;
        self.z = z;
        self.prior = a;
        self.next_z = nz;
        self.next_prior = na;
        Ok(())
    }
}

fn first_k(bank: &LatentBank, k: usize, hd: usize) -> Result<(&[f32], &[f32]), Error> {
    if bank.z.len() < k * hd || bank.prior.len() < k * hd {
        return Err(Error::Shape(format!("latent bank holds fewer than {k} candidates")));
    }
    Ok((&bank.z[..k * hd], &bank.prior[..k * hd]))
}

/// Gathers the sampled slots, following successor links for up to
/// `nstep_span` transitions per slot.
pub fn build_batch(
    demo: &ReplayBuffer,
    online: &ReplayBuffer,
    slots: &[(Source, usize)],
    nstep_span: usize,
    k: usize,
) -> Result<Batch, Error> {
    if slots.is_empty() {
        return Err(Error::Empty("batch slots"));
    }
    if nstep_span == 0 || k == 0 {
        return Err(Error::InvalidArgument("nstep_span and K must be positive".into()));
    }
    let first = |src: Source, i: usize| match src {
        Source::Demo => demo.slot(i),
        Source::Online => online.slot(i),
    };
    let r0 = first(slots[0].0, slots[0].1);
    let ds = r0.transition.s.len();
    let hd = r0.transition.chunk.len();
    let n = slots.len();
    let mut b = Batch {
        k,
        s: Tensor::zeros(&[0]),
        chunk: Tensor::zeros(&[0]),
        mc_return: Vec::with_capacity(n),
        z: Tensor::zeros(&[0]),
        prior: Tensor::zeros(&[0]),
        chains: Vec::with_capacity(n),
        terminal: Vec::with_capacity(n),
        next_s: Tensor::zeros(&[0]),
        next_z: Tensor::zeros(&[0]),
        next_prior: Tensor::zeros(&[0]),
        sources: Vec::with_capacity(n),
    };
    let (mut s, mut chunk, mut z, mut prior) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut next_s, mut next_z, mut next_prior) = (Vec::new(), Vec::new(), Vec::new());
    for &(src, i) in slots {
        let buf = if src == Source::Demo { demo } else { online };
        let head = buf.slot(i);
        let t = &head.transition;
        if t.s.len() != ds || t.chunk.len() != hd {
            return Err(Error::Shape("replay records disagree in width".into()));
        }
        s.extend_from_slice(&t.s);
        chunk.extend_from_slice(&t.chunk);
        b.mc_return.push(t.mc_return);
        let (bz, bp) = first_k(&head.bank, k, hd)?;
        z.extend_from_slice(bz);
        prior.extend_from_slice(bp);

        let mut chain = Vec::with_capacity(nstep_span);
        let mut cur: &ReplayRecord = head;
        loop {
            chain.push((cur.transition.reward_sum, cur.transition.steps_consumed));
            if cur.transition.terminal || chain.len() == nstep_span {
                break;
            }
            match cur.successor.and_then(|id| buf.get(id)) {
                Some(next) => cur = next,
                None => break,
            }
        }
        b.chains.push(chain);
        b.terminal.push(cur.transition.terminal);
        next_s.extend_from_slice(&cur.transition.next_s);
        match (&cur.next_bank, cur.transition.terminal) {
            (_, true) => {
                next_z.extend(std::iter::repeat_n(0.0, k * hd));
                next_prior.extend(std::iter::repeat_n(0.0, k * hd));
            }
            (Some(nb), false) => {
                let (nz, np) = first_k(nb, k, hd)?;
                next_z.extend_from_slice(nz);
                next_prior.extend_from_slice(np);
            }
            (None, false) => return Err(Error::InvalidArgument("non-terminal record without next bank".into())),
        }
        b.sources.push(src);
    }
    b.s = Tensor::matrix(n, ds, s)?;
    b.chunk = Tensor::matrix(n, hd, chunk)?;
    b.z = Tensor::matrix(n * k, hd, z)?;
    b.prior = Tensor::matrix(n * k, hd, prior)?;
    b.next_s = Tensor::matrix(n, ds, next_s)?;
    b.next_z = Tensor::matrix(n * k, hd, next_z)?;
    b.next_prior = Tensor::matrix(n * k, hd, next_prior)?;
    Ok(b)
}

fn gather_rows(t: &Tensor, rows: impl Iterator<Item = usize>) -> Result<Tensor, Error> {
    let c = t.cols();
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(t.row(r));
        n += 1;
    }
    Ok(Tensor::matrix(n, c, data)?)
}

/// Multi-sample TD targets using the latents stored in the batch:
/// `Σ_m γ^{c_m}·R_m + γ^{c}·(1/K)Σ_k Q′(s′, π_pre(s′, z_k) + s_θ(s′, z_k))`,
/// where `R_m` are the undiscounted in-chunk reward sums of the chained
/// transitions, `c_m` the steps consumed before link `m`, and the bootstrap
/// is dropped for terminal chains.
pub fn td_target<C: ChunkValue + ?Sized>(
    batch: &Batch,
    actor: &ResidualActor,
    target: &C,
    gamma: f32,
) -> Result<Vec<f32>, Error> {
    let k = batch.k;
    let boot: Vec<usize> = (0..batch.len()).filter(|&i| !batch.terminal[i]).collect();
    let mut means = vec![0.0f64; batch.len()];
    if !boot.is_empty() {
        let s = gather_rows(&batch.next_s, boot.iter().flat_map(|&i| std::iter::repeat_n(i, k)))?;
        let lat_rows = || boot.iter().flat_map(|&i| i * k..(i + 1) * k);
        let z = gather_rows(&batch.next_z, lat_rows())?;
        let p = gather_rows(&batch.next_prior, lat_rows())?;
        let a = add_residual(actor, &s, &z, &p)?;
        let v = target.values(&s, &a)?;
        for (j, &i) in boot.iter().enumerate() {
            means[i] = v[j * k..(j + 1) * k].iter().map(|&x| x as f64).sum::<f64>() / k as f64;
        }
    }
    let g = gamma as f64;
    let y: Vec<f32> = (0..batch.len())
        .map(|i| {
            let mut acc = 0.0f64;
            let mut c = 0i32;
            for &(r, steps) in &batch.chains[i] {
                acc += g.powi(c) * r as f64;
                c += steps as i32;
            }
            if !batch.terminal[i] {
                acc += g.powi(c) * means[i];
            }
            acc as f32
        })
        .collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("td target"));
    }
    Ok(y)
}

/// Same as [`td_target`] but with K fresh latents per bootstrap state.
pub fn td_target_fresh<C: ChunkValue + ?Sized, R: Rng + ?Sized>(
    batch: &Batch,
    actor: &ResidualActor,
    prior: &FlowPolicy,
    target: &C,
    gamma: f32,
    rng: &mut R,
) -> Result<Vec<f32>, Error> {
    let mut b = batch.clone();
    b.refresh_latents(prior, rng)?;
    b.s = batch.s.clone();
    b.z = batch.z.clone();
    b.prior = batch.prior.clone();
    td_target(&b, actor, target, gamma)
}

/// Regresses every online member toward the shared targets `y` and takes
/// one Adam step per member. Returns the summed per-member MSE.
pub fn critic_update(
    batch: &Batch,
    critics: &mut CriticEnsemble,
    adams: &mut [AdamState],
    y: &[f32],
) -> Result<f32, Error> {
    if y.len() != batch.len() || adams.len() != critics.len() {
        return Err(Error::Shape("targets or optimiser states do not match".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("critic target"));
    }
    let mut tape = Tape::new();
    let input = tape.constant(Tensor::hcat(&[&batch.s, &batch.chunk])?);
    let target = tape.constant(Tensor::matrix(y.len(), 1, y.to_vec())?);
    let mut total = None;
    let mut bindings = Vec::with_capacity(critics.len());
    for m in &critics.online {
        let (q, binding) = tape.mlp(m, input, true)?;
        let d = tape.sub(q, target)?;
        let sq = tape.square(d);
        let mse = tape.mean(sq);
        total = Some(match total {
            None => mse,
            Some(t) => tape.add(t, mse)?,
        });
        bindings.push(binding);
    }
    let total = total.expect("ensemble is non-empty");
    let loss = tape.value(total).data()[0];
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss"));
    }
    let grads = tape.backward(total)?;
    for ((m, binding), adam) in critics.online.iter_mut().zip(&bindings).zip(adams.iter_mut()) {
        adam_step(m, &grads.mlp(binding), adam)?;
    }
    Ok(loss)
}

/// Whether the BC penalty is switched off for an edited chunk: the edit
/// must not lower the value and must not claim more than the Monte-Carlo
/// anchor allows.
pub fn bc_filter_rule(q_cur: f32, q_pre: f32, g_hat: f32, epsilon: f32) -> bool {
    q_cur >= q_pre && q_cur - g_hat <= epsilon
}

/// Filter decision for one `(s, z)` under the reduced online value.
pub fn bc_filter<C: ChunkValue + ?Sized>(
    s: &[f32],
    z: &[f32],
    actor: &ResidualActor,
    prior: &FlowPolicy,
    critic: &C,
    g_hat: f32,
    epsilon: f32,
) -> Result<bool, Error> {
    let st = Tensor::matrix(1, s.len(), s.to_vec())?;
    let zt = Tensor::matrix(1, z.len(), z.to_vec())?;
    let pre = prior.sample(&st, &zt)?;
    let cur = add_residual(actor, &st, &zt, &pre)?;
    let q_pre = critic.values(&st, &pre)?[0];
    let q_cur = critic.values(&st, &cur)?[0];
    Ok(bc_filter_rule(q_cur, q_pre, g_hat, epsilon))
}

/// How the BC penalty is gated in the actor loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BcFilter {
    /// Penalty always applies.
    Disabled,
    /// Penalty applies unless the filter rule holds at this threshold.
    Epsilon(f32),
    /// Penalty never applies.
    Always,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ActorDiagnostics {
    /// Fraction of `(s, z_k)` pairs whose BC penalty was switched off.
    pub filter_active_frac: f32,
    /// Mean L2 norm of the residual over `(s, z_k)` pairs.
    pub mean_residual_norm: f32,
    pub mean_q: f32,
    pub bc_term: f32,
}

/// One Adam step on the residual actor for
/// `−(1/K)Σ_k Q(s, a_k) + β·(1/K)Σ_k (1 − F_k)·‖s_θ(s, z_k)‖²`, averaged over
/// the batch, with `a_k = π_pre(s, z_k) + s_θ(s, z_k)`. Critic weights are
/// constants here; the prior samples come from the batch.
pub fn actor_update(
    batch: &Batch,
    actor: &mut ResidualActor,
    adam: &mut AdamState,
    critics: &CriticEnsemble,
    reduction: Reduction,
    beta: f32,
    filter: BcFilter,
) -> Result<(f32, ActorDiagnostics), Error> {
    let k = batch.k;
    let rows = batch.len() * k;
    let s_rep = batch.s.repeat_rows(k);
    let view = critics.online_view(reduction);
    let q_pre = match filter {
        BcFilter::Epsilon(_) => view.values(&s_rep, &batch.prior)?,
        _ => Vec::new(),
    };

    let mut tape = Tape::new();
    let input = tape.constant(Tensor::hcat(&[&s_rep, &batch.z])?);
    let (r, binding) = tape.mlp(actor.net(), input, true)?;
    let a_pre = tape.constant(batch.prior.clone());
    let a_cur = tape.add(a_pre, r)?;
    let s_c = tape.constant(s_rep.clone());
    let c_in = tape.hcat(&[s_c, a_cur])?;
    let mut qs = Vec::with_capacity(critics.len());
    for m in &critics.online {
        qs.push(tape.mlp(m, c_in, false)?.0);
    }
    let per: Vec<&[f32]> = qs.iter().map(|&q| tape.value(q).data()).collect();
    let mut weights = vec![vec![0.0f32; rows]; qs.len()];
    let mut q_cur = Vec::with_capacity(rows);
    let mut buf = vec![0.0f32; qs.len()];
    for i in 0..rows {
        for (b, p) in buf.iter_mut().zip(&per) {
            *b = p[i];
        }
        q_cur.push(reduction.apply(&buf));
        match reduction {
            Reduction::Mean => weights.iter_mut().for_each(|w| w[i] = 1.0 / qs.len() as f32),
            Reduction::Min => {
                let j = (0..buf.len()).fold(0, |best, j| if buf[j] < buf[best] { j } else { best });
                weights[j][i] = 1.0;
            }
        }
    }
    let mut q = None;
    for (&qm, w) in qs.iter().zip(weights) {
        let w = tape.constant(Tensor::matrix(rows, 1, w)?);
        let term = tape.mul(qm, w)?;
        q = Some(match q {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let q = q.expect("ensemble is non-empty");
    let q_mean = tape.mean(q);
    let value_loss = tape.scale(q_mean, -1.0);

    let mask: Vec<f32> = (0..rows)
        .map(|i| {
            let on = match filter {
                BcFilter::Disabled => false,
                BcFilter::Always => true,
                BcFilter::Epsilon(eps) => bc_filter_rule(q_cur[i], q_pre[i], batch.mc_return[i / k], eps),
            };
            if on { 0.0 } else { 1.0 }
        })
        .collect();
    let filter_active = mask.iter().filter(|&&m| m == 0.0).count();
    let sq = tape.square(r);
    let norms2 = tape.sum_rows(sq);
    let residual_norm = tape.value(norms2).data().iter().map(|v| v.sqrt()).sum::<f32>() / rows as f32;
    let mask = tape.constant(Tensor::matrix(rows, 1, mask)?);
    let masked = tape.mul(norms2, mask)?;
    let bc_sum = tape.sum(masked);
    let bc = tape.scale(bc_sum, beta / rows as f32);
    let loss = tape.add(value_loss, bc)?;

    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("actor loss"));
    }
    let diag = ActorDiagnostics {
        filter_active_frac: filter_active as f32 / rows as f32,
        mean_residual_norm: residual_norm,
        mean_q: tape.value(q_mean).data()[0],
        bc_term: tape.value(bc).data()[0],
    };
    let grads = tape.backward(loss)?;
    adam_step(actor.net_mut(), &grads.mlp(&binding), adam)?;
    Ok((loss_value, diag))
}
