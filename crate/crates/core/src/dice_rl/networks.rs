use rand::Rng;

use super::config::Reduction;
use crate::bc_flow::FlowPolicy;
use crate::grad::{Activation, Mlp, Tensor};
use crate::Error;

/// Residual editor `s_θ(s, z)`; input layout `[s, z]`, output is a full
/// flattened chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualActor {
    net: Mlp,
}

impl ResidualActor {
    /// GELU network whose final layer starts at zero, so the residual is
    /// exactly zero everywhere until the first update.
    pub fn init<R: Rng + ?Sized>(
        hidden: &[usize],
        obs_dim: usize,
        chunk_dim: usize,
        rng: &mut R,
    ) -> Result<Self, Error> {
        let mut dims = vec![obs_dim + chunk_dim];
        dims.extend_from_slice(hidden);
        dims.push(chunk_dim);
        let mut net = Mlp::glorot(&dims, Activation::Gelu, Activation::Identity, rng)?;
        net.zero_output_layer();
        Ok(Self { net })
    }

    pub fn from_net(net: Mlp, obs_dim: usize, chunk_dim: usize) -> Result<Self, Error> {
        if net.in_dim() != obs_dim + chunk_dim || net.out_dim() != chunk_dim {
            return Err(Error::Shape(format!(
                "residual net must map {} -> {chunk_dim}, got {} -> {}",
                obs_dim + chunk_dim,
                net.in_dim(),
                net.out_dim()
            )));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn chunk_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.net.in_dim() - self.net.out_dim()
    }

    /// `s` is `[n, d_s]`, `z` is `[n, h·d]`.
    pub fn forward(&self, s: &Tensor, z: &Tensor) -> Result<Tensor, Error> {
        let input = Tensor::hcat(&[s, z])?;
        Ok(self.net.forward(&input)?)
    }
}

/// Online and target critic ensembles over `[s, chunk]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticEnsemble {
    pub online: Vec<Mlp>,
    pub target: Vec<Mlp>,
}

impl CriticEnsemble {
    /// Independently initialised members; each target starts as a copy of
    /// its online member.
    pub fn init<R: Rng + ?Sized>(
        n_q: usize,
        hidden: &[usize],
        obs_dim: usize,
        chunk_dim: usize,
        rng: &mut R,
    ) -> Result<Self, Error> {
        if n_q == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        let mut dims = vec![obs_dim + chunk_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let online = (0..n_q)
            .map(|_| Mlp::glorot(&dims, Activation::Gelu, Activation::Identity, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            target: online.clone(),
            online,
        })
    }

    pub fn from_parts(online: Vec<Mlp>, target: Vec<Mlp>) -> Result<Self, Error> {
        if online.is_empty() || online.len() != target.len() {
            return Err(Error::Shape("online and target ensembles must be non-empty and equal in size".into()));
        }
        let in_dim = online[0].in_dim();
        for (o, t) in online.iter().zip(&target) {
            let same = o.layers().len() == t.layers().len()
                && o.layers()
                    .iter()
                    .zip(t.layers())
                    .all(|(a, b)| a.weight.shape() == b.weight.shape());
            if !same || o.in_dim() != in_dim || o.out_dim() != 1 {
                return Err(Error::Shape("critic members disagree in shape".into()));
            }
        }
        Ok(Self { online, target })
    }

    pub fn len(&self) -> usize {
        self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.online.is_empty()
    }

    pub fn in_dim(&self) -> usize {
        self.online[0].in_dim()
    }

    pub fn online_view(&self, reduction: Reduction) -> EnsembleView<'_> {
        EnsembleView {
            members: &self.online,
            reduction,
        }
    }

    pub fn target_view(&self, reduction: Reduction) -> EnsembleView<'_> {
        EnsembleView {
            members: &self.target,
            reduction,
        }
    }
}

/// Scores `(state, chunk)` rows with one reduced value per row.
pub trait ChunkValue {
    /// `s` is `[n, d_s]`, `a` is `[n, h·d]`.
    fn values(&self, s: &Tensor, a: &Tensor) -> Result<Vec<f32>, Error>;
}

/// Per-row closures act as value functions, which keeps stubs short.
impl<F> ChunkValue for F
where
    F: Fn(&[f32], &[f32]) -> f32,
{
    fn values(&self, s: &Tensor, a: &Tensor) -> Result<Vec<f32>, Error> {
        if s.rows() != a.rows() {
            return Err(Error::Shape("state and chunk rows disagree".into()));
        }
        Ok((0..s.rows()).map(|i| self(s.row(i), a.row(i))).collect())
    }
}

/// A set of critic members combined by a reduction.
#[derive(Clone, Copy, Debug)]
pub struct EnsembleView<'a> {
    pub members: &'a [Mlp],
    pub reduction: Reduction,
}

impl EnsembleView<'_> {
    /// Per-member values, `[member][row]`.
    pub fn member_values(&self, s: &Tensor, a: &Tensor) -> Result<Vec<Vec<f32>>, Error> {
        let input = Tensor::hcat(&[s, a])?;
        self.members
            .iter()
            .map(|m| Ok(m.forward(&input)?.into_data()))
            .collect()
    }
}

impl ChunkValue for EnsembleView<'_> {
    fn values(&self, s: &Tensor, a: &Tensor) -> Result<Vec<f32>, Error> {
        let per = self.member_values(s, a)?;
        let mut buf = vec![0.0f32; per.len()];
        Ok((0..s.rows())
            .map(|i| {
                for (b, m) in buf.iter_mut().zip(&per) {
                    *b = m[i];
                }
                self.reduction.apply(&buf)
            })
            .collect())
    }
}

/// Executed-policy chunk `π_pre(s, z) + s_θ(s, z)`, unclipped.
pub fn policy_action(actor: &ResidualActor, prior: &FlowPolicy, s: &Tensor, z: &Tensor) -> Result<Tensor, Error> {
    let base = prior.sample(s, z)?;
    add_residual(actor, s, z, &base)
}

/// `prior_chunk + s_θ(s, z)` for precomputed prior samples.
pub fn add_residual(actor: &ResidualActor, s: &Tensor, z: &Tensor, prior_chunk: &Tensor) -> Result<Tensor, Error> {
    let r = actor.forward(s, z)?;
    if r.shape() != prior_chunk.shape() {
        return Err(Error::Shape("residual and prior chunk shapes differ".into()));
    }
    let mut out = prior_chunk.clone();
    for (o, d) in out.data_mut().iter_mut().zip(r.data()) {
        *o += d;
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("policy action"));
    }
    Ok(out)
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_first(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Scores the K candidates of every state and keeps the best one. `s` is
/// `[n, d_s]`, `z` is `[n·K, h·d]` with each state's candidates contiguous.
/// Returns the chosen unclipped chunks `[n, h·d]` and their indices.
pub fn best_of_n_select<C: ChunkValue + ?Sized>(
    actor: &ResidualActor,
    prior: &FlowPolicy,
    critic: &C,
    s: &Tensor,
    z: &Tensor,
) -> Result<(Tensor, Vec<usize>), Error> {
    let n = s.rows();
    if n == 0 || z.rows() % n != 0 || z.rows() == 0 {
        return Err(Error::Shape("latent rows must be a positive multiple of state rows".into()));
    }
    let k = z.rows() / n;
    let s_rep = s.repeat_rows(k);
    let cand = policy_action(actor, prior, &s_rep, z)?;
    let scores = critic.values(&s_rep, &cand)?;
    let mut chosen = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n * cand.cols());
    for i in 0..n {
        let idx = argmax_first(&scores[i * k..(i + 1) * k]);
        chosen.push(idx);
        out.extend_from_slice(cand.row(i * k + idx));
    }
    Ok((Tensor::matrix(n, cand.cols(), out)?, chosen))
}
