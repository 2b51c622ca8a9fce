use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bc_flow::FlowPolicy;
use crate::dice_rl::{ChunkValue, DicePolicy};
use crate::envs::derive_seed;
use crate::grad::Tensor;
use crate::rollout::draw_latents;
use crate::Error;

pub const ENTROPY_BINS: usize = 50;

const ANCHOR_LATENT_STREAM: u64 = 50;

/// A demo state used as a measurement point, with its return-to-go.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub s: Vec<f32>,
    pub g_hat: f32,
}

impl Anchor {
    pub fn from_pairs(pairs: &[([f32; 2], f32)]) -> Vec<Anchor> {
        pairs
            .iter()
            .map(|(s, g)| Anchor {
                s: s.to_vec(),
                g_hat: *g,
            })
            .collect()
    }
}

/// Maps states and latents to chunk samples. `s` is `[n, d_s]` and `z` is
/// `[n, h·d]`; returns `[n, h·d]`.
pub trait ChunkSampler {
    fn chunk_dim(&self) -> usize;
    fn chunks(&self, s: &Tensor, z: &Tensor) -> Result<Tensor, Error>;
}

impl ChunkSampler for FlowPolicy {
    fn chunk_dim(&self) -> usize {
        FlowPolicy::chunk_dim(self)
    }

    fn chunks(&self, s: &Tensor, z: &Tensor) -> Result<Tensor, Error> {
        self.sample(s, z)
    }
}

/// Prior plus residual, without best-of-N selection.
impl ChunkSampler for DicePolicy<'_> {
    fn chunk_dim(&self) -> usize {
        self.prior.chunk_dim()
    }

    fn chunks(&self, s: &Tensor, z: &Tensor) -> Result<Tensor, Error> {
        self.candidates_for(s, z)
    }
}

/// Per-row sampler stub: `(s, z) -> chunk`.
pub struct FnSampler<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> ChunkSampler for FnSampler<F>
where
    F: Fn(&[f32], &[f32]) -> Vec<f32>,
{
    fn chunk_dim(&self) -> usize {
        self.dim
    }

    fn chunks(&self, s: &Tensor, z: &Tensor) -> Result<Tensor, Error> {
        let rows: Vec<Vec<f32>> = (0..s.rows()).map(|i| (self.f)(s.row(i), z.row(i))).collect();
        let t = Tensor::from_rows(&rows)?;
        if t.cols() != self.dim {
            return Err(Error::Shape("stub sampler returned the wrong width".into()));
        }
        Ok(t)
    }
}

/// K latents for the anchor at state `s`. The stream is keyed by the state
/// itself, so metrics do not depend on anchor order.
pub fn anchor_latents(seed: u64, s: &[f32], k: usize, chunk_dim: usize) -> Tensor {
    let mut h = FnvHasher::default();
    for v in s {
        h.write_u32(v.to_bits());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ANCHOR_LATENT_STREAM, h.finish()));
    Tensor::matrix(k, chunk_dim, draw_latents(&mut rng, k * chunk_dim)).expect("sized above")
}

fn anchor_samples<S: ChunkSampler + ?Sized>(
    sampler: &S,
    anchor: &Anchor,
    z: &Tensor,
) -> Result<(Tensor, Tensor), Error> {
    let s = Tensor::matrix(1, anchor.s.len(), anchor.s.clone())?.repeat_rows(z.rows());
    let a = sampler.chunks(&s, z)?;
    Ok((s, a))
}

fn bin_of(x: f32) -> usize {
    let u = (x.clamp(-1.0, 1.0) + 1.0) * 0.5 * ENTROPY_BINS as f32;
    (u as usize).min(ENTROPY_BINS - 1)
}

/// Mean over coordinates of the 50-bin histogram entropy over `[−1, 1]`
/// (values clipped into range), divided by `ln 50`. `samples` holds
/// `n` rows of width `dim`.
pub fn normalized_histogram_entropy(samples: &[f32], dim: usize) -> Result<f32, Error> {
    if dim == 0 || samples.is_empty() || samples.len() % dim != 0 {
        return Err(Error::Shape("samples must be whole rows".into()));
    }
    let n = samples.len() / dim;
    let ln_bins = (ENTROPY_BINS as f64).ln();
    let mut total = 0.0f64;
    for c in 0..dim {
        let mut counts = [0usize; ENTROPY_BINS];
        for r in 0..n {
            counts[bin_of(samples[r * dim + c])] += 1;
        }
        let h: f64 = counts
            .iter()
            .filter(|&&m| m > 0)
            .map(|&m| {
                let p = m as f64 / n as f64;
                -p * p.ln()
            })
            .sum();
        total += h / ln_bins;
    }
    Ok((total / dim as f64) as f32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetunabilityReport {
    pub good_cov: f32,
    pub bad_cov: f32,
    /// Absent when no anchor has at least two bad samples.
    pub bad_ent: Option<f32>,
    pub anchors: usize,
    pub alpha: f32,
    pub k: usize,
}

/// Good-mode coverage `E[I(Q(s, π(s, z)) ≥ α·Ĝ(s))]` over anchors × K
/// latents, its complement, and the normalized entropy of the samples that
/// fall below the threshold.
pub fn good_coverage<S, C>(
    sampler: &S,
    critic: &C,
    anchors: &[Anchor],
    alpha: f32,
    k: usize,
    seed: u64,
) -> Result<FinetunabilityReport, Error>
where
    S: ChunkSampler + ?Sized,
    C: ChunkValue + ?Sized,
{
    if anchors.is_empty() {
        return Err(Error::Empty("anchors"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let hd = sampler.chunk_dim();
    let mut good = 0usize;
    let mut ent_sum = 0.0f64;
    let mut ent_n = 0usize;
    for anchor in anchors {
        let z = anchor_latents(seed, &anchor.s, k, hd);
        let (s, a) = anchor_samples(sampler, anchor, &z)?;
        let q = critic.values(&s, &a)?;
        let threshold = alpha * anchor.g_hat;
        let mut bad = Vec::new();
        for (j, &v) in q.iter().enumerate() {
            if v >= threshold {
                good += 1;
            } else {
                bad.extend_from_slice(a.row(j));
            }
        }
        if bad.len() >= 2 * hd {
            ent_sum += normalized_histogram_entropy(&bad, hd)? as f64;
            ent_n += 1;
        }
    }
    let total = anchors.len() * k;
    let good_cov = good as f32 / total as f32;
    Ok(FinetunabilityReport {
        good_cov,
        bad_cov: (total - good) as f32 / total as f32,
        bad_ent: (ent_n > 0).then(|| (ent_sum / ent_n as f64) as f32),
        anchors: anchors.len(),
        alpha,
        k,
    })
}

/// The BadEnt part of [`good_coverage`] on its own.
pub fn bad_entropy<S, C>(
    sampler: &S,
    critic: &C,
    anchors: &[Anchor],
    alpha: f32,
    k: usize,
    seed: u64,
) -> Result<Option<f32>, Error>
where
    S: ChunkSampler + ?Sized,
    C: ChunkValue + ?Sized,
{
    Ok(good_coverage(sampler, critic, anchors, alpha, k, seed)?.bad_ent)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharpeningRecord {
    pub anchor: usize,
    pub delta_v: f32,
    pub delta_h: f32,
}

fn sharpening_at<P, F, C>(
    pre: &P,
    post: &F,
    critic: &C,
    s: &[f32],
    z: &Tensor,
    anchor: usize,
) -> Result<SharpeningRecord, Error>
where
    P: ChunkSampler + ?Sized,
    F: ChunkSampler + ?Sized,
    C: ChunkValue + ?Sized,
{
    let hd = pre.chunk_dim();
    let st = Tensor::matrix(1, s.len(), s.to_vec())?.repeat_rows(z.rows());
    let a_pre = pre.chunks(&st, z)?;
    let a_post = post.chunks(&st, z)?;
    let mean = |v: Vec<f32>| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let dv = mean(critic.values(&st, &a_post)?) - mean(critic.values(&st, &a_pre)?);
    let dh = normalized_histogram_entropy(a_post.data(), hd)? - normalized_histogram_entropy(a_pre.data(), hd)?;
    Ok(SharpeningRecord {
        anchor,
        delta_v: dv as f32,
        delta_h: dh,
    })
}

/// Value gain and entropy change of the finetuned sampler over the prior at
/// every anchor, with both evaluated on the same K latents.
pub fn sharpening_scan<P, F, C>(
    pre: &P,
    post: &F,
    critic: &C,
    anchors: &[Anchor],
    k: usize,
    seed: u64,
) -> Result<Vec<SharpeningRecord>, Error>
where
    P: ChunkSampler + ?Sized,
    F: ChunkSampler + ?Sized,
    C: ChunkValue + ?Sized,
{
    if k < 2 {
        return Err(Error::InvalidArgument("sharpening needs K >= 2".into()));
    }
    if pre.chunk_dim() != post.chunk_dim() {
        return Err(Error::Shape("samplers disagree on chunk width".into()));
    }
    anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let z = anchor_latents(seed, &a.s, k, pre.chunk_dim());
            sharpening_at(pre, post, critic, &a.s, &z, i)
        })
        .collect()
}

/// Sharpening records at a sequence of visited states (for example the
/// decision points of one rollout), in order.
pub fn sharpening_along<P, F, C>(
    pre: &P,
    post: &F,
    critic: &C,
    states: &[[f32; 2]],
    k: usize,
    seed: u64,
) -> Result<Vec<SharpeningRecord>, Error>
where
    P: ChunkSampler + ?Sized,
    F: ChunkSampler + ?Sized,
    C: ChunkValue + ?Sized,
{
    let anchors: Vec<Anchor> = states
        .iter()
        .map(|s| Anchor {
            s: s.to_vec(),
            g_hat: 0.0,
        })
        .collect();
    sharpening_scan(pre, post, critic, &anchors, k, seed)
}

/// Pearson correlation; `None` when either side has zero variance or the
/// inputs are shorter than two.
pub fn pearson(x: &[f32], y: &[f32]) -> Option<f32> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a as f64 - mx, b as f64 - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()) as f32)
}
