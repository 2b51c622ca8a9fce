use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{derive_seed, GateWorld, Trajectory};
use crate::grad::Tensor;
use crate::rollout::{draw_latents, executable_chunk, ChunkPolicy};
use crate::Error;

const PAIR_LATENT_STREAM: u64 = 60;

/// Step `step` of demonstration `traj`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DemoRef {
    pub traj: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorPair {
    pub a: DemoRef,
    pub b: DemoRef,
    pub s_a: [f32; 2],
    pub s_b: [f32; 2],
}

impl AnchorPair {
    pub fn distance2(&self) -> f32 {
        dist2(self.s_a, self.s_b)
    }
}

fn dist2(a: [f32; 2], b: [f32; 2]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Pairs every `stride`-th demo state with its nearest state on a different
/// demonstration, keeping pairs whose distance lies in `[min_dist,
/// max_dist]`. Duplicates are dropped; when more than `max_pairs` remain,
/// an evenly spaced subset is kept.
pub fn find_anchor_pairs(
    demos: &[Trajectory],
    stride: usize,
    min_dist: f32,
    max_dist: f32,
    max_pairs: usize,
) -> Vec<AnchorPair> {
    let stride = stride.max(1);
    let mut pairs: Vec<AnchorPair> = Vec::new();
    let mut counter = 0usize;
    for (ti, t) in demos.iter().enumerate() {
        for (si, st) in t.steps.iter().enumerate() {
            counter += 1;
            if (counter - 1) % stride != 0 {
                continue;
            }
            let mut best: Option<(f32, DemoRef, [f32; 2])> = None;
            for (tj, u) in demos.iter().enumerate() {
                if tj == ti {
                    continue;
                }
                for (sj, su) in u.steps.iter().enumerate() {
                    let d = dist2(st.obs, su.obs);
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, DemoRef { traj: tj, step: sj }, su.obs));
                    }
                }
            }
            let Some((d, other, s_b)) = best else { continue };
            let d = d.sqrt();
            if d < min_dist || d > max_dist {
                continue;
            }
            let me = DemoRef { traj: ti, step: si };
            let dup = pairs.iter().any(|p| (p.a == other && p.b == me) || (p.a == me && p.b == other));
            if !dup {
                pairs.push(AnchorPair {
                    a: me,
                    b: other,
                    s_a: st.obs,
                    s_b,
                });
            }
        }
    }
    if pairs.len() > max_pairs && max_pairs > 0 {
        let n = pairs.len();
        pairs = (0..max_pairs).map(|i| pairs[i * n / max_pairs].clone()).collect();
    }
    pairs
}

fn ratio_curve(xa: &[[f32; 2]], xb: &[[f32; 2]], d0: f32) -> Vec<f32> {
    xa.iter().zip(xb).map(|(&p, &q)| dist2(p, q) / d0).collect()
}

/// Per-pair `c(t) = ‖s_t − s′_t‖² / ‖s_0 − s′_0‖²` at chunk boundaries
/// `t = 0..=horizon_chunks` for closed-loop rollouts of `policy` from both
/// anchors. Both rollouts of a pair consume the same latent sequence;
/// terminated rollouts stay at their final state.
pub fn policy_contraction<P: ChunkPolicy + ?Sized>(
    world: &GateWorld,
    policy: &P,
    pairs: &[AnchorPair],
    horizon_chunks: usize,
    seed: u64,
) -> Result<Vec<Vec<f32>>, Error> {
    for p in pairs {
        if !(p.distance2() > 0.0) {
            return Err(Error::InvalidArgument("anchor pair has coincident states".into()));
        }
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let n = pairs.len();
    let lat_width = policy.candidates() * policy.latent_dim();
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|p| ChaCha8Rng::seed_from_u64(derive_seed(seed, PAIR_LATENT_STREAM, p as u64)))
        .collect();
    let mut states: Vec<_> = pairs
        .iter()
        .flat_map(|p| [world.state_at(p.s_a), world.state_at(p.s_b)])
        .collect();
    let mut traces: Vec<Vec<[f32; 2]>> = states.iter().map(|s| vec![s.pos]).collect();
    for _ in 0..horizon_chunks {
        let lat: Vec<Vec<f32>> = rngs.iter_mut().map(|r| draw_latents(r, lat_width)).collect();
        let active: Vec<usize> = (0..2 * n).filter(|&i| !states[i].terminal).collect();
        if !active.is_empty() {
            let obs = Tensor::matrix(active.len(), 2, active.iter().flat_map(|&i| states[i].pos).collect())?;
            let z = Tensor::matrix(
                active.len() * policy.candidates(),
                policy.latent_dim(),
                active.iter().flat_map(|&i| lat[i / 2].iter().copied()).collect(),
            )?;
            let chunks = policy.act(&obs, &z)?;
            for (row, &i) in active.iter().enumerate() {
                world.step_chunk(&mut states[i], &executable_chunk(chunks.row(row)))?;
            }
        }
        for (trace, st) in traces.iter_mut().zip(&states) {
            trace.push(st.pos);
        }
    }
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(p, pair)| ratio_curve(&traces[2 * p], &traces[2 * p + 1], pair.distance2()))
        .collect())
}

/// Per-pair contraction of the stored demonstrations themselves, sampled
/// every `chunk_steps` steps; a finished demonstration stays at its final
/// state.
pub fn expert_contraction(
    demos: &[Trajectory],
    pairs: &[AnchorPair],
    horizon_chunks: usize,
    chunk_steps: usize,
) -> Result<Vec<Vec<f32>>, Error> {
    pairs
        .iter()
        .map(|p| {
            if !(p.distance2() > 0.0) {
                return Err(Error::InvalidArgument("anchor pair has coincident states".into()));
            }
            let trace = |r: DemoRef| -> Vec<[f32; 2]> {
                let t = &demos[r.traj];
                (0..=horizon_chunks)
                    .map(|c| t.obs((r.step + c * chunk_steps).min(t.len())))
                    .collect()
            };
            Ok(ratio_curve(&trace(p.a), &trace(p.b), p.distance2()))
        })
        .collect()
}

/// Mean over pairs of per-pair curves.
pub fn mean_curve(per_pair: &[Vec<f32>]) -> Vec<f32> {
    let Some(first) = per_pair.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|t| (per_pair.iter().map(|c| c[t] as f64).sum::<f64>() / per_pair.len() as f64) as f32)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionCurve {
    pub horizon_chunks: usize,
    pub pairs: usize,
    pub rl: Vec<f32>,
    pub pre: Vec<f32>,
    pub expert: Vec<f32>,
    pub rl_per_pair: Vec<Vec<f32>>,
    pub pre_per_pair: Vec<Vec<f32>>,
    pub expert_per_pair: Vec<Vec<f32>>,
}

/// Contraction curves of the finetuned policy, the prior and the stored
/// demonstrations over the same anchor pairs and latent seeds.
pub fn contraction_curves<R: ChunkPolicy + ?Sized, P: ChunkPolicy + ?Sized>(
    world: &GateWorld,
    rl: &R,
    pre: &P,
    demos: &[Trajectory],
    pairs: &[AnchorPair],
    horizon_chunks: usize,
    seed: u64,
) -> Result<ContractionCurve, Error> {
    if pairs.is_empty() {
        return Err(Error::Empty("anchor pairs"));
    }
    let rl_per_pair = policy_contraction(world, rl, pairs, horizon_chunks, seed)?;
    let pre_per_pair = policy_contraction(world, pre, pairs, horizon_chunks, seed)?;
    let expert_per_pair = expert_contraction(demos, pairs, horizon_chunks, pre.horizon())?;
    Ok(ContractionCurve {
        horizon_chunks,
        pairs: pairs.len(),
        rl: mean_curve(&rl_per_pair),
        pre: mean_curve(&pre_per_pair),
        expert: mean_curve(&expert_per_pair),
        rl_per_pair,
        pre_per_pair,
        expert_per_pair,
    })
}
