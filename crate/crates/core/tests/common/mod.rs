//! Test-only oracles, independent of the library's evaluation path.
#![allow(dead_code)]

use dice_core::grad::{Activation, Mlp};

pub fn act_f64(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Gelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
        }
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

/// Straight loop-based forward pass in f64 over the same f32 parameters.
pub fn reference_forward(net: &Mlp, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            let mut h = row.clone();
            for layer in net.layers() {
                let (out, inp) = (layer.weight.rows(), layer.weight.cols());
                assert_eq!(h.len(), inp);
                let w = layer.weight.data();
                let b = layer.bias.data();
                h = (0..out)
                    .map(|o| {
                        let mut acc = b[o] as f64;
                        for i in 0..inp {
                            acc += w[o * inp + i] as f64 * h[i];
                        }
                        act_f64(layer.activation, acc)
                    })
                    .collect();
            }
            h
        })
        .collect()
}

/// Max relative error with the denominator floored at 1e-6.
pub fn max_rel_err(analytic: &[f32], numeric: &[f32]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| ((a - n).abs() as f64) / (a.abs() as f64).max(1e-6))
        .fold(0.0, f64::max)
}

use dice_core::grad::{finite_difference_grad, Tape, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn flat_params(net: &Mlp) -> Vec<f32> {
    let mut v = Vec::new();
    for l in net.layers() {
        v.extend_from_slice(l.weight.data());
        v.extend_from_slice(l.bias.data());
    }
    v
}

fn set_flat(net: &mut Mlp, idx: usize, value: f32) {
    let mut i = idx;
    for l in net.layers_mut() {
        if i < l.weight.len() {
            l.weight.data_mut()[i] = value;
            return;
        }
        i -= l.weight.len();
        if i < l.bias.len() {
            l.bias.data_mut()[i] = value;
            return;
        }
        i -= l.bias.len();
    }
    panic!("index out of range");
}

/// `sum(y ⊙ C) + 0.5·mean(y²)` evaluated in f64.
fn reference_loss(net: &Mlp, rows: &[Vec<f64>], head: &[f64]) -> f64 {
    let y = reference_forward(net, rows);
    let mut lin = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for r in &y {
        for (j, v) in r.iter().enumerate() {
            lin += head[j] * v;
            sq += v * v;
            n += 1;
        }
    }
    lin + 0.5 * sq / n as f64
}

/// Builds a random MLP (depth ≤ 3, widths ≤ 64, mixed activations), a random
/// input batch and loss head, then compares tape gradients against central
/// differences of the f64 reference. Returns the max relative error over the
/// checked coordinates (all of them for small nets, a random 256 otherwise),
/// including the input gradient.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=64)];
    for _ in 0..depth {
        dims.push(rng.random_range(1..=64));
    }
    let acts = [Activation::Gelu, Activation::Tanh, Activation::Identity];
    let mut net = Mlp::glorot(&dims, Activation::Gelu, Activation::Identity, &mut rng).unwrap();
    for l in net.layers_mut() {
        l.activation = acts[rng.random_range(0..3)];
        for b in l.bias.data_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let n_rows = rng.random_range(1..=3);
    let input: Vec<f32> = (0..n_rows * dims[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
    let out = *dims.last().unwrap();
    let head: Vec<f64> = (0..out).map(|_| rng.random_range(-1.0..1.0) as f32 as f64).collect();

    let mut tape = Tape::new();
    let x = tape.variable(Tensor::matrix(n_rows, dims[0], input.clone()).unwrap());
    let (y, bind) = tape.mlp(&net, x, true).unwrap();
    let head_rows: Vec<f32> = (0..n_rows).flat_map(|_| head.iter().map(|&h| h as f32)).collect();
    let c = tape.constant(Tensor::matrix(n_rows, out, head_rows).unwrap());
    let prod = tape.mul(y, c).unwrap();
    let lin = tape.sum(prod);
    let sq = tape.square(y);
    let msq = tape.mean(sq);
    let half = tape.scale(msq, 0.5);
    let loss = tape.add(lin, half).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic = grads.mlp(&bind).flatten();
    let analytic_x = grads.wrt(x);

    let rows_of = |flat: &[f32]| -> Vec<Vec<f64>> {
        flat.chunks(dims[0]).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
    };
    let base_rows = rows_of(&input);

    let flat = flat_params(&net);
    let chosen: Vec<usize> = if flat.len() <= 256 {
        (0..flat.len()).collect()
    } else {
        sample(&mut rng, flat.len(), 256).into_vec()
    };
    let sub = Tensor::new(vec![chosen.len()], chosen.iter().map(|&i| flat[i]).collect()).unwrap();
    let mut probe = net.clone();
    let numeric = finite_difference_grad(
        |t| {
            for (k, &i) in chosen.iter().enumerate() {
                set_flat(&mut probe, i, t.data()[k]);
            }
            reference_loss(&probe, &base_rows, &head)
        },
        &sub,
        1e-3,
    )
    .unwrap();
    let picked: Vec<f32> = chosen.iter().map(|&i| analytic[i]).collect();

    let err_params = max_rel_err(&picked, numeric.data());

    let xin = Tensor::new(vec![input.len()], input.clone()).unwrap();
    let numeric_x = finite_difference_grad(
        |t| reference_loss(&net, &rows_of(t.data()), &head),
        &xin,
        1e-3,
    )
    .unwrap();
    let err_x = max_rel_err(analytic_x.data(), numeric_x.data());
    err_params.max(err_x)
}

pub mod fixtures {
    use dice_core::bc_flow::FlowPolicy;
    use dice_core::dice_rl::ResidualActor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Flow policy with a zero velocity field, so `sample(s, z) == z`.
    pub fn latent_echo_prior(horizon: usize) -> FlowPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = FlowPolicy::init(&[8], 4, horizon, 2, 2, &mut rng).unwrap();
        p.net_mut().zero_output_layer();
        p
    }

    /// Residual actor whose output is the constant `c` in every coordinate.
    pub fn constant_actor(chunk_dim: usize, c: f32) -> ResidualActor {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ResidualActor::init(&[8], 2, chunk_dim, &mut rng).unwrap();
        let last = a.net_mut().layers_mut().last_mut().unwrap();
        last.bias.data_mut().iter_mut().for_each(|b| *b = c);
        a
    }
}

/// Independent reimplementations of small decision rules.
pub mod rules {
    /// Filter written from its two conditions: the edit must not lose value
    /// and its value may exceed the return estimate by at most `eps`.
    pub fn filter(q_cur: f64, q_pre: f64, g: f64, eps: f64) -> bool {
        let improves = !(q_cur < q_pre);
        let consistent = !(q_cur - g > eps);
        improves && consistent
    }

    /// First index holding the maximum, by linear scan.
    pub fn argmax_scan(scores: &[f32]) -> usize {
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn linear(start: f64, end: f64, t: f64, t_ratio: f64) -> f64 {
        if t >= t_ratio {
            end
        } else {
            start + (end - start) * t / t_ratio
        }
    }
}

/// Brute-force n-step multi-sample TD targets over explicit episode lists.
pub mod td {
    use dice_core::dice_rl::{ChunkTransition, LatentBank, ReplayBuffer, ResidualActor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::reference_forward;

    pub struct Episode {
        pub transitions: Vec<ChunkTransition>,
        pub banks: Vec<LatentBank>,
        pub tail: Option<LatentBank>,
    }

    pub struct Case {
        pub episodes: Vec<Episode>,
        pub k: usize,
        pub span: usize,
        pub actor: ResidualActor,
    }

    pub const DS: usize = 2;
    pub const HD: usize = 4;

    /// Closed-form target value used on both sides of the comparison.
    pub fn q(s: &[f64], a: &[f64]) -> f64 {
        let lin: f64 = a.iter().enumerate().map(|(j, v)| (0.1 + 0.05 * j as f64) * v).sum();
        0.3 * s[0] - 0.2 * s[1] + lin - 0.1 * a[0] * a[1]
    }

    pub fn q32(s: &[f32], a: &[f32]) -> f32 {
        let s: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        q(&s, &a) as f32
    }

    fn bank<R: Rng>(rng: &mut R, k: usize) -> LatentBank {
        LatentBank {
            z: (0..k * HD).map(|_| rng.random_range(-1.5..1.5)).collect(),
            prior: (0..k * HD).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Random episodes totalling at most `max_total` transitions; each ends
    /// either terminally or truncated with a tail bank.
    pub fn random_case(seed: u64, max_total: usize, k: usize, span: usize) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut episodes = Vec::new();
        let mut total = 0;
        while total < max_total {
            let len = rng.random_range(1..=5).min(max_total - total);
            let terminal = rng.random_bool(0.5);
            let mut transitions = Vec::new();
            let mut banks = Vec::new();
            for i in 0..len {
                let last = i + 1 == len;
                let steps = if last && terminal { rng.random_range(1..=2) } else { 2 };
                transitions.push(ChunkTransition {
                    s: (0..DS).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    chunk: (0..HD).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    reward_sum: if last && terminal { 1.0 } else { rng.random_range(0.0..0.5) },
                    next_s: (0..DS).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    terminal: last && terminal,
                    steps_consumed: steps,
                    mc_return: 0.0,
                });
                banks.push(bank(&mut rng, k));
            }
            let tail = (!terminal).then(|| bank(&mut rng, k));
            total += len;
            episodes.push(Episode { transitions, banks, tail });
        }
        let mut actor = ResidualActor::init(&[6], DS, HD, &mut rng).unwrap();
        for l in actor.net_mut().layers_mut() {
            for w in l.weight.data_mut() {
                *w = rng.random_range(-0.3..0.3);
            }
            for b in l.bias.data_mut() {
                *b = rng.random_range(-0.1..0.1);
            }
        }
        Case { episodes, k, span, actor }
    }

    pub fn buffer(case: &Case) -> ReplayBuffer {
        let total: usize = case.episodes.iter().map(|e| e.transitions.len()).sum();
        let mut buf = ReplayBuffer::new(total);
        for e in &case.episodes {
            let items = e.transitions.iter().cloned().zip(e.banks.iter().cloned()).collect();
            buf.push_episode(items, e.tail.clone()).unwrap();
        }
        buf
    }

    /// Target for every stored transition, in insertion order.
    pub fn targets(case: &Case, gamma: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &case.episodes {
            let n = e.transitions.len();
            for i in 0..n {
                let mut y = 0.0;
                let mut c = 0;
                let mut j = i;
                let mut used = 0;
                loop {
                    let t = &e.transitions[j];
                    y += gamma.powi(c) * t.reward_sum as f64;
                    c += t.steps_consumed as i32;
                    used += 1;
                    if t.terminal || used == case.span || j + 1 == n {
                        break;
                    }
                    j += 1;
                }
                let last = &e.transitions[j];
                if !last.terminal {
                    let b = if j + 1 < n { &e.banks[j + 1] } else { e.tail.as_ref().unwrap() };
                    let s: Vec<f64> = last.next_s.iter().map(|&v| v as f64).collect();
                    let mut v = 0.0;
                    for k in 0..case.k {
                        let z = &b.z[k * HD..(k + 1) * HD];
                        let mut input = s.clone();
                        input.extend(z.iter().map(|&x| x as f64));
                        let r = &reference_forward(case.actor.net(), &[input])[0];
                        let a: Vec<f64> = (0..HD).map(|d| b.prior[k * HD + d] as f64 + r[d]).collect();
                        v += q(&s, &a);
                    }
                    y += gamma.powi(c) * v / case.k as f64;
                }
                out.push(y);
            }
        }
        out
    }
}
