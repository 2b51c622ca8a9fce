use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::grad::{Activation, Mlp, MlpBinding, Tape, Tensor, Var};
use crate::rollout::ChunkPolicy;
use crate::Error;

/// Conditional velocity field over flattened action chunks plus its Euler
/// sampler. Network input layout is `[x_t (h·d), t, s (d_s)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPolicy {
    net: Mlp,
    flow_steps: usize,
    horizon: usize,
    act_dim: usize,
    obs_dim: usize,
}

impl FlowPolicy {
    pub fn new(net: Mlp, flow_steps: usize, horizon: usize, act_dim: usize, obs_dim: usize) -> Result<Self, Error> {
        if flow_steps < 1 || horizon < 1 || act_dim < 1 {
            return Err(Error::InvalidArgument(
                "flow_steps, horizon and action dim must be at least 1".into(),
            ));
        }
        let hd = horizon * act_dim;
        if net.in_dim() != hd + 1 + obs_dim || net.out_dim() != hd {
            return Err(Error::Shape(format!(
                "velocity net must map {} -> {hd}, got {} -> {}",
                hd + 1 + obs_dim,
                net.in_dim(),
                net.out_dim()
            )));
        }
        Ok(Self {
            net,
            flow_steps,
            horizon,
            act_dim,
            obs_dim,
        })
    }

    /// Glorot-initialised GELU network with the given hidden widths.
    pub fn init<R: Rng + ?Sized>(
        hidden: &[usize],
        flow_steps: usize,
        horizon: usize,
        act_dim: usize,
        obs_dim: usize,
        rng: &mut R,
    ) -> Result<Self, Error> {
        let hd = horizon * act_dim;
        let mut dims = vec![hd + 1 + obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(hd);
        let net = Mlp::glorot(&dims, Activation::Gelu, Activation::Identity, rng)?;
        Self::new(net, flow_steps, horizon, act_dim, obs_dim)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn flow_steps(&self) -> usize {
        self.flow_steps
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn chunk_dim(&self) -> usize {
        self.horizon * self.act_dim
    }

    fn check_rows(&self, s: &Tensor, x: &Tensor) -> Result<(), Error> {
        if s.cols() != self.obs_dim || x.cols() != self.chunk_dim() || s.rows() != x.rows() {
            return Err(Error::Shape(format!(
                "expected s [n, {}] and x [n, {}], got {:?} and {:?}",
                self.obs_dim,
                self.chunk_dim(),
                s.shape(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Velocity `v(x, t, s)` for every row; `t` is shared by all rows.
    pub fn velocity(&self, x: &Tensor, t: f32, s: &Tensor) -> Result<Tensor, Error> {
        self.check_rows(s, x)?;
        let tcol = Tensor::full(&[x.rows(), 1], t);
        let input = Tensor::hcat(&[x, &tcol, s])?;
        Ok(self.net.forward(&input)?)
    }

    /// Forward-Euler integration from `z` at t=0 to t=1, batched over rows.
    /// The result is not clipped.
    pub fn sample(&self, s: &Tensor, z: &Tensor) -> Result<Tensor, Error> {
        self.check_rows(s, z)?;
        if !z.is_finite() {
            return Err(Error::NonFinite("latent"));
        }
        let n = z.rows();
        let dt = 1.0 / self.flow_steps as f32;
        let mut x = Tensor::matrix(n, self.chunk_dim(), z.data().to_vec())?;
        for k in 0..self.flow_steps {
            let v = self
                .velocity(&x, k as f32 * dt, s)
                .map_err(|_| Error::NonFinite("velocity during sampling"))?;
            for (xi, vi) in x.data_mut().iter_mut().zip(v.data()) {
                *xi += dt * vi;
            }
            if !x.is_finite() {
                return Err(Error::NonFinite("flow sample"));
            }
        }
        Ok(x)
    }

    /// Single-state sampling: returns the flattened `h×d` chunk.
    pub fn sample_chunk(&self, s: &[f32], z: &[f32]) -> Result<Vec<f32>, Error> {
        let st = Tensor::matrix(1, s.len(), s.to_vec())?;
        let zt = Tensor::matrix(1, z.len(), z.to_vec())?;
        Ok(self.sample(&st, &zt)?.into_data())
    }
}

impl ChunkPolicy for FlowPolicy {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn candidates(&self) -> usize {
        1
    }

    fn latent_dim(&self) -> usize {
        self.chunk_dim()
    }

    fn act(&self, obs: &Tensor, latents: &Tensor) -> Result<Tensor, Error> {
        self.sample(obs, latents)
    }
}

/// Random draws behind one flow-matching loss evaluation: per-row times
/// `t ~ U[0,1]` and source noise `x0 ~ N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDraws {
    pub t: Vec<f32>,
    pub x0: Tensor,
}

impl FlowDraws {
    pub fn sample<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        let unit = Uniform::new_inclusive(0.0f32, 1.0).expect("valid range");
        let t = (0..rows).map(|_| unit.sample(rng)).collect();
        let x0 = (0..rows * dim).map(|_| StandardNormal.sample(rng)).collect();
        Self {
            t,
            x0: Tensor::matrix(rows, dim, x0).expect("sized above"),
        }
    }
}

/// Network input `[x_t, t, s]` and regression target `x1 − x0` for the
/// linear path `x_t = (1 − t)·x0 + t·x1`.
pub fn flow_inputs(s: &Tensor, x1: &Tensor, draws: &FlowDraws) -> Result<(Tensor, Tensor), Error> {
    let (n, hd) = (x1.rows(), x1.cols());
    if n == 0 {
        return Err(Error::Empty("flow batch"));
    }
    if s.rows() != n || draws.t.len() != n || draws.x0.shape() != [n, hd] {
        return Err(Error::Shape("flow batch rows disagree".into()));
    }
    let mut xt = Vec::with_capacity(n * hd);
    let mut target = Vec::with_capacity(n * hd);
    for i in 0..n {
        let t = draws.t[i];
        for (a0, a1) in draws.x0.row(i).iter().zip(x1.row(i)) {
            xt.push((1.0 - t) * a0 + t * a1);
            target.push(a1 - a0);
        }
    }
    let xt = Tensor::matrix(n, hd, xt)?;
    let tcol = Tensor::matrix(n, 1, draws.t.clone())?;
    let input = Tensor::hcat(&[&xt, &tcol, s])?;
    Ok((input, Tensor::matrix(n, hd, target)?))
}

/// Records the flow-matching loss on `tape`: mean over batch and chunk
/// coordinates of `‖v(x_t, t, s) − (x1 − x0)‖²`.
pub fn flow_loss(
    policy: &FlowPolicy,
    tape: &mut Tape,
    s: &Tensor,
    x1: &Tensor,
    draws: &FlowDraws,
) -> Result<(Var, MlpBinding), Error> {
    policy.check_rows(s, x1)?;
    let (input, target) = flow_inputs(s, x1, draws)?;
    let input = tape.constant(input);
    let target = tape.constant(target);
    let (v, binding) = tape.mlp(&policy.net, input, true)?;
    let diff = tape.sub(v, target)?;
    let sq = tape.square(diff);
    Ok((tape.mean(sq), binding))
}

/// Loss value for an arbitrary velocity field given the same draws; the
/// closure receives the `[x_t, t, s]` input matrix.
pub fn flow_loss_value<F>(velocity: F, s: &Tensor, x1: &Tensor, draws: &FlowDraws) -> Result<f32, Error>
where
    F: FnOnce(&Tensor) -> Tensor,
{
    let (input, target) = flow_inputs(s, x1, draws)?;
    let v = velocity(&input);
    if v.shape() != target.shape() {
        return Err(Error::Shape("velocity output does not match chunk shape".into()));
    }
    let sum: f64 = v
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum();
    Ok((sum / target.len() as f64) as f32)
}
