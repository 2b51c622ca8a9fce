use super::mlp::{Mlp, MlpGrads};
use super::{GradError, Tensor};

/// Moment accumulators for Adam, shaped like the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: MlpGrads,
    pub second: MlpGrads,
    pub step: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    pub fn new(params: &Mlp, lr: f32) -> Self {
        Self {
            first: MlpGrads::zeros_like(params),
            second: MlpGrads::zeros_like(params),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut Mlp, grads: &MlpGrads, state: &mut AdamState) -> Result<(), GradError> {
    params.check_same_shape(&grads.shapes())?;
    params.check_same_shape(&state.first.shapes())?;
    params.check_same_shape(&state.second.shapes())?;
    if !grads.is_finite() {
        return Err(GradError::NonFinite("gradient passed to adam"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let step_size = state.lr / bc1;
    let bc2_sqrt = bc2.sqrt();

    let update = |p: &mut Tensor, g: &Tensor, m: &mut Tensor, v: &mut Tensor| {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() / bc2_sqrt + state.eps);
        }
    };

    for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in params
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first.layers.iter_mut())
        .zip(state.second.layers.iter_mut())
    {
        update(&mut layer.weight, gw, mw, vw);
        update(&mut layer.bias, gb, mb, vb);
    }
    Ok(())
}

/// `target ← tau·online + (1 − tau)·target`.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f32) -> Result<(), GradError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(GradError::InvalidArgument(format!(
            "polyak tau must lie in [0, 1], got {tau}"
        )));
    }
    target.check_same_shape(&online.shapes())?;
    for (t, o) in target.layers_mut().iter_mut().zip(online.layers()) {
        for (tv, ov) in t
            .weight
            .data_mut()
            .iter_mut()
            .chain(t.bias.data_mut().iter_mut())
            .zip(o.weight.data().iter().chain(o.bias.data()))
        {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

/// Central-difference gradient of `f` at `x`.
///
/// Each coordinate is perturbed by `±step` in `f32`; the divisor is the
/// perturbation actually realized after rounding, so `f` may evaluate in
/// higher precision without the step size limiting accuracy.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, step: f32) -> Result<Tensor, GradError>
where
    F: FnMut(&Tensor) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(GradError::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let hi = orig + step;
        let lo = orig - step;
        probe.data_mut()[i] = hi;
        let f_hi = f(&probe);
        probe.data_mut()[i] = lo;
        let f_lo = f(&probe);
        probe.data_mut()[i] = orig;
        out.push(((f_hi - f_lo) / (hi as f64 - lo as f64)) as f32);
    }
    Tensor::new(x.shape().to_vec(), out)
}
