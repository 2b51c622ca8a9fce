use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_seed, EnvError, EnvState, GateWorld, TrajStep, Trajectory};

/// Which gate the scripted expert routes through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    NarrowGate,
    WideGate,
}

/// Distance in front of the wall face at which the expert stops steering
/// toward the gate and commits to the goal heading.
const COMMIT_DISTANCE: f32 = 0.02;

fn unit_toward(from: [f32; 2], to: [f32; 2]) -> [f32; 2] {
    let d = [to[0] - from[0], to[1] - from[1]];
    let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if n > 0.0 {
        [d[0] / n, d[1] / n]
    } else {
        [0.0, 0.0]
    }
}

fn add_noise<R: Rng + ?Sized>(a: [f32; 2], rng: &mut R, scale: f32) -> [f32; 2] {
    if scale <= 0.0 {
        return [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
    }
    let n = Normal::new(0.0f32, scale).expect("finite positive scale");
    let x = a[0] + n.sample(rng);
    let y = a[1] + n.sample(rng);
    [x.clamp(-1.0, 1.0), y.clamp(-1.0, 1.0)]
}

/// Waypoint controller: steer toward the chosen gate's center until just in
/// front of the wall, then head for the goal. Near the narrow gate the
/// committed goal heading drifts away from the opening, so arriving low
/// leaves the agent pinned against the wall.
pub fn scripted_expert<R: Rng + ?Sized>(
    world: &GateWorld,
    state: &EnvState,
    rng: &mut R,
    mode: Mode,
    noise_scale: f32,
) -> [f32; 2] {
    let c = world.config();
    let (lo, _) = c.wall_span();
    let gate = c.gate_for(mode);
    let target = if state.pos[0] < lo - COMMIT_DISTANCE {
        [c.wall_x, c.gate_centers[gate]]
    } else {
        c.goal_center
    };
    add_noise(unit_toward(state.pos, target), rng, noise_scale.max(0.0))
}

/// With probability `prob`, perturbs each component by `N(0, scale²)` and
/// clips to `[−1, 1]`; otherwise returns the action unchanged.
pub fn inject_action_noise<R: Rng + ?Sized>(action: [f32; 2], rng: &mut R, prob: f32, scale: f32) -> [f32; 2] {
    if prob <= 0.0 || rng.random::<f32>() >= prob {
        return action;
    }
    if scale <= 0.0 {
        return action;
    }
    add_noise(action, rng, scale)
}

/// Runs the scripted expert for one episode from `reset(seed)`.
pub fn rollout_expert<R: Rng + ?Sized>(
    world: &GateWorld,
    seed: u64,
    mode: Mode,
    noise_scale: f32,
    gamma: f32,
    rng: &mut R,
) -> Result<Trajectory, EnvError> {
    let mut state = world.reset(seed);
    let mut steps = Vec::with_capacity(world.config().horizon);
    while !state.terminal {
        let obs = state.pos;
        let action = scripted_expert(world, &state, rng, mode, noise_scale);
        let r = world.step(&mut state, action)?;
        steps.push(TrajStep {
            obs,
            action,
            reward: r.reward,
        });
    }
    Ok(Trajectory::new(steps, state.pos, state.success, gamma))
}

/// Successful expert demonstrations with the mode each one used.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    pub trajectories: Vec<Trajectory>,
    pub modes: Vec<Mode>,
    /// Episodes rolled out, including failures that were discarded.
    pub attempts: usize,
}

impl DemoSet {
    pub fn attempt_success_rate(&self) -> f32 {
        self.trajectories.len() as f32 / self.attempts.max(1) as f32
    }

    pub fn mode_fraction(&self, mode: Mode) -> f32 {
        let n = self.modes.iter().filter(|&&m| m == mode).count();
        n as f32 / self.modes.len().max(1) as f32
    }
}

/// Rolls out the noisy expert with a 50/50 gate choice per episode until
/// `count` successful demonstrations are collected (at most `20·count`
/// attempts).
pub fn generate_demos(
    world: &GateWorld,
    count: usize,
    noise_scale: f32,
    gamma: f32,
    seed: u64,
) -> Result<DemoSet, EnvError> {
    let mut out = DemoSet {
        trajectories: Vec::with_capacity(count),
        modes: Vec::with_capacity(count),
        attempts: 0,
    };
    while out.trajectories.len() < count && out.attempts < 20 * count.max(1) {
        let a = out.attempts as u64;
        out.attempts += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10, a));
        let mode = if rng.random::<bool>() {
            Mode::NarrowGate
        } else {
            Mode::WideGate
        };
        let t = rollout_expert(world, derive_seed(seed, 11, a), mode, noise_scale, gamma, &mut rng)?;
        if t.success {
            out.trajectories.push(t);
            out.modes.push(mode);
        }
    }
    Ok(out)
}
