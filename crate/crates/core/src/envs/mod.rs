//! GateWorld: a point mass in a walled arena that must pass through one of
//! two gates to reach a goal disc. Reward is 1 on the step that first enters
//! the goal and 0 otherwise.

mod expert;
mod trajectory;

pub use expert::{generate_demos, inject_action_noise, rollout_expert, scripted_expert, DemoSet, Mode};
pub use trajectory::{discounted_returns, TrajStep, Trajectory};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OBS_DIM: usize = 2;
pub const ACT_DIM: usize = 2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("cannot step a terminal state")]
    Terminal,
    #[error("action contains a non-finite component")]
    NonFiniteAction,
    #[error("empty action chunk")]
    EmptyChunk,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateWorldConfig {
    pub arena_half_width: f32,
    pub wall_x: f32,
    /// Half the wall's thickness; gates are corridors through it.
    pub wall_half_thickness: f32,
    pub gate_centers: [f32; 2],
    pub gate_half_heights: [f32; 2],
    pub goal_center: [f32; 2],
    pub goal_radius: f32,
    pub dt: f32,
    pub horizon: usize,
    /// `[x_min, x_max, y_min, y_max]`
    pub start_region: [f32; 4],
}

impl Default for GateWorldConfig {
    fn default() -> Self {
        Self {
            arena_half_width: 1.0,
            wall_x: 0.0,
            wall_half_thickness: 0.02,
            gate_centers: [0.5, -0.5],
            gate_half_heights: [0.06, 0.16],
            goal_center: [0.6, 0.0],
            goal_radius: 0.08,
            dt: 0.05,
            horizon: 200,
            start_region: [-0.8, -0.6, -0.1, 0.1],
        }
    }
}

impl GateWorldConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        let all = [
            self.arena_half_width,
            self.wall_x,
            self.wall_half_thickness,
            self.gate_centers[0],
            self.gate_centers[1],
            self.gate_half_heights[0],
            self.gate_half_heights[1],
            self.goal_center[0],
            self.goal_center[1],
            self.goal_radius,
            self.dt,
        ];
        if all.iter().chain(&self.start_region).any(|v| !v.is_finite()) {
            return bad("all values must be finite");
        }
        let a = self.arena_half_width;
        if a <= 0.0 {
            return bad("arena half-width must be positive");
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return bad("dt must lie in (0, 0.1]");
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        let (lo, hi) = self.wall_span();
        if self.wall_half_thickness <= 0.0 || lo <= -a || hi >= a {
            return bad("wall must have positive thickness and lie inside the arena");
        }
        for g in 0..2 {
            let (glo, ghi) = self.gate_interval(g);
            if self.gate_half_heights[g] <= 0.0 || glo < -a || ghi > a {
                return bad("gates must have positive height and lie inside the arena");
            }
        }
        let (g0lo, g0hi) = self.gate_interval(0);
        let (g1lo, g1hi) = self.gate_interval(1);
        if g0lo <= g1hi && g1lo <= g0hi {
            return bad("gates overlap");
        }
        if self.goal_radius <= 0.0 || self.goal_center[0] - self.goal_radius <= hi {
            return bad("goal must lie strictly on the far side of the wall");
        }
        if self.goal_center[0] + self.goal_radius > a || self.goal_center[1].abs() + self.goal_radius > a {
            return bad("goal must lie inside the arena");
        }
        let [x0, x1, y0, y1] = self.start_region;
        if x0 > x1 || y0 > y1 || x0 < -a || y0 < -a || y1 > a || x1 >= lo {
            return bad("start region must be a box inside the arena, left of the wall");
        }
        Ok(())
    }

    /// `[lo, hi]` x-extent of the wall slab.
    pub fn wall_span(&self) -> (f32, f32) {
        (self.wall_x - self.wall_half_thickness, self.wall_x + self.wall_half_thickness)
    }

    pub fn gate_interval(&self, gate: usize) -> (f32, f32) {
        let (c, r) = (self.gate_centers[gate], self.gate_half_heights[gate]);
        (c - r, c + r)
    }

    /// Index of the gate with the smaller opening (ties go to gate 0).
    pub fn narrow_gate(&self) -> usize {
        if self.gate_half_heights[1] < self.gate_half_heights[0] {
            1
        } else {
            0
        }
    }

    pub fn gate_for(&self, mode: Mode) -> usize {
        match mode {
            Mode::NarrowGate => self.narrow_gate(),
            Mode::WideGate => 1 - self.narrow_gate(),
        }
    }

    /// Gate whose closed y-interval contains `y`.
    pub fn gate_containing(&self, y: f32) -> Option<usize> {
        (0..2).find(|&g| {
            let (lo, hi) = self.gate_interval(g);
            y >= lo && y <= hi
        })
    }

    pub fn in_goal(&self, p: [f32; 2]) -> bool {
        let dx = p[0] - self.goal_center[0];
        let dy = p[1] - self.goal_center[1];
        dx * dx + dy * dy <= self.goal_radius * self.goal_radius
    }

    /// True when `p` lies in the open interior of a wall segment.
    pub fn inside_wall(&self, p: [f32; 2]) -> bool {
        let (lo, hi) = self.wall_span();
        p[0] > lo && p[0] < hi && self.gate_containing(p[1]).is_none()
    }

    pub fn start_center(&self) -> [f32; 2] {
        let [x0, x1, y0, y1] = self.start_region;
        [0.5 * (x0 + x1), 0.5 * (y0 + y1)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub pos: [f32; 2],
    pub steps: usize,
    pub terminal: bool,
    pub success: bool,
}

impl EnvState {
    pub fn observation(&self) -> [f32; 2] {
        self.pos
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: [f32; 2],
    pub reward: f32,
    pub terminal: bool,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkOutcome {
    pub reward_sum: f32,
    pub obs: [f32; 2],
    pub terminal: bool,
    pub success: bool,
    pub steps: usize,
}

/// A validated GateWorld configuration; all dynamics hang off this.
#[derive(Clone, Debug, PartialEq)]
pub struct GateWorld {
    config: GateWorldConfig,
}

impl GateWorld {
    pub fn new(config: GateWorldConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &GateWorldConfig {
        &self.config
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [x0, x1, y0, y1] = self.config.start_region;
        let x = if x1 > x0 { rng.random_range(x0..x1) } else { x0 };
        let y = if y1 > y0 { rng.random_range(y0..y1) } else { y0 };
        self.state_at([x, y])
    }

    /// A fresh state at an arbitrary position (used for analysis rollouts).
    pub fn state_at(&self, pos: [f32; 2]) -> EnvState {
        EnvState {
            pos,
            steps: 0,
            terminal: false,
            success: false,
        }
    }

    pub fn step(&self, state: &mut EnvState, action: [f32; 2]) -> Result<StepResult, EnvError> {
        if state.terminal {
            return Err(EnvError::Terminal);
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        let c = &self.config;
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        let [mut x, mut y] = state.pos;
        let a = c.arena_half_width;
        let (lo, hi) = c.wall_span();

        let mut nx = x + c.dt * ax;
        if c.gate_containing(y).is_none() {
            if x <= lo && nx > lo {
                nx = lo;
            } else if x >= hi && nx < hi {
                nx = hi;
            }
        }
        x = nx.clamp(-a, a);

        let mut ny = (y + c.dt * ay).clamp(-a, a);
        if x > lo && x < hi {
            // Inside a gate corridor: the corridor walls bound y.
            let g = c.gate_containing(y).expect("corridor positions lie in a gate");
            let (glo, ghi) = c.gate_interval(g);
            ny = ny.clamp(glo, ghi);
        }
        y = ny;

        state.pos = [x, y];
        state.steps += 1;
        let success = c.in_goal(state.pos);
        state.success = success;
        state.terminal = success || state.steps >= c.horizon;
        Ok(StepResult {
            obs: state.pos,
            reward: if success { 1.0 } else { 0.0 },
            terminal: state.terminal,
            success,
        })
    }

    /// Executes up to `chunk.len()` actions open-loop, stopping at terminal.
    pub fn step_chunk(&self, state: &mut EnvState, chunk: &[[f32; 2]]) -> Result<ChunkOutcome, EnvError> {
        if chunk.is_empty() {
            return Err(EnvError::EmptyChunk);
        }
        if state.terminal {
            return Err(EnvError::Terminal);
        }
        let mut out = ChunkOutcome {
            reward_sum: 0.0,
            obs: state.pos,
            terminal: false,
            success: false,
            steps: 0,
        };
        for &a in chunk {
            let r = self.step(state, a)?;
            out.reward_sum += r.reward;
            out.obs = r.obs;
            out.terminal = r.terminal;
            out.success = r.success;
            out.steps += 1;
            if r.terminal {
                break;
            }
        }
        Ok(out)
    }
}

/// Mixes a base seed with a stream index and a counter into a well-spread
/// 64-bit seed (splitmix64 finaliser).
pub fn derive_seed(base: u64, stream: u64, counter: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(counter.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
