use crate::dice_rl::ChunkTransition;
use crate::envs::Trajectory;
use crate::grad::Tensor;
use crate::Error;

/// Demonstrations plus the two views derived from them: stride-1
/// `(state, chunk)` pairs for behaviour cloning and stride-`h` chunk
/// transitions with return-to-go anchors for the critic.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    trajectories: Vec<Trajectory>,
    horizon: usize,
    bc_obs: Tensor,
    bc_chunks: Tensor,
}

/// Actions `i .. i+h` of a trajectory, flattened; windows running past the
/// end repeat the final action.
pub fn chunk_at(traj: &Trajectory, i: usize, h: usize) -> Vec<f32> {
    let last = traj.steps.len() - 1;
    (i..i + h)
        .flat_map(|j| traj.steps[j.min(last)].action)
        .collect()
}

impl DemoDataset {
    pub fn new(trajectories: Vec<Trajectory>, horizon: usize) -> Result<Self, Error> {
        if horizon < 1 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let trajectories: Vec<Trajectory> = trajectories.into_iter().filter(|t| !t.is_empty()).collect();
        if trajectories.is_empty() {
            return Err(Error::Empty("demo dataset"));
        }
        let mut obs = Vec::new();
        let mut chunks = Vec::new();
        for t in &trajectories {
            for i in 0..t.len() {
                obs.extend_from_slice(&t.steps[i].obs);
                chunks.extend(chunk_at(t, i, horizon));
            }
        }
        let n = obs.len() / 2;
        Ok(Self {
            bc_obs: Tensor::matrix(n, 2, obs)?,
            bc_chunks: Tensor::matrix(n, 2 * horizon, chunks)?,
            trajectories,
            horizon,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_pairs(&self) -> usize {
        self.bc_obs.rows()
    }

    /// `([n, d_s], [n, h·d])` behaviour-cloning pairs.
    pub fn bc_pairs(&self) -> (&Tensor, &Tensor) {
        (&self.bc_obs, &self.bc_chunks)
    }

    /// Non-overlapping chunk transitions of one demonstration, in order.
    pub fn episode_transitions(&self, idx: usize) -> Vec<ChunkTransition> {
        let t = &self.trajectories[idx];
        let h = self.horizon;
        let len = t.len();
        (0..len)
            .step_by(h)
            .map(|i| {
                let used = h.min(len - i);
                let end = i + used;
                ChunkTransition {
                    s: t.steps[i].obs.to_vec(),
                    chunk: chunk_at(t, i, h),
                    reward_sum: t.steps[i..end].iter().map(|s| s.reward).sum(),
                    next_s: t.obs(end).to_vec(),
                    terminal: end == len && t.success,
                    steps_consumed: used,
                    mc_return: t.returns[i],
                }
            })
            .collect()
    }

    pub fn transitions(&self) -> Vec<Vec<ChunkTransition>> {
        (0..self.trajectories.len()).map(|i| self.episode_transitions(i)).collect()
    }

    /// Every `stride`-th demo state with its return-to-go.
    pub fn anchors(&self, stride: usize) -> Vec<([f32; 2], f32)> {
        let stride = stride.max(1);
        let mut out = Vec::new();
        let mut k = 0usize;
        for t in &self.trajectories {
            for (i, st) in t.steps.iter().enumerate() {
                if k % stride == 0 {
                    out.push((st.obs, t.returns[i]));
                }
                k += 1;
            }
        }
        out
    }
}
