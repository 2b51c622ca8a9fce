//! Flow-matching behaviour cloning over action chunks: the frozen prior
//! `π_pre(s, z)` that finetuning builds on.

mod dataset;
mod policy;
mod pretrain;

pub use dataset::{chunk_at, DemoDataset};
pub use policy::{flow_inputs, flow_loss, flow_loss_value, FlowDraws, FlowPolicy};
pub use pretrain::{pretrain, PretrainCheckpoint, PretrainConfig, PretrainRun};

use crate::envs::{GateWorldConfig, Trajectory};

/// Gate a trajectory (or a commanded chunk) goes through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModeClass {
    NarrowGate,
    WideGate,
    Neither,
}

fn class_of_gate(config: &GateWorldConfig, gate: Option<usize>) -> ModeClass {
    match gate {
        Some(g) if g == config.narrow_gate() => ModeClass::NarrowGate,
        Some(_) => ModeClass::WideGate,
        None => ModeClass::Neither,
    }
}

/// Classifies by the gate interval containing y where the path first passes
/// the wall plane; that y is the last one before the crossing step, since the
/// gate check gates the x-move.
pub fn mode_classify(trajectory: &Trajectory, config: &GateWorldConfig) -> ModeClass {
    let mut states = trajectory
        .steps
        .iter()
        .map(|s| s.obs)
        .chain(std::iter::once(trajectory.final_obs));
    let Some(mut prev) = states.next() else {
        return ModeClass::Neither;
    };
    if prev[0] > config.wall_x {
        return class_of_gate(config, config.gate_containing(prev[1]));
    }
    for p in states {
        if p[0] > config.wall_x {
            return class_of_gate(config, config.gate_containing(prev[1]));
        }
        prev = p;
    }
    ModeClass::Neither
}

/// Classifies a chunk by where its summed y-motion from `s` would land.
pub fn mode_classify_chunk(s: [f32; 2], chunk: &[f32], config: &GateWorldConfig) -> ModeClass {
    let dy: f32 = chunk.chunks_exact(2).map(|a| a[1].clamp(-1.0, 1.0)).sum();
    let y = s[1] + config.dt * dy;
    class_of_gate(config, config.gate_containing(y))
}
