//! Binary checkpoint format: magic, version, kind, named little-endian f32
//! blocks and a trailing FNV-1a checksum over everything before it.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::bc_flow::FlowPolicy;
use crate::dice_rl::{CriticEnsemble, ResidualActor};
use crate::grad::{Activation, Layer, Mlp, Tensor};
use crate::Error;

pub const MAGIC: &[u8; 4] = b"DICE";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    FlowPolicy,
    Actor,
    CriticEnsemble,
    Combined,
}

impl CheckpointKind {
    fn code(self) -> u8 {
        match self {
            CheckpointKind::FlowPolicy => 0,
            CheckpointKind::Actor => 1,
            CheckpointKind::CriticEnsemble => 2,
            CheckpointKind::Combined => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CheckpointKind::FlowPolicy),
            1 => Some(CheckpointKind::Actor),
            2 => Some(CheckpointKind::CriticEnsemble),
            3 => Some(CheckpointKind::Combined),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub blocks: Vec<Block>,
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Error> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, Error> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, Error> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind) -> Self {
        Self { kind, blocks: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f32>) {
        self.blocks.push(Block {
            name: name.into(),
            shape: shape.to_vec(),
            values,
        });
    }

    pub fn block(&self, name: &str) -> Result<&Block, Error> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| bad(format!("missing block {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &b.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        if bytes.len() < 4 + 4 + 1 + 4 + 8 {
            return Err(bad("checkpoint too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if checksum(body) != stored {
            return Err(bad("checkpoint checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let kind = CheckpointKind::from_code(r.take(1)?[0]).ok_or_else(|| bad("unknown checkpoint kind"))?;
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| bad("block name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad("block size overflow"))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| bad("block size overflow"))?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            blocks.push(Block { name, shape, values });
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after last block"));
        }
        Ok(Self { kind, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn expect_kind(&self, kind: CheckpointKind) -> Result<(), Error> {
        if self.kind != kind {
            return Err(bad(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    fn meta(&self, name: &str, n: usize) -> Result<Vec<usize>, Error> {
        let b = self.block(name)?;
        if b.values.len() != n {
            return Err(bad(format!("block {name:?} should hold {n} values")));
        }
        Ok(b.values.iter().map(|&v| v as usize).collect())
    }
}

fn push_mlp(ck: &mut Checkpoint, prefix: &str, net: &Mlp) {
    let codes = net.layers().iter().map(|l| l.activation.code() as f32).collect::<Vec<_>>();
    ck.push(format!("{prefix}activations"), &[codes.len()], codes);
    for (i, l) in net.layers().iter().enumerate() {
        ck.push(format!("{prefix}layer.{i}.weight"), l.weight.shape(), l.weight.data().to_vec());
        ck.push(format!("{prefix}layer.{i}.bias"), l.bias.shape(), l.bias.data().to_vec());
    }
}

fn read_mlp(ck: &Checkpoint, prefix: &str) -> Result<Mlp, Error> {
    let codes = &ck.block(&format!("{prefix}activations"))?.values;
    let mut layers = Vec::with_capacity(codes.len());
    for (i, &c) in codes.iter().enumerate() {
        let activation = Activation::from_code(c as u8).ok_or_else(|| bad(format!("unknown activation code {c}")))?;
        let w = ck.block(&format!("{prefix}layer.{i}.weight"))?;
        let b = ck.block(&format!("{prefix}layer.{i}.bias"))?;
        layers.push(Layer {
            weight: Tensor::new(w.shape.clone(), w.values.clone())?,
            bias: Tensor::new(b.shape.clone(), b.values.clone())?,
            activation,
        });
    }
    Ok(Mlp::new(layers)?)
}

fn push_flow(ck: &mut Checkpoint, prefix: &str, p: &FlowPolicy) {
    let meta = [p.flow_steps(), p.horizon(), p.act_dim(), p.obs_dim()];
    ck.push(format!("{prefix}meta"), &[4], meta.iter().map(|&v| v as f32).collect());
    push_mlp(ck, prefix, p.net());
}

fn read_flow(ck: &Checkpoint, prefix: &str) -> Result<FlowPolicy, Error> {
    let m = ck.meta(&format!("{prefix}meta"), 4)?;
    FlowPolicy::new(read_mlp(ck, prefix)?, m[0], m[1], m[2], m[3])
}

fn push_actor(ck: &mut Checkpoint, prefix: &str, a: &ResidualActor) {
    let meta = [a.obs_dim() as f32, a.chunk_dim() as f32];
    ck.push(format!("{prefix}meta"), &[2], meta.to_vec());
    push_mlp(ck, prefix, a.net());
}

fn read_actor(ck: &Checkpoint, prefix: &str) -> Result<ResidualActor, Error> {
    let m = ck.meta(&format!("{prefix}meta"), 2)?;
    ResidualActor::from_net(read_mlp(ck, prefix)?, m[0], m[1])
}

fn push_critics(ck: &mut Checkpoint, prefix: &str, c: &CriticEnsemble) {
    ck.push(format!("{prefix}meta"), &[1], vec![c.len() as f32]);
    for (i, (o, t)) in c.online.iter().zip(&c.target).enumerate() {
        push_mlp(ck, &format!("{prefix}online.{i}."), o);
        push_mlp(ck, &format!("{prefix}target.{i}."), t);
    }
}

fn read_critics(ck: &Checkpoint, prefix: &str) -> Result<CriticEnsemble, Error> {
    let n = ck.meta(&format!("{prefix}meta"), 1)?[0];
    let mut online = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for i in 0..n {
        online.push(read_mlp(ck, &format!("{prefix}online.{i}."))?);
        target.push(read_mlp(ck, &format!("{prefix}target.{i}."))?);
    }
    CriticEnsemble::from_parts(online, target)
}

pub fn flow_checkpoint(p: &FlowPolicy) -> Checkpoint {
    let mut ck = Checkpoint::new(CheckpointKind::FlowPolicy);
    push_flow(&mut ck, "", p);
    ck
}

pub fn flow_from_checkpoint(ck: &Checkpoint) -> Result<FlowPolicy, Error> {
    ck.expect_kind(CheckpointKind::FlowPolicy)?;
    read_flow(ck, "")
}

pub fn actor_checkpoint(a: &ResidualActor) -> Checkpoint {
    let mut ck = Checkpoint::new(CheckpointKind::Actor);
    push_actor(&mut ck, "", a);
    ck
}

pub fn actor_from_checkpoint(ck: &Checkpoint) -> Result<ResidualActor, Error> {
    ck.expect_kind(CheckpointKind::Actor)?;
    read_actor(ck, "")
}

pub fn critic_checkpoint(c: &CriticEnsemble) -> Checkpoint {
    let mut ck = Checkpoint::new(CheckpointKind::CriticEnsemble);
    push_critics(&mut ck, "", c);
    ck
}

pub fn critic_from_checkpoint(ck: &Checkpoint) -> Result<CriticEnsemble, Error> {
    ck.expect_kind(CheckpointKind::CriticEnsemble)?;
    read_critics(ck, "")
}

/// Frozen prior, residual actor and critic ensemble of a finetuning run.
#[derive(Clone, Debug, PartialEq)]
pub struct Finetuned {
    pub prior: FlowPolicy,
    pub actor: ResidualActor,
    pub critics: CriticEnsemble,
}

pub fn combined_checkpoint(f: &Finetuned) -> Checkpoint {
    let mut ck = Checkpoint::new(CheckpointKind::Combined);
    push_flow(&mut ck, "prior.", &f.prior);
    push_actor(&mut ck, "actor.", &f.actor);
    push_critics(&mut ck, "critic.", &f.critics);
    ck
}

pub fn combined_from_checkpoint(ck: &Checkpoint) -> Result<Finetuned, Error> {
    ck.expect_kind(CheckpointKind::Combined)?;
    Ok(Finetuned {
        prior: read_flow(ck, "prior.")?,
        actor: read_actor(ck, "actor.")?,
        critics: read_critics(ck, "critic.")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new(CheckpointKind::Actor);
        ck.push("a", &[2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]);
        ck.push("empty", &[0], vec![]);
        ck
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.blocks[0].values[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn corruption_and_version_are_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[20] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());

        let mut bytes = sample().to_bytes();
        bytes[4] = 2;
        let n = bytes.len() - 8;
        let sum = checksum(&bytes[..n]);
        bytes[n..].copy_from_slice(&sum.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
