use rand::Rng;

use crate::bc_flow::FlowPolicy;
use crate::grad::Tensor;
use crate::rollout::draw_latents;
use crate::Error;

/// One chunk-level transition: `h` (or fewer, on termination) environment
/// steps executed open-loop from `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkTransition {
    pub s: Vec<f32>,
    /// Flattened `h×d` chunk as the critic sees it (unclipped).
    pub chunk: Vec<f32>,
    pub reward_sum: f32,
    pub next_s: Vec<f32>,
    pub terminal: bool,
    pub steps_consumed: usize,
    /// Discounted return-to-go of the episode from `s`.
    pub mc_return: f32,
}

/// K latents for a state together with the prior's samples for them.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBank {
    /// `K·h·d`, candidates contiguous.
    pub z: Vec<f32>,
    /// `K·h·d`, `π_pre(s, z_k)` in the same order.
    pub prior: Vec<f32>,
}

impl LatentBank {
    pub fn draw<R: Rng + ?Sized>(prior: &FlowPolicy, s: &[f32], k: usize, rng: &mut R) -> Result<Self, Error> {
        let hd = prior.chunk_dim();
        let z = draw_latents(rng, k * hd);
        Self::from_latents(prior, s, z)
    }

    pub fn from_latents(prior: &FlowPolicy, s: &[f32], z: Vec<f32>) -> Result<Self, Error> {
        let hd = prior.chunk_dim();
        if z.is_empty() || z.len() % hd != 0 {
            return Err(Error::Shape("latent bank must hold whole chunks".into()));
        }
        let k = z.len() / hd;
        let st = Tensor::matrix(1, s.len(), s.to_vec())?.repeat_rows(k);
        let zt = Tensor::matrix(k, hd, z)?;
        let prior_chunks = prior.sample(&st, &zt)?.into_data();
        Ok(Self {
            z: zt.into_data(),
            prior: prior_chunks,
        })
    }

    pub fn candidates(&self, chunk_dim: usize) -> usize {
        self.z.len() / chunk_dim.max(1)
    }
}

/// A stored transition with its latent bank, the id of the next transition
/// of the same episode and the bank at `next_s` (absent when terminal).
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayRecord {
    pub transition: ChunkTransition,
    pub bank: LatentBank,
    pub successor: Option<u64>,
    pub next_bank: Option<LatentBank>,
}

/// Fixed-capacity ring of whole-episode records. Records are addressed by
/// insertion id; an id stays valid until the ring overwrites it.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    records: Vec<ReplayRecord>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            records: Vec::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Slot `i` in `0..len`.
    pub fn slot(&self, i: usize) -> &ReplayRecord {
        &self.records[i]
    }

    /// Record with insertion id `id`, if still resident.
    pub fn get(&self, id: u64) -> Option<&ReplayRecord> {
        let oldest = self.inserted - self.records.len() as u64;
        if id < oldest || id >= self.inserted {
            return None;
        }
        Some(&self.records[(id % self.capacity as u64) as usize])
    }

    fn push(&mut self, record: ReplayRecord) {
        let slot = (self.inserted % self.capacity as u64) as usize;
        if slot < self.records.len() {
            self.records[slot] = record;
        } else {
            self.records.push(record);
        }
        self.inserted += 1;
    }

    /// Appends a finished episode. Each entry pairs a transition with the
    /// bank at its `s`; `tail_bank` is the bank at the last `next_s` and is
    /// required when the episode was cut off without terminating.
    pub fn push_episode(
        &mut self,
        episode: Vec<(ChunkTransition, LatentBank)>,
        tail_bank: Option<LatentBank>,
    ) -> Result<(), Error> {
        let n = episode.len();
        if n == 0 {
            return Ok(());
        }
        if n > self.capacity {
            return Err(Error::InvalidArgument("episode longer than replay capacity".into()));
        }
        for (i, (t, _)) in episode.iter().enumerate() {
            if t.terminal && i + 1 != n {
                return Err(Error::InvalidArgument("terminal transition before episode end".into()));
            }
        }
        let last_terminal = episode[n - 1].0.terminal;
        if !last_terminal && tail_bank.is_none() {
            return Err(Error::InvalidArgument("truncated episode needs a bank at its final state".into()));
        }
        let next_banks: Vec<Option<LatentBank>> = (0..n)
            .map(|i| {
                if i + 1 < n {
                    Some(episode[i + 1].1.clone())
                } else if last_terminal {
                    None
                } else {
                    tail_bank.clone()
                }
            })
            .collect();
        let first = self.inserted;
        for (i, ((transition, bank), next_bank)) in episode.into_iter().zip(next_banks).enumerate() {
            let successor = (i + 1 < n).then_some(first + i as u64 + 1);
            self.push(ReplayRecord {
                transition,
                bank,
                successor,
                next_bank,
            });
        }
        Ok(())
    }
}

/// Which buffer a batch slot came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Demo,
    Online,
}

/// Draws each slot from `demo` with probability `ratio` and from `online`
/// otherwise, falling back to the other buffer when the chosen one is empty.
/// Returns `(source, slot index)` pairs.
pub fn sample_mixed_batch<R: Rng + ?Sized>(
    demo: &ReplayBuffer,
    online: &ReplayBuffer,
    ratio: f32,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<(Source, usize)>, Error> {
    if demo.is_empty() && online.is_empty() {
        return Err(Error::Empty("both replay buffers"));
    }
    Ok((0..batch_size)
        .map(|_| {
            let want_demo = rng.random::<f32>() < ratio;
            let src = match (want_demo, demo.is_empty(), online.is_empty()) {
                (true, false, _) | (false, _, true) => Source::Demo,
                _ => Source::Online,
            };
            let buf = if src == Source::Demo { demo } else { online };
            (src, rng.random_range(0..buf.len()))
        })
        .collect())
}
