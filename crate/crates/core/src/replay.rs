//! Shared replay buffer holding full privileged transitions from both
//! behavioural policies.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::Rng;

use crate::env::{Frame, Observation, SegmentationMaps};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"APRLRPLY";
const VERSION: u8 = 1;

/// Default capacity for NavWorld.
pub const REPLAY_CAPACITY: usize = 10_000;

/// Which behavioural policy produced a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    StateAgent,
    ObsAgent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub obs: Observation,
    pub segmentation: SegmentationMaps,
    pub action: [f64; 2],
    pub reward: f64,
    pub done: bool,
    pub next_state: Vec<f64>,
    pub next_obs: Observation,
    pub source: Source,
}

impl Transition {
    pub fn from_frames(
        frame: &Frame,
        action: [f64; 2],
        reward: f64,
        done: bool,
        next: &Frame,
        source: Source,
    ) -> Self {
        Self {
            state: frame.state.clone(),
            obs: frame.observation.clone(),
            segmentation: frame.segmentation.clone(),
            action,
            reward,
            done,
            next_state: next.state.clone(),
            next_obs: next.observation.clone(),
            source,
        }
    }
}

/// Shapes every stored transition must have.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransitionShape {
    pub state_dim: usize,
    pub resolution: usize,
    pub objects: usize,
}

impl TransitionShape {
    fn check(&self, t: &Transition) -> Result<()> {
        let fail = |what: &str| Err(Error::Contract(format!("malformed transition: {what}")));
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
            return fail(&format!(
                "state length {}/{} (expected {})",
                t.state.len(),
                t.next_state.len(),
                self.state_dim
            ));
        }
        if t.obs.size() != self.resolution || t.next_obs.size() != self.resolution {
            return fail("observation resolution");
        }
        if t.segmentation.size() != self.resolution || t.segmentation.count() != self.objects {
            return fail("segmentation maps");
        }
        if !t.reward.is_finite() {
            return fail("non-finite reward");
        }
        if t.action.iter().chain(&t.state).chain(&t.next_state).any(|v| !v.is_finite()) {
            return fail("non-finite state or action");
        }
        Ok(())
    }
}

/// FIFO ring of transitions with lifetime per-source counters.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    shape: TransitionShape,
    capacity: usize,
    items: VecDeque<Arc<Transition>>,
    appended: u64,
    state_count: u64,
    obs_count: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, shape: TransitionShape) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            shape,
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            appended: 0,
            state_count: 0,
            obs_count: 0,
        })
    }

    pub fn shape(&self) -> TransitionShape {
        self.shape
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_appended(&self) -> u64 {
        self.appended
    }

    /// Whether a minibatch of `batch` can be drawn without repeating the
    /// contents many times over.
    pub fn is_ready(&self, batch: usize) -> bool {
        self.len() >= batch.max(1)
    }

    /// Appends `t`, evicting the oldest transition when full.
    pub fn append(&mut self, t: Transition) -> Result<()> {
        self.shape.check(&t)?;
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        match t.source {
            Source::StateAgent => self.state_count += 1,
            Source::ObsAgent => self.obs_count += 1,
        }
        self.appended += 1;
        self.items.push_back(Arc::new(t));
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter().map(|t| t.as_ref())
    }

    /// `batch` transitions drawn uniformly with replacement, or `None` when empty.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Option<Vec<Arc<Transition>>> {
        if self.items.is_empty() {
            return None;
        }
        Some(
            (0..batch)
                .map(|_| Arc::clone(&self.items[rng.random_range(0..self.items.len())]))
                .collect(),
        )
    }

    /// Lifetime append counts `(state agent, obs agent)`.
    pub fn source_balance(&self) -> (u64, u64) {
        (self.state_count, self.obs_count)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        for v in [
            self.capacity as u64,
            self.shape.state_dim as u64,
            self.shape.resolution as u64,
            self.shape.objects as u64,
            self.appended,
            self.state_count,
            self.obs_count,
            self.items.len() as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for t in &self.items {
            w.write_all(&[t.source as u8, t.done as u8])?;
            for v in t.state.iter().chain(&t.next_state).chain(&t.action).chain([&t.reward]) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(t.obs.bytes())?;
            w.write_all(t.next_obs.bytes())?;
            for word in t.segmentation.words() {
                w.write_all(&word.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a replay dump".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != VERSION {
            return Err(Error::Format(format!("unsupported replay dump version {}", version[0])));
        }
        let mut header = [0u64; 8];
        for h in &mut header {
            *h = read_u64(&mut r)?;
        }
        let [capacity, state_dim, resolution, objects, appended, state_count, obs_count, n] = header;
        let shape = TransitionShape {
            state_dim: state_dim as usize,
            resolution: resolution as usize,
            objects: objects as usize,
        };
        let mut buf = Self::new(capacity as usize, shape)?;
        if n > capacity {
            return Err(Error::Format("replay dump holds more records than its capacity".into()));
        }
        let image_bytes = 3 * shape.resolution * shape.resolution;
        let words = SegmentationMaps::empty(shape.resolution, shape.objects).words().len();
        for i in 0..n {
            let mut flags = [0u8; 2];
            r.read_exact(&mut flags)?;
            let source = match flags[0] {
                0 => Source::StateAgent,
                1 => Source::ObsAgent,
                s => return Err(Error::Format(format!("record {i}: bad source tag {s}"))),
            };
            let mut floats = |count: usize| -> Result<Vec<f64>> {
                (0..count).map(|_| read_u64(&mut r).map(f64::from_bits)).collect()
            };
            let state = floats(shape.state_dim)?;
            let next_state = floats(shape.state_dim)?;
            let tail = floats(3)?;
            let mut obs = vec![0u8; image_bytes];
            r.read_exact(&mut obs)?;
            let mut next_obs = vec![0u8; image_bytes];
            r.read_exact(&mut next_obs)?;
            let seg = (0..words).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
            let t = Transition {
                state,
                obs: Observation::new(shape.resolution, obs)?,
                segmentation: SegmentationMaps::from_words(shape.resolution, shape.objects, seg)?,
                action: [tail[0], tail[1]],
                reward: tail[2],
                done: flags[1] != 0,
                next_state,
                next_obs: Observation::new(shape.resolution, next_obs)?,
                source,
            };
            shape.check(&t)?;
            buf.items.push_back(Arc::new(t));
        }
        buf.appended = appended;
        buf.state_count = state_count;
        buf.obs_count = obs_count;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Replay buffer shared between rollout workers and the learner. Appends are
/// atomic per transition; a sample sees one consistent snapshot.
#[derive(Clone, Debug)]
pub struct SharedReplay(Arc<Mutex<ReplayBuffer>>);

impl SharedReplay {
    pub fn new(buffer: ReplayBuffer) -> Self {
        Self(Arc::new(Mutex::new(buffer)))
    }

    pub fn append(&self, t: Transition) -> Result<()> {
        self.0.lock().append(t)
    }

    /// Appends a whole episode without interleaving with other appenders.
    pub fn append_all(&self, ts: impl IntoIterator<Item = Transition>) -> Result<()> {
        let mut guard = self.0.lock();
        for t in ts {
            guard.append(t)?;
        }
        Ok(())
    }

    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Option<Vec<Arc<Transition>>> {
        self.0.lock().sample_minibatch(batch, rng)
    }

    pub fn len(&self) -> usize {
        self.0.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.lock().is_empty()
    }

    pub fn source_balance(&self) -> (u64, u64) {
        self.0.lock().source_balance()
    }

    pub fn with<T>(&self, f: impl FnOnce(&ReplayBuffer) -> T) -> T {
        f(&self.0.lock())
    }
}
