use std::collections::VecDeque;

use super::AlgorithmVariant;
use crate::replay::Source;

/// Chooses the behavioural agent of each new episode and the order finished
/// episodes enter replay, so both agents contribute equal data.
///
/// The agent with fewer transitions (stored, waiting or in flight, counting
/// an unfinished episode at full length) acts next; ties fall back to episode
/// parity, so equal-length episodes alternate exactly. A finished episode
/// that would push the stored gap past one episode length waits until the
/// other agent catches up. Variants without a state agent admit everything.
#[derive(Clone, Debug)]
pub struct Scheduler<T> {
    variant: AlgorithmVariant,
    max_len: u64,
    stored: [u64; 2],
    waiting: VecDeque<(Source, u64, T)>,
}

fn slot(source: Source) -> usize {
    match source {
        Source::StateAgent => 0,
        Source::ObsAgent => 1,
    }
}

impl<T> Scheduler<T> {
    pub fn new(variant: AlgorithmVariant, max_len: usize) -> Self {
        Self {
            variant,
            max_len: max_len as u64,
            stored: [0, 0],
            waiting: VecDeque::new(),
        }
    }

    /// Stored `(state agent, obs agent)` transition counts.
    pub fn stored(&self) -> (u64, u64) {
        (self.stored[0], self.stored[1])
    }

    pub fn waiting(&self) -> usize {
        self.waiting.len()
    }

    /// Agent for episode number `episode`, with `in_flight` episodes launched
    /// but not yet handed to [`Scheduler::admit`].
    pub fn next_source(&self, episode: u64, in_flight: &[Source]) -> Source {
        if !self.variant.has_state_agent() {
            return Source::ObsAgent;
        }
        let mut projected = self.stored;
        for (s, len, _) in &self.waiting {
            projected[slot(*s)] += len;
        }
        for s in in_flight {
            projected[slot(*s)] += self.max_len;
        }
        match projected[0].cmp(&projected[1]) {
            std::cmp::Ordering::Less => Source::StateAgent,
            std::cmp::Ordering::Greater => Source::ObsAgent,
            std::cmp::Ordering::Equal => self.variant.behaviour_source(episode),
        }
    }

    /// Queues finished episodes (in launch order) and returns those that can
    /// be stored now, in storage order.
    pub fn admit(&mut self, finished: impl IntoIterator<Item = (Source, u64, T)>) -> Vec<(Source, T)> {
        self.waiting.extend(finished);
        let mut out = Vec::new();
        while let Some(i) = self.waiting.iter().position(|(s, len, _)| self.fits(*s, *len)) {
            let (s, len, item) = self.waiting.remove(i).expect("index in range");
            self.stored[slot(s)] += len;
            out.push((s, item));
        }
        out
    }

    fn fits(&self, source: Source, len: u64) -> bool {
        if !self.variant.has_state_agent() {
            return true;
        }
        let mut after = self.stored;
        after[slot(source)] += len;
        after[0].abs_diff(after[1]) <= self.max_len
    }
}
