use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{BehaviourPolicy, RunningNormaliser};
use crate::env::{DomainConfig, NavWorld};
use crate::error::Result;
use crate::replay::{Source, Transition};

/// One finished episode.
#[derive(Clone, Debug)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    /// Undiscounted return.
    pub ret: f64,
    pub success: bool,
    pub source: Source,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Rolls out `policy` on the scene `(domain, env_seed)` until the episode ends.
pub fn run_episode(
    domain: &DomainConfig,
    env_seed: u64,
    policy: &BehaviourPolicy,
    normaliser: &RunningNormaliser,
    source: Source,
    action_seed: u64,
) -> Result<Episode> {
    let (mut env, mut frame) = NavWorld::reset(domain, env_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
    let mut transitions = Vec::with_capacity(domain.max_steps);
    let mut ret = 0.0;
    let mut success = false;
    loop {
        let action = policy.act(&frame, normaliser, &mut rng)?;
        let step = env.step(action);
        ret += step.reward;
        success |= step.reward > 0.0;
        transitions.push(Transition::from_frames(
            &frame,
            action,
            step.reward,
            step.done,
            &step.frame,
            source,
        ));
        frame = step.frame;
        if step.done {
            break;
        }
    }
    Ok(Episode {
        transitions,
        ret,
        success,
        source,
    })
}

/// Applies `f` to every job on up to `workers` threads; results keep job order.
pub fn parallel_map<T, R, F>(jobs: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(&f).collect();
    }
    let chunk = jobs.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("rollout worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episodes_end_within_the_step_limit() {
        let cfg = DomainConfig::training(12);
        let policy = BehaviourPolicy::Random { max_speed: cfg.max_speed };
        let norm = RunningNormaliser::new(cfg.state_dim());
        for seed in 0..10 {
            let ep = run_episode(&cfg, seed, &policy, &norm, Source::ObsAgent, seed).unwrap();
            assert!(ep.len() <= cfg.max_steps && !ep.is_empty());
            assert!(ep.transitions.last().unwrap().done);
            assert!(ep.transitions[..ep.len() - 1].iter().all(|t| !t.done));
            assert_eq!(ep.ret > 0.0, ep.success);
            for w in ep.transitions.windows(2) {
                assert_eq!(w[0].next_state, w[1].state);
            }
        }
    }

    #[test]
    fn parallel_map_keeps_order() {
        let jobs: Vec<u64> = (0..23).collect();
        for workers in [1, 2, 4, 7] {
            let out = parallel_map(&jobs, workers, |j| j * j);
            assert_eq!(out, jobs.iter().map(|j| j * j).collect::<Vec<_>>());
        }
    }
}
