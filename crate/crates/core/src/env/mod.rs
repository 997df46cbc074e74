//! NavWorld: a circular agent must reach a triangular target among polygonal
//! distractors. The privileged state is the flat vector of object positions;
//! observations are rendered RGB frames with per-object segmentation maps.

mod config;
mod render;
mod scene;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{make_domain, DomainClass, DomainConfig, Palette, DOMAIN_SET_SIZE};
pub(crate) use config::splitmix64;
pub use render::{pixel_centre, render, Observation, SegmentationMaps};
pub use scene::{hsv_to_rgb, rgb_to_hue, Role, Scene, SceneObject, Shape};

use crate::error::Result;

/// Privileged simulator state: `[x, y]` of every object, agent first, target
/// second, distractors after.
pub type EnvState = Vec<f64>;

/// State, frame and maps at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub state: EnvState,
    pub observation: Observation,
    pub segmentation: SegmentationMaps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub frame: Frame,
    pub reward: f64,
    pub done: bool,
}

/// One NavWorld episode.
#[derive(Clone, Debug)]
pub struct NavWorld {
    config: DomainConfig,
    scene: Scene,
    steps: usize,
    done: bool,
}

impl NavWorld {
    /// Samples a fresh randomised scene. The scene is a pure function of
    /// `(config, seed)`.
    pub fn reset(config: &DomainConfig, seed: u64) -> Result<(NavWorld, Frame)> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ splitmix64(seed)));
        let scene = Scene::sample(config, &mut rng)?;
        let env = NavWorld {
            config: config.clone(),
            scene,
            steps: 0,
            done: false,
        };
        let frame = env.frame();
        Ok((env, frame))
    }

    /// Episode over an explicit scene, for tests and visualisation.
    pub fn from_scene(config: &DomainConfig, scene: Scene) -> NavWorld {
        NavWorld {
            config: config.clone(),
            scene,
            steps: 0,
            done: false,
        }
    }

    pub fn config(&self) -> &DomainConfig {
        &self.config
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn state(&self) -> EnvState {
        self.scene.state()
    }

    pub fn frame(&self) -> Frame {
        let (observation, segmentation) = render(&self.scene, self.config.resolution);
        Frame {
            state: self.state(),
            observation,
            segmentation,
        }
    }

    pub fn distance_to_target(&self) -> f64 {
        let a = self.scene.objects[0].position;
        let t = self.scene.objects[1].position;
        ((a[0] - t[0]).powi(2) + (a[1] - t[1]).powi(2)).sqrt()
    }

    /// Moves the agent by the clipped velocity `action`, clamped to the arena.
    /// Reward is +1 (and the episode ends) when the agent ends within the goal
    /// radius of the target; the episode also ends after `max_steps` steps.
    pub fn step(&mut self, action: [f64; 2]) -> StepResult {
        let limit = self.config.max_speed;
        let agent = &mut self.scene.objects[0];
        for (p, a) in agent.position.iter_mut().zip(action) {
            let a = if a.is_finite() { a.clamp(-limit, limit) } else { 0.0 };
            *p = (*p + a).clamp(-1.0, 1.0);
        }
        self.steps += 1;
        let reached = self.distance_to_target() < self.config.goal_radius;
        let reward = if reached { 1.0 } else { 0.0 };
        self.done = reached || self.steps >= self.config.max_steps;
        StepResult {
            frame: self.frame(),
            reward,
            done: self.done,
        }
    }
}

/// `M[i][j] = 1` iff state dimension `j` is a coordinate of object `i`.
pub fn adjacency_matrix(objects: usize) -> Vec<Vec<f64>> {
    (0..objects)
        .map(|i| {
            (0..2 * objects)
                .map(|j| if j / 2 == i { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Writes `step,state...,action...,reward` rows.
pub fn write_trajectory_csv<W: Write>(
    w: W,
    steps: &[(EnvState, [f64; 2], f64)],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if let Some((s, _, _)) = steps.first() {
        let mut header = vec!["step".to_string()];
        header.extend((0..s.len()).map(|j| format!("s{j}")));
        header.extend(["vx".into(), "vy".into(), "reward".into()]);
        out.write_record(&header).map_err(csv_err)?;
    }
    for (t, (s, a, r)) in steps.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(s.iter().map(|v| v.to_string()));
        row.extend([a[0].to_string(), a[1].to_string(), r.to_string()]);
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e.to_string()))
}
