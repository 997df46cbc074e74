use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{DomainConfig, Palette};
use crate::error::{Error, Result};

const PLACEMENT_ATTEMPTS: usize = 500;
const SCENE_ATTEMPTS: usize = 100;
const PLACEMENT_MARGIN: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Agent,
    Target,
    Distractor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    /// Regular polygon; the target is a triangle, distractors have 4+ sides.
    Polygon { sides: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub id: usize,
    pub role: Role,
    pub shape: Shape,
    pub position: [f64; 2],
    pub orientation: f64,
    pub colour: [f64; 3],
    /// Hue (degrees) the colour was generated from.
    pub hue: f64,
    pub palette: Palette,
    /// Circle radius or polygon circumradius, world units.
    pub size: f64,
}

/// Objects ordered agent, target, distractors, plus the background colour.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub background: [f64; 3],
}

impl Scene {
    /// Random scene for `config`: non-overlapping positions, random
    /// orientations and colours.
    pub fn sample(config: &DomainConfig, rng: &mut ChaCha8Rng) -> Result<Scene> {
        config.validate()?;
        for _ in 0..SCENE_ATTEMPTS {
            if let Some(scene) = Self::try_sample(config, rng) {
                return Ok(scene);
            }
        }
        Err(Error::Config(format!(
            "could not place {} objects without overlap after {SCENE_ATTEMPTS} attempts",
            config.object_count()
        )))
    }

    fn try_sample(config: &DomainConfig, rng: &mut ChaCha8Rng) -> Option<Scene> {
        let background = {
            let hue = rng.random_range(0.0..360.0);
            let sat = rng.random_range(0.0..0.5);
            let val = rng.random_range(config.background_value_min..=config.background_value_max);
            quantise(hsv_to_rgb(hue, sat, val))
        };
        let mut objects: Vec<SceneObject> = Vec::with_capacity(config.object_count());
        for id in 0..config.object_count() {
            let (role, shape, size, palette) = match id {
                0 => (Role::Agent, Shape::Circle, config.agent_radius, Palette::Training),
                1 => (
                    Role::Target,
                    Shape::Polygon { sides: 3 },
                    rng.random_range(config.size_min..=config.size_max),
                    Palette::Training,
                ),
                _ => {
                    let held_out = id >= 2 + config.distractors;
                    (
                        Role::Distractor,
                        Shape::Polygon {
                            sides: rng.random_range(4..=6),
                        },
                        rng.random_range(config.size_min..=config.size_max),
                        if held_out {
                            Palette::HeldOut
                        } else {
                            Palette::Training
                        },
                    )
                }
            };
            let (lo, hi) = palette.hue_range();
            let hue = rng.random_range(lo..=hi);
            let colour = quantise(hsv_to_rgb(
                hue,
                rng.random_range(0.6..=1.0),
                rng.random_range(0.6..=1.0),
            ));
            let orientation = match shape {
                Shape::Circle => 0.0,
                Shape::Polygon { .. } => rng.random_range(0.0..std::f64::consts::TAU),
            };
            let position = place(&objects, size, rng)?;
            objects.push(SceneObject {
                id,
                role,
                shape,
                position,
                orientation,
                colour,
                hue,
                palette,
                size,
            });
        }
        Some(Scene {
            objects,
            background,
        })
    }

    /// Indices in back-to-front paint order: distractors, target, agent.
    pub fn paint_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (2..self.objects.len()).collect();
        if self.objects.len() > 1 {
            order.push(1);
        }
        if !self.objects.is_empty() {
            order.push(0);
        }
        order
    }

    /// Flat `[x0, y0, x1, y1, ...]` position vector.
    pub fn state(&self) -> Vec<f64> {
        self.objects.iter().flat_map(|o| o.position).collect()
    }
}

fn place(existing: &[SceneObject], size: f64, rng: &mut ChaCha8Rng) -> Option<[f64; 2]> {
    let bound = 1.0 - size;
    (0..PLACEMENT_ATTEMPTS).find_map(|_| {
        let p = [rng.random_range(-bound..=bound), rng.random_range(-bound..=bound)];
        let clear = existing.iter().all(|o| {
            let d = ((p[0] - o.position[0]).powi(2) + (p[1] - o.position[1]).powi(2)).sqrt();
            d >= size + o.size + PLACEMENT_MARGIN
        });
        clear.then_some(p)
    })
}

fn quantise(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = val * sat;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

/// Hue in degrees of an RGB colour (0 for greys).
pub fn rgb_to_hue(rgb: [f64; 3]) -> f64 {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    60.0 * h
}
