use std::path::Path;

use super::scene::{Scene, Shape};
use crate::error::{Error, Result};

/// RGB frame, channel-planar (`[3][H][W]`), each value `k/255`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    size: usize,
    pixels: Vec<u8>,
}

impl Observation {
    pub fn new(size: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * size * size {
            return Err(Error::Format(format!(
                "observation of size {size} needs {} bytes, got {}",
                3 * size * size,
                pixels.len()
            )));
        }
        Ok(Self { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn value(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.pixels[(channel * self.size + y) * self.size + x] as f64 / 255.0
    }

    /// Pixel values in `[0, 1]`, channel-planar, ready for a `[3,H,W]` network input.
    pub fn to_planar(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| v as f64 / 255.0).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let n = self.size;
        let img = image::RgbImage::from_fn(n as u32, n as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([0, 1, 2].map(|c| self.pixels[(c * n + y) * n + x]))
        });
        img.save(path)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// One binary map per scene object, bit-packed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMaps {
    size: usize,
    count: usize,
    words: Vec<u64>,
}

impl SegmentationMaps {
    pub fn empty(size: usize, count: usize) -> Self {
        Self {
            size,
            count,
            words: vec![0; count * Self::words_per_map(size)],
        }
    }

    fn words_per_map(size: usize) -> usize {
        (size * size).div_ceil(64)
    }

    /// Maps where pixel `p` belongs to object `owner[p]` (or to nobody).
    pub fn from_owners(size: usize, count: usize, owners: &[Option<usize>]) -> Self {
        let mut maps = Self::empty(size, count);
        for (p, o) in owners.iter().enumerate() {
            if let Some(i) = o {
                maps.set(*i, p, true);
            }
        }
        maps
    }

    /// Builds maps from unpacked boolean planes (any overlap is kept as is).
    pub fn from_planes(size: usize, planes: &[Vec<bool>]) -> Result<Self> {
        let mut maps = Self::empty(size, planes.len());
        for (i, plane) in planes.iter().enumerate() {
            if plane.len() != size * size {
                return Err(Error::Format(format!("map {i} has wrong pixel count")));
            }
            for (p, &on) in plane.iter().enumerate() {
                if on {
                    maps.set(i, p, true);
                }
            }
        }
        Ok(maps)
    }

    pub fn from_words(size: usize, count: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != count * Self::words_per_map(size) {
            return Err(Error::Format("segmentation word count mismatch".into()));
        }
        Ok(Self { size, count, words })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> usize {
        self.size * self.size
    }

    /// Number of maps (objects).
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, object: usize, pixel: usize) -> bool {
        let w = Self::words_per_map(self.size);
        self.words[object * w + pixel / 64] >> (pixel % 64) & 1 == 1
    }

    pub fn set(&mut self, object: usize, pixel: usize, on: bool) {
        let w = Self::words_per_map(self.size);
        let word = &mut self.words[object * w + pixel / 64];
        if on {
            *word |= 1 << (pixel % 64);
        } else {
            *word &= !(1 << (pixel % 64));
        }
    }

    /// Pixel count of map `object`.
    pub fn area(&self, object: usize) -> usize {
        let w = Self::words_per_map(self.size);
        self.words[object * w..(object + 1) * w]
            .iter()
            .map(|x| x.count_ones() as usize)
            .sum()
    }

    pub fn plane(&self, object: usize) -> Vec<bool> {
        (0..self.pixels()).map(|p| self.get(object, p)).collect()
    }

    /// Owning object of every pixel; fails if two maps claim the same pixel.
    pub fn owners(&self) -> Result<Vec<Option<usize>>> {
        let mut owners = vec![None; self.pixels()];
        for i in 0..self.count {
            for (p, o) in owners.iter_mut().enumerate() {
                if self.get(i, p) {
                    if let Some(j) = o {
                        return Err(Error::Contract(format!(
                            "segmentation maps {j} and {i} overlap at pixel {p}"
                        )));
                    }
                    *o = Some(i);
                }
            }
        }
        Ok(owners)
    }

    pub fn save_png(&self, object: usize, path: &Path) -> Result<()> {
        let n = self.size;
        let img = image::GrayImage::from_fn(n as u32, n as u32, |x, y| {
            image::Luma([if self.get(object, y as usize * n + x as usize) {
                255
            } else {
                0
            }])
        });
        img.save(path)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// World coordinate of the centre of pixel `(row, col)`; row 0 is the top.
pub fn pixel_centre(size: usize, row: usize, col: usize) -> (f64, f64) {
    let step = 2.0 / size as f64;
    (
        -1.0 + (col as f64 + 0.5) * step,
        1.0 - (row as f64 + 0.5) * step,
    )
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rasterises the scene at `size`x`size`. Objects are painted back to front
/// (distractors, target, agent), each pixel owned by the last object whose
/// shape contains the pixel centre.
pub fn render(scene: &Scene, size: usize) -> (Observation, SegmentationMaps) {
    let plane = size * size;
    let mut owners: Vec<Option<usize>> = vec![None; plane];
    let order = scene.paint_order();
    for row in 0..size {
        for col in 0..size {
            let (x, y) = pixel_centre(size, row, col);
            for &i in &order {
                if scene.objects[i].contains(x, y) {
                    owners[row * size + col] = Some(i);
                }
            }
        }
    }
    let mut pixels = vec![0u8; 3 * plane];
    for (p, owner) in owners.iter().enumerate() {
        let colour = match owner {
            Some(i) => scene.objects[*i].colour,
            None => scene.background,
        };
        for c in 0..3 {
            pixels[c * plane + p] = to_byte(colour[c]);
        }
    }
    let maps = SegmentationMaps::from_owners(size, scene.objects.len(), &owners);
    (
        Observation {
            size,
            pixels,
        },
        maps,
    )
}

impl super::scene::SceneObject {
    /// Point-in-shape test at world coordinates.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.position[0], y - self.position[1]);
        match self.shape {
            Shape::Circle => dx * dx + dy * dy <= self.size * self.size,
            Shape::Polygon { sides } => {
                if dx * dx + dy * dy > self.size * self.size {
                    return false;
                }
                // Regular polygon: inside iff on the inner side of every edge.
                let k = sides as f64;
                let apothem = self.size * (std::f64::consts::PI / k).cos();
                (0..sides).all(|m| {
                    let normal = self.orientation + (m as f64 + 0.5) * std::f64::consts::TAU / k;
                    dx * normal.cos() + dy * normal.sin() <= apothem
                })
            }
        }
    }
}
