use crate::autodiff::{Checkpoint, Tensor};
use crate::error::Result;

const STD_FLOOR: f64 = 1e-6;
const CLIP: f64 = 5.0;

/// Streaming per-dimension mean and standard deviation (Welford).
#[derive(Clone, Debug, PartialEq)]
pub struct RunningNormaliser {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNormaliser {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|m2| {
                if self.count == 0 {
                    1.0
                } else {
                    (m2 / self.count as f64).sqrt().max(STD_FLOOR)
                }
            })
            .collect()
    }

    pub fn update(&mut self, s: &[f64]) {
        debug_assert_eq!(s.len(), self.mean.len());
        if s.iter().any(|v| !v.is_finite()) {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), x) in self.mean.iter_mut().zip(&mut self.m2).zip(s) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    /// `(s - mean) / std`, clipped to `[-5, 5]`.
    pub fn normalise(&self, s: &[f64]) -> Vec<f64> {
        let std = self.std();
        s.iter()
            .zip(&self.mean)
            .zip(&std)
            .map(|((x, m), sd)| ((x - m) / sd).clamp(-CLIP, CLIP))
            .collect()
    }

    pub fn save(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.push(format!("{prefix}/count"), Tensor::scalar(self.count as f64));
        ckpt.push(
            format!("{prefix}/mean"),
            Tensor::new(vec![self.dim()], self.mean.clone()).expect("shape"),
        );
        ckpt.push(
            format!("{prefix}/m2"),
            Tensor::new(vec![self.dim()], self.m2.clone()).expect("shape"),
        );
    }

    pub fn load(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        Ok(Self {
            count: ckpt.require(&format!("{prefix}/count"))?.data()[0] as u64,
            mean: ckpt.require(&format!("{prefix}/mean"))?.data().to_vec(),
            m2: ckpt.require(&format!("{prefix}/m2"))?.data().to_vec(),
        })
    }
}
