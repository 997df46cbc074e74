use serde::{Deserialize, Serialize};

/// Adaptive parameter-space noise: the perturbation scale `sigma` is nudged so
/// the perturbed policy's actions stay about `desired` away from the clean ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamNoiseState {
    pub sigma: f64,
    pub desired: f64,
    /// Multiplicative adaptation factor, `> 1`.
    pub alpha: f64,
}

impl Default for ParamNoiseState {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            desired: 0.1,
            alpha: 1.01,
        }
    }
}

impl ParamNoiseState {
    /// Shrinks `sigma` when the measured distance exceeds the desired one,
    /// grows it otherwise (ties grow).
    pub fn adapt(&mut self, distance: f64) {
        if distance > self.desired {
            self.sigma /= self.alpha;
        } else {
            self.sigma *= self.alpha;
        }
    }
}

/// Root-mean-square elementwise difference between two action batches.
pub fn action_distance(clean: &[f64], perturbed: &[f64]) -> f64 {
    debug_assert_eq!(clean.len(), perturbed.len());
    if clean.is_empty() {
        return 0.0;
    }
    let sq: f64 = clean
        .iter()
        .zip(perturbed)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (sq / clean.len() as f64).sqrt()
}
