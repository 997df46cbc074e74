use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// The leading dimension is the batch dimension wherever a tensor flows
/// through a [`Graph`](super::Graph).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Config(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Stacks equally shaped samples along a new leading batch dimension.
    pub fn stack(samples: &[&[f64]], sample_shape: &[usize]) -> Result<Self> {
        let n: usize = sample_shape.iter().product();
        let mut data = Vec::with_capacity(n * samples.len());
        for s in samples {
            if s.len() != n {
                return Err(Error::Config(format!(
                    "sample of length {} does not match shape {sample_shape:?}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(sample_shape);
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sample(&self, index: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Config(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rows `start..end` of the batch dimension.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor {
        let n = self.sample_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    pub fn concat_batch(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let mut shape = first.shape.clone();
        shape[0] = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.sample_shape() != first.sample_shape() {
                return Err(Error::Config(format!(
                    "cannot concatenate {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            shape[0] += p.batch();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Elementwise product of two equally shaped tensors.
pub fn elementwise_multiply(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Config(format!(
            "elementwise multiply of {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    })
}

/// Repeats a single-channel `[B, 1, H, W]` tensor into `[B, channels, H, W]`.
pub fn tile_channels(mask: &Tensor, channels: usize) -> Result<Tensor> {
    let s = mask.sample_shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::Config(format!(
            "tile_channels expects [B,1,H,W], got {:?}",
            mask.shape
        )));
    }
    let plane = s[1] * s[2];
    let mut data = Vec::with_capacity(mask.len() * channels);
    for b in 0..mask.batch() {
        let src = mask.sample(b);
        for _ in 0..channels {
            data.extend_from_slice(src);
        }
    }
    debug_assert_eq!(data.len(), mask.batch() * channels * plane);
    Ok(Tensor {
        shape: vec![mask.batch(), channels, s[1], s[2]],
        data,
    })
}

/// Adjoint of [`tile_channels`]: sums the channel gradients back into one plane.
pub fn untile_channels(grad: &Tensor) -> Tensor {
    let s = grad.sample_shape();
    let plane = s[1] * s[2];
    let mut out = Tensor::zeros(&[grad.batch(), 1, s[1], s[2]]);
    for b in 0..grad.batch() {
        let src = grad.sample(b);
        let dst = &mut out.data[b * plane..(b + 1) * plane];
        for c in 0..s[0] {
            for (d, g) in dst.iter_mut().zip(&src[c * plane..(c + 1) * plane]) {
                *d += g;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn tiling_copies_mask_into_every_channel() {
        let m = Tensor::new(vec![1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let t = tile_channels(&m, 3).unwrap();
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
        for c in 0..3 {
            assert_eq!(&t.data()[c * 4..c * 4 + 4], m.data());
        }
        let back = untile_channels(&t);
        for (g, m) in back.data().iter().zip(m.data()) {
            assert!((g - 3.0 * m).abs() < 1e-15);
        }
    }
}
