use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-10;

/// One stage of a sequential [`Graph`](super::Graph).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Fully connected; flattens any non-batch dimensions of its input.
    Dense { units: usize },
    /// Convolution without padding.
    ConvValid {
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Stride-1 convolution padded so the spatial size is preserved. Even
    /// kernels pad one more row/column after than before.
    ConvSame { channels: usize, kernel: usize },
    Relu,
    Tanh,
    Sigmoid,
    /// Normalises each sample over all of its features.
    Softmax,
    /// Per-sample normalisation over all features, with a learned gain and
    /// shift per channel (the leading non-batch dimension).
    LayerNorm,
    /// Constant multiplier, used to rescale tanh outputs to action bounds.
    Scale { factor: f64 },
    /// Multiplies the stream elementwise by the graph's side input.
    ElementwiseMultiply,
    /// Repeats a single-channel `[1,H,W]` stream across `channels`.
    TileChannels { channels: usize },
    /// Flattens the stream and appends the flattened side input.
    ConcatSide,
}

impl LayerSpec {
    pub fn uses_side_input(&self) -> bool {
        matches!(self, LayerSpec::ElementwiseMultiply | LayerSpec::ConcatSide)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::ConvValid { .. } => "conv-valid",
            LayerSpec::ConvSame { .. } => "conv-same",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
            LayerSpec::LayerNorm => "layer-norm",
            LayerSpec::Scale { .. } => "scale",
            LayerSpec::ElementwiseMultiply => "elementwise-multiply",
            LayerSpec::TileChannels { .. } => "tile-channels",
            LayerSpec::ConcatSide => "concat-side",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub hout: usize,
    pub wout: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.hout * self.wout
    }
}

/// A layer with its input/output sample shapes resolved.
#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub conv: Option<ConvGeom>,
    /// Index of this node's first tensor in the graph's parameter list.
    pub first_param: usize,
    pub n_params: usize,
}

impl Node {
    pub fn resolve(
        index: usize,
        spec: LayerSpec,
        in_shape: &[usize],
        side_shape: Option<&[usize]>,
        first_param: usize,
    ) -> Result<Node> {
        let bad = |msg: String| Error::Config(format!("layer {index} ({}): {msg}", spec.name()));
        let flat: usize = in_shape.iter().product();
        let mut conv = None;
        let (out_shape, n_params) = match &spec {
            LayerSpec::Dense { units } => {
                if *units == 0 {
                    return Err(bad("units must be at least 1".into()));
                }
                (vec![*units], 2)
            }
            LayerSpec::ConvValid {
                channels,
                kernel,
                stride,
            } => {
                let (cin, h, w) = image_dims(in_shape).ok_or_else(|| {
                    bad(format!("expects a [C,H,W] input, got {in_shape:?}"))
                })?;
                if *channels == 0 || *kernel == 0 || *stride == 0 {
                    return Err(bad("channels, kernel and stride must be at least 1".into()));
                }
                if h < *kernel || w < *kernel {
                    return Err(bad(format!("kernel {kernel} larger than input {h}x{w}")));
                }
                let g = ConvGeom {
                    cin,
                    h,
                    w,
                    cout: *channels,
                    k: *kernel,
                    stride: *stride,
                    pad_top: 0,
                    pad_left: 0,
                    hout: (h - kernel) / stride + 1,
                    wout: (w - kernel) / stride + 1,
                };
                conv = Some(g);
                (vec![g.cout, g.hout, g.wout], 2)
            }
            LayerSpec::ConvSame { channels, kernel } => {
                let (cin, h, w) = image_dims(in_shape).ok_or_else(|| {
                    bad(format!("expects a [C,H,W] input, got {in_shape:?}"))
                })?;
                if *channels == 0 || *kernel == 0 {
                    return Err(bad("channels and kernel must be at least 1".into()));
                }
                let pad = (kernel - 1) / 2;
                let g = ConvGeom {
                    cin,
                    h,
                    w,
                    cout: *channels,
                    k: *kernel,
                    stride: 1,
                    pad_top: pad,
                    pad_left: pad,
                    hout: h,
                    wout: w,
                };
                conv = Some(g);
                (vec![g.cout, h, w], 2)
            }
            LayerSpec::Relu
            | LayerSpec::Tanh
            | LayerSpec::Sigmoid
            | LayerSpec::Softmax
            | LayerSpec::Scale { .. } => (in_shape.to_vec(), 0),
            LayerSpec::LayerNorm => (in_shape.to_vec(), 2),
            LayerSpec::ElementwiseMultiply => {
                let side = side_shape.ok_or_else(|| bad("graph has no side input".into()))?;
                if side != in_shape {
                    return Err(bad(format!(
                        "side input {side:?} does not match stream {in_shape:?}"
                    )));
                }
                (in_shape.to_vec(), 0)
            }
            LayerSpec::TileChannels { channels } => {
                if in_shape.len() != 3 || in_shape[0] != 1 || *channels == 0 {
                    return Err(bad(format!("expects a [1,H,W] input, got {in_shape:?}")));
                }
                (vec![*channels, in_shape[1], in_shape[2]], 0)
            }
            LayerSpec::ConcatSide => {
                let side = side_shape.ok_or_else(|| bad("graph has no side input".into()))?;
                (vec![flat + side.iter().product::<usize>()], 0)
            }
        };
        Ok(Node {
            spec,
            in_shape: in_shape.to_vec(),
            out_shape,
            conv,
            first_param,
            n_params,
        })
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    #[cfg(test)]
    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Shapes of this node's parameter tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match &self.spec {
            LayerSpec::Dense { units } => vec![vec![*units, self.in_len()], vec![*units]],
            LayerSpec::ConvValid { .. } | LayerSpec::ConvSame { .. } => {
                let g = self.conv.expect("conv geometry");
                vec![vec![g.cout, g.patch()], vec![g.cout]]
            }
            LayerSpec::LayerNorm => vec![vec![self.in_shape[0]], vec![self.in_shape[0]]],
            _ => Vec::new(),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match &self.spec {
            LayerSpec::Dense { .. } | LayerSpec::ConvValid { .. } | LayerSpec::ConvSame { .. } => {
                &["weight", "bias"]
            }
            LayerSpec::LayerNorm => &["gain", "shift"],
            _ => &[],
        }
    }

    /// Fan-in used for uniform initialisation, if the layer has weights.
    pub fn fan_in(&self) -> Option<usize> {
        match &self.spec {
            LayerSpec::Dense { .. } => Some(self.in_len()),
            LayerSpec::ConvValid { .. } | LayerSpec::ConvSame { .. } => {
                Some(self.conv.expect("conv geometry").patch())
            }
            _ => None,
        }
    }

    pub fn forward(&self, params: &[Tensor], input: &Tensor, side: Option<&Tensor>) -> Tensor {
        let batch = input.batch();
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&self.out_shape);
        let x = input.data();
        let data = match &self.spec {
            LayerSpec::Dense { units } => {
                let (w, b) = (&params[0], &params[1]);
                let n_in = self.in_len();
                let mut y = vec![0.0; batch * units];
                for row in y.chunks_mut(*units) {
                    row.copy_from_slice(b.data());
                }
                // y[B,out] += x[B,in] * w^T
                gemm(
                    batch, n_in, *units,
                    x, n_in, 1,
                    w.data(), 1, n_in,
                    1.0, &mut y, *units, 1,
                );
                y
            }
            LayerSpec::ConvValid { .. } | LayerSpec::ConvSame { .. } => {
                let g = self.conv.expect("conv geometry");
                conv_forward(&g, &params[0], &params[1], x, batch)
            }
            LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::Tanh => x.iter().map(|v| v.tanh()).collect(),
            LayerSpec::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            LayerSpec::Softmax => {
                let n = self.in_len();
                let mut y = x.to_vec();
                for row in y.chunks_mut(n) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                }
                y
            }
            LayerSpec::LayerNorm => {
                let n = self.in_len();
                let channels = self.in_shape[0];
                let plane = n / channels;
                let (gain, shift) = (params[0].data(), params[1].data());
                let mut y = vec![0.0; x.len()];
                for (xs, ys) in x.chunks(n).zip(y.chunks_mut(n)) {
                    let (mean, inv_std) = moments(xs);
                    for c in 0..channels {
                        for i in c * plane..(c + 1) * plane {
                            ys[i] = gain[c] * (xs[i] - mean) * inv_std + shift[c];
                        }
                    }
                }
                y
            }
            LayerSpec::Scale { factor } => x.iter().map(|v| v * factor).collect(),
            LayerSpec::ElementwiseMultiply => {
                let s = side.expect("side input checked by graph");
                x.iter().zip(s.data()).map(|(a, b)| a * b).collect()
            }
            LayerSpec::TileChannels { channels } => {
                let plane = self.in_len();
                let mut y = Vec::with_capacity(batch * plane * channels);
                for xs in x.chunks(plane) {
                    for _ in 0..*channels {
                        y.extend_from_slice(xs);
                    }
                }
                y
            }
            LayerSpec::ConcatSide => {
                let s = side.expect("side input checked by graph");
                let (n_main, n_side) = (self.in_len(), s.sample_len());
                let mut y = Vec::with_capacity(batch * (n_main + n_side));
                for i in 0..batch {
                    y.extend_from_slice(&x[i * n_main..(i + 1) * n_main]);
                    y.extend_from_slice(s.sample(i));
                }
                y
            }
        };
        Tensor::new(out_shape, data).expect("layer output shape")
    }

    /// Propagates `dout` back through the layer. Parameter gradients are
    /// accumulated into `grads`; returns the input gradient and, for layers
    /// consuming the side input, the side gradient.
    pub fn backward(
        &self,
        params: &[Tensor],
        input: &Tensor,
        output: &Tensor,
        side: Option<&Tensor>,
        dout: &Tensor,
        grads: &mut [Tensor],
    ) -> (Tensor, Option<Tensor>) {
        let batch = input.batch();
        let x = input.data();
        let y = output.data();
        let dy = dout.data();
        let mut dside = None;
        let dx: Vec<f64> = match &self.spec {
            LayerSpec::Dense { units } => {
                let n_in = self.in_len();
                let (gw, gb) = grads.split_at_mut(1);
                // dW[out,in] += dy^T * x
                gemm(
                    *units, batch, n_in,
                    dy, 1, *units,
                    x, n_in, 1,
                    1.0, gw[0].data_mut(), n_in, 1,
                );
                for row in dy.chunks(*units) {
                    for (g, d) in gb[0].data_mut().iter_mut().zip(row) {
                        *g += d;
                    }
                }
                let mut dx = vec![0.0; batch * n_in];
                gemm(
                    batch, *units, n_in,
                    dy, *units, 1,
                    params[0].data(), n_in, 1,
                    0.0, &mut dx, n_in, 1,
                );
                dx
            }
            LayerSpec::ConvValid { .. } | LayerSpec::ConvSame { .. } => {
                let g = self.conv.expect("conv geometry");
                conv_backward(&g, &params[0], x, dy, batch, grads)
            }
            LayerSpec::Relu => x
                .iter()
                .zip(dy)
                .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                .collect(),
            LayerSpec::Tanh => y.iter().zip(dy).map(|(&t, &d)| d * (1.0 - t * t)).collect(),
            LayerSpec::Sigmoid => y.iter().zip(dy).map(|(&s, &d)| d * s * (1.0 - s)).collect(),
            LayerSpec::Softmax => {
                let n = self.in_len();
                let mut dx = vec![0.0; x.len()];
                for ((ys, ds), out) in y.chunks(n).zip(dy.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = ys.iter().zip(ds).map(|(a, b)| a * b).sum();
                    for i in 0..n {
                        out[i] = ys[i] * (ds[i] - dot);
                    }
                }
                dx
            }
            LayerSpec::LayerNorm => {
                let n = self.in_len();
                let channels = self.in_shape[0];
                let plane = n / channels;
                let gain = params[0].data();
                let mut dx = vec![0.0; x.len()];
                let mut xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for ((xs, ds), out) in x.chunks(n).zip(dy.chunks(n)).zip(dx.chunks_mut(n)) {
                    let (mean, inv_std) = moments(xs);
                    for c in 0..channels {
                        let (mut gg, mut gs) = (0.0, 0.0);
                        for i in c * plane..(c + 1) * plane {
                            xhat[i] = (xs[i] - mean) * inv_std;
                            dxhat[i] = ds[i] * gain[c];
                            gg += ds[i] * xhat[i];
                            gs += ds[i];
                        }
                        grads[0].data_mut()[c] += gg;
                        grads[1].data_mut()[c] += gs;
                    }
                    let nf = n as f64;
                    let mean_d: f64 = dxhat.iter().sum::<f64>() / nf;
                    let mean_dx: f64 =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
                    for i in 0..n {
                        out[i] = inv_std * (dxhat[i] - mean_d - xhat[i] * mean_dx);
                    }
                }
                dx
            }
            LayerSpec::Scale { factor } => dy.iter().map(|d| d * factor).collect(),
            LayerSpec::ElementwiseMultiply => {
                let s = side.expect("side input checked by graph");
                dside = Some(
                    Tensor::new(
                        s.shape().to_vec(),
                        dy.iter().zip(x).map(|(d, v)| d * v).collect(),
                    )
                    .expect("side gradient shape"),
                );
                dy.iter().zip(s.data()).map(|(d, v)| d * v).collect()
            }
            LayerSpec::TileChannels { channels } => {
                let plane = self.in_len();
                let mut dx = vec![0.0; batch * plane];
                for (b, out) in dx.chunks_mut(plane).enumerate() {
                    for c in 0..*channels {
                        let start = (b * channels + c) * plane;
                        for (o, d) in out.iter_mut().zip(&dy[start..start + plane]) {
                            *o += d;
                        }
                    }
                }
                dx
            }
            LayerSpec::ConcatSide => {
                let s = side.expect("side input checked by graph");
                let (n_main, n_side) = (self.in_len(), s.sample_len());
                let mut dx = Vec::with_capacity(batch * n_main);
                let mut ds = Vec::with_capacity(batch * n_side);
                for row in dy.chunks(n_main + n_side) {
                    dx.extend_from_slice(&row[..n_main]);
                    ds.extend_from_slice(&row[n_main..]);
                }
                dside = Some(Tensor::new(s.shape().to_vec(), ds).expect("side gradient shape"));
                dx
            }
        };
        (
            Tensor::new(input.shape().to_vec(), dx).expect("input gradient shape"),
            dside,
        )
    }
}

fn image_dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Some((*c, *h, *w)),
        _ => None,
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean and inverse standard deviation of one sample.
fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// `c = a * b + beta * c` for strided row/column-major views.
#[allow(clippy::too_many_arguments)]
#[rustfmt::skip]
pub(crate) fn gemm(
    m: usize, k: usize, n: usize,
    a: &[f64], rsa: usize, csa: usize,
    b: &[f64], rsb: usize, csb: usize,
    beta: f64, c: &mut [f64], rsc: usize, csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa as isize, csa as isize,
            b.as_ptr(), rsb as isize, csb as isize,
            beta, c.as_mut_ptr(), rsc as isize, csc as isize,
        );
    }
}

/// Columns per GEMM call; samples are grouped until a chunk is about this wide.
const CHUNK_COLUMNS: usize = 2048;

fn chunk_samples(g: &ConvGeom, batch: usize) -> usize {
    (CHUNK_COLUMNS / g.out_plane().max(1)).clamp(1, batch.max(1))
}

/// Output columns `lo..hi` whose input column `ox * stride + kj - pad` is in bounds.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let off = kj as isize - g.pad_left as isize;
    let s = g.stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
    let last = g.w as isize - 1 - off;
    let hi = if last < 0 { 0 } else { ((last / s) as usize + 1).min(g.wout) };
    (lo.min(hi), hi)
}

/// Unfolds one sample into `cols`, whose rows are `ld` apart.
fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64], ld: usize) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ld..row * ld + plane];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    let line = &mut dst[oy * g.wout..(oy + 1) * g.wout];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let first = lo * g.stride + kj - g.pad_left;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *v = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into one sample.
fn col2im(g: &ConvGeom, cols: &[f64], ld: usize, dx: &mut [f64]) {
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ld..];
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad_left;
                for oy in 0..g.hout {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    let line = &src[oy * g.wout + lo..oy * g.wout + hi];
                    let out = &mut dx[base + first..base + g.w];
                    for (d, v) in out.iter_mut().step_by(g.stride).zip(line) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn conv_forward(g: &ConvGeom, w: &Tensor, b: &Tensor, x: &[f64], batch: usize) -> Vec<f64> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * plane;
    let group = chunk_samples(g, batch);
    let mut cols = vec![0.0; patch * plane * group];
    let mut tmp = vec![0.0; g.cout * plane * group];
    let mut y = vec![0.0; batch * out_len];
    for start in (0..batch).step_by(group) {
        let n = group.min(batch - start);
        let ld = n * plane;
        for s in 0..n {
            let xs = &x[(start + s) * in_len..(start + s + 1) * in_len];
            im2col(g, xs, &mut cols[s * plane..], ld);
        }
        #[rustfmt::skip]
        gemm(
            g.cout, patch, ld,
            w.data(), patch, 1,
            &cols, ld, 1,
            0.0, &mut tmp, ld, 1,
        );
        for s in 0..n {
            let ys = &mut y[(start + s) * out_len..(start + s + 1) * out_len];
            for (o, row) in ys.chunks_mut(plane).enumerate() {
                let bias = b.data()[o];
                let src = &tmp[o * ld + s * plane..o * ld + (s + 1) * plane];
                for (d, v) in row.iter_mut().zip(src) {
                    *d = v + bias;
                }
            }
        }
    }
    y
}

fn conv_backward(
    g: &ConvGeom,
    w: &Tensor,
    x: &[f64],
    dy: &[f64],
    batch: usize,
    grads: &mut [Tensor],
) -> Vec<f64> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * plane;
    let group = chunk_samples(g, batch);
    let mut cols = vec![0.0; patch * plane * group];
    let mut dcols = vec![0.0; patch * plane * group];
    let mut dys = vec![0.0; g.cout * plane * group];
    let mut dx = vec![0.0; batch * in_len];
    let (gw, gb) = grads.split_at_mut(1);
    for start in (0..batch).step_by(group) {
        let n = group.min(batch - start);
        let ld = n * plane;
        for s in 0..n {
            let xs = &x[(start + s) * in_len..(start + s + 1) * in_len];
            im2col(g, xs, &mut cols[s * plane..], ld);
            let ds = &dy[(start + s) * out_len..(start + s + 1) * out_len];
            for (o, row) in ds.chunks(plane).enumerate() {
                dys[o * ld + s * plane..o * ld + (s + 1) * plane].copy_from_slice(row);
                gb[0].data_mut()[o] += row.iter().sum::<f64>();
            }
        }
        #[rustfmt::skip]
        gemm(
            g.cout, ld, patch,
            &dys, ld, 1,
            &cols, 1, ld,
            1.0, gw[0].data_mut(), patch, 1,
        );
        #[rustfmt::skip]
        gemm(
            patch, g.cout, ld,
            w.data(), 1, patch,
            &dys, ld, 1,
            0.0, &mut dcols, ld, 1,
        );
        for s in 0..n {
            col2im(g, &dcols[s * plane..], ld, &mut dx[(start + s) * in_len..(start + s + 1) * in_len]);
        }
    }
    dx
}
