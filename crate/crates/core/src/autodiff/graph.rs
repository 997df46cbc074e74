use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::{LayerSpec, Node};
use super::Tensor;
use crate::error::{Error, Result};

/// Forward activations of one batch, needed to run the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    activations: Vec<Tensor>,
    side: Option<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    /// Output of layer `index`.
    pub fn activation(&self, index: usize) -> &Tensor {
        &self.activations[index + 1]
    }
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// One tensor per graph parameter, same order as [`Graph::params`].
    pub params: Vec<Tensor>,
    pub input: Tensor,
    /// Present when the graph declares a side input.
    pub side: Option<Tensor>,
}

/// Sequential network: an ordered list of layers, their parameters and an
/// optional side input consumed by at most one layer.
#[derive(Clone, Debug)]
pub struct Graph {
    input_shape: Vec<usize>,
    side_shape: Option<Vec<usize>>,
    nodes: Vec<Node>,
    params: Vec<Tensor>,
    cache: Option<Trace>,
}

impl Graph {
    /// Builds the graph and initialises weights uniformly in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        input_shape: &[usize],
        side_shape: Option<&[usize]>,
        layers: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let side_users = layers.iter().filter(|l| l.uses_side_input()).count();
        if side_users > 1 {
            return Err(Error::Config(
                "at most one layer may consume the side input".into(),
            ));
        }
        if side_shape.is_some() && side_users == 0 {
            return Err(Error::Config(
                "side input declared but no layer consumes it".into(),
            ));
        }
        let mut nodes = Vec::with_capacity(layers.len());
        let mut shape = input_shape.to_vec();
        let mut n_params = 0;
        for (i, spec) in layers.iter().enumerate() {
            let node = Node::resolve(i, spec.clone(), &shape, side_shape, n_params)?;
            n_params += node.n_params;
            shape = node.out_shape.clone();
            nodes.push(node);
        }
        let mut params = Vec::with_capacity(n_params);
        for node in &nodes {
            let shapes = node.param_shapes();
            match node.spec {
                LayerSpec::LayerNorm => {
                    params.push(Tensor::filled(&shapes[0], 1.0));
                    params.push(Tensor::zeros(&shapes[1]));
                }
                _ => {
                    if let Some(fan_in) = node.fan_in() {
                        let limit = 1.0 / (fan_in as f64).sqrt();
                        for s in &shapes {
                            params.push(Tensor::from_fn(s, |_| rng.random_range(-limit..limit)));
                        }
                    }
                }
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            side_shape: side_shape.map(<[usize]>::to_vec),
            nodes,
            params,
            cache: None,
        })
    }

    /// Re-draws the weights and biases of the last weighted layer uniformly
    /// in `±limit`.
    pub fn init_output_layer<R: Rng + ?Sized>(&mut self, limit: f64, rng: &mut R) {
        if let Some(node) = self.nodes.iter().rev().find(|n| n.fan_in().is_some()) {
            for p in &mut self.params[node.first_param..node.first_param + node.n_params] {
                for v in p.data_mut() {
                    *v = rng.random_range(-limit..limit);
                }
            }
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn side_shape(&self) -> Option<&[usize]> {
        self.side_shape.as_deref()
    }

    pub fn output_shape(&self) -> &[usize] {
        self.nodes
            .last()
            .map(|n| n.out_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.nodes.iter().map(|n| &n.spec)
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Config("parameter shapes do not match graph".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Names of the parameter tensors, e.g. `l3.weight`.
    pub fn param_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.param_names().iter().map(move |p| format!("l{i}.{p}")))
            .collect()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Whether parameter tensor `index` belongs to a layer-norm layer.
    pub fn is_norm_param(&self, index: usize) -> bool {
        self.nodes.iter().any(|n| {
            matches!(n.spec, LayerSpec::LayerNorm)
                && (n.first_param..n.first_param + n.n_params).contains(&index)
        })
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    fn check_inputs(&self, input: &Tensor, side: Option<&Tensor>) -> Result<()> {
        if input.shape().len() != self.input_shape.len() + 1 || input.sample_shape() != self.input_shape
        {
            let first = self.nodes.first().map(|n| n.spec.name()).unwrap_or("none");
            return Err(Error::Config(format!(
                "layer 0 ({first}): expected input [B, {:?}], got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        match (&self.side_shape, side) {
            (None, None) => Ok(()),
            (Some(expected), Some(s)) if s.sample_shape() == expected.as_slice()
                && s.batch() == input.batch() =>
            {
                Ok(())
            }
            (Some(expected), Some(s)) => Err(Error::Config(format!(
                "side input: expected [{}, {expected:?}], got {:?}",
                input.batch(),
                s.shape()
            ))),
            (Some(_), None) => Err(Error::Config("graph requires a side input".into())),
            (None, Some(_)) => Err(Error::Config("graph takes no side input".into())),
        }
    }

    /// Forward pass with the graph's own parameters, keeping every activation.
    pub fn trace(&self, input: &Tensor, side: Option<&Tensor>) -> Result<Trace> {
        self.check_inputs(input, side)?;
        let mut activations = Vec::with_capacity(self.nodes.len() + 1);
        activations.push(input.clone());
        for (i, node) in self.nodes.iter().enumerate() {
            let p = &self.params[node.first_param..node.first_param + node.n_params];
            let out = node.forward(p, activations.last().expect("non-empty"), side);
            if !out.is_finite() {
                return Err(Error::NonFinite(format!(
                    "output of layer {i} ({})",
                    node.spec.name()
                )));
            }
            activations.push(out);
        }
        Ok(Trace {
            activations,
            side: side.cloned(),
        })
    }

    /// Forward pass that only keeps the output.
    pub fn infer(&self, input: &Tensor, side: Option<&Tensor>) -> Result<Tensor> {
        self.check_inputs(input, side)?;
        let mut x = input.clone();
        for (i, node) in self.nodes.iter().enumerate() {
            let p = &self.params[node.first_param..node.first_param + node.n_params];
            x = node.forward(p, &x, side);
            if !x.is_finite() {
                return Err(Error::NonFinite(format!(
                    "output of layer {i} ({})",
                    node.spec.name()
                )));
            }
        }
        Ok(x)
    }

    /// Backward pass for a trace produced by [`Graph::trace`].
    pub fn backward_trace(&self, trace: &Trace, upstream: &Tensor) -> Result<Gradients> {
        self.backward_trace_with(trace, upstream, &[])
    }

    /// Backward pass with additional loss gradients injected at the outputs
    /// of intermediate layers, given as `(layer index, gradient)`.
    pub fn backward_trace_with(
        &self,
        trace: &Trace,
        upstream: &Tensor,
        injected: &[(usize, &Tensor)],
    ) -> Result<Gradients> {
        for (layer, g) in injected {
            if *layer >= self.nodes.len() || g.shape() != trace.activation(*layer).shape() {
                return Err(Error::Config(format!(
                    "injected gradient for layer {layer} has the wrong shape"
                )));
            }
        }
        let out = trace.output();
        if upstream.shape() != out.shape() {
            return Err(Error::Config(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let mut grads = self.zero_grads();
        let mut delta = upstream.clone();
        let mut side_grad = None;
        for (i, node) in self.nodes.iter().enumerate().rev() {
            for (_, g) in injected.iter().filter(|(l, _)| *l == i) {
                delta.add_assign(g);
            }
            let range = node.first_param..node.first_param + node.n_params;
            let (dx, ds) = node.backward(
                &self.params[range.clone()],
                &trace.activations[i],
                &trace.activations[i + 1],
                trace.side.as_ref(),
                &delta,
                &mut grads[range],
            );
            if ds.is_some() {
                side_grad = ds;
            }
            delta = dx;
        }
        if !delta.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok(Gradients {
            params: grads,
            input: delta,
            side: side_grad,
        })
    }

    /// Forward pass that caches activations for a following [`Graph::backward`].
    pub fn forward(&mut self, input: &Tensor, side: Option<&Tensor>) -> Result<Tensor> {
        let trace = self.trace(input, side)?;
        let out = trace.output().clone();
        self.cache = Some(trace);
        Ok(out)
    }

    /// Backward pass over the activations cached by the last [`Graph::forward`].
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Gradients> {
        let trace = self
            .cache
            .take()
            .ok_or_else(|| Error::Usage("backward called before forward".into()))?;
        let grads = self.backward_trace(&trace, upstream);
        self.cache = Some(trace);
        grads
    }

    /// Copy of this graph whose weights carry additive `N(0, sigma^2)` noise.
    /// Layer-norm parameters are left untouched.
    pub fn perturbed<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Graph {
        let mut copy = self.clone();
        copy.cache = None;
        for (i, p) in copy.params.iter_mut().enumerate() {
            if self.is_norm_param(i) {
                continue;
            }
            for v in p.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += sigma * z;
            }
        }
        copy
    }
}

/// `target <- tau * target + (1 - tau) * online`, elementwise.
pub fn polyak_update(target: &mut [Tensor], online: &[Tensor], tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("polyak tau {tau} outside [0,1]")));
    }
    if target.len() != online.len() || target.iter().zip(online).any(|(t, o)| t.shape() != o.shape())
    {
        return Err(Error::Config("polyak update over mismatched parameters".into()));
    }
    for (t, o) in target.iter_mut().zip(online) {
        for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
            *a = tau * *a + (1.0 - tau) * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_dense_layer_outputs_zero() {
        let mut g = Graph::new(&[4], None, &[LayerSpec::Dense { units: 3 }], &mut rng()).unwrap();
        for p in g.params_mut() {
            p.data_mut().fill(0.0);
        }
        let x = Tensor::new(vec![2, 4], vec![1.0, -2.0, 3.0, 4.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(g.infer(&x, None).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let g = Graph::new(&[4], None, &[LayerSpec::Softmax], &mut rng()).unwrap();
        let y = g.infer(&Tensor::zeros(&[1, 4]), None).unwrap();
        assert_eq!(y.data(), &[0.25; 4]);
    }

    #[test]
    fn dense_weight_gradient_is_outer_product() {
        let mut g = Graph::new(&[3], None, &[LayerSpec::Dense { units: 2 }], &mut rng()).unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        g.forward(&x, None).unwrap();
        let grads = g.backward(&Tensor::filled(&[1, 2], 1.0)).unwrap();
        assert_eq!(grads.params[0].data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(grads.params[1].data(), &[1.0, 1.0]);
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        let mut g = Graph::new(&[2], None, &[LayerSpec::Relu], &mut rng()).unwrap();
        let x = Tensor::new(vec![1, 2], vec![-0.3, 0.7]).unwrap();
        g.forward(&x, None).unwrap();
        let grads = g.backward(&Tensor::filled(&[1, 2], 1.0)).unwrap();
        assert_eq!(grads.input.data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_before_forward_is_usage_error() {
        let mut g = Graph::new(&[2], None, &[LayerSpec::Tanh], &mut rng()).unwrap();
        let err = g.backward(&Tensor::zeros(&[1, 2])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn input_mismatch_names_the_first_layer() {
        let g = Graph::new(&[3], None, &[LayerSpec::Dense { units: 1 }], &mut rng()).unwrap();
        let err = g.infer(&Tensor::zeros(&[1, 4]), None).unwrap_err();
        assert!(err.to_string().contains("layer 0 (dense)"), "{err}");
    }

    #[test]
    fn chained_shape_errors_name_the_layer() {
        let layers = [
            LayerSpec::Dense { units: 5 },
            LayerSpec::ConvValid {
                channels: 2,
                kernel: 3,
                stride: 1,
            },
        ];
        let err = Graph::new(&[4], None, &layers, &mut rng()).unwrap_err();
        assert!(err.to_string().contains("layer 1 (conv-valid)"), "{err}");
    }

    #[test]
    fn polyak_extremes() {
        let mut target = vec![Tensor::zeros(&[3])];
        let online = vec![Tensor::filled(&[3], 1.0)];
        polyak_update(&mut target, &online, 0.999).unwrap();
        for v in target[0].data() {
            assert!((v - 0.001).abs() < 1e-15);
        }
        let before = target.clone();
        polyak_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, before);
        polyak_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, online);
        assert!(polyak_update(&mut target, &online, 1.5).is_err());
    }

    #[test]
    fn perturbation_skips_layer_norm() {
        let layers = [LayerSpec::Dense { units: 3 }, LayerSpec::LayerNorm];
        let g = Graph::new(&[2], None, &layers, &mut rng()).unwrap();
        let p = g.perturbed(0.5, &mut rng());
        assert_ne!(p.params()[0], g.params()[0]);
        assert_eq!(p.params()[2], g.params()[2]);
        assert_eq!(p.params()[3], g.params()[3]);
    }
}
