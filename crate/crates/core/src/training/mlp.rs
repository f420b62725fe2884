//! Dense multilayer perceptron with exact reverse-mode gradients.
//!
//! Generic over the float type: training runs in `f32`, gradient oracles in
//! `f64`. Weights are stored `out × in`, row-major, matching the frozen
//! model layout.

use ndarray::{Array1, Array2, ArrayView2, Axis, NdFloat};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    pub fn apply<F: NdFloat>(self, x: F) -> F {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(F::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative<F: NdFloat>(self, pre: F) -> F {
        match self {
            Activation::Linear => F::one(),
            Activation::Relu => {
                if pre > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                F::one() - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// `out × in`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: NdFloat> Dense<F> {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
}

/// Per-layer inputs and pre-activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    inputs: Vec<Array2<F>>,
    pre_activations: Vec<Array2<F>>,
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<F> {
    pub weight: Vec<Array2<F>>,
    pub bias: Vec<Array1<F>>,
}

impl<F: NdFloat> MlpGrads<F> {
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out = Vec::with_capacity(2 * self.weight.len());
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::with_capacity(2 * self.weight.len());
        for (w, b) in self.weight.iter_mut().zip(self.bias.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn sum_squares(&self) -> F {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(F::zero(), |acc, &g| acc + g * g)
    }

    pub fn scale(&mut self, factor: F) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|g| *g = *g * factor);
        }
    }
}

impl<F: NdFloat> Mlp<F> {
    /// Builds a network from explicit layers.
    ///
    /// # Panics
    /// If consecutive layer dimensions do not chain.
    pub fn from_layers(layers: Vec<Dense<F>>) -> Self {
        assert!(!layers.is_empty(), "an MLP needs at least one layer");
        for pair in layers.windows(2) {
            assert_eq!(pair[0].out_dim(), pair[1].in_dim(), "layer dimensions must chain");
        }
        for layer in &layers {
            assert_eq!(layer.bias.len(), layer.out_dim());
        }
        Self { layers }
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &activation)| Dense {
                weight: Array2::zeros((d[1], d[0])),
                bias: Array1::zeros(d[1]),
                activation,
            })
            .collect();
        Self::from_layers(layers)
    }

    /// He-normal hidden weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        let mut net = Self::zeros(dims, activations);
        for layer in &mut net.layers {
            let std = (2.0 / layer.in_dim() as f64).sqrt();
            layer.weight.mapv_inplace(|_| {
                let n: f64 = StandardNormal.sample(rng);
                F::from(n * std).unwrap()
            });
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim()));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Single-sample forward pass.
    ///
    /// # Panics
    /// If `input.len()` differs from the network input dimension.
    pub fn forward(&self, input: &[F]) -> (Vec<F>, ForwardCache<F>) {
        assert_eq!(input.len(), self.input_dim(), "input dimension mismatch");
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let (out, cache) = self.forward_batch(x);
        (out.into_raw_vec_and_offset().0, cache)
    }

    /// Batched forward pass, one sample per row.
    pub fn forward_batch(&self, input: ArrayView2<F>) -> (Array2<F>, ForwardCache<F>) {
        assert_eq!(input.ncols(), self.input_dim(), "input dimension mismatch");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for layer in &self.layers {
            let pre = x.dot(&layer.weight.t()) + &layer.bias;
            let act = layer.activation;
            let out = pre.mapv(|v| act.apply(v));
            inputs.push(x);
            pre_activations.push(pre);
            x = out;
        }
        (
            x,
            ForwardCache {
                inputs,
                pre_activations,
            },
        )
    }

    /// Forward pass without recording a cache.
    pub fn predict_batch(&self, input: ArrayView2<F>) -> Array2<F> {
        assert_eq!(input.ncols(), self.input_dim(), "input dimension mismatch");
        let mut x = input.to_owned();
        for layer in &self.layers {
            let act = layer.activation;
            x = (x.dot(&layer.weight.t()) + &layer.bias).mapv(|v| act.apply(v));
        }
        x
    }

    /// Reverse pass. `grad_output` has one row per sample of the cached
    /// forward pass. Returns parameter gradients (summed over the batch) and
    /// the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache<F>, grad_output: ArrayView2<F>) -> (MlpGrads<F>, Array2<F>) {
        assert_eq!(cache.inputs.len(), self.layers.len(), "cache from a different network");
        let n = self.layers.len();
        let mut weight = Vec::with_capacity(n);
        let mut bias = Vec::with_capacity(n);
        let mut grad = grad_output.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            if act != Activation::Linear {
                grad.zip_mut_with(&cache.pre_activations[i], |g, &p| *g = *g * act.derivative(p));
            }
            weight.push(grad.t().dot(&cache.inputs[i]).as_standard_layout().into_owned());
            bias.push(grad.sum_axis(Axis(0)));
            grad = grad.dot(&layer.weight);
        }
        weight.reverse();
        bias.reverse();
        (MlpGrads { weight, bias }, grad)
    }

    pub fn zero_grads(&self) -> MlpGrads<F> {
        MlpGrads {
            weight: self.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            bias: self.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    /// Weight and bias slices in layer order: `w0, b0, w1, b1, …`.
    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn params(&self) -> Vec<&[F]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            out.push(layer.weight.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn cast<G: NdFloat>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|v| G::from(v).unwrap()),
                    bias: l.bias.mapv(|v| G::from(v).unwrap()),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}
