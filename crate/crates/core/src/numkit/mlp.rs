use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub(crate) fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(F::zero()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `y`.
    #[inline]
    pub(crate) fn derivative<F: Scalar>(self, z: F, y: F) -> F {
        match self {
            Activation::Tanh => F::one() - y * y,
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Weights and biases of a fully connected network.
///
/// `weights[i]` maps layer `i` to layer `i + 1` and has shape
/// `layer_sizes[i + 1] x layer_sizes[i]`. The same type doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<F> {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix<F>>,
    biases: Vec<Vec<F>>,
    activation: Activation,
}

/// Per-layer pre- and post-activations recorded by [`MlpParams::forward`].
#[derive(Debug, Clone)]
pub struct MlpCache<F> {
    input: Vec<F>,
    pre: Vec<Vec<F>>,
    post: Vec<Vec<F>>,
}

impl<F: Scalar> MlpCache<F> {
    pub fn output(&self) -> &[F] {
        self.post.last().map_or(&self.input, Vec::as_slice)
    }

    pub fn input(&self) -> &[F] {
        &self.input
    }
}

impl<F: Scalar> MlpParams<F> {
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Domain(
                "an MLP needs at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Domain("layer sizes must be positive".into()));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![F::zero(); n]).collect();
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases, with the
    /// final layer multiplied by `output_scale`.
    pub fn init<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        output_scale: F,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(layer_sizes, activation)?;
        let last = p.weights.len() - 1;
        for (i, w) in p.weights.iter_mut().enumerate() {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            let scale = if i == last { output_scale } else { F::one() };
            for x in w.as_mut_slice() {
                *x = F::lit(rng.gen_range(-limit..limit)) * scale;
            }
        }
        Ok(p)
    }

    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix<F>>,
        biases: Vec<Vec<F>>,
        activation: Activation,
    ) -> Result<Self> {
        let template = Self::zeros(&layer_sizes, activation)?;
        if weights.len() != template.weights.len() {
            return Err(Error::shape("MlpParams weights", template.weights.len(), weights.len()));
        }
        if biases.len() != template.biases.len() {
            return Err(Error::shape("MlpParams biases", template.biases.len(), biases.len()));
        }
        for (w, t) in weights.iter().zip(&template.weights) {
            if w.rows() != t.rows() {
                return Err(Error::shape("MlpParams weight rows", t.rows(), w.rows()));
            }
            if w.cols() != t.cols() {
                return Err(Error::shape("MlpParams weight cols", t.cols(), w.cols()));
            }
        }
        for (b, t) in biases.iter().zip(&template.biases) {
            if b.len() != t.len() {
                return Err(Error::shape("MlpParams bias", t.len(), b.len()));
            }
        }
        let p = MlpParams {
            layer_sizes,
            weights,
            biases,
            activation,
        };
        if !p.is_finite() {
            return Err(Error::numerical("MlpParams::from_parts", "non-finite parameter"));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_sizes, self.activation).expect("sizes already validated")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Matrix<F>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<F>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix<F>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<F>] {
        &mut self.biases
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Every parameter in a fixed order: layer by layer, weights then bias.
    pub fn iter(&self) -> impl Iterator<Item = &F> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.as_mut_slice().iter_mut().chain(b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<F> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[F]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("MlpParams::set_flat", n, flat.len()));
        }
        for (p, &v) in self.iter_mut().zip(flat) {
            *p = v;
        }
        Ok(())
    }

    pub fn fill_zero(&mut self) {
        self.iter_mut().for_each(|x| *x = F::zero());
    }

    pub fn scale(&mut self, s: F) {
        self.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: F) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                "MlpParams::add_scaled",
                self.num_params(),
                other.num_params(),
            ));
        }
        for (a, &b) in self.iter_mut().zip(other.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sq_norm(&self) -> F {
        self.iter().map(|&x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn forward(&self, input: &[F]) -> Result<(Vec<F>, MlpCache<F>)> {
        let cache = self.forward_cache(input)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass keeping only the trace; the output is `cache.output()`.
    pub fn forward_cache(&self, input: &[F]) -> Result<MlpCache<F>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("mlp_forward input", self.input_dim(), input.len()));
        }
        let n = self.weights.len();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<Vec<F>> = Vec::with_capacity(n);
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let x = if i == 0 { input } else { post[i - 1].as_slice() };
            let mut z = Vec::with_capacity(w.rows());
            w.affine_into(x, b, &mut z)?;
            let y = if i + 1 == n {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            post.push(y);
        }
        if post.last().is_some_and(|y| y.iter().any(|v| !v.is_finite())) {
            return Err(Error::numerical("mlp_forward", "non-finite output"));
        }
        Ok(MlpCache {
            input: input.to_vec(),
            pre,
            post,
        })
    }

    fn check_cache(&self, cache: &MlpCache<F>) -> Result<()> {
        if cache.input.len() != self.input_dim() {
            return Err(Error::shape("mlp_backward cache input", self.input_dim(), cache.input.len()));
        }
        if cache.pre.len() != self.weights.len() || cache.post.len() != self.weights.len() {
            return Err(Error::shape("mlp_backward cache depth", self.weights.len(), cache.pre.len()));
        }
        for (z, &n) in cache.pre.iter().zip(&self.layer_sizes[1..]) {
            if z.len() != n {
                return Err(Error::shape("mlp_backward cache layer", n, z.len()));
            }
        }
        Ok(())
    }

    /// Gradient of a scalar loss with respect to every weight and bias, given `dloss/doutput`.
    pub fn backward(&self, cache: &MlpCache<F>, output_grad: &[F]) -> Result<Self> {
        let mut grads = self.zeros_like();
        self.backward_acc(cache, output_grad, &mut grads, None)?;
        Ok(grads)
    }

    /// Accumulates parameter gradients into `grads` and, if requested, writes the gradient
    /// with respect to the network input into `input_grad`.
    pub fn backward_acc(
        &self,
        cache: &MlpCache<F>,
        output_grad: &[F],
        grads: &mut Self,
        input_grad: Option<&mut Vec<F>>,
    ) -> Result<()> {
        self.check_cache(cache)?;
        if output_grad.len() != self.output_dim() {
            return Err(Error::shape("mlp_backward output_grad", self.output_dim(), output_grad.len()));
        }
        if !grads.same_shape(self) {
            return Err(Error::shape("mlp_backward grads", self.num_params(), grads.num_params()));
        }
        let n = self.weights.len();
        // dL/dz for the current layer.
        let mut delta = output_grad.to_vec();
        for i in (0..n).rev() {
            if i + 1 < n {
                for ((d, &z), &y) in delta.iter_mut().zip(&cache.pre[i]).zip(&cache.post[i]) {
                    *d *= self.activation.derivative(z, y);
                }
            }
            let x = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            grads.weights[i].add_outer(&delta, x);
            for (gb, &d) in grads.biases[i].iter_mut().zip(&delta) {
                *gb += d;
            }
            if i > 0 || input_grad.is_some() {
                let mut next = vec![F::zero(); self.layer_sizes[i]];
                self.weights[i].transpose_matvec_acc(&delta, &mut next);
                delta = next;
            }
        }
        if let Some(g) = input_grad {
            *g = delta;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::<f64>::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
        let (y, _) = p.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let p = MlpParams::<f64>::from_parts(
            vec![3, 3],
            vec![Matrix::identity(3)],
            vec![vec![0.0; 3]],
            Activation::Tanh,
        )
        .unwrap();
        let (y, _) = p.forward(&[0.3, -7.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.3, -7.0, 2.0]);
    }

    #[test]
    fn hand_evaluated_two_layer_forward() {
        // hidden = tanh([[1, 2], [0.5, -1]] x + [0, 0.1]); out = [1, -2] hidden + 0.3
        let w0 = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
        let w1 = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let p = MlpParams::<f64>::from_parts(
            vec![2, 2, 1],
            vec![w0, w1],
            vec![vec![0.0, 0.1], vec![0.3]],
            Activation::Tanh,
        )
        .unwrap();
        let (y, cache) = p.forward(&[1.0, -1.0]).unwrap();
        // z0 = [1 - 2, 0.5 + 1 + 0.1] = [-1, 1.6]
        let expected = (-1.0f64).tanh() - 2.0 * 1.6f64.tanh() + 0.3;
        assert_eq!(cache.pre[0], vec![-1.0, 1.6]);
        assert!((y[0] - expected).abs() < 1e-15);
        assert!((y[0] - (-2.304_931_264_768_707_7_f64)).abs() < 1e-12);
    }

    #[test]
    fn zero_seed_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::<f64>::init(&[3, 5, 2], Activation::Tanh, 1.0, &mut rng).unwrap();
        let (_, cache) = p.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = p.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MlpParams::<f64>::init(&[3, 2], Activation::Tanh, 1.0, &mut rng).unwrap();
        let x = [0.5, -1.5, 2.0];
        let (_, cache) = p.forward(&x).unwrap();
        let g = p.backward(&cache, &[1.0, 0.0]).unwrap();
        assert_eq!(g.weights()[0].row(0), &x);
        assert_eq!(g.weights()[0].row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(g.biases()[0], vec![1.0, 0.0]);
    }

    #[test]
    fn stale_cache_rejected() {
        let a = MlpParams::<f64>::zeros(&[2, 3, 1], Activation::Tanh).unwrap();
        let b = MlpParams::<f64>::zeros(&[2, 4, 1], Activation::Tanh).unwrap();
        let (_, cache) = a.forward(&[1.0, 2.0]).unwrap();
        assert!(matches!(b.backward(&cache, &[1.0]), Err(Error::Shape { .. })));
        assert!(matches!(a.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn relu_forward() {
        let w0 = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let w1 = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let p = MlpParams::<f64>::from_parts(
            vec![1, 2, 1],
            vec![w0, w1],
            vec![vec![0.0, 0.0], vec![0.0]],
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(p.forward(&[2.0]).unwrap().0, vec![2.0]);
        assert_eq!(p.forward(&[-3.0]).unwrap().0, vec![3.0]);
    }

    #[test]
    fn flat_round_trip_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::<f32>::init(&[4, 3, 2], Activation::Relu, 0.01, &mut rng).unwrap();
        assert_eq!(p.num_params(), 4 * 3 + 3 + 3 * 2 + 2);
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
    }
}
