//! Small fully-connected networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector so that policies, encoders and
//! optimizers all share the same layout: for each layer, the weight matrix
//! `[out][in]` in row-major order followed by the bias `[out]`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    None,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::None => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    dims: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass; `acts[0]` is the input and
/// `acts[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.acts[0].nrows()
    }

    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache has at least the input")
    }
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNet {
    /// All-zero network.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidCount("network needs at least two positive layer dims"));
        }
        Ok(Self {
            dims: dims.to_vec(),
            hidden,
            output,
            params: vec![0.0; param_count(dims)],
        })
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        stream: RngStream,
    ) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden, output)?;
        let mut rng = stream.rng();
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = scale * z;
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden, output)?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dims("DenseNet::set_params", self.params.len(), params.len()));
        }
        self.params = params;
        Ok(())
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.dims[..=layer])
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.layer_offset(layer);
        ArrayView2::from_shape((n_out, n_in), &self.params[off..off + n_in * n_out])
            .expect("layout matches dims")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.layer_offset(layer) + n_in * n_out;
        ArrayView1::from(&self.params[off..off + n_out])
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let (out, cache) = self.forward_batch(x)?;
        Ok((out.row(0).to_vec(), cache))
    }

    /// Output only; avoids keeping the activations around.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::dims("DenseNet::predict", self.input_dim(), input.len()));
        }
        let mut h = input.to_vec();
        for l in 0..self.num_layers() {
            let w = self.weights(l);
            let b = self.bias(l);
            let act = self.activation_of(l);
            h = w
                .outer_iter()
                .zip(b.iter())
                .map(|(row, bi)| act.apply(row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>() + bi))
                .collect();
        }
        Ok(h)
    }

    /// Row-wise forward pass over a batch `[batch, input_dim]`.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::dims("DenseNet::forward", self.input_dim(), inputs.ncols()));
        }
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(inputs.to_owned());
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, acts[l].view());
            acts.push(next);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, ForwardCache { acts }))
    }

    fn layer_forward(&self, layer: usize, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = h.dot(&self.weights(layer).t());
        z += &self.bias(layer);
        self.activate(layer, z)
    }

    fn activate(&self, layer: usize, mut z: Array2<f64>) -> Array2<f64> {
        let act = self.activation_of(layer);
        if act != Activation::None {
            z.mapv_inplace(|v| act.apply(v));
        }
        z
    }

    /// Continues a forward pass from the pre-activation of the first layer.
    /// Lets callers exploit linearity of the first affine map.
    pub fn forward_from_first_preactivation(&self, pre: Array2<f64>) -> Array2<f64> {
        let mut h = self.activate(0, pre);
        for l in 1..self.num_layers() {
            h = self.layer_forward(l, h.view());
        }
        h
    }

    pub fn backward(&self, cache: &ForwardCache, out_grad: &[f64]) -> Result<Vec<f64>> {
        let g = ArrayView2::from_shape((1, out_grad.len()), out_grad).expect("row vector");
        Ok(self.backward_batch(cache, g, false)?.0)
    }

    /// Parameter gradient and input gradient for a single example.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache,
        out_grad: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = ArrayView2::from_shape((1, out_grad.len()), out_grad).expect("row vector");
        let (pg, ig) = self.backward_batch(cache, g, true)?;
        Ok((pg, ig.expect("requested").row(0).to_vec()))
    }

    /// Reverse pass over a batch. Parameter gradients are summed over rows.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        out_grads: ArrayView2<'_, f64>,
        want_input_grad: bool,
    ) -> Result<(Vec<f64>, Option<Array2<f64>>)> {
        if cache.acts.len() != self.dims.len() || cache.acts[0].ncols() != self.input_dim() {
            return Err(Error::dims("DenseNet::backward cache", self.dims.len(), cache.acts.len()));
        }
        if out_grads.ncols() != self.output_dim() {
            return Err(Error::dims("DenseNet::backward", self.output_dim(), out_grads.ncols()));
        }
        if out_grads.nrows() != cache.batch_size() {
            return Err(Error::dims("DenseNet::backward batch", cache.batch_size(), out_grads.nrows()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let last = self.num_layers() - 1;
        let mut delta = out_grads.to_owned();
        apply_derivative(&mut delta, &cache.acts[last + 1], self.activation_of(last));
        let mut input_grad = None;
        for l in (0..=last).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let gw = delta.t().dot(&cache.acts[l]);
            grad[off..off + n_in * n_out]
                .iter_mut()
                .zip(gw.iter())
                .for_each(|(g, v)| *g = *v);
            let gb = delta.sum_axis(Axis(0));
            grad[off + n_in * n_out..off + n_in * n_out + n_out].copy_from_slice(gb.as_slice().unwrap());
            if l > 0 || want_input_grad {
                let mut prev = delta.dot(&self.weights(l));
                if l > 0 {
                    apply_derivative(&mut prev, &cache.acts[l], self.hidden);
                    delta = prev;
                } else {
                    input_grad = Some(prev);
                }
            }
        }
        Ok((grad, input_grad))
    }
}

fn apply_derivative(delta: &mut Array2<f64>, outputs: &Array2<f64>, act: Activation) {
    if act == Activation::None {
        return;
    }
    delta.zip_mut_with(outputs, |d, &y| *d *= act.derivative_from_output(y));
}

/// Adam optimizer state. Descends on the supplied gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;

    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.len() {
            return Err(Error::dims("AdamState::update params", self.len(), params.len()));
        }
        if grads.len() != self.len() {
            return Err(Error::dims("AdamState::update grads", self.len(), grads.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Stacks equal-length rows into a matrix.
pub fn stack_rows(rows: &[&[f64]], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        m.slice_mut(s![i, ..]).assign(&Array1::from(r.to_vec()));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_vector;
    use proptest::prelude::*;

    fn loss_of(net: &DenseNet, x: &[f64], w: &[f64]) -> f64 {
        net.predict(x).unwrap().iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
            .fold(0.0, f64::max)
    }

    fn fd_grad(net: &DenseNet, x: &[f64], w: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let mut probe = net.clone();
        (0..net.param_count())
            .map(|i| {
                let orig = probe.params()[i];
                probe.params_mut()[i] = orig + h;
                let up = loss_of(&probe, x, w);
                probe.params_mut()[i] = orig - h;
                let down = loss_of(&probe, x, w);
                probe.params_mut()[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_net_gives_zero() {
        let net = DenseNet::zeros(&[3, 5, 2], Activation::None, Activation::None).unwrap();
        let (out, _) = net.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let params = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let net = DenseNet::from_params(&[3, 3], Activation::None, Activation::None, params).unwrap();
        let x = [0.3, -1.7, 2.5];
        assert_eq!(net.forward(&x).unwrap().0, x.to_vec());
    }

    #[test]
    fn hand_set_two_three_one_tanh() {
        // 2-3-1 with tanh hidden, linear output
        let w1 = [[0.5, -0.2], [0.1, 0.4], [-0.3, 0.8]];
        let b1 = [0.05, -0.1, 0.2];
        let w2 = [0.7, -0.6, 0.25];
        let b2 = 0.3;
        let mut params = Vec::new();
        w1.iter().for_each(|r| params.extend_from_slice(r));
        params.extend_from_slice(&b1);
        params.extend_from_slice(&w2);
        params.push(b2);
        let net = DenseNet::from_params(&[2, 3, 1], Activation::Tanh, Activation::None, params).unwrap();
        let x = [1.2, -0.7];
        let mut expected = b2;
        for j in 0..3 {
            let pre = w1[j][0] * x[0] + w1[j][1] * x[1] + b1[j];
            expected += w2[j] * pre.tanh();
        }
        let out = net.forward(&x).unwrap().0[0];
        assert!((out - expected).abs() < 1e-15);
        assert_eq!(net.predict(&x).unwrap()[0], out);
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let net = DenseNet::zeros(&[3, 2], Activation::None, Activation::None).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimMismatch { .. })));
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn linear_one_one_chain_rule() {
        let net = DenseNet::from_params(&[1, 1], Activation::None, Activation::None, vec![0.8, -0.1]).unwrap();
        let (_, cache) = net.forward(&[2.5]).unwrap();
        assert_eq!(net.backward(&cache, &[1.0]).unwrap(), vec![2.5, 1.0]);
        assert_eq!(net.backward(&cache, &[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences_4_8_3() {
        let net = DenseNet::init(&[4, 8, 3], Activation::Tanh, Activation::None, RngStream::new(1, 2)).unwrap();
        let x = gaussian_vector(RngStream::new(1, 3), 4);
        let w = gaussian_vector(RngStream::new(1, 4), 3);
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &w).unwrap();
        assert_eq!(g.len(), param_count(&[4, 8, 3]));
        assert!(max_rel_err(&g, &fd_grad(&net, &x, &w)) <= 1e-5);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = DenseNet::init(&[5, 7, 2], Activation::Tanh, Activation::Tanh, RngStream::new(9, 0)).unwrap();
        let x = gaussian_vector(RngStream::new(9, 1), 5);
        let w = gaussian_vector(RngStream::new(9, 2), 2);
        let (_, cache) = net.forward(&x).unwrap();
        let (_, ig) = net.backward_with_input(&cache, &w).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..5)
            .map(|i| {
                let mut up = x.clone();
                up[i] += h;
                let mut dn = x.clone();
                dn[i] -= h;
                (loss_of(&net, &up, &w) - loss_of(&net, &dn, &w)) / (2.0 * h)
            })
            .collect();
        assert!(max_rel_err(&ig, &fd) <= 1e-5);
    }

    #[test]
    fn batch_gradient_is_sum_of_rows() {
        let net = DenseNet::init(&[3, 4, 2], Activation::Relu, Activation::None, RngStream::new(4, 4)).unwrap();
        let xs = [gaussian_vector(RngStream::new(4, 5), 3), gaussian_vector(RngStream::new(4, 6), 3)];
        let gs = [vec![1.0, -0.5], vec![0.2, 0.3]];
        let batch = stack_rows(&[&xs[0], &xs[1]], 3);
        let gbatch = stack_rows(&[&gs[0], &gs[1]], 2);
        let (_, cache) = net.forward_batch(batch.view()).unwrap();
        let (total, _) = net.backward_batch(&cache, gbatch.view(), false).unwrap();
        let mut summed = vec![0.0; net.param_count()];
        for (x, g) in xs.iter().zip(&gs) {
            let (_, c) = net.forward(x).unwrap();
            for (s, v) in summed.iter_mut().zip(net.backward(&c, g).unwrap()) {
                *s += v;
            }
        }
        for (a, b) in total.iter().zip(&summed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn first_preactivation_continuation_matches_forward() {
        let net = DenseNet::init(&[6, 5, 3], Activation::Relu, Activation::Relu, RngStream::new(2, 2)).unwrap();
        let x = gaussian_vector(RngStream::new(2, 3), 6);
        let pre: Vec<f64> = net
            .weights(0)
            .outer_iter()
            .zip(net.bias(0))
            .map(|(r, b)| r.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect();
        let cont = net.forward_from_first_preactivation(Array2::from_shape_vec((1, 5), pre).unwrap());
        let direct = net.predict(&x).unwrap();
        for (a, b) in cont.row(0).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop_on_fresh_state() {
        let mut st = AdamState::new(3, 0.01);
        let mut p = vec![1.0, 2.0, 3.0];
        st.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(st.step, 1);
        st.first_moment = vec![1.0; 3];
        st.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(st.first_moment, vec![0.9; 3]);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut st = AdamState::new(3, AdamState::DEFAULT_LEARNING_RATE);
        let mut p = vec![0.0; 3];
        st.update(&mut p, &[2.0, -0.5, 1e-3]).unwrap();
        let lr = AdamState::DEFAULT_LEARNING_RATE;
        assert!((p[0] + lr).abs() < 1e-10);
        assert!((p[1] - lr).abs() < 1e-10);
        assert!((p[2] + lr).abs() < 1e-8);
        assert!(matches!(st.update(&mut p, &[1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let c = [1.0, -2.0, 0.5, 3.0];
        let mut p = vec![0.0; 4];
        let start = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut st = AdamState::new(4, 0.05);
        for _ in 0..200 {
            let g: Vec<f64> = p.iter().zip(&c).map(|(x, ci)| 2.0 * (x - ci)).collect();
            st.update(&mut p, &g).unwrap();
        }
        let end = p.iter().zip(&c).map(|(x, ci)| (x - ci) * (x - ci)).sum::<f64>().sqrt();
        assert!(end * 100.0 <= start, "start {start} end {end}");
    }

    fn arch() -> impl Strategy<Value = (Vec<usize>, Activation, Activation, u64)> {
        let act = prop_oneof![Just(Activation::Tanh), Just(Activation::None), Just(Activation::Relu)];
        (prop::collection::vec(1usize..=32, 2..=4), act.clone(), act, any::<u64>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn backward_matches_fd_over_grid((dims, hid, out, seed) in arch()) {
            // ReLU kinks make central differences unreliable; smooth nets only.
            prop_assume!(hid != Activation::Relu && out != Activation::Relu);
            let net = DenseNet::init(&dims, hid, out, RngStream::new(seed, 0)).unwrap();
            let x = gaussian_vector(RngStream::new(seed, 1), dims[0]);
            let w = gaussian_vector(RngStream::new(seed, 2), *dims.last().unwrap());
            let (_, cache) = net.forward(&x).unwrap();
            let g = net.backward(&cache, &w).unwrap();
            prop_assert!(max_rel_err(&g, &fd_grad(&net, &x, &w)) <= 1e-5);
        }

        #[test]
        fn forward_is_deterministic_and_flat_roundtrips((dims, hid, out, seed) in arch()) {
            let net = DenseNet::init(&dims, hid, out, RngStream::new(seed, 0)).unwrap();
            let x = gaussian_vector(RngStream::new(seed, 1), dims[0]);
            prop_assert_eq!(net.forward(&x).unwrap().0, net.forward(&x).unwrap().0);
            let rebuilt = DenseNet::from_params(&dims, hid, out, net.params().to_vec()).unwrap();
            prop_assert_eq!(rebuilt, net);
        }
    }
}
