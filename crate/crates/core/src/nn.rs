//! Dense feed-forward networks with exact backpropagation.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &str = "fedmarl-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
            Self::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - y * y,
            Self::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Checkpoint(format!("unknown activation {other:?}"))),
        }
    }
}

/// Multilayer perceptron. Weights of layer `l` are stored row-major with
/// shape `sizes[l + 1] x sizes[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden: Activation,
    output: Activation,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `values[0]` is the input, `values[l + 1]` the output of layer `l`.
    values: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace has at least the input")
    }
}

/// Parameter gradients of an [`Mlp`] plus the gradient with respect to its input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(&mut self.biases).flatten()
    }

    /// `self += scale * other`, parameters and input gradient alike.
    pub fn accumulate(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += scale * b;
        }
        for (a, b) in self.input.iter_mut().zip(&other.input) {
            *a += scale * b;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.params().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales parameter gradients so their global norm is at most `max_norm`.
    pub fn clip_to_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            self.params_mut().for_each(|g| *g *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.params().all(|g| *g == 0.0)
    }
}

impl Mlp {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, hidden, output);
        for ((weights, biases), &fan_in) in net.weights.iter_mut().zip(&mut net.biases).zip(sizes) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in weights {
                *w = rng.random_range(-bound..bound);
            }
            for b in biases {
                *b = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(
            sizes.len() >= 2,
            "a network needs at least an input and an output layer"
        );
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            hidden,
            output,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    /// All parameters, weights first then biases, layer by layer.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(&mut self.biases).flatten()
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for l in 0..self.layers() {
            let act = self.activation(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            x = (0..n_out)
                .map(|o| {
                    let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                    act.apply(self.biases[l][o] + dot(row, &x))
                })
                .collect();
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut values = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.layers());
        for l in 0..self.layers() {
            let act = self.activation(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let x = &values[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| self.biases[l][o] + dot(&self.weights[l][o * n_in..(o + 1) * n_in], x))
                .collect();
            values.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
        }
        Ok(Trace { values, pre })
    }

    /// Gradient of `output . upstream` with respect to every parameter and the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<GradientSet> {
        let trace = self.forward_trace(input)?;
        self.backward_trace(&trace, upstream)
    }

    pub fn backward_trace(&self, trace: &Trace, upstream: &[f64]) -> Result<GradientSet> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        let mut grads = GradientSet::zeros_like(self);
        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..self.layers()).rev() {
            let act = self.activation(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            for (o, d) in delta.iter_mut().enumerate().take(n_out) {
                *d *= act.derivative(trace.pre[l][o], trace.values[l + 1][o]);
            }
            let x = &trace.values[l];
            let mut next = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate().take(n_out) {
                grads.biases[l][o] = d;
                let row = o * n_in;
                for i in 0..n_in {
                    grads.weights[l][row + i] = d * x[i];
                    next[i] += d * self.weights[l][row + i];
                }
            }
            delta = next;
        }
        grads.input = delta;
        Ok(grads)
    }

    /// Plain gradient step `theta -= lr * g`.
    pub fn apply_gradients(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        for (p, g) in self.params_mut().zip(grads.params()) {
            *p -= lr * g;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Elementwise `self = phi * online + (1 - phi) * self`.
    pub fn soft_update_from(&mut self, online: &Mlp, phi: f64) -> Result<()> {
        soft_update(self, online, phi)
    }

    /// Max absolute parameter difference.
    pub fn distance(&self, other: &Mlp) -> f64 {
        self.params()
            .zip(other.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        let sizes: Vec<String> = self.sizes.iter().map(usize::to_string).collect();
        writeln!(w, "layers {}", sizes.join(" "))?;
        writeln!(w, "activations {} {}", self.hidden.name(), self.output.name())?;
        for l in 0..self.layers() {
            write_row(&mut w, &format!("w{l}"), &self.weights[l])?;
            write_row(&mut w, &format!("b{l}"), &self.biases[l])?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing {what}")))?
                .map_err(Error::from)
        };
        let header = next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version: u32 = parse_field(parts.next(), "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let layers_line = next("layers")?;
        let sizes = tagged(&layers_line, "layers")?
            .iter()
            .map(|s| parse_field(Some(s), "layer size"))
            .collect::<Result<Vec<usize>>>()?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Checkpoint("invalid layer sizes".into()));
        }
        let act_line = next("activations")?;
        let acts = tagged(&act_line, "activations")?;
        if acts.len() != 2 {
            return Err(Error::Checkpoint("expected two activations".into()));
        }
        let mut net = Mlp::zeros(&sizes, Activation::parse(acts[0])?, Activation::parse(acts[1])?);
        for l in 0..net.layers() {
            let wl = next("weights")?;
            net.weights[l] = parse_row(tagged(&wl, &format!("w{l}"))?, net.weights[l].len())?;
            let bl = next("biases")?;
            net.biases[l] = parse_row(tagged(&bl, &format!("b{l}"))?, net.biases[l].len())?;
        }
        Ok(net)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn write_row<W: Write>(w: &mut W, tag: &str, values: &[f64]) -> Result<()> {
    write!(w, "{tag}")?;
    for v in values {
        // Debug formatting of f64 is the shortest string that parses back exactly.
        write!(w, " {v:?}")?;
    }
    writeln!(w)?;
    Ok(())
}

fn tagged<'a>(line: &'a str, tag: &str) -> Result<Vec<&'a str>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::Checkpoint(format!("expected {tag:?} line")));
    }
    Ok(parts.collect())
}

fn parse_field<T: std::str::FromStr>(s: Option<&str>, what: &str) -> Result<T> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("bad {what}")))
}

fn parse_row(items: Vec<&str>, expected: usize) -> Result<Vec<f64>> {
    if items.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} values, found {}",
            items.len()
        )));
    }
    items.into_iter().map(|s| parse_field(Some(s), "value")).collect()
}

/// Elementwise `target = phi * online + (1 - phi) * target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, phi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::SoftUpdateCoefficient(phi));
    }
    if !target.same_shape(online) {
        return Err(Error::ShapeMismatch);
    }
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = phi * o + (1.0 - phi) * *t;
    }
    Ok(())
}

/// Plain stochastic gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Self { lr }
    }

    pub fn step(&self, net: &mut Mlp, grads: &GradientSet) -> Result<()> {
        net.apply_gradients(grads, self.lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Straight-line re-implementation used as a forward oracle.
    fn reference_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let s = net.sizes().to_vec();
        let mut x = input.to_vec();
        for l in 0..s.len() - 1 {
            let mut y = vec![0.0; s[l + 1]];
            for (o, yo) in y.iter_mut().enumerate() {
                let mut acc = net.biases(l)[o];
                for (i, xi) in x.iter().enumerate() {
                    acc += net.weights(l)[o * s[l] + i] * xi;
                }
                *yo = if l + 2 == s.len() {
                    match net.output_activation() {
                        Activation::Tanh => acc.tanh(),
                        Activation::Relu => acc.max(0.0),
                        Activation::Identity => acc,
                    }
                } else {
                    acc.max(0.0)
                };
            }
            x = y;
        }
        x
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 8, 4], Activation::Relu, Activation::Tanh);
        assert_eq!(net.forward(&[0.3, -2.0, 1.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn scalar_identity_net() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu, Activation::Relu);
        net.weights_mut(0)[0] = 1.0;
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut r = rng(1);
        for _ in 0..20 {
            let net = Mlp::new(&[7, 8, 8, 8, 1], Activation::Relu, Activation::Identity, &mut r);
            let x: Vec<f64> = (0..7).map(|_| r.random_range(-2.0..2.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = reference_forward(&net, &x);
            assert!((a[0] - b[0]).abs() <= 1e-12);
            assert_eq!(net.forward(&x).unwrap(), a);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::zeros(&[3, 4], Activation::Relu, Activation::Tanh);
        assert!(net.forward(&[1.0]).is_err());
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::new(&[3, 8, 4], Activation::Relu, Activation::Tanh, &mut rng(2));
        let g = net.backward(&[0.1, 0.2, 0.3], &[0.0; 4]).unwrap();
        assert!(g.is_zero());
        assert!(g.input.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_bias_gradient_is_upstream() {
        let net = Mlp::new(&[2, 3], Activation::Identity, Activation::Identity, &mut rng(3));
        let up = [0.5, -1.0, 2.0];
        for scale in [1.0, 10.0, 1e3] {
            let g = net.backward(&[scale, -scale], &up).unwrap();
            assert_eq!(g.biases[0], up.to_vec());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(4);
        for sizes in [vec![3, 8, 8, 8, 4], vec![7, 8, 8, 8, 1], vec![56, 8, 8, 8, 1]] {
            for trial in 0..20 {
                let out = if sizes.last() == Some(&4) {
                    Activation::Tanh
                } else {
                    Activation::Identity
                };
                let net = Mlp::new(&sizes, Activation::Relu, out, &mut r);
                let x: Vec<f64> = (0..sizes[0]).map(|_| r.random_range(-1.0..1.0)).collect();
                let up: Vec<f64> = (0..net.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
                let err = crate::nn::testing::max_fd_relative_error(&net, &x, &up, 1e-5);
                assert!(err < 1e-4, "{sizes:?} trial {trial}: {err}");
            }
        }
    }

    #[test]
    fn sgd_steps() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Identity, Activation::Identity);
        let g0 = GradientSet::zeros_like(&net);
        let before = net.clone();
        Sgd::new(0.002).step(&mut net, &g0).unwrap();
        assert_eq!(net, before);

        net.weights_mut(0)[0] = 1.0;
        let mut g = GradientSet::zeros_like(&net);
        g.weights[0][0] = 0.5;
        Sgd::new(0.002).step(&mut net, &g).unwrap();
        assert!((net.weights(0)[0] - 0.999).abs() < 1e-15);

        g.weights[0][0] = f64::NAN;
        assert!(Sgd::new(0.002).step(&mut net, &g).is_err());
    }

    #[test]
    fn sgd_descends_quadratic_probe() {
        // loss = 0.5 * (f(x) - y)^2 over a fixed batch
        let mut r = rng(5);
        let mut net = Mlp::new(&[2, 8, 1], Activation::Relu, Activation::Identity, &mut r);
        let batch: Vec<([f64; 2], f64)> = (0..8)
            .map(|_| {
                (
                    [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                    r.random_range(-1.0..1.0),
                )
            })
            .collect();
        let loss = |net: &Mlp| -> f64 {
            batch
                .iter()
                .map(|(x, y)| 0.5 * (net.forward(x).unwrap()[0] - y).powi(2))
                .sum::<f64>()
                / 8.0
        };
        let before = loss(&net);
        let mut g = GradientSet::zeros_like(&net);
        for (x, y) in &batch {
            let e = net.forward(x).unwrap()[0] - y;
            g.accumulate(&net.backward(x, &[e]).unwrap(), 1.0 / 8.0);
        }
        Sgd::new(1e-3).step(&mut net, &g).unwrap();
        assert!(loss(&net) < before);
    }

    #[test]
    fn soft_update_cases() {
        let mut one = Mlp::zeros(&[1, 1], Activation::Identity, Activation::Identity);
        one.weights_mut(0)[0] = 1.0;
        let mut target = Mlp::zeros(&[1, 1], Activation::Identity, Activation::Identity);
        soft_update(&mut target, &one, 0.1).unwrap();
        assert!((target.weights(0)[0] - 0.1).abs() < 1e-15);

        let mut t = target.clone();
        soft_update(&mut t, &one, 0.0).unwrap();
        assert_eq!(t, target);
        soft_update(&mut t, &one, 1.0).unwrap();
        assert_eq!(t, one);

        assert!(soft_update(&mut t, &one, 1.5).is_err());
        assert!(soft_update(&mut t, &one, -0.1).is_err());
        let other = Mlp::zeros(&[2, 1], Activation::Identity, Activation::Identity);
        assert!(soft_update(&mut t, &other, 0.5).is_err());
    }

    #[test]
    fn clip_bounds_norm() {
        let net = Mlp::new(&[3, 8, 1], Activation::Relu, Activation::Identity, &mut rng(6));
        let mut g = net.backward(&[1.0, 2.0, 3.0], &[100.0]).unwrap();
        g.clip_to_norm(1.0);
        assert!(g.global_norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = Mlp::new(&[3, 8, 8, 8, 4], Activation::Relu, Activation::Tanh, &mut rng(7));
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = Mlp::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert!(back.params().zip(net.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(Mlp::read_from(&b"garbage\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn soft_update_contracts(phi in 0.0f64..=1.0, seed in 0u64..1000) {
            let mut r = rng(seed);
            let online = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut r);
            let mut target = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut r);
            let before: Vec<f64> = target.params().zip(online.params()).map(|(t, o)| (t - o).abs()).collect();
            soft_update(&mut target, &online, phi).unwrap();
            for ((t, o), b) in target.params().zip(online.params()).zip(before) {
                prop_assert!(((t - o).abs() - (1.0 - phi) * b).abs() <= 1e-12);
            }
        }

        #[test]
        fn checkpoint_round_trip(seed in 0u64..10_000) {
            let net = Mlp::new(&[5, 3, 2], Activation::Relu, Activation::Identity, &mut rng(seed));
            let mut buf = Vec::new();
            net.write_to(&mut buf).unwrap();
            prop_assert_eq!(Mlp::read_from(buf.as_slice()).unwrap(), net);
        }
    }
}

/// Finite-difference gradient check shared by unit tests and the acceptance suite.
#[doc(hidden)]
pub mod testing {
    use super::Mlp;

    /// Max relative error between analytic and central-difference gradients
    /// of `output . upstream`, over all parameters and inputs.
    pub fn max_fd_relative_error(net: &Mlp, input: &[f64], upstream: &[f64], h: f64) -> f64 {
        let objective =
            |n: &Mlp, x: &[f64]| -> f64 { n.forward(x).unwrap().iter().zip(upstream).map(|(o, u)| o * u).sum() };
        let grads = net.backward(input, upstream).unwrap();
        let analytic: Vec<f64> = grads
            .weights
            .iter()
            .chain(&grads.biases)
            .flatten()
            .chain(&grads.input)
            .copied()
            .collect();

        let mut numeric = Vec::with_capacity(analytic.len());
        let n_params = net.num_params();
        for i in 0..n_params {
            let mut plus = net.clone();
            let mut minus = net.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            *minus.params_mut().nth(i).unwrap() -= h;
            numeric.push((objective(&plus, input) - objective(&minus, input)) / (2.0 * h));
        }
        for i in 0..input.len() {
            let mut xp = input.to_vec();
            let mut xm = input.to_vec();
            xp[i] += h;
            xm[i] -= h;
            numeric.push((objective(net, &xp) - objective(net, &xm)) / (2.0 * h));
        }

        // relative to the larger magnitude, floored to avoid dividing by ~0
        analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }
}
