//! Widened layer stacks that pass inputs through nonlinear activations
//! unchanged at initialization, plus baseline initializers and the
//! measurements taken on them (init rate, recovery rate, stability sweep).
//!
//! The sign-split wrapper duplicates each pre-activation v as the pair
//! (v, -v); after an activation with sigma(x) - sigma(-x) = c x, the next
//! layer's block structure subtracts the halves and rescales by 1/c,
//! recovering v. The general wrapper instead has each activation step emit
//! (sigma(v), sigma(v) - v), whose difference is v for any sigma.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::affine::AffineTransform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SampleStream;
use crate::scalar::Scalar;

/// Closed-form activation kinds with a known recovery constant c such that
/// sigma(x) - sigma(-x) = c x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu { delta: f64 },
    SoftRelu,
    LogSigmoid,
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Relu => write!(f, "relu"),
            ActivationKind::LeakyRelu { delta } => write!(f, "leaky_relu({delta})"),
            ActivationKind::SoftRelu => write!(f, "soft_relu"),
            ActivationKind::LogSigmoid => write!(f, "log_sigmoid"),
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    /// Parses the display form; a bare "leaky_relu" gets slope 0.01.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => return Ok(ActivationKind::Relu),
            "soft_relu" => return Ok(ActivationKind::SoftRelu),
            "log_sigmoid" => return Ok(ActivationKind::LogSigmoid),
            "leaky_relu" => return Ok(ActivationKind::LeakyRelu { delta: 0.01 }),
            _ => {}
        }
        if let Some(inner) = s
            .strip_prefix("leaky_relu(")
            .and_then(|rest| rest.strip_suffix(')'))
        {
            let delta: f64 = inner.parse().map_err(|_| Error::InvalidArgument {
                context: format!("bad leaky_relu slope {inner:?}"),
            })?;
            return Ok(ActivationKind::LeakyRelu { delta });
        }
        Err(Error::InvalidArgument {
            context: format!(
                "unknown activation {s:?}; expected relu, leaky_relu[(slope)], \
                 soft_relu, or log_sigmoid"
            ),
        })
    }
}

impl ActivationKind {
    /// The constant c in sigma(x) - sigma(-x) = c x.
    pub fn recovery_constant(&self) -> f64 {
        match self {
            ActivationKind::Relu => 1.0,
            ActivationKind::LeakyRelu { delta } => 1.0 + delta,
            ActivationKind::SoftRelu => 1.0,
            ActivationKind::LogSigmoid => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ActivationKind::LeakyRelu { delta } = self {
            if !(delta.is_finite() && *delta > 0.0) {
                return Err(Error::InvalidArgument {
                    context: format!("leaky_relu slope must be positive, got {delta}"),
                });
            }
        }
        Ok(())
    }

    /// Elementwise activation. The soft-relu and log-sigmoid branches are
    /// arranged so that sigma(x) and sigma(-x) share the same log1p(exp(.))
    /// term bit for bit, keeping the recovery identity at rounding error.
    pub fn apply<T: Scalar>(&self, x: T) -> T {
        match self {
            ActivationKind::Relu => {
                if x >= T::ZERO {
                    x
                } else {
                    T::ZERO
                }
            }
            ActivationKind::LeakyRelu { delta } => {
                if x >= T::ZERO {
                    x
                } else {
                    T::from_f64(*delta) * x
                }
            }
            ActivationKind::SoftRelu => {
                // ln(1 + e^x)
                if x > T::ZERO {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            ActivationKind::LogSigmoid => {
                // ln(1 / (1 + e^-x))
                if x >= T::ZERO {
                    -((-x).exp().ln_1p())
                } else {
                    x - x.exp().ln_1p()
                }
            }
        }
    }

    pub fn apply_slice<T: Scalar>(&self, xs: &mut [T]) {
        for v in xs.iter_mut() {
            *v = self.apply(*v);
        }
    }
}

/// How a stack evaluates its layers.
#[derive(Clone)]
pub enum StackKind<T> {
    /// Widened layers; closed-form activation between them.
    SignSplit(ActivationKind),
    /// Widened layers; arbitrary activation with the pair-carrying wrapper.
    General(Arc<dyn Fn(T) -> T + Send + Sync>),
    /// Plain affine layers, optionally with an activation after every layer
    /// but the last. Used for baselines and activation-free evaluation.
    Direct(Option<ActivationKind>),
}

impl<T> fmt::Debug for StackKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StackKind::SignSplit(a) => write!(f, "SignSplit({a:?})"),
            StackKind::General(_) => write!(f, "General(..)"),
            StackKind::Direct(a) => write!(f, "Direct({a:?})"),
        }
    }
}

/// Baseline initialization schemes for comparison stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Uniform in +-1/sqrt(fan_in) for weights and biases.
    Random,
    /// Glorot uniform in +-sqrt(6/(fan_in+fan_out)) for weights, zero bias.
    Xavier,
    /// Identity weights, zero bias; requires square layers.
    Net2Net,
}

/// An ordered list of affine layers plus an evaluation rule.
#[derive(Debug, Clone)]
pub struct TransparentStack<T> {
    layers: Vec<AffineTransform<T>>,
    kind: StackKind<T>,
    base_dims: Vec<usize>,
}

impl<T: Scalar> TransparentStack<T> {
    pub fn layers(&self) -> &[AffineTransform<T>] {
        &self.layers
    }

    pub fn kind(&self) -> &StackKind<T> {
        &self.kind
    }

    pub fn base_dims(&self) -> &[usize] {
        &self.base_dims
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Wraps plain affine layers without widening; activation (if any) runs
    /// after every layer except the last.
    pub fn direct(
        layers: Vec<AffineTransform<T>>,
        activation: Option<ActivationKind>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput { context: "stack" });
        }
        if let Some(a) = &activation {
            a.validate()?;
        }
        let mut base_dims = vec![layers[0].in_dim()];
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != *base_dims.last().unwrap() {
                return Err(Error::DimensionMismatch {
                    context: "stack layers",
                    left: format!("layer {} input {}", i, layer.in_dim()),
                    right: format!("previous output {}", base_dims.last().unwrap()),
                });
            }
            base_dims.push(layer.out_dim());
        }
        Ok(TransparentStack {
            layers,
            kind: StackKind::Direct(activation),
            base_dims,
        })
    }

    /// Batch evaluation, one input row per matrix row.
    pub fn forward(&self, x_batch: &Matrix<T>) -> Result<Matrix<T>> {
        if x_batch.cols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "stack forward",
                left: format!("batch width {}", x_batch.cols()),
                right: format!("stack input {}", self.in_dim()),
            });
        }
        let last = self.layers.len() - 1;
        let mut y = x_batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            y = y.matmul(layer.weight())?;
            let bias = layer.bias();
            for r in 0..y.rows() {
                let row = y.row_mut(r);
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += *b;
                }
            }
            if i < last {
                match &self.kind {
                    StackKind::SignSplit(a) => {
                        for r in 0..y.rows() {
                            a.apply_slice(y.row_mut(r));
                        }
                    }
                    StackKind::General(sigma) => {
                        // Halves (v0, v1) become (sigma(v0), sigma(v0) + v1);
                        // the next layer's subtract block recovers v0.
                        let half = y.cols() / 2;
                        for r in 0..y.rows() {
                            let row = y.row_mut(r);
                            for j in 0..half {
                                let s = sigma(row[j]);
                                row[j] = s;
                                row[half + j] = s + row[half + j];
                            }
                        }
                    }
                    StackKind::Direct(Some(a)) => {
                        for r in 0..y.rows() {
                            a.apply_slice(y.row_mut(r));
                        }
                    }
                    StackKind::Direct(None) => {}
                }
            }
        }
        Ok(y)
    }

    /// Percentage of weight and bias entries with magnitude above epsilon.
    pub fn init_rate(&self, epsilon: f64) -> Result<f64> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument {
                context: format!("epsilon must be positive, got {epsilon}"),
            });
        }
        let mut total = 0usize;
        let mut live = 0usize;
        for layer in &self.layers {
            for v in layer.weight().data().iter().chain(layer.bias()) {
                total += 1;
                if v.to_f64().abs() > epsilon {
                    live += 1;
                }
            }
        }
        Ok(100.0 * live as f64 / total as f64)
    }

    /// Percentage of output entries within epsilon of the matching input.
    pub fn recovery_rate(&self, inputs: &Matrix<T>, epsilon: f64) -> Result<f64> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument {
                context: format!("epsilon must be positive, got {epsilon}"),
            });
        }
        if self.out_dim() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "recovery_rate",
                left: format!("input {}", self.in_dim()),
                right: format!("output {}", self.out_dim()),
            });
        }
        let out = self.forward(inputs)?;
        let total = inputs.rows() * inputs.cols();
        let recovered = out
            .data()
            .iter()
            .zip(inputs.data())
            .filter(|(o, i)| (o.to_f64() - i.to_f64()).abs() < epsilon)
            .count();
        Ok(100.0 * recovered as f64 / total as f64)
    }

    /// Max |forward(x) - x| over uniformly sampled inputs, one result per
    /// range; all ranges draw from a single stream seeded here.
    pub fn stability_sweep(
        &self,
        ranges: &[(f64, f64)],
        samples: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let mut stream = SampleStream::new(seed);
        let m0 = self.in_dim();
        let mut out = Vec::with_capacity(ranges.len());
        for &(lo, hi) in ranges {
            if !(lo < hi) {
                return Err(Error::InvalidArgument {
                    context: format!("empty range [{lo}, {hi}]"),
                });
            }
            let data: Vec<T> = (0..samples * m0)
                .map(|_| T::from_f64(stream.next_uniform(lo, hi)))
                .collect();
            let batch = Matrix::from_vec(samples, m0, data)?;
            let fwd = self.forward(&batch)?;
            out.push(fwd.max_abs_diff(&batch)?);
        }
        Ok(out)
    }

    /// Copy with i.i.d. N(0, variance) noise added to every parameter.
    pub fn perturbed(&self, variance: f64, seed: u64) -> Self {
        let mut stream = SampleStream::new(seed);
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let (rows, cols) = (layer.weight().rows(), layer.weight().cols());
                let mut w = layer.weight().clone();
                for r in 0..rows {
                    for c in 0..cols {
                        let noisy = w.get(r, c) + T::from_f64(stream.next_normal(0.0, variance));
                        w.set(r, c, noisy);
                    }
                }
                let bias = layer
                    .bias()
                    .iter()
                    .map(|b| *b + T::from_f64(stream.next_normal(0.0, variance)))
                    .collect();
                AffineTransform::new(w, bias).expect("perturbed layer")
            })
            .collect();
        TransparentStack {
            layers,
            kind: self.kind.clone(),
            base_dims: self.base_dims.clone(),
        }
    }
}

/// Widened weight blocks for one chain layer.
///
/// role 0 (first):  [A | -A],            bias (b, -b)
/// role 1 (middle): s [[A, -A], [-A, A]], bias (b, -b)
/// role 2 (last):   s [[A], [-A]],        bias b
fn widen_layer<T: Scalar>(
    layer: &AffineTransform<T>,
    role: u8,
    scale: Option<f64>,
) -> AffineTransform<T> {
    let a = layer.weight();
    let (m, n) = (a.rows(), a.cols());
    let s = scale.map(T::from_f64);
    let scaled = |v: T| match s {
        Some(s) => v * s,
        None => v,
    };
    let (w, bias) = match role {
        0 => {
            let mut w: Matrix<T> = Matrix::zeros(m, 2 * n);
            for i in 0..m {
                for j in 0..n {
                    let v = a.get(i, j);
                    w.set(i, j, v);
                    w.set(i, n + j, -v);
                }
            }
            let mut bias: Vec<T> = layer.bias().to_vec();
            bias.extend(layer.bias().iter().map(|b| -*b));
            (w, bias)
        }
        1 => {
            let mut w: Matrix<T> = Matrix::zeros(2 * m, 2 * n);
            for i in 0..m {
                for j in 0..n {
                    let v = scaled(a.get(i, j));
                    w.set(i, j, v);
                    w.set(i, n + j, -v);
                    w.set(m + i, j, -v);
                    w.set(m + i, n + j, v);
                }
            }
            let mut bias: Vec<T> = layer.bias().to_vec();
            bias.extend(layer.bias().iter().map(|b| -*b));
            (w, bias)
        }
        _ => {
            let mut w: Matrix<T> = Matrix::zeros(2 * m, n);
            for i in 0..m {
                for j in 0..n {
                    let v = scaled(a.get(i, j));
                    w.set(i, j, v);
                    w.set(m + i, j, -v);
                }
            }
            (w, layer.bias().to_vec())
        }
    };
    AffineTransform::new(w, bias).expect("widened layer")
}

fn check_chain<T: Scalar>(chain: &[AffineTransform<T>]) -> Result<Vec<usize>> {
    if chain.len() < 2 {
        return Err(Error::InvalidChain {
            reason: format!("need at least 2 layers, got {}", chain.len()),
        });
    }
    let mut dims = vec![chain[0].in_dim()];
    for (i, layer) in chain.iter().enumerate() {
        if layer.in_dim() != *dims.last().unwrap() {
            return Err(Error::DimensionMismatch {
                context: "chain widening",
                left: format!("layer {} input {}", i, layer.in_dim()),
                right: format!("previous output {}", dims.last().unwrap()),
            });
        }
        dims.push(layer.out_dim());
    }
    Ok(dims)
}

/// Widens an identity chain into a stack that is transparent through the
/// given closed-form activation. The 1/c rescale for activations with c != 1
/// is folded into the subtract blocks (middle and last layer weights).
pub fn build_transparent_stack<T: Scalar>(
    chain: &[AffineTransform<T>],
    activation: ActivationKind,
) -> Result<TransparentStack<T>> {
    activation.validate()?;
    let base_dims = check_chain(chain)?;
    let c = activation.recovery_constant();
    let scale = if c == 1.0 { None } else { Some(1.0 / c) };
    Ok(TransparentStack {
        layers: widen_all(chain, scale),
        kind: StackKind::SignSplit(activation),
        base_dims,
    })
}

/// Widens an identity chain into a stack transparent through ANY elementwise
/// activation, via the pair-carrying wrapper. No rescale is involved.
pub fn build_general_stack<T: Scalar, F>(
    chain: &[AffineTransform<T>],
    sigma: F,
) -> Result<TransparentStack<T>>
where
    F: Fn(T) -> T + Send + Sync + 'static,
{
    let base_dims = check_chain(chain)?;
    Ok(TransparentStack {
        layers: widen_all(chain, None),
        kind: StackKind::General(Arc::new(sigma)),
        base_dims,
    })
}

fn widen_all<T: Scalar>(chain: &[AffineTransform<T>], scale: Option<f64>) -> Vec<AffineTransform<T>> {
    let k = chain.len();
    chain
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let role = if i == 0 {
                0
            } else if i + 1 == k {
                2
            } else {
                1
            };
            // The first layer feeds raw inputs, not a split pair: no rescale.
            let s = if role == 0 { None } else { scale };
            widen_layer(layer, role, s)
        })
        .collect()
}

/// Builds a plain stack initialized by the named baseline scheme. Sampling
/// order is fixed: per layer, weights row-major, then biases.
pub fn baseline_init<T: Scalar>(
    kind: BaselineKind,
    dims: &[usize],
    seed: u64,
    activation: Option<ActivationKind>,
) -> Result<TransparentStack<T>> {
    if dims.len() < 2 {
        return Err(Error::InvalidChain {
            reason: format!("need at least 1 layer, got dims {dims:?}"),
        });
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidChain {
            reason: "zero width".into(),
        });
    }
    if kind == BaselineKind::Net2Net && dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidArgument {
            context: format!("net2net requires square layers, got dims {dims:?}"),
        });
    }
    let mut stream = SampleStream::new(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let layer = match kind {
            BaselineKind::Random => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data: Vec<T> = (0..fan_in * fan_out)
                    .map(|_| T::from_f64(stream.next_uniform(-bound, bound)))
                    .collect();
                let bias: Vec<T> = (0..fan_out)
                    .map(|_| T::from_f64(stream.next_uniform(-bound, bound)))
                    .collect();
                AffineTransform::new(Matrix::from_vec(fan_in, fan_out, data)?, bias)?
            }
            BaselineKind::Xavier => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data: Vec<T> = (0..fan_in * fan_out)
                    .map(|_| T::from_f64(stream.next_uniform(-bound, bound)))
                    .collect();
                AffineTransform::new(
                    Matrix::from_vec(fan_in, fan_out, data)?,
                    vec![T::ZERO; fan_out],
                )?
            }
            BaselineKind::Net2Net => {
                AffineTransform::new(Matrix::identity(fan_in), vec![T::ZERO; fan_out])?
            }
        };
        layers.push(layer);
    }
    TransparentStack::direct(layers, activation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{build_identity_chain, ChainSpec};
    use crate::rng::RngSpec;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn relu_recovery_at_a_point() {
        let a = ActivationKind::Relu;
        assert_eq!(a.apply(3.0_f64) - a.apply(-3.0_f64), 3.0);
    }

    #[test]
    fn leaky_relu_recovery_at_a_point() {
        let a = ActivationKind::LeakyRelu { delta: 0.1 };
        let d = a.apply(2.0_f64) - a.apply(-2.0_f64);
        assert!((d - 2.2).abs() <= 1e-15);
    }

    #[test]
    fn log_sigmoid_recovery_on_integers() {
        let a = ActivationKind::LogSigmoid;
        for x in -5..=5 {
            let x = x as f64;
            let d = a.apply(x) - a.apply(-x);
            assert!((d - x).abs() <= 1e-12, "x={x}");
        }
    }

    #[test]
    fn recovery_identity_on_dense_grid() {
        // |sigma(x) - sigma(-x) - c x| <= 1e-12 max(1, |x|) over [-20, 20].
        let kinds = [
            ActivationKind::Relu,
            ActivationKind::LeakyRelu { delta: 0.01 },
            ActivationKind::LeakyRelu { delta: 0.1 },
            ActivationKind::LeakyRelu { delta: 0.5 },
            ActivationKind::SoftRelu,
            ActivationKind::LogSigmoid,
        ];
        for a in kinds {
            let c = a.recovery_constant();
            for &x in &grid(4001, -20.0, 20.0) {
                let err = (a.apply(x) - a.apply(-x) - c * x).abs();
                assert!(
                    err <= 1e-12 * x.abs().max(1.0),
                    "{a:?} at x={x}: err {err:.3e}"
                );
            }
        }
    }

    #[test]
    fn leaky_slope_must_be_positive() {
        assert!(ActivationKind::LeakyRelu { delta: 0.0 }.validate().is_err());
        assert!(ActivationKind::LeakyRelu { delta: -0.1 }.validate().is_err());
        assert!(ActivationKind::LeakyRelu { delta: 0.2 }.validate().is_ok());
    }

    fn identity_chain_f64(dims: &[usize], seed: u64) -> Vec<AffineTransform<f64>> {
        let spec = ChainSpec::new(dims.to_vec(), seed, 1.0).unwrap();
        build_identity_chain(&spec).unwrap()
    }

    fn uniform_batch<T: Scalar>(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix<T> {
        Matrix::sample(rows, cols, &RngSpec::uniform(seed, lo, hi))
    }

    #[test]
    fn widened_shapes_follow_the_block_structure() {
        let chain = identity_chain_f64(&[4, 8, 6, 4], 5);
        let stack = build_transparent_stack(&chain, ActivationKind::Relu).unwrap();
        let dims = stack.base_dims();
        assert_eq!(dims, &[4, 8, 6, 4]);
        let layers = stack.layers();
        assert_eq!((layers[0].in_dim(), layers[0].out_dim()), (4, 16));
        assert_eq!((layers[1].in_dim(), layers[1].out_dim()), (16, 12));
        assert_eq!((layers[2].in_dim(), layers[2].out_dim()), (12, 4));
    }

    #[test]
    fn relu_stack_round_trips_mixed_sign_inputs() {
        let chain = identity_chain_f64(&[4, 8, 4], 7);
        let stack = build_transparent_stack(&chain, ActivationKind::Relu).unwrap();
        let x = Matrix::from_vec(2, 4, vec![1.5, -2.0, 0.0, 3.0, -0.1, 0.2, -4.0, 0.5]).unwrap();
        let y = stack.forward(&x).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() <= 1e-10);
    }

    #[test]
    fn identity_at_init_for_every_kind_and_dims() {
        let dim_sets: [&[usize]; 2] = [&[8, 16, 8], &[42, 64, 64, 42]];
        let kinds = [
            ActivationKind::Relu,
            ActivationKind::LeakyRelu { delta: 0.1 },
            ActivationKind::SoftRelu,
            ActivationKind::LogSigmoid,
        ];
        for dims in dim_sets {
            let chain = identity_chain_f64(dims, 11);
            for a in kinds {
                let stack = build_transparent_stack(&chain, a).unwrap();
                let x: Matrix<f64> = uniform_batch(10_000 / dims[0], dims[0], -3.0, 3.0, 13);
                let err = stack.forward(&x).unwrap().max_abs_diff(&x).unwrap();
                let bound = 1e-10 * x.max_abs().max(1.0);
                assert!(err <= bound, "{a:?} dims {dims:?}: err {err:.3e}");
            }
        }
    }

    #[test]
    fn general_wrapper_is_identity_for_arbitrary_activations() {
        let chain = identity_chain_f64(&[8, 16, 8], 19);
        let sigmas: Vec<(&str, Box<dyn Fn(f64) -> f64 + Send + Sync>)> = vec![
            ("tanh", Box::new(|x: f64| x.tanh())),
            ("sigmoid", Box::new(|x: f64| 1.0 / (1.0 + (-x).exp()))),
            ("relu", Box::new(|x: f64| x.max(0.0))),
            ("cube", Box::new(|x: f64| x * x * x)),
            ("zero", Box::new(|_x: f64| 0.0)),
        ];
        let x: Matrix<f64> = uniform_batch(500, 8, -1.0, 1.0, 23);
        for (name, sigma) in sigmas {
            let stack = build_general_stack(&chain, sigma).unwrap();
            let err = stack.forward(&x).unwrap().max_abs_diff(&x).unwrap();
            assert!(err <= 1e-12, "sigma={name}: err {err:.3e}");
        }
    }

    #[test]
    fn general_relu_matches_sign_split_on_nonnegative_inputs() {
        let chain = identity_chain_f64(&[6, 12, 6], 29);
        let split = build_transparent_stack(&chain, ActivationKind::Relu).unwrap();
        let general = build_general_stack(&chain, |x: f64| x.max(0.0)).unwrap();
        let x: Matrix<f64> = uniform_batch(50, 6, 0.0, 2.0, 31);
        let a = split.forward(&x).unwrap();
        let b = general.forward(&x).unwrap();
        assert!(a.max_abs_diff(&x).unwrap() <= 1e-12);
        assert!(b.max_abs_diff(&x).unwrap() <= 1e-12);
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let chain = identity_chain_f64(&[6, 9, 6], 37);
        for a in [
            ActivationKind::Relu,
            ActivationKind::SoftRelu,
            ActivationKind::LogSigmoid,
            ActivationKind::LeakyRelu { delta: 0.3 },
        ] {
            let stack = build_transparent_stack(&chain, a).unwrap();
            let x: Matrix<f64> = Matrix::zeros(3, 6);
            let y = stack.forward(&x).unwrap();
            assert!(y.max_abs() <= 1e-10, "{a:?}: {:.3e}", y.max_abs());
        }
    }

    #[test]
    fn perturbed_stack_is_no_longer_identity() {
        let chain = identity_chain_f64(&[8, 16, 8], 41);
        let stack = build_transparent_stack(&chain, ActivationKind::Relu).unwrap();
        let noisy = stack.perturbed(1e-2, 43);
        let x: Matrix<f64> = uniform_batch(200, 8, -1.0, 1.0, 47);
        let clean_err = stack.forward(&x).unwrap().max_abs_diff(&x).unwrap();
        let noisy_err = noisy.forward(&x).unwrap().max_abs_diff(&x).unwrap();
        assert!(clean_err <= 1e-10);
        assert!(noisy_err > 1e-3, "noise err {noisy_err:.3e}");
    }

    #[test]
    fn net2net_without_activation_recovers_everything() {
        let stack: TransparentStack<f32> =
            baseline_init(BaselineKind::Net2Net, &[42, 42, 42, 42], 1, None).unwrap();
        let x: Matrix<f32> = uniform_batch(100, 42, -10.0, 10.0, 3);
        assert_eq!(stack.recovery_rate(&x, 1e-4).unwrap(), 100.0);
    }

    #[test]
    fn net2net_with_relu_recovers_about_half() {
        let stack: TransparentStack<f32> = baseline_init(
            BaselineKind::Net2Net,
            &[42, 42, 42, 42],
            1,
            Some(ActivationKind::Relu),
        )
        .unwrap();
        let x: Matrix<f32> = uniform_batch(500, 42, -10.0, 10.0, 5);
        let rate = stack.recovery_rate(&x, 1e-4).unwrap();
        assert!((rate - 50.0).abs() <= 2.0, "rate {rate}");
    }

    #[test]
    fn random_baseline_with_relu_recovers_nothing() {
        let stack: TransparentStack<f32> = baseline_init(
            BaselineKind::Random,
            &[42, 64, 64, 42],
            7,
            Some(ActivationKind::Relu),
        )
        .unwrap();
        let x: Matrix<f32> = uniform_batch(500, 42, -10.0, 10.0, 9);
        let rate = stack.recovery_rate(&x, 1e-4).unwrap();
        assert!(rate <= 0.5, "rate {rate}");
    }

    #[test]
    fn net2net_requires_square_dims() {
        assert!(matches!(
            baseline_init::<f64>(BaselineKind::Net2Net, &[42, 64, 42], 1, None),
            Err(Error::InvalidArgument { .. })
        ));
    }

    #[test]
    fn net2net_init_rate_counts_the_diagonal() {
        let stack: TransparentStack<f64> =
            baseline_init(BaselineKind::Net2Net, &[42, 42, 42, 42], 1, None).unwrap();
        let rate = stack.init_rate(1e-4).unwrap();
        let expected = 100.0 * 126.0 / 5418.0;
        assert!((rate - expected).abs() <= 1e-9, "rate {rate}");
    }

    #[test]
    fn transparent_init_rate_is_high() {
        let chain = identity_chain_f64(&[42, 64, 64, 42], 1);
        let stack = build_transparent_stack(&chain, ActivationKind::Relu).unwrap();
        assert!(stack.init_rate(1e-4).unwrap() >= 99.0);
    }

    #[test]
    fn all_zero_stack_has_zero_init_rate() {
        let layer = AffineTransform::new(Matrix::<f64>::zeros(3, 3), vec![0.0; 3]).unwrap();
        let stack = TransparentStack::direct(vec![layer], None).unwrap();
        assert_eq!(stack.init_rate(1e-4).unwrap(), 0.0);
    }

    #[test]
    fn identity_stack_recovers_its_own_output() {
        let stack = TransparentStack::direct(
            vec![AffineTransform::<f64>::identity(5), AffineTransform::identity(5)],
            None,
        )
        .unwrap();
        let x: Matrix<f64> = uniform_batch(10, 5, -1.0, 1.0, 51);
        assert_eq!(stack.recovery_rate(&x, 1e-4).unwrap(), 100.0);
    }

    #[test]
    fn stability_errors_grow_linearly_with_range_f32() {
        let spec = ChainSpec::new(vec![42, 64, 64, 42], 1, 1.0).unwrap();
        let chain = build_identity_chain::<f32>(&spec).unwrap();
        let stack = build_transparent_stack(&chain, ActivationKind::Relu).unwrap();
        let ranges = [
            (-1.0, 1.0),
            (-10.0, 10.0),
            (-100.0, 100.0),
            (-1000.0, 1000.0),
        ];
        let errs = stack.stability_sweep(&ranges, 2000, 61).unwrap();
        for pair in errs.windows(2) {
            let ratio = pair[1] / pair[0];
            assert!((3.0..=30.0).contains(&ratio), "ratio {ratio}: {errs:?}");
        }
        assert!(errs[0] <= 5e-5, "unit-range error {:.3e}", errs[0]);
    }

    #[test]
    fn stability_sweep_is_tiny_in_f64() {
        let chain = identity_chain_f64(&[42, 64, 64, 42], 1);
        let stack = build_transparent_stack(&chain, ActivationKind::Relu).unwrap();
        let errs = stack.stability_sweep(&[(-1.0, 1.0)], 2000, 67).unwrap();
        assert!(errs[0] <= 1e-12, "err {:.3e}", errs[0]);
    }

    #[test]
    fn empty_range_list_gives_empty_result() {
        let chain = identity_chain_f64(&[4, 8, 4], 71);
        let stack = build_transparent_stack(&chain, ActivationKind::Relu).unwrap();
        assert!(stack.stability_sweep(&[], 10, 1).unwrap().is_empty());
    }
}
