//! Affine transforms on row vectors, their composition and right inverses,
//! and chains of random affine layers whose composition is the identity.
//!
//! A transform maps x to x A + b and is written homogeneously as the
//! (m+1) x (n+1) matrix [[A, 0'], [b, 1]] acting on [x, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{right_inverse, DEFAULT_COND_LIMIT};
use crate::matrix::Matrix;
use crate::rng::SampleStream;
use crate::scalar::Scalar;

/// Resample attempts allowed when a sampled chain is ill-conditioned.
pub const CHAIN_RETRY_LIMIT: usize = 8;

/// Affine map x -> x A + b with A of shape m x n and b of length n.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform<T> {
    weight: Matrix<T>,
    bias: Vec<T>,
}

impl<T: Scalar> AffineTransform<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::DimensionMismatch {
                context: "affine bias",
                left: format!("{}x{}", weight.rows(), weight.cols()),
                right: format!("bias len {}", bias.len()),
            });
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "affine bias",
            });
        }
        Ok(AffineTransform { weight, bias })
    }

    pub fn identity(n: usize) -> Self {
        AffineTransform {
            weight: Matrix::identity(n),
            bias: vec![T::ZERO; n],
        }
    }

    pub fn weight(&self) -> &Matrix<T> {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Homogeneous form [[A, 0'], [b, 1]].
    pub fn homogeneous(&self) -> Matrix<T> {
        let (m, n) = (self.weight.rows(), self.weight.cols());
        let mut h: Matrix<T> = Matrix::zeros(m + 1, n + 1);
        for i in 0..m {
            for j in 0..n {
                h.set(i, j, self.weight.get(i, j));
            }
        }
        for j in 0..n {
            h.set(m, j, self.bias[j]);
        }
        h.set(m, n, T::ONE);
        h
    }

    /// Applies the transform to one row vector; the bias is added after the
    /// ascending-index accumulation, matching the homogeneous product order.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.weight.rows() {
            return Err(Error::DimensionMismatch {
                context: "affine apply",
                left: format!("input len {}", x.len()),
                right: format!("{}x{}", self.weight.rows(), self.weight.cols()),
            });
        }
        let n = self.weight.cols();
        let mut y = vec![T::ZERO; n];
        for (i, &xi) in x.iter().enumerate() {
            let row = self.weight.row(i);
            for j in 0..n {
                y[j] += xi * row[j];
            }
        }
        for j in 0..n {
            y[j] += self.bias[j];
        }
        Ok(y)
    }

    /// Composition: apply self first, then other.
    pub fn compose(&self, other: &AffineTransform<T>) -> Result<AffineTransform<T>> {
        if self.weight.cols() != other.weight.rows() {
            return Err(Error::DimensionMismatch {
                context: "affine compose",
                left: format!("{}x{}", self.weight.rows(), self.weight.cols()),
                right: format!("{}x{}", other.weight.rows(), other.weight.cols()),
            });
        }
        let weight = self.weight.matmul(&other.weight)?;
        // apply() produces b1 A2 + b2 in the homogeneous order.
        let bias = other.apply(&self.bias)?;
        debug_assert_eq!(bias.len(), weight.cols());
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "affine compose",
            });
        }
        AffineTransform::new(weight, bias)
    }

    /// Right inverse: weight A^R, bias -b A^R, so compose(self, inverse) is
    /// the identity on the input space.
    pub fn right_inverse(&self, cond_limit: f64) -> Result<AffineTransform<T>> {
        let r = right_inverse(&self.weight, cond_limit)?;
        let m = r.cols();
        let mut bias = vec![T::ZERO; m];
        for (i, &bi) in self.bias.iter().enumerate() {
            let row = r.row(i);
            for j in 0..m {
                bias[j] += bi * row[j];
            }
        }
        for v in bias.iter_mut() {
            *v = -*v;
        }
        AffineTransform::new(r, bias)
    }

    pub fn cast<U: Scalar>(&self) -> AffineTransform<U> {
        AffineTransform {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Recipe for a chain of k >= 2 random affine layers composing to the
/// identity on the first dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    /// Layer widths [m0, m1, ..., mk]; layer i maps width i-1 to width i.
    pub dims: Vec<usize>,
    /// Base seed; retry seeds derive from it, so construction is a pure
    /// function of the spec.
    pub seed: u64,
    /// Variance of the sampled bias entries.
    pub bias_variance: f64,
}

impl ChainSpec {
    pub fn new(dims: Vec<usize>, seed: u64, bias_variance: f64) -> Result<Self> {
        let spec = ChainSpec {
            dims,
            seed,
            bias_variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the solvability conditions: k >= 2 layers, equal end widths,
    /// and no intermediate width below the input width (a narrower middle
    /// layer destroys full row rank, so no right inverse exists).
    pub fn validate(&self) -> Result<()> {
        let k = self.dims.len().saturating_sub(1);
        if k < 2 {
            return Err(Error::InvalidChain {
                reason: format!("need at least 2 layers, got {k}"),
            });
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidChain {
                reason: "zero width".into(),
            });
        }
        let m0 = self.dims[0];
        if *self.dims.last().unwrap() != m0 {
            return Err(Error::InvalidChain {
                reason: format!(
                    "input width {m0} differs from output width {}",
                    self.dims.last().unwrap()
                ),
            });
        }
        if let Some(&bad) = self.dims[1..self.dims.len() - 1].iter().find(|&&d| d < m0) {
            return Err(Error::InvalidChain {
                reason: format!("intermediate width {bad} below input width {m0}"),
            });
        }
        if !(self.bias_variance.is_finite() && self.bias_variance >= 0.0) {
            return Err(Error::InvalidChain {
                reason: format!("bias variance {} invalid", self.bias_variance),
            });
        }
        Ok(())
    }

    fn seed_for_attempt(&self, attempt: usize) -> u64 {
        self.seed
            .wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Samples layers 1..k-1 (weights N(0, 1/fan_in), biases N(0, bias_variance))
/// and sets layer k to the right inverse of their composition, so the whole
/// chain composes to the identity. Ill-conditioned samples are retried with
/// derived seeds up to [`CHAIN_RETRY_LIMIT`] times.
pub fn build_identity_chain<T: Scalar>(spec: &ChainSpec) -> Result<Vec<AffineTransform<T>>> {
    spec.validate()?;
    let mut last_err = None;
    for attempt in 0..=CHAIN_RETRY_LIMIT {
        let sampled = sample_chain_layers(spec, spec.seed_for_attempt(attempt));
        // Compose and invert in binary64; the final layers are rounded once.
        let mut prefix = AffineTransform::<f64>::identity(spec.dims[0]);
        for layer in &sampled {
            prefix = prefix.compose(layer)?;
        }
        match prefix.right_inverse(DEFAULT_COND_LIMIT) {
            Ok(last) => {
                let mut chain: Vec<AffineTransform<T>> =
                    sampled.iter().map(|l| l.cast()).collect();
                chain.push(last.cast());
                return Ok(chain);
            }
            Err(e @ Error::IllConditioned { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let _ = last_err;
    Err(Error::RetriesExhausted {
        attempts: CHAIN_RETRY_LIMIT + 1,
    })
}

/// Samples the free layers of a chain in a fixed order: per layer, weight
/// entries row-major, then bias entries.
fn sample_chain_layers(spec: &ChainSpec, seed: u64) -> Vec<AffineTransform<f64>> {
    let mut stream = SampleStream::new(seed);
    let k = spec.dims.len() - 1;
    let mut layers = Vec::with_capacity(k - 1);
    for i in 0..k - 1 {
        let (fan_in, fan_out) = (spec.dims[i], spec.dims[i + 1]);
        let sigma = (1.0 / fan_in as f64).sqrt();
        let weight_data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| sigma * stream.next_standard_normal())
            .collect();
        let weight = Matrix::from_vec(fan_in, fan_out, weight_data).expect("sampled weight");
        let bias_sigma = spec.bias_variance.sqrt();
        let bias: Vec<f64> = (0..fan_out)
            .map(|_| bias_sigma * stream.next_standard_normal())
            .collect();
        layers.push(AffineTransform::new(weight, bias).expect("sampled layer"));
    }
    layers
}

/// Composes a full chain into one affine transform.
pub fn compose_chain<T: Scalar>(chain: &[AffineTransform<T>]) -> Result<AffineTransform<T>> {
    let first = chain.first().ok_or(Error::EmptyInput {
        context: "compose_chain",
    })?;
    let mut acc = first.clone();
    for layer in &chain[1..] {
        acc = acc.compose(layer)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSpec;

    fn random_transform(in_dim: usize, out_dim: usize, seed: u64) -> AffineTransform<f64> {
        let weight = Matrix::sample(in_dim, out_dim, &RngSpec::normal(seed, 0.0, 1.0));
        let bias = (0..out_dim)
            .map(|j| ((seed as f64) + j as f64) * 0.1 - 0.3)
            .collect();
        AffineTransform::new(weight, bias).unwrap()
    }

    #[test]
    fn identity_apply_is_a_no_op() {
        let t = AffineTransform::<f64>::identity(2);
        assert_eq!(t.apply(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn pure_translation() {
        let t = AffineTransform::new(Matrix::identity(2), vec![1.0, 1.0]).unwrap();
        assert_eq!(t.apply(&[0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn apply_matches_homogeneous_product_bitwise() {
        let t = random_transform(4, 3, 17);
        let x = [0.3, -1.2, 2.5, 0.7];
        let y = t.apply(&x).unwrap();
        let mut hx = x.to_vec();
        hx.push(1.0);
        let hrow = Matrix::from_vec(1, 5, hx).unwrap();
        let hy = hrow.matmul(&t.homogeneous()).unwrap();
        for j in 0..3 {
            assert_eq!(y[j].to_bits(), hy.get(0, j).to_bits());
        }
        assert_eq!(hy.get(0, 3), 1.0);
    }

    #[test]
    fn compose_with_identity_is_unchanged() {
        let t = random_transform(3, 3, 2);
        let c = t.compose(&AffineTransform::identity(3)).unwrap();
        assert!(c.weight().max_abs_diff(t.weight()).unwrap() == 0.0);
        assert_eq!(c.bias(), t.bias());
    }

    #[test]
    fn translations_compose_additively() {
        let u = AffineTransform::new(Matrix::<f64>::identity(2), vec![1.0, 2.0]).unwrap();
        let v = AffineTransform::new(Matrix::<f64>::identity(2), vec![10.0, 20.0]).unwrap();
        let c = u.compose(&v).unwrap();
        assert_eq!(c.bias(), &[11.0, 22.0]);
    }

    #[test]
    fn composed_apply_equals_sequential_apply() {
        let t1 = random_transform(3, 5, 8);
        let t2 = random_transform(5, 2, 9);
        let x = [1.0, 2.0, 3.0];
        let seq = t2.apply(&t1.apply(&x).unwrap()).unwrap();
        let joint = t1.compose(&t2).unwrap().apply(&x).unwrap();
        for (a, b) in seq.iter().zip(&joint) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn compose_is_associative_to_tolerance() {
        let t1 = random_transform(4, 6, 20);
        let t2 = random_transform(6, 5, 21);
        let t3 = random_transform(5, 4, 22);
        let left = t1.compose(&t2).unwrap().compose(&t3).unwrap();
        let right = t1.compose(&t2.compose(&t3).unwrap()).unwrap();
        assert!(left.weight().max_abs_diff(right.weight()).unwrap() <= 1e-10);
        for (a, b) in left.bias().iter().zip(right.bias()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn translation_inverse_negates_the_offset() {
        let t = AffineTransform::new(Matrix::<f64>::identity(2), vec![5.0, 5.0]).unwrap();
        let inv = t.right_inverse(DEFAULT_COND_LIMIT).unwrap();
        assert_eq!(inv.bias(), &[-5.0, -5.0]);
    }

    #[test]
    fn diagonal_weight_inverse_matches_analytic() {
        let weight = Matrix::from_vec(2, 3, vec![2.0, 0.0, 0.0, 0.0, 4.0, 0.0]).unwrap();
        let t = AffineTransform::new(weight, vec![0.0; 3]).unwrap();
        let inv = t.right_inverse(DEFAULT_COND_LIMIT).unwrap();
        let expected = Matrix::from_vec(3, 2, vec![0.5, 0.0, 0.0, 0.25, 0.0, 0.0]).unwrap();
        assert!(inv.weight().max_abs_diff(&expected).unwrap() <= 1e-14);
    }

    #[test]
    fn transform_then_inverse_round_trips() {
        let weight = Matrix::sample(42, 64, &RngSpec::normal(31, 0.0, 1.0 / 42.0));
        let bias: Vec<f64> = (0..64).map(|j| (j as f64) * 0.01 - 0.3).collect();
        let t = AffineTransform::new(weight, bias).unwrap();
        let inv = t.right_inverse(DEFAULT_COND_LIMIT).unwrap();
        let joint = t.compose(&inv).unwrap();
        let x: Vec<f64> = (0..42).map(|i| (i as f64) * 0.1 - 2.0).collect();
        let y = joint.apply(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn chain_spec_rejects_bad_dims() {
        assert!(ChainSpec::new(vec![2, 2], 0, 1.0).is_err());
        assert!(ChainSpec::new(vec![4, 8, 3], 0, 1.0).is_err());
        assert!(ChainSpec::new(vec![4, 2, 4], 0, 1.0).is_err());
        assert!(ChainSpec::new(vec![4, 8, 4], 0, 1.0).is_ok());
    }

    #[test]
    fn identity_chain_round_trips_inputs() {
        let spec = ChainSpec::new(vec![42, 64, 64, 42], 1, 1.0).unwrap();
        let chain: Vec<AffineTransform<f64>> = build_identity_chain(&spec).unwrap();
        assert_eq!(chain.len(), 3);
        let mut stream = SampleStream::new(99);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..42).map(|_| stream.next_uniform(-1.0, 1.0)).collect();
            let mut y = x.clone();
            for layer in &chain {
                y = layer.apply(&y).unwrap();
            }
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn identity_chain_composes_to_identity_matrix() {
        let spec = ChainSpec::new(vec![8, 8, 8], 3, 1.0).unwrap();
        let chain: Vec<AffineTransform<f64>> = build_identity_chain(&spec).unwrap();
        let joint = compose_chain(&chain).unwrap();
        let h = joint.homogeneous();
        assert!(h.max_abs_diff(&Matrix::identity(9)).unwrap() <= 1e-10);
    }

    #[test]
    fn chain_construction_is_deterministic() {
        let spec = ChainSpec::new(vec![6, 9, 6], 42, 1.0).unwrap();
        let a: Vec<AffineTransform<f64>> = build_identity_chain(&spec).unwrap();
        let b: Vec<AffineTransform<f64>> = build_identity_chain(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wide_enough_chains_always_invert() {
        // Theorem condition satisfied: every intermediate width >= m0.
        let mut stream = SampleStream::new(7);
        for trial in 0..100u64 {
            let m0 = 2 + (stream.next_unit() * 4.0) as usize;
            let k = 2 + (stream.next_unit() * 3.0) as usize;
            let mut dims = vec![m0];
            for _ in 0..k - 1 {
                dims.push(m0 + (stream.next_unit() * 5.0) as usize);
            }
            dims.push(m0);
            let spec = ChainSpec::new(dims.clone(), trial, 1.0).unwrap();
            let chain = build_identity_chain::<f64>(&spec);
            assert!(chain.is_ok(), "dims {dims:?} seed {trial}");
        }
    }

    #[test]
    fn narrow_middle_layers_are_rejected_upfront() {
        let mut stream = SampleStream::new(8);
        for trial in 0..100u64 {
            let m0 = 3 + (stream.next_unit() * 4.0) as usize;
            let narrow = 1 + (stream.next_unit() * (m0 - 2) as f64) as usize;
            let dims = vec![m0, m0 + 2, narrow, m0];
            assert!(narrow < m0);
            assert!(
                matches!(
                    ChainSpec::new(dims, trial, 1.0),
                    Err(Error::InvalidChain { .. })
                ),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn rank_deficient_product_fails_inversion() {
        // Bypass the spec check: a chain through a narrow middle has a
        // rank-deficient composition, so the right inverse must fail.
        let a = Matrix::sample(4, 2, &RngSpec::normal(1, 0.0, 1.0));
        let b = Matrix::sample(2, 4, &RngSpec::normal(2, 0.0, 1.0));
        let t1 = AffineTransform::new(a, vec![0.0; 2]).unwrap();
        let t2 = AffineTransform::new(b, vec![0.0; 4]).unwrap();
        let prod = t1.compose(&t2).unwrap();
        assert!(matches!(
            prod.right_inverse(DEFAULT_COND_LIMIT),
            Err(Error::IllConditioned { .. })
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]

        /// Solvability, positive direction: whenever every interior width
        /// stays at or above the end width, random sampling yields a chain
        /// whose last layer inverts the rest, and the composition fixes
        /// random inputs.
        #[test]
        fn wide_random_chains_always_compose_to_identity(
            m0 in 2usize..8,
            widening in proptest::collection::vec(0usize..6, 2..5),
            seed in proptest::prelude::any::<u64>(),
        ) {
            let mut dims = vec![m0];
            dims.extend(widening.iter().map(|extra| m0 + extra));
            dims.push(m0);
            let spec = ChainSpec::new(dims, seed, 1e-4).unwrap();
            let chain: Vec<AffineTransform<f64>> =
                build_identity_chain(&spec).unwrap();
            let mut stream = SampleStream::new(seed ^ 0x5555);
            for _ in 0..5 {
                let x: Vec<f64> =
                    (0..m0).map(|_| stream.next_uniform(-1.0, 1.0)).collect();
                let mut y = x.clone();
                for layer in &chain {
                    y = layer.apply(&y).unwrap();
                }
                for (a, b) in x.iter().zip(&y) {
                    proptest::prop_assert!((a - b).abs() <= 1e-8);
                }
            }
        }

        /// Solvability, negative direction: any interior width below the
        /// end width makes full row rank impossible, so the chain is
        /// rejected up front no matter the seed.
        #[test]
        fn narrow_random_chains_are_always_rejected(
            m0 in 3usize..9,
            len in 4usize..7,
            pick in 0usize..100,
            shrink in 1usize..3,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let mut dims = vec![m0; len];
            let pos = 1 + pick % (len - 2);
            dims[pos] = m0 - shrink.min(m0 - 1);
            let rejected = matches!(
                ChainSpec::new(dims, seed, 1e-4),
                Err(Error::InvalidChain { .. })
            );
            proptest::prop_assert!(rejected);
        }
    }
}
