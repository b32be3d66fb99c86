//! Discrete KD codes, their relaxed logits, and code-space arithmetic.
//!
//! A code assigns each of `N` symbols a sequence of `D` components, each in
//! `[0, K)`. During learning every component is represented by `K` real
//! logits; the forward pass uses the one-hot argmax of those logits while
//! gradients flow through the tempering softmax (the straight-through pair
//! [`ste_forward`] / [`ste_backward`]).

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{argmax, dot, stable_softmax, Rng};

/// `K^D`, saturating at `u128::MAX`.
fn code_space_size(k: u64, d: u32) -> u128 {
    let mut size: u128 = 1;
    for _ in 0..d {
        size = size.saturating_mul(k as u128);
        if size == u128::MAX {
            break;
        }
    }
    size
}

/// Shape of a code system: `N` symbols, `D` dimensions of cardinality `K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KdSpec {
    k: usize,
    d: usize,
    n: usize,
}

impl KdSpec {
    /// Validates `K ≥ 2`, `D ≥ 1`, `N ≥ 1` and `K^D ≥ N`.
    pub fn new(k: usize, d: usize, n: usize) -> Result<Self> {
        let spec = Self::allowing_collisions(k, d, n)?;
        if !spec.has_capacity() {
            return Err(Error::CodeSpaceTooSmall { k, d, n });
        }
        Ok(spec)
    }

    /// Like [`KdSpec::new`] but accepts `K^D < N`, so that some symbols
    /// must share a code. Codes then act as cluster assignments.
    pub fn allowing_collisions(k: usize, d: usize, n: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("K must be >= 2, got {k}")));
        }
        if d < 1 {
            return Err(Error::InvalidArgument(format!("D must be >= 1, got {d}")));
        }
        if n < 1 {
            return Err(Error::InvalidArgument(format!("N must be >= 1, got {n}")));
        }
        u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("D too large: {d}")))?;
        Ok(KdSpec { k, d, n })
    }

    /// `K^D ≥ N`: every symbol can get its own code.
    pub fn has_capacity(&self) -> bool {
        code_space_size(self.k as u64, self.d as u32) >= self.n as u128
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `ln(K^D)`.
    pub fn log_code_space(&self) -> f64 {
        self.d as f64 * (self.k as f64).ln()
    }

    /// True when `K^D = N`, i.e. every code is used by exactly one symbol.
    pub fn is_compact(&self) -> bool {
        code_space_size(self.k as u64, self.d as u32) == self.n as u128
    }
}

impl fmt::Display for KdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K={} D={} N={}", self.k, self.d, self.n)
    }
}

/// Smallest `D ≥ 1` with `K^D ≥ N`.
pub fn min_code_dim(n: u64, k: u64) -> Result<usize> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("K must be >= 2, got {k}")));
    }
    let n = n as u128;
    let mut d = 1;
    let mut size = k as u128;
    while size < n {
        size = size.saturating_mul(k as u128);
        d += 1;
    }
    Ok(d)
}

/// How [`collision_free_probability`] evaluated its result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollisionMethod {
    /// Exact birthday product, accumulated in log space.
    ExactProduct,
    /// `exp(−N(N−1)/(2M))`, used above [`EXACT_COLLISION_LIMIT`] symbols.
    ExponentialApprox,
    /// `N > K^D`: a collision is certain.
    Impossible,
}

/// Largest `N` evaluated with the exact product.
pub const EXACT_COLLISION_LIMIT: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionEstimate {
    pub probability: f64,
    pub method: CollisionMethod,
}

/// Probability that `N` codes drawn uniformly with replacement from the
/// `K^D` code space are pairwise distinct.
pub fn collision_free_probability(n: u64, k: u64, d: u32) -> Result<CollisionEstimate> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("K must be >= 2, got {k}")));
    }
    if n as u128 > code_space_size(k, d) {
        return Ok(CollisionEstimate {
            probability: 0.0,
            method: CollisionMethod::Impossible,
        });
    }
    let ln_m = d as f64 * (k as f64).ln();
    if n <= EXACT_COLLISION_LIMIT {
        let log_p: f64 = (1..n)
            .map(|i| (-((i as f64).ln() - ln_m).exp()).ln_1p())
            .sum();
        Ok(CollisionEstimate {
            probability: log_p.exp(),
            method: CollisionMethod::ExactProduct,
        })
    } else {
        let nf = n as f64;
        let exponent = (nf.ln() + (nf - 1.0).ln() - std::f64::consts::LN_2 - ln_m).exp();
        Ok(CollisionEstimate {
            probability: (-exponent).exp(),
            method: CollisionMethod::ExponentialApprox,
        })
    }
}

/// `N / K^D`, the fraction of the code space occupied by symbols.
pub fn code_space_utilization(n: u64, k: u64, d: u32) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("K must be >= 2, got {k}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("N must be >= 1".into()));
    }
    let size = code_space_size(k, d);
    if (n as u128) > size {
        return Err(Error::InvalidArgument(format!(
            "N = {n} exceeds the code space {k}^{d}; not a valid code system"
        )));
    }
    if n as u128 == size {
        return Ok(1.0);
    }
    Ok(((n as f64).ln() - d as f64 * (k as f64).ln()).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScheduleMode {
    /// `T0 / (1 + decay_rate · t)`.
    #[default]
    Scheduled,
    /// Always `T0`.
    Constant,
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scheduled" => Ok(ScheduleMode::Scheduled),
            "constant" => Ok(ScheduleMode::Constant),
            other => Err(Error::InvalidArgument(format!(
                "unknown schedule {other:?} (expected scheduled|constant)"
            ))),
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Scheduled => "scheduled",
            ScheduleMode::Constant => "constant",
        })
    }
}

/// Softmax temperature as a function of the epoch counter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSchedule {
    t0: f64,
    decay_rate: f64,
    mode: ScheduleMode,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            t0: 1.0,
            decay_rate: 1.0,
            mode: ScheduleMode::Scheduled,
        }
    }
}

impl TemperatureSchedule {
    pub fn new(t0: f64, decay_rate: f64, mode: ScheduleMode) -> Result<Self> {
        if !(t0 > 0.0) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("T0 must be positive, got {t0}")));
        }
        if !(decay_rate >= 0.0) || !decay_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "decay rate must be nonnegative, got {decay_rate}"
            )));
        }
        Ok(TemperatureSchedule {
            t0,
            decay_rate,
            mode,
        })
    }

    pub fn constant(t0: f64) -> Result<Self> {
        TemperatureSchedule::new(t0, 0.0, ScheduleMode::Constant)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn temperature_at(&self, t: usize) -> f64 {
        match self.mode {
            ScheduleMode::Scheduled => self.t0 / (1.0 + self.decay_rate * t as f64),
            ScheduleMode::Constant => self.t0,
        }
    }
}

/// Forward half of the straight-through estimator for one code dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct SteOutput {
    /// Argmax of the logits, lowest index on ties.
    pub index: usize,
    /// One-hot at `index`; what the forward pass consumes.
    pub hard: Vec<f64>,
    /// Tempering softmax of the logits; what the backward pass differentiates.
    pub soft: Vec<f64>,
}

pub fn ste_forward(logits_row: &[f64], temperature: f64) -> Result<SteOutput> {
    let soft = stable_softmax(logits_row, temperature)?;
    let index = argmax(logits_row);
    let mut hard = vec![0.0; logits_row.len()];
    hard[index] = 1.0;
    Ok(SteOutput { index, hard, soft })
}

/// Gradient with respect to the logits, taken through the tempering softmax
/// at `soft`: `(1/T) · soft ∘ (g − ⟨soft, g⟩)`.
pub fn ste_backward(soft: &[f64], upstream_grad: &[f64], temperature: f64) -> Vec<f64> {
    let mean = dot(soft, upstream_grad);
    soft.iter()
        .zip(upstream_grad)
        .map(|(s, g)| s * (g - mean) / temperature)
        .collect()
}

/// Real-valued code logits, `N × D × K`, symbol-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeLogits {
    spec: KdSpec,
    values: Vec<f64>,
}

impl CodeLogits {
    pub fn zeros(spec: KdSpec) -> Self {
        CodeLogits {
            spec,
            values: vec![0.0; spec.n * spec.d * spec.k],
        }
    }

    /// I.i.d. Gaussian(0, std²) logits.
    pub fn gaussian(spec: KdSpec, std: f64, rng: &mut Rng) -> Self {
        let values = (0..spec.n * spec.d * spec.k)
            .map(|_| std * rng.standard_normal())
            .collect();
        CodeLogits { spec, values }
    }

    pub fn from_vec(spec: KdSpec, values: Vec<f64>) -> Result<Self> {
        let expected = spec.n * spec.d * spec.k;
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} logits for {spec}, expected {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("code logits".into()));
        }
        Ok(CodeLogits { spec, values })
    }

    pub fn spec(&self) -> KdSpec {
        self.spec
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// All `D × K` logits of symbol `i`.
    pub fn symbol(&self, i: usize) -> &[f64] {
        let len = self.spec.d * self.spec.k;
        &self.values[i * len..(i + 1) * len]
    }

    pub fn symbol_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.spec.d * self.spec.k;
        &mut self.values[i * len..(i + 1) * len]
    }

    /// The `K` logits of symbol `i`, dimension `j`.
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.spec.d + j) * self.spec.k;
        &self.values[start..start + self.spec.k]
    }
}

/// The learned lookup table symbol → code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeBook {
    spec: KdSpec,
    codes: Vec<usize>,
    labels: Option<Vec<String>>,
}

impl CodeBook {
    /// Builds from a flat `N × D` table of components.
    pub fn new(spec: KdSpec, codes: Vec<usize>) -> Result<Self> {
        if codes.len() != spec.n * spec.d {
            return Err(Error::ShapeMismatch(format!(
                "{} code components for {spec}, expected {}",
                codes.len(),
                spec.n * spec.d
            )));
        }
        if let Some(pos) = codes.iter().position(|&c| c >= spec.k) {
            return Err(Error::InvalidArgument(format!(
                "symbol {} dimension {} has component {} >= K = {}",
                pos / spec.d,
                pos % spec.d,
                codes[pos],
                spec.k
            )));
        }
        Ok(CodeBook {
            spec,
            codes,
            labels: None,
        })
    }

    /// Uniformly random codes, one draw per component.
    pub fn random(spec: KdSpec, rng: &mut Rng) -> Self {
        let codes = (0..spec.n * spec.d).map(|_| rng.below(spec.k)).collect();
        CodeBook {
            spec,
            codes,
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.spec.n {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} symbols",
                labels.len(),
                self.spec.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn spec(&self) -> KdSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.n
    }

    pub fn is_empty(&self) -> bool {
        self.spec.n == 0
    }

    pub fn code(&self, i: usize) -> &[usize] {
        &self.codes[i * self.spec.d..(i + 1) * self.spec.d]
    }

    pub fn codes(&self) -> impl Iterator<Item = &[usize]> {
        self.codes.chunks_exact(self.spec.d)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Dash-joined rendering, e.g. `3-1-0-4`.
    pub fn render(&self, i: usize) -> String {
        render_code(self.code(i))
    }

    /// Fraction of symbols whose full code differs from `other`'s.
    pub fn changed_fraction(&self, other: &CodeBook) -> f64 {
        debug_assert_eq!(self.spec, other.spec);
        let changed = self
            .codes()
            .zip(other.codes())
            .filter(|(a, b)| a != b)
            .count();
        changed as f64 / self.spec.n as f64
    }

    /// Mixed-radix integer id of symbol `i`'s code; saturates for huge spaces.
    pub fn code_id(&self, i: usize) -> u128 {
        self.code(i).iter().fold(0u128, |acc, &c| {
            acc.saturating_mul(self.spec.k as u128).saturating_add(c as u128)
        })
    }
}

pub fn render_code(code: &[usize]) -> String {
    code.iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// Argmax code of every symbol and dimension, lowest index on ties.
pub fn extract_codes(logits: &CodeLogits) -> CodeBook {
    let spec = logits.spec;
    let codes = logits
        .values
        .chunks_exact(spec.k)
        .map(argmax)
        .collect();
    CodeBook {
        spec,
        codes,
        labels: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, max_relative_error};

    #[test]
    fn spec_validation() {
        assert!(KdSpec::new(2, 3, 8).is_ok());
        assert!(KdSpec::new(2, 3, 8).unwrap().is_compact());
        assert!(matches!(
            KdSpec::new(2, 3, 10_000),
            Err(Error::CodeSpaceTooSmall { .. })
        ));
        let shared = KdSpec::allowing_collisions(100, 1, 10_000).unwrap();
        assert!(!shared.has_capacity());
        assert!(KdSpec::allowing_collisions(1, 3, 1).is_err());
        assert!(KdSpec::new(1, 3, 1).is_err());
        assert!(KdSpec::new(2, 0, 1).is_err());
        assert!(KdSpec::new(2, 1, 0).is_err());
        // 100^10 overflows u64 but not the saturating check.
        assert!(KdSpec::new(100, 10, 1_000_000_000).is_ok());
        assert!(KdSpec::new(1000, 1000, usize::MAX).is_ok());
    }

    #[test]
    fn min_code_dim_examples() {
        assert_eq!(min_code_dim(10_000, 50).unwrap(), 3);
        assert_eq!(min_code_dim(1, 2).unwrap(), 1);
        assert_eq!(min_code_dim(1 << 20, 2).unwrap(), 20);
        assert_eq!(min_code_dim(1 << 63, 2).unwrap(), 63);
        assert_eq!(min_code_dim(u64::MAX, 2).unwrap(), 64);
        assert!(min_code_dim(10, 1).is_err());
    }

    #[test]
    fn min_code_dim_brute_force() {
        for k in 2u64..=64 {
            for n in 1u64..=10_000 {
                let d = min_code_dim(n, k).unwrap() as u32;
                let full = (k as u128).pow(d);
                assert!(n as u128 <= full, "n={n} k={k} d={d}");
                if d > 1 {
                    assert!(((k as u128).pow(d - 1)) < n as u128, "n={n} k={k} d={d}");
                }
            }
        }
    }

    #[test]
    fn collision_examples() {
        let est = collision_free_probability(1_000_000_000, 100, 10).unwrap();
        assert_eq!(est.method, CollisionMethod::ExponentialApprox);
        assert!((est.probability - 0.995).abs() <= 0.0005, "{est:?}");

        assert_eq!(collision_free_probability(1, 7, 3).unwrap().probability, 1.0);
        let est = collision_free_probability(2, 2, 2).unwrap();
        assert_eq!(est.method, CollisionMethod::ExactProduct);
        assert!((est.probability - 0.75).abs() < 1e-15);

        let est = collision_free_probability(5, 2, 2).unwrap();
        assert_eq!(est.probability, 0.0);
        assert_eq!(est.method, CollisionMethod::Impossible);
    }

    /// Direct product over `i`, no logs.
    fn birthday_oracle(n: u64, k: u64, d: u32) -> f64 {
        let m = (k as f64).powi(d as i32);
        (0..n).map(|i| 1.0 - i as f64 / m).product::<f64>().max(0.0)
    }

    #[test]
    fn collision_matches_product_and_is_monotone() {
        for k in 2u64..=6 {
            for d in 1u32..=4 {
                let mut prev = 1.0;
                for n in 1u64..=40 {
                    let p = collision_free_probability(n, k, d).unwrap().probability;
                    let oracle = birthday_oracle(n, k, d);
                    assert!((p - oracle).abs() < 1e-12, "n={n} k={k} d={d}: {p} vs {oracle}");
                    assert!(p <= prev + 1e-15);
                    prev = p;
                    if d < 4 {
                        let deeper = collision_free_probability(n, k, d + 1).unwrap().probability;
                        assert!(deeper + 1e-15 >= p);
                    }
                }
            }
        }
    }

    #[test]
    fn utilization_examples() {
        assert_eq!(code_space_utilization(8, 2, 3).unwrap(), 1.0);
        assert_eq!(code_space_utilization(2500, 50, 2).unwrap(), 1.0);

        let u = code_space_utilization(10_000, 2, 100).unwrap();
        let expected = 10_000.0 / 2f64.powi(100);
        assert!((u / expected - 1.0).abs() < 1e-12);
        assert!((u - 7.9e-27).abs() < 0.05e-27);

        let u = code_space_utilization(10_000, 50, 10).unwrap();
        let expected = 10_000.0 / 50f64.powi(10);
        assert!((u / expected - 1.0).abs() < 1e-12);
        assert!((u - 1.024e-13).abs() < 0.001e-13);

        assert!(code_space_utilization(9, 2, 3).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = TemperatureSchedule::default();
        assert_eq!(s.temperature_at(0), 1.0);
        assert!((s.temperature_at(9) - 0.1).abs() < 1e-15);
        let c = TemperatureSchedule::constant(0.5).unwrap();
        assert_eq!(c.temperature_at(0), 0.5);
        assert_eq!(c.temperature_at(12345), 0.5);
        assert!(TemperatureSchedule::new(0.0, 1.0, ScheduleMode::Scheduled).is_err());
        assert!(TemperatureSchedule::new(1.0, -1.0, ScheduleMode::Scheduled).is_err());
        let big = TemperatureSchedule::new(1e-3, 1e6, ScheduleMode::Scheduled).unwrap();
        assert!(big.temperature_at(usize::MAX) > 0.0);
    }

    #[test]
    fn ste_forward_examples() {
        let out = ste_forward(&[2.0, 1.0, 0.0], 1.0).unwrap();
        assert_eq!(out.hard, vec![1.0, 0.0, 0.0]);
        for (s, e) in out.soft.iter().zip([0.66524, 0.24473, 0.09003]) {
            assert!((s - e).abs() < 5e-6);
        }

        let out = ste_forward(&[0.0, 0.0], 3.0).unwrap();
        assert_eq!(out.hard, vec![1.0, 0.0]);
        assert_eq!(out.soft, vec![0.5, 0.5]);

        let out = ste_forward(&[-5.0, 10.0], 0.1).unwrap();
        assert_eq!(out.hard, vec![0.0, 1.0]);
        assert!((out.soft[0]).abs() < 1e-12 && (out.soft[1] - 1.0).abs() < 1e-12);

        assert!(ste_forward(&[1.0], 0.0).is_err());
    }

    #[test]
    fn ste_backward_examples() {
        let g = ste_backward(&[0.2, 0.3, 0.5], &[1.5, 1.5, 1.5], 0.7);
        assert!(g.iter().all(|v| v.abs() < 1e-12));

        let g = ste_backward(&[0.5, 0.5], &[1.0, 0.0], 1.0);
        assert!((g[0] - 0.25).abs() < 1e-15 && (g[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn ste_backward_matches_finite_differences() {
        let mut rng = Rng::new(11);
        for trial in 0..100 {
            let k = 2 + rng.below(7);
            let t = 0.1 + 2.0 * rng.uniform();
            let logits: Vec<f64> = (0..k).map(|_| rng.standard_normal()).collect();
            let up: Vec<f64> = (0..k).map(|_| rng.standard_normal()).collect();
            let soft = stable_softmax(&logits, t).unwrap();
            let analytic = ste_backward(&soft, &up, t);
            let numeric = finite_diff_gradient(
                |l| dot(&up, &stable_softmax(l, t).unwrap()),
                &logits,
                1e-5,
            )
            .unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn extract_codes_examples() {
        let spec = KdSpec::new(3, 2, 1).unwrap();
        let logits = CodeLogits::from_vec(spec, vec![0.0, 5.0, 1.0, 2.0, 2.0, 2.0]).unwrap();
        let book = extract_codes(&logits);
        assert_eq!(book.code(0), &[1, 0]);
        assert_eq!(extract_codes(&logits), book);

        let spec = KdSpec::new(8, 4, 100).unwrap();
        let mut rng = Rng::new(5);
        let logits = CodeLogits::gaussian(spec, 1.0, &mut rng);
        let book = extract_codes(&logits);
        assert_eq!(book.len(), 100);
        for i in 0..100 {
            assert_eq!(book.code(i).len(), 4);
            assert!(book.code(i).iter().all(|&c| c < 8));
            for j in 0..4 {
                assert_eq!(book.code(i)[j], argmax(logits.row(i, j)));
            }
        }
    }

    #[test]
    fn codebook_checks_components() {
        let spec = KdSpec::new(3, 2, 2).unwrap();
        assert!(CodeBook::new(spec, vec![0, 1, 2, 3]).is_err());
        assert!(CodeBook::new(spec, vec![0, 1, 2]).is_err());
        let book = CodeBook::new(spec, vec![0, 1, 2, 2]).unwrap();
        assert_eq!(book.render(1), "2-2");
        assert_eq!(book.code_id(1), 8);
        assert!(book.clone().with_labels(vec!["a".into()]).is_err());
        assert_eq!(render_code(&[3, 1, 0, 4]), "3-1-0-4");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numerics::Rng;

        proptest! {
            #[test]
            fn hard_is_one_hot_at_logit_argmax(
                logits in prop::collection::vec(-50f64..50.0, 2..10),
                t in 1e-4f64..1e4,
            ) {
                let out = ste_forward(&logits, t).unwrap();
                prop_assert_eq!(out.hard.iter().filter(|v| **v == 1.0).count(), 1);
                prop_assert_eq!(out.hard.iter().filter(|v| **v == 0.0).count(), logits.len() - 1);
                prop_assert_eq!(out.index, argmax(&logits));
                prop_assert_eq!(out.soft[out.index], out.soft[argmax(&out.soft)]);
            }

            #[test]
            fn extraction_ignores_per_row_shifts(
                seed in any::<u64>(),
                shifts in prop::collection::vec(-100f64..100.0, 12),
            ) {
                let spec = KdSpec::new(5, 3, 4).unwrap();
                let mut rng = Rng::new(seed);
                let logits = CodeLogits::gaussian(spec, 1.0, &mut rng);
                let mut shifted = logits.clone();
                for (row, s) in shifted.as_mut_slice().chunks_exact_mut(5).zip(&shifts) {
                    for v in row {
                        *v += s;
                    }
                }
                prop_assert_eq!(extract_codes(&logits), extract_codes(&shifted));
            }
        }
    }
}
