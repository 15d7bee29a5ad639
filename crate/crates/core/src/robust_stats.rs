//! Influence functions and power-divergence goodness-of-fit testing.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::divergence::{kernel, ProbVector};
use crate::error::{Error, Result};
use crate::seed;

/// Pointwise influence `q/(1+λ)` of one observation under the `D_λ` loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceResult {
    pub vector: Vec<f64>,
    pub lambda: f64,
    /// `1/(1+λ)`.
    pub scaling: f64,
}

impl InfluenceResult {
    pub fn norm(&self) -> f64 {
        l2(&self.vector)
    }
}

/// `−H⁻¹∇` of the per-sample loss `D_λ(y, q)` with `H` and `∇` taken at the
/// same point, which collapses to `q/(1+λ)`.
pub fn influence_function(q: &ProbVector, lambda: f64) -> Result<InfluenceResult> {
    if !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda {lambda} is not finite")));
    }
    if lambda == -1.0 {
        return Err(Error::Domain("influence function is singular at lambda = -1".into()));
    }
    let scaling = 1.0 / (1.0 + lambda);
    Ok(InfluenceResult {
        vector: q.as_slice().iter().map(|x| scaling * x).collect(),
        lambda,
        scaling,
    })
}

/// Options for the projected-gradient simplex estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexFitOptions {
    pub step: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SimplexFitOptions {
    fn default() -> Self {
        Self {
            step: 0.1,
            tolerance: 1e-8,
            max_iterations: 100_000,
        }
    }
}

/// Result of [`fit_simplex`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexFit {
    pub estimate: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn weighted_objective(samples: &[&[f64]], weights: &[f64], q: &[f64], lambda: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    samples
        .iter()
        .zip(weights)
        .map(|(y, w)| w * kernel::power_divergence(y, q, lambda))
        .sum::<f64>()
        / total
}

fn weighted_gradient(samples: &[&[f64]], weights: &[f64], q: &[f64], lambda: f64) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut g = vec![0.0; q.len()];
    let mut buf = vec![0.0; q.len()];
    for (y, w) in samples.iter().zip(weights) {
        kernel::grad_wrt_probs(y, q, lambda, &mut buf);
        for (gj, bj) in g.iter_mut().zip(&buf) {
            *gj += w * bj / total;
        }
    }
    g
}

/// Minimizes `Σ_n w_n D_λ(y_n, q)` over the simplex by projected gradient
/// descent with backtracking on the step.
///
/// Convergence is declared when the projected-gradient mapping
/// `(q − Π(q − s∇))/s` has Euclidean norm below `tolerance`.
pub fn fit_simplex(
    samples: &[&[f64]],
    weights: &[f64],
    lambda: f64,
    options: SimplexFitOptions,
) -> Result<SimplexFit> {
    let k = samples.first().map(|s| s.len()).unwrap_or(0);
    if samples.is_empty() || samples.len() != weights.len() {
        return Err(Error::Domain("need one weight per sample and at least one sample".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != k) {
        return Err(Error::DimensionMismatch(k, bad.len()));
    }
    let mut q = vec![1.0 / k as f64; k];
    let mut step = options.step;
    let mut f = weighted_objective(samples, weights, &q, lambda);
    let mut grad_norm = f64::INFINITY;
    for iteration in 0..options.max_iterations {
        let g = weighted_gradient(samples, weights, &q, lambda);
        loop {
            let trial: Vec<f64> = q.iter().zip(&g).map(|(x, gx)| x - step * gx).collect();
            let next = project_to_simplex(&trial);
            let d: Vec<f64> = next.iter().zip(&q).map(|(a, b)| a - b).collect();
            let mapping = l2(&d) / step;
            if iteration == 0 || mapping.is_finite() {
                grad_norm = mapping;
            }
            if grad_norm < options.tolerance {
                return Ok(SimplexFit {
                    estimate: q,
                    iterations: iteration,
                    grad_norm,
                });
            }
            let f_next = weighted_objective(samples, weights, &next, lambda);
            let model = f
                + g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>()
                + d.iter().map(|x| x * x).sum::<f64>() / (2.0 * step);
            if f_next <= model + 1e-15 * f.abs() {
                q = next;
                f = f_next;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                return Err(Error::NonConvergence {
                    iterations: iteration,
                    grad_norm,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iterations,
        grad_norm,
    })
}

fn check_sample(base: &[ProbVector], outlier: &ProbVector) -> Result<()> {
    if base.is_empty() {
        return Err(Error::Domain("base sample is empty".into()));
    }
    for y in base {
        if y.len() != outlier.len() {
            return Err(Error::DimensionMismatch(outlier.len(), y.len()));
        }
    }
    Ok(())
}

/// Finite-ε influence of `outlier` on the simplex estimator:
/// `(q̂_ε − q̂)/ε`, where `q̂` minimizes `Σ D_λ(y_n, q)` and `q̂_ε` adds the
/// outlier with weight ε.
pub fn influence_empirical(
    base_sample: &[ProbVector],
    outlier: &ProbVector,
    epsilon: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    influence_empirical_with(base_sample, outlier, epsilon, lambda, SimplexFitOptions::default())
}

pub fn influence_empirical_with(
    base_sample: &[ProbVector],
    outlier: &ProbVector,
    epsilon: f64,
    lambda: f64,
    options: SimplexFitOptions,
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon <= 0.1) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 0.1], got {epsilon}")));
    }
    check_sample(base_sample, outlier)?;
    let mut samples: Vec<&[f64]> = base_sample.iter().map(|p| p.as_slice()).collect();
    let mut weights = vec![1.0; samples.len()];
    let base = fit_simplex(&samples, &weights, lambda, options)?;
    samples.push(outlier.as_slice());
    weights.push(epsilon);
    let perturbed = fit_simplex(&samples, &weights, lambda, options)?;
    Ok(perturbed
        .estimate
        .iter()
        .zip(&base.estimate)
        .map(|(a, b)| (a - b) / epsilon)
        .collect())
}

/// Closed-form minimizer of `Σ w_n D_λ(y_n, q)` on the simplex (λ > −1):
/// `q_j ∝ (Σ w_n y_nj^(1+λ))^(1/(1+λ))`.
pub fn power_mean_estimate(samples: &[&[f64]], weights: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > -1.0) {
        return Err(Error::Domain(format!("closed form requires lambda > -1, got {lambda}")));
    }
    let k = samples.first().map(|s| s.len()).unwrap_or(0);
    let a = 1.0 + lambda;
    let m: Vec<f64> = (0..k)
        .map(|j| {
            samples
                .iter()
                .zip(weights)
                .map(|(y, w)| w * y[j].powf(a))
                .sum::<f64>()
                .powf(1.0 / a)
        })
        .collect();
    let total: f64 = m.iter().sum();
    Ok(m.into_iter().map(|x| x / total).collect())
}

/// Exact first-order influence of `outlier` on the simplex estimator,
/// `q̂_j (a_j − Σ_i q̂_i a_i)` with `a_j = z_j^(1+λ) / ((1+λ) Σ_n y_nj^(1+λ))`.
///
/// Equivalently `(q̂_j/(1+λ))·[(z_j/q̂_j)^(1+λ) − Σ_i q̂_i (z_i/q̂_i)^(1+λ)]/S`
/// where `S = Σ_n (y_nj/q̂_j)^(1+λ)` is constant across `j` at the optimum.
pub fn influence_at_optimum(
    base_sample: &[ProbVector],
    outlier: &ProbVector,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_sample(base_sample, outlier)?;
    let samples: Vec<&[f64]> = base_sample.iter().map(|p| p.as_slice()).collect();
    let weights = vec![1.0; samples.len()];
    let q = power_mean_estimate(&samples, &weights, lambda)?;
    let e = 1.0 + lambda;
    let a: Vec<f64> = (0..q.len())
        .map(|j| {
            let mass: f64 = samples.iter().map(|y| y[j].powf(e)).sum();
            if mass > 0.0 {
                outlier.as_slice()[j].powf(e) / (e * mass)
            } else {
                0.0
            }
        })
        .collect();
    let mean: f64 = q.iter().zip(&a).map(|(qi, ai)| qi * ai).sum();
    Ok(q.iter().zip(&a).map(|(qj, aj)| qj * (aj - mean)).collect())
}

/// `2N·D_λ(counts/N, expected)`: Pearson χ² at λ = 1, G² at λ = 0.
pub fn gof_statistic(observed_counts: &[u64], expected: &ProbVector, lambda: f64) -> Result<f64> {
    if observed_counts.len() != expected.len() {
        return Err(Error::DimensionMismatch(observed_counts.len(), expected.len()));
    }
    if let Some((index, &q)) = expected.as_slice().iter().enumerate().find(|(_, &q)| q <= 0.0) {
        return Err(Error::SupportViolation { index, p: 1.0, q });
    }
    let n: u64 = observed_counts.iter().sum();
    if n == 0 {
        return Err(Error::Domain("total count is zero".into()));
    }
    let nf = n as f64;
    let observed: Vec<f64> = observed_counts.iter().map(|&c| c as f64 / nf).collect();
    Ok(2.0 * nf * kernel::power_divergence(&observed, expected.as_slice(), lambda))
}

/// Upper tail `P(X > x)` of the χ² distribution with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(df / 2.0, x / 2.0)
    }
}

/// The `x` with `P(X > x) = upper_tail` for χ²(df).
///
/// Starts from the Wilson–Hilferty approximation and refines by bisection on
/// the regularized incomplete gamma function.
pub fn chi_square_upper_quantile(df: f64, upper_tail: f64) -> Result<f64> {
    if !(df > 0.0) || !(upper_tail > 0.0 && upper_tail < 1.0) {
        return Err(Error::Domain(format!(
            "chi-square quantile needs df > 0 and tail in (0,1), got df={df}, tail={upper_tail}"
        )));
    }
    let target = 1.0 - upper_tail;
    // Standard normal upper quantile: z with P(Z > z) = upper_tail.
    let z = std::f64::consts::SQRT_2 * erfc_inv(2.0 * upper_tail);
    let c = 2.0 / (9.0 * df);
    let guess = (df * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-8);

    let cdf = |x: f64| gamma_lr(df / 2.0, x / 2.0);
    let mut lo = guess;
    let mut hi = guess;
    while cdf(lo) > target {
        lo *= 0.5;
        if lo < 1e-300 {
            break;
        }
    }
    while cdf(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Uniform null against a single-class bump (δ > 0) or dip (δ < 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlternativeSpec {
    pub k_classes: usize,
    pub delta: f64,
}

impl AlternativeSpec {
    pub fn new(k_classes: usize, delta: f64) -> Result<Self> {
        let spec = Self { k_classes, delta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_classes < 2 {
            return Err(Error::TooFewClasses(self.k_classes));
        }
        if !self.delta.is_finite()
            || self.delta <= -1.0
            || self.delta / (self.k_classes as f64 - 1.0) >= 1.0
        {
            return Err(Error::Domain(format!(
                "delta {} gives a distribution outside (0,1) for K = {}",
                self.delta, self.k_classes
            )));
        }
        Ok(())
    }

    /// `(1 − δ/(K−1))/K` on the first K−1 classes and `(1+δ)/K` on the last.
    pub fn distribution(&self) -> Result<ProbVector> {
        self.validate()?;
        let k = self.k_classes as f64;
        let mut v = vec![(1.0 - self.delta / (k - 1.0)) / k; self.k_classes];
        v[self.k_classes - 1] = (1.0 + self.delta) / k;
        ProbVector::new(v)
    }
}

/// Monte-Carlo rejection rate of the power-divergence test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub rejection_rate: f64,
    pub trials: usize,
    pub sample_size: u64,
    pub significance: f64,
    pub std_error: f64,
    pub lambda: f64,
    pub critical_value: f64,
}

/// Sequential conditional-binomial multinomial draw.
pub fn sample_multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut counts = vec![0; probs.len()];
    let mut remaining = n;
    let mut mass = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == probs.len() {
            counts[k] = remaining;
            break;
        }
        let cond = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let x = Binomial::new(remaining, cond)
            .map(|b| b.sample(rng))
            .unwrap_or(0);
        counts[k] = x;
        remaining -= x;
        mass -= p;
    }
    counts
}

/// Rejection rate of the λ test of uniformity when data come from `alt`.
///
/// Trial `i` draws from its own stream derived from `(seed, i)`, so the
/// result does not depend on how trials are scheduled across threads.
pub fn mc_power(
    alt: &AlternativeSpec,
    lambda: f64,
    sample_size: u64,
    significance: f64,
    trials: usize,
    seed: u64,
) -> Result<PowerEstimate> {
    if trials < 100 {
        return Err(Error::Domain(format!("need at least 100 trials, got {trials}")));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::Domain(format!("significance must be in (0,1), got {significance}")));
    }
    if sample_size == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    let h1 = alt.distribution()?;
    let h0 = ProbVector::uniform(alt.k_classes)?;
    let critical = chi_square_upper_quantile(alt.k_classes as f64 - 1.0, significance)?;
    let rejections = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = seed::rng(seed, &[seed::tag::MC_TRIAL, trial as u64]);
            let counts = sample_multinomial(&mut rng, sample_size, h1.as_slice());
            let stat = gof_statistic(&counts, &h0, lambda).unwrap_or(f64::NAN);
            usize::from(stat > critical)
        })
        .sum::<usize>();
    let rate = rejections as f64 / trials as f64;
    Ok(PowerEstimate {
        rejection_rate: rate,
        trials,
        sample_size,
        significance,
        std_error: (rate * (1.0 - rate) / trials as f64).sqrt(),
        lambda,
        critical_value: critical,
    })
}

/// One-sided sign test on paired differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// `P(X ≥ positive)` for `X ~ Bin(positive + negative, 1/2)`.
    pub p_value: f64,
}

pub fn sign_test(differences: &[f64]) -> SignTest {
    let positive = differences.iter().filter(|&&d| d > 0.0).count();
    let negative = differences.iter().filter(|&&d| d < 0.0).count();
    let ties = differences.len() - positive - negative;
    let n = positive + negative;
    let p_value = if n == 0 {
        1.0
    } else {
        // Exact binomial upper tail in log space.
        let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
        (positive..=n)
            .map(|k| (ln_choose(n, k) + ln_half_n).exp())
            .sum::<f64>()
            .min(1.0)
    };
    SignTest {
        positive,
        negative,
        ties,
        p_value,
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = l2(a);
    let nb = l2(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

#[cfg(test)]
// Index loops below spell out the matrix formulas they check.
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn influence_function_examples() {
        let q = pv(&[0.1, 0.2, 0.7]);
        assert_eq!(influence_function(&q, 0.0).unwrap().vector, q.as_slice());
        let r = influence_function(&q, 2.0 / 3.0).unwrap();
        for (a, b) in r.vector.iter().zip(q.as_slice()) {
            assert_relative_eq!(*a, 0.6 * b, epsilon = 1e-15);
        }
        assert_relative_eq!(r.scaling, 0.6, epsilon = 1e-15);
        let r1 = influence_function(&q, 1.0).unwrap();
        for (a, b) in r1.vector.iter().zip(q.as_slice()) {
            assert_eq!(*a, b / 2.0);
        }
        assert!(influence_function(&q, -1.0).is_err());
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[0.5, 0.5, 0.5]);
        for x in &p {
            assert_relative_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let q = project_to_simplex(&[0.2, 0.3, 0.5]);
        assert_relative_eq!(q[2], 0.5, epsilon = 1e-15);
        let r = project_to_simplex(&[-1.0, 0.3, 0.9]);
        assert_eq!(r[0], 0.0);
        assert_relative_eq!(r.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn projected_gradient_matches_power_mean() {
        let ys = [
            vec![0.2, 0.3, 0.5],
            vec![0.6, 0.3, 0.1],
            vec![0.25, 0.25, 0.5],
        ];
        let samples: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
        let w = [1.0, 2.0, 0.5];
        for lambda in [-0.5, 0.0, 2.0 / 3.0, 2.0] {
            let fit = fit_simplex(&samples, &w, lambda, SimplexFitOptions::default()).unwrap();
            // Independent closed form: q_j^(1+λ) ∝ Σ w y_j^(1+λ).
            let e = 1.0 + lambda;
            let m: Vec<f64> = (0..3)
                .map(|j| {
                    (0..3)
                        .map(|n| w[n] * ys[n][j].powf(e))
                        .sum::<f64>()
                        .powf(1.0 / e)
                })
                .collect();
            let s: f64 = m.iter().sum();
            for j in 0..3 {
                assert!((fit.estimate[j] - m[j] / s).abs() < 1e-8, "lambda {lambda}");
            }
        }
    }

    #[test]
    fn fit_reports_non_convergence() {
        let y = [0.2, 0.8];
        let opts = SimplexFitOptions {
            max_iterations: 1,
            tolerance: 1e-30,
            ..Default::default()
        };
        assert!(matches!(
            fit_simplex(&[&y], &[1.0], 0.5, opts),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn empirical_influence_at_optimum_is_zero() {
        let base = vec![pv(&[0.2, 0.3, 0.5]), pv(&[0.5, 0.3, 0.2]), pv(&[0.3, 0.4, 0.3])];
        let samples: Vec<&[f64]> = base.iter().map(|p| p.as_slice()).collect();
        let lambda = 2.0 / 3.0;
        let opt = power_mean_estimate(&samples, &[1.0; 3], lambda).unwrap();
        let outlier = ProbVector::from_weights(&opt).unwrap();
        let v = influence_empirical(&base, &outlier, 1e-3, lambda).unwrap();
        assert!(l2(&v) < 1e-4, "{v:?}");
        // The analytic version is exactly zero there.
        let a = influence_at_optimum(&base, &outlier, lambda).unwrap();
        assert!(l2(&a) < 1e-12);
    }

    #[test]
    fn empirical_influence_converges_in_epsilon() {
        let base = vec![pv(&[0.2, 0.3, 0.5]), pv(&[0.5, 0.3, 0.2]), pv(&[0.3, 0.4, 0.3])];
        let outlier = ProbVector::one_hot(3, 0).unwrap();
        let lambda = 2.0 / 3.0;
        let opts = SimplexFitOptions {
            tolerance: 1e-12,
            ..Default::default()
        };
        let v: Vec<Vec<f64>> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&e| influence_empirical_with(&base, &outlier, e, lambda, opts).unwrap())
            .collect();
        let d1 = l2(&v[0].iter().zip(&v[1]).map(|(a, b)| a - b).collect::<Vec<_>>());
        let d2 = l2(&v[1].iter().zip(&v[2]).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(d2 < d1, "{d1} {d2}");
        let exact = influence_at_optimum(&base, &outlier, lambda).unwrap();
        assert!(cosine_similarity(&v[2], &exact) > 0.9999);
    }

    #[test]
    fn damping_depends_on_where_the_outlier_lands() {
        // Outlier on the majority class: λ = 2/3 moves the estimate less than λ = 0.
        let base = vec![pv(&[0.7, 0.2, 0.1]), pv(&[0.6, 0.25, 0.15]), pv(&[0.65, 0.2, 0.15])];
        let majority = ProbVector::one_hot(3, 0).unwrap();
        let n0 = l2(&influence_empirical(&base, &majority, 1e-4, 0.0).unwrap());
        let n23 = l2(&influence_empirical(&base, &majority, 1e-4, 2.0 / 3.0).unwrap());
        assert!(n23 < n0, "{n23} vs {n0}");
        // On a rare class the ordering reverses: positive λ amplifies p/q ratios.
        let minority = ProbVector::one_hot(3, 2).unwrap();
        let m0 = l2(&influence_empirical(&base, &minority, 1e-4, 0.0).unwrap());
        let m23 = l2(&influence_empirical(&base, &minority, 1e-4, 2.0 / 3.0).unwrap());
        assert!(m23 > m0, "{m23} vs {m0}");
    }

    #[test]
    fn influence_input_errors() {
        let base = vec![pv(&[0.5, 0.5])];
        let o = pv(&[0.1, 0.9]);
        assert!(influence_empirical(&base, &o, 0.0, 0.5).is_err());
        assert!(influence_empirical(&base, &o, 0.2, 0.5).is_err());
        assert!(influence_empirical(&[], &o, 0.01, 0.5).is_err());
        assert!(influence_empirical(&base, &pv(&[0.2, 0.3, 0.5]), 0.01, 0.5).is_err());
    }

    #[test]
    fn gof_examples() {
        let half = pv(&[0.5, 0.5]);
        assert_eq!(gof_statistic(&[20, 20], &half, 2.0 / 3.0).unwrap(), 0.0);
        // Pearson: (10−20)²/20 + (30−20)²/20 = 10
        assert_relative_eq!(gof_statistic(&[10, 30], &half, 1.0).unwrap(), 10.0, max_relative = 1e-12);
        // G² = 2[10 ln(10/20) + 30 ln(30/20)] = 10.464962875291...
        let g2 = 2.0 * (10.0 * (0.5f64).ln() + 30.0 * (1.5f64).ln());
        assert_relative_eq!(gof_statistic(&[10, 30], &half, 0.0).unwrap(), g2, max_relative = 1e-12);
        assert_relative_eq!(g2, 10.464_962_875_291_29, max_relative = 1e-12);
        assert!(gof_statistic(&[0, 0], &half, 1.0).is_err());
        assert!(gof_statistic(&[1, 2, 3], &half, 1.0).is_err());
    }

    #[test]
    fn chi_square_quantiles_match_tables() {
        // Reference values from standard χ² tables (R qchisq).
        let cases = [
            (1.0, 0.05, 3.841_458_820_694_124),
            (9.0, 0.05, 16.918_977_604_620_45),
            (9.0, 0.01, 21.665_994_333_461_92),
            (2.0, 0.5, 1.386_294_361_119_891),
            (99.0, 0.05, 123.225_221_486_526_4),
        ];
        for (df, tail, expected) in cases {
            let x = chi_square_upper_quantile(df, tail).unwrap();
            assert_relative_eq!(x, expected, max_relative = 1e-9);
            assert_relative_eq!(chi_square_sf(x, df), tail, max_relative = 1e-9);
        }
        assert!(chi_square_upper_quantile(0.0, 0.05).is_err());
        assert!(chi_square_upper_quantile(3.0, 1.0).is_err());
    }

    #[test]
    fn alternative_distribution() {
        let a = AlternativeSpec::new(4, 0.5).unwrap().distribution().unwrap();
        assert_relative_eq!(a.as_slice()[3], 1.5 / 4.0, epsilon = 1e-15);
        assert_relative_eq!(a.as_slice()[0], (1.0 - 0.5 / 3.0) / 4.0, epsilon = 1e-15);
        assert!(AlternativeSpec::new(4, -1.0).is_err());
        assert!(AlternativeSpec::new(4, 3.0).is_err());
        assert!(AlternativeSpec::new(1, 0.0).is_err());
        let u = AlternativeSpec::new(5, 0.0).unwrap().distribution().unwrap();
        assert_eq!(u.as_slice(), ProbVector::uniform(5).unwrap().as_slice());
    }

    #[test]
    fn multinomial_counts_sum_and_track_means() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = [0.1, 0.2, 0.3, 0.4];
        let mut totals = [0u64; 4];
        for _ in 0..2000 {
            let c = sample_multinomial(&mut rng, 50, &p);
            assert_eq!(c.iter().sum::<u64>(), 50);
            for (t, x) in totals.iter_mut().zip(&c) {
                *t += x;
            }
        }
        for (t, pk) in totals.iter().zip(&p) {
            let mean = *t as f64 / 2000.0;
            // sd of the mean count is sqrt(50 p (1-p) / 2000) <= 0.08
            assert!((mean - 50.0 * pk).abs() < 0.4, "{mean}");
        }
    }

    #[test]
    fn mc_power_is_deterministic_and_validated() {
        let alt = AlternativeSpec::new(5, 0.3).unwrap();
        let a = mc_power(&alt, 2.0 / 3.0, 100, 0.05, 300, 9).unwrap();
        let b = mc_power(&alt, 2.0 / 3.0, 100, 0.05, 300, 9).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(
            a.std_error,
            (a.rejection_rate * (1.0 - a.rejection_rate) / 300.0).sqrt(),
            epsilon = 1e-15
        );
        assert!(mc_power(&alt, 1.0, 100, 0.05, 99, 9).is_err());
        assert!(mc_power(&alt, 1.0, 100, 1.5, 300, 9).is_err());
    }

    #[test]
    fn sign_test_values() {
        let s = sign_test(&[1.0; 10]);
        assert_relative_eq!(s.p_value, 1.0 / 1024.0, max_relative = 1e-12);
        let mut d = vec![1.0; 9];
        d.push(-1.0);
        assert_relative_eq!(sign_test(&d).p_value, 11.0 / 1024.0, max_relative = 1e-12);
        let t = sign_test(&[0.0, 1.0, -1.0]);
        assert_eq!((t.positive, t.negative, t.ties), (1, 1, 1));
        assert_relative_eq!(t.p_value, 0.75, max_relative = 1e-12);
        assert_eq!(sign_test(&[]).p_value, 1.0);
    }
}
