//! Power divergences between categorical distributions.
//!
//! The family is
//!
//! ```text
//! D_λ(p, q) = 1/(λ(λ+1)) Σ_k p_k [(p_k/q_k)^λ − 1]
//! ```
//!
//! with the continuous limits `D_0 = KL(p, q)` and `D_{−1} = KL(q, p)`.
//! `D_1` is half the Pearson χ² distance.
//!
//! Two layers are exposed: checked functions over [`ProbVector`] /
//! [`LogitVector`], and the unchecked slice kernels in [`kernel`] that the
//! loss and training code call in inner loops (and that finite-difference
//! checks can evaluate off the simplex).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance from a singular order (0 or −1) below which the limit branch is used.
pub const BRANCH_TOLERANCE: f64 = 1e-6;

/// Floor applied to probabilities before forming likelihood ratios.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `Σ p = 1` for a valid [`ProbVector`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// A point on the probability simplex with at least two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewClasses(values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::NotNormalized(sum));
        }
        Ok(Self(values))
    }

    /// Normalizes non-negative weights onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Domain(format!("weights sum to {sum}")));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::TooFewClasses(classes));
        }
        Ok(Self(vec![1.0 / classes as f64; classes]))
    }

    /// Point mass on `class`.
    pub fn one_hot(classes: usize, class: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::ClassOutOfRange {
                index: class,
                classes,
            });
        }
        let mut v = vec![0.0; classes];
        v[class] = 1.0;
        Self::new(v)
    }

    /// The one-class distribution `(1)`, the non-target conditional when K = 2.
    pub(crate) fn single() -> Self {
        Self(vec![1.0])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// Raw pre-softmax scores for at least two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewClasses(values.len()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteLogit { index, value });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest logit (first one on ties).
    pub fn argmax(&self) -> usize {
        kernel::argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(v: LogitVector) -> Self {
        v.0
    }
}

/// Order λ of the power divergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DivergenceOrder(f64);

impl DivergenceOrder {
    /// λ = 2/3, the order used by the REDistill objective.
    pub const REDISTILL: Self = Self(2.0 / 3.0);
    pub const KL: Self = Self(0.0);
    pub const PEARSON: Self = Self(1.0);

    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::Domain(format!("divergence order {lambda} is not finite")));
        }
        Ok(Self(lambda))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Whether evaluation takes the forward-KL limit branch.
    pub fn is_kl(self) -> bool {
        self.0.abs() < BRANCH_TOLERANCE
    }

    /// Whether evaluation takes the reverse-KL limit branch.
    pub fn is_reverse_kl(self) -> bool {
        (self.0 + 1.0).abs() < BRANCH_TOLERANCE
    }
}

impl TryFrom<f64> for DivergenceOrder {
    type Error = Error;

    fn try_from(lambda: f64) -> Result<Self> {
        Self::new(lambda)
    }
}

impl From<DivergenceOrder> for f64 {
    fn from(o: DivergenceOrder) -> Self {
        o.0
    }
}

/// Softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Self = Self(1.0);

    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self(tau))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> Self {
        t.0
    }
}

/// The γ-logarithm (Box–Cox transform of order 1 − γ).
///
/// `log_γ(x) = (x^(1−γ) − 1)/(1 − γ)`, and `ln x` when `|γ − 1| < 1e-6`.
pub fn gamma_log(x: f64, gamma: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("gamma_log is undefined for x = {x}")));
    }
    if !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma_log order {gamma} is not finite")));
    }
    let ln = x.ln();
    let s = 1.0 - gamma;
    if s.abs() < BRANCH_TOLERANCE {
        Ok(ln)
    } else {
        // expm1 keeps the value accurate as s approaches the branch.
        Ok((s * ln).exp_m1() / s)
    }
}

/// Temperature softmax with max-subtraction.
pub fn softmax(logits: &LogitVector, tau: Temperature) -> ProbVector {
    let mut out = vec![0.0; logits.len()];
    kernel::softmax_into(logits.as_slice(), tau.value(), &mut out);
    ProbVector(out)
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(p.len(), q.len()));
    }
    for (index, (&pk, &qk)) in p.iter().zip(q).enumerate() {
        if pk > 0.0 && qk <= 0.0 {
            return Err(Error::SupportViolation { index, p: pk, q: qk });
        }
    }
    Ok(())
}

/// `D_λ(p, q)`; KL(p, q) at λ ≈ 0 and KL(q, p) at λ ≈ −1.
pub fn power_divergence(p: &ProbVector, q: &ProbVector, order: DivergenceOrder) -> Result<f64> {
    check_pair(p.as_slice(), q.as_slice())?;
    if order.is_reverse_kl() {
        check_pair(q.as_slice(), p.as_slice())?;
    }
    Ok(kernel::power_divergence(p.as_slice(), q.as_slice(), order.value()))
}

/// `Σ p_k ln(p_k/q_k)` with `0 ln(0/q) = 0`.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_pair(p.as_slice(), q.as_slice())?;
    Ok(kernel::kl_divergence(p.as_slice(), q.as_slice()))
}

/// Gradient of `D_λ(p, q)` in `q`, treating each `q_j` as a free coordinate:
/// `−(p_j/q_j)^(λ+1)/(1+λ)`.
pub fn grad_divergence_wrt_probs(
    p: &ProbVector,
    q: &ProbVector,
    order: DivergenceOrder,
) -> Result<Vec<f64>> {
    check_pair(p.as_slice(), q.as_slice())?;
    let mut out = vec![0.0; p.len()];
    kernel::grad_wrt_probs(p.as_slice(), q.as_slice(), order.value(), &mut out);
    Ok(out)
}

/// Diagonal of the Hessian of `D_λ(p, q)` in `q`: `(p_j/q_j)^(1+λ)/q_j`.
/// The off-diagonal entries are identically zero.
pub fn hessian_divergence_wrt_probs(
    p: &ProbVector,
    q: &ProbVector,
    order: DivergenceOrder,
) -> Result<Vec<f64>> {
    check_pair(p.as_slice(), q.as_slice())?;
    let mut out = vec![0.0; p.len()];
    kernel::hessian_wrt_probs(p.as_slice(), q.as_slice(), order.value(), &mut out);
    Ok(out)
}

/// Gradient of `D_λ(p, softmax(v/τ))` with respect to the student logits `v`.
///
/// Component `j` is `(1/τ)(q_j/(1+λ))[Σ_i p_i (p_i/q_i)^λ − (p_j/q_j)^(1+λ)]`,
/// which sums to zero over `j`.
pub fn grad_divergence_wrt_logits(
    p: &ProbVector,
    student_logits: &LogitVector,
    order: DivergenceOrder,
    tau: Temperature,
) -> Result<Vec<f64>> {
    if p.len() != student_logits.len() {
        return Err(Error::DimensionMismatch(p.len(), student_logits.len()));
    }
    let mut out = vec![0.0; p.len()];
    kernel::grad_wrt_logits(
        p.as_slice(),
        student_logits.as_slice(),
        order.value(),
        tau.value(),
        &mut out,
    );
    Ok(out)
}

/// `τ² D_λ(softmax(u/τ), softmax(v/τ))`.
pub fn scaled_temperature_divergence(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    order: DivergenceOrder,
    tau: Temperature,
) -> Result<f64> {
    if teacher_logits.len() != student_logits.len() {
        return Err(Error::DimensionMismatch(teacher_logits.len(), student_logits.len()));
    }
    let t = tau.value();
    let p = softmax(teacher_logits, tau);
    let q = softmax(student_logits, tau);
    Ok(t * t * kernel::power_divergence(p.as_slice(), q.as_slice(), order.value()))
}

/// Gradient of [`scaled_temperature_divergence`] with respect to the student logits.
pub fn scaled_temperature_divergence_grad(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    order: DivergenceOrder,
    tau: Temperature,
) -> Result<Vec<f64>> {
    if teacher_logits.len() != student_logits.len() {
        return Err(Error::DimensionMismatch(teacher_logits.len(), student_logits.len()));
    }
    let t = tau.value();
    let p = softmax(teacher_logits, tau);
    let mut g = grad_divergence_wrt_logits(&p, student_logits, order, tau)?;
    for gj in &mut g {
        *gj *= t * t;
    }
    Ok(g)
}

/// Leading-order behaviour of the logit gradient at high temperature,
/// `q_j^τ (v_j − u_j)/τ²` on mean-centred logits, valid while the logits are
/// small relative to τ.
///
/// Both logit vectors are centred first, so the result is shift-invariant
/// like the exact gradient. It does not depend on λ. Its negation
/// `q_j^τ (u_j − v_j)/τ²` is the descent direction; both shrink as `1/τ²`.
pub fn asymptotic_logit_gradient(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    tau: Temperature,
) -> Result<Vec<f64>> {
    if teacher_logits.len() != student_logits.len() {
        return Err(Error::DimensionMismatch(teacher_logits.len(), student_logits.len()));
    }
    let t = tau.value();
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (u, v) = (teacher_logits.as_slice(), student_logits.as_slice());
    let shift = mean(v) - mean(u);
    let q = softmax(student_logits, tau);
    Ok(q.as_slice()
        .iter()
        .zip(u.iter().zip(v))
        .map(|(qj, (uj, vj))| qj * (vj - uj - shift) / (t * t))
        .collect())
}

/// Unchecked slice kernels.
///
/// These accept any positive `q` (not necessarily normalized) so they can be
/// differentiated numerically coordinate by coordinate. Entries of `q` are
/// floored at [`PROB_FLOOR`]; entries with `p_k = 0` contribute nothing.
pub mod kernel {
    use super::{BRANCH_TOLERANCE, PROB_FLOOR};

    pub fn argmax(values: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in values.iter().enumerate().skip(1) {
            if v > values[best] {
                best = i;
            }
        }
        best
    }

    pub fn log_sum_exp(values: &[f64], tau: f64) -> f64 {
        let m = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / tau));
        m + values.iter().map(|&v| (v / tau - m).exp()).sum::<f64>().ln()
    }

    pub fn softmax_into(logits: &[f64], tau: f64, out: &mut [f64]) {
        let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for (o, &v) in out.iter_mut().zip(logits) {
            *o = ((v - m) / tau).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }

    pub fn softmax(logits: &[f64], tau: f64) -> Vec<f64> {
        let mut out = vec![0.0; logits.len()];
        softmax_into(logits, tau, &mut out);
        out
    }

    #[inline]
    fn floor(x: f64) -> f64 {
        x.max(PROB_FLOOR)
    }

    /// Same decomposition as [`power_divergence`]: non-negative per-class
    /// terms `q·[(1 + d)ln(1 + d) − d]` plus the compensated linear part.
    pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
        let mut excess = 0.0;
        let mut linear = CompensatedSum::default();
        for (&pk, &qk) in p.iter().zip(q) {
            let qk = floor(qk);
            excess += if pk > 0.0 { qk * excess_entropy((pk - qk) / qk) } else { qk };
            linear.add(pk - qk);
        }
        excess + linear.value()
    }

    /// `(1 + d)ln(1 + d) − d`, by its power series for small `d`.
    fn excess_entropy(d: f64) -> f64 {
        if d.abs() > 0.25 {
            return (1.0 + d) * d.ln_1p() - d;
        }
        let mut power = d;
        let mut sum = 0.0;
        for k in 2..80 {
            power *= -d;
            let term = power / (k * (k - 1)) as f64;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        -sum
    }

    pub fn power_divergence(p: &[f64], q: &[f64], lambda: f64) -> f64 {
        if lambda.abs() < BRANCH_TOLERANCE {
            return kl_divergence(p, q);
        }
        if (lambda + 1.0).abs() < BRANCH_TOLERANCE {
            return kl_divergence(q, p);
        }
        // Per class, q·[(1 + d)^(λ+1) − 1 − (λ+1)d] with d = p/q − 1, plus
        // the linear part λ(p − q) kept separately. Each bracket is
        // non-negative, so close distributions do not cancel across classes,
        // and the linear part (zero on the simplex) is summed with
        // compensation so the value off the simplex is unchanged.
        let a = lambda + 1.0;
        let mut excess = 0.0;
        let mut linear = CompensatedSum::default();
        for (&pk, &qk) in p.iter().zip(q) {
            let qk = floor(qk);
            excess += if pk > 0.0 { qk * excess_power(a, (pk - qk) / qk) } else { qk * lambda };
            linear.add(pk - qk);
        }
        excess / (lambda * a) + linear.value() / a
    }

    /// Neumaier summation.
    #[derive(Default)]
    struct CompensatedSum {
        sum: f64,
        carry: f64,
    }

    impl CompensatedSum {
        fn add(&mut self, x: f64) {
            let t = self.sum + x;
            self.carry += if self.sum.abs() >= x.abs() { (self.sum - t) + x } else { (x - t) + self.sum };
            self.sum = t;
        }

        fn value(&self) -> f64 {
            self.sum + self.carry
        }
    }

    /// `(1 + d)^a − 1 − a·d`, accurate for small `d` via the binomial series.
    fn excess_power(a: f64, d: f64) -> f64 {
        if d.abs() > 0.25 {
            return (a * d.ln_1p()).exp_m1() - a * d;
        }
        let mut coeff = a;
        let mut power = d;
        let mut sum = 0.0;
        for k in 2..80 {
            coeff *= (a - (k - 1) as f64) / k as f64;
            power *= d;
            let term = coeff * power;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    }

    pub fn grad_wrt_probs(p: &[f64], q: &[f64], lambda: f64, out: &mut [f64]) {
        if (lambda + 1.0).abs() < BRANCH_TOLERANCE {
            for ((o, &pk), &qk) in out.iter_mut().zip(p).zip(q) {
                *o = (floor(qk) / floor(pk)).ln() + 1.0;
            }
            return;
        }
        for ((o, &pk), &qk) in out.iter_mut().zip(p).zip(q) {
            *o = if pk > 0.0 {
                -(pk / floor(qk)).powf(lambda + 1.0) / (1.0 + lambda)
            } else {
                0.0
            };
        }
    }

    pub fn hessian_wrt_probs(p: &[f64], q: &[f64], lambda: f64, out: &mut [f64]) {
        if (lambda + 1.0).abs() < BRANCH_TOLERANCE {
            for (o, &qk) in out.iter_mut().zip(q) {
                *o = 1.0 / floor(qk);
            }
            return;
        }
        for ((o, &pk), &qk) in out.iter_mut().zip(p).zip(q) {
            let qk = floor(qk);
            *o = if pk > 0.0 {
                (pk / qk).powf(1.0 + lambda) / qk
            } else {
                0.0
            };
        }
    }

    /// Gradient of `D_λ(p, softmax(v/τ))` in `v`, written as
    /// `(1/τ)/(1+λ) [q_j S − p_j r_j^λ]` with `r = p/q` and `S = Σ p_i r_i^λ`
    /// so that no ratio is raised above the power λ.
    pub fn grad_wrt_logits(p: &[f64], v: &[f64], lambda: f64, tau: f64, out: &mut [f64]) {
        softmax_into(v, tau, out);
        if (lambda + 1.0).abs() < BRANCH_TOLERANCE {
            // D_{-1} = KL(q, p): ∂/∂v_j = (1/τ) q_j (ℓ_j − Σ q_i ℓ_i), ℓ = ln(q/p).
            let mean: f64 = out
                .iter()
                .zip(p)
                .map(|(&qk, &pk)| qk * (floor(qk) / floor(pk)).ln())
                .sum();
            for (o, &pk) in out.iter_mut().zip(p) {
                let qk = *o;
                *o = qk * ((floor(qk) / floor(pk)).ln() - mean) / tau;
            }
            return;
        }
        let mut s = 0.0;
        for (&qk, &pk) in out.iter().zip(p) {
            if pk > 0.0 {
                s += pk * (pk / floor(qk)).powf(lambda);
            }
        }
        let scale = 1.0 / (tau * (1.0 + lambda));
        for (o, &pk) in out.iter_mut().zip(p) {
            let qk = *o;
            let own = if pk > 0.0 {
                pk * (pk / floor(qk)).powf(lambda)
            } else {
                0.0
            };
            *o = scale * (qk * s - own);
        }
    }
}

#[cfg(test)]
// Index loops below spell out the matrix formulas they check.
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn prob_vector_rejects_bad_input() {
        assert!(matches!(ProbVector::new(vec![1.0]), Err(Error::TooFewClasses(1))));
        assert!(matches!(
            ProbVector::new(vec![0.5, 0.6]),
            Err(Error::NotNormalized(_))
        ));
        assert!(matches!(
            ProbVector::new(vec![1.5, -0.5]),
            Err(Error::InvalidProbability { index: 1, .. })
        ));
        assert!(ProbVector::new(vec![0.5, 0.5 + 5e-10]).is_ok());
        assert!(LogitVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(Temperature::new(0.0).is_err());
        assert!(DivergenceOrder::new(f64::INFINITY).is_err());
    }

    #[test]
    fn gamma_log_values() {
        for g in [-2.0, 0.0, 0.5, 1.0, 3.0] {
            assert_eq!(gamma_log(1.0, g).unwrap(), 0.0);
        }
        assert_relative_eq!(gamma_log(std::f64::consts::E, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        // (2^1 - 1)/1
        assert_relative_eq!(gamma_log(2.0, 0.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(gamma_log(0.0, 0.5).is_err());
        assert!(gamma_log(-1.0, 0.5).is_err());
    }

    #[test]
    fn gamma_log_is_continuous_at_the_branch() {
        let x: f64 = 3.7;
        let inside = gamma_log(x, 1.0 + 0.5e-6).unwrap();
        let outside = gamma_log(x, 1.0 + 2e-6).unwrap();
        assert_relative_eq!(inside, x.ln(), epsilon = 1e-15);
        assert!((outside - x.ln()).abs() < 1e-5);
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&lv(&[0.0; 4]), Temperature::new(3.0).unwrap());
        for &x in u.as_slice() {
            assert_relative_eq!(x, 0.25, epsilon = 1e-15);
        }
        let a = softmax(&lv(&[0.3, -1.2]), Temperature::ONE);
        let b = softmax(&lv(&[100.3, 98.8]), Temperature::ONE);
        assert_relative_eq!(a.as_slice()[0], b.as_slice()[0], epsilon = 1e-12);
        let c = softmax(&lv(&[1f64.ln(), 2f64.ln()]), Temperature::ONE);
        assert_relative_eq!(c.as_slice()[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(c.as_slice()[1], 2.0 / 3.0, epsilon = 1e-15);
        // Large logits do not overflow.
        let d = softmax(&lv(&[1000.0, 0.0]), Temperature::ONE);
        assert_eq!(d.as_slice()[0], 1.0);
    }

    #[test]
    fn power_divergence_examples() {
        let p = pv(&[1.0 / 3.0, 2.0 / 3.0]);
        let q = pv(&[0.5, 0.5]);
        assert_eq!(power_divergence(&p, &p, DivergenceOrder::REDISTILL).unwrap(), 0.0);

        let d1 = power_divergence(&p, &q, DivergenceOrder::PEARSON).unwrap();
        let half_pearson: f64 = 0.5
            * p.as_slice()
                .iter()
                .zip(q.as_slice())
                .map(|(a, b)| (a - b) * (a - b) / b)
                .sum::<f64>();
        assert_relative_eq!(d1, 1.0 / 18.0, epsilon = 1e-15);
        assert_relative_eq!(d1, half_pearson, max_relative = 1e-12);

        let d0 = power_divergence(&p, &q, DivergenceOrder::KL).unwrap();
        let kl = (1.0 / 3.0) * (2.0f64 / 3.0).ln() + (2.0 / 3.0) * (4.0f64 / 3.0).ln();
        assert!((d0 - kl).abs() < 1e-12);
    }

    /// Distributions 2⁻³⁰ apart; references from 60-digit arithmetic.
    #[test]
    fn close_distributions_keep_full_relative_precision() {
        let shift = 2f64.powi(-30);
        let p = [0.25, 0.375, 0.375];
        let q = [0.25 + shift, 0.375, 0.375 - shift];
        for (lambda, want) in [
            (0.0, 2.891_205_790_901_216e-18),
            (2.0 / 3.0, 2.891_205_790_103_395_4e-18),
            (1.0, 2.891_205_789_704_485e-18),
            (-1.0, 2.891_205_792_097_947_4e-18),
            (2.0, 2.891_205_788_507_753_5e-18),
        ] {
            let got = kernel::power_divergence(&p, &q, lambda);
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn reverse_kl_branch() {
        let p = pv(&[0.2, 0.3, 0.5]);
        let q = pv(&[0.4, 0.4, 0.2]);
        let rev = kl_divergence(&q, &p).unwrap();
        let at = power_divergence(&p, &q, DivergenceOrder::new(-1.0).unwrap()).unwrap();
        assert_eq!(at, rev);
        let near = power_divergence(&p, &q, DivergenceOrder::new(-1.0 + 1e-4).unwrap()).unwrap();
        assert!((near - rev).abs() < 1e-3);
    }

    #[test]
    fn power_divergence_errors() {
        let p = pv(&[0.5, 0.5]);
        let q3 = pv(&[0.2, 0.3, 0.5]);
        assert!(matches!(
            power_divergence(&p, &q3, DivergenceOrder::KL),
            Err(Error::DimensionMismatch(2, 3))
        ));
        let q0 = pv(&[1.0, 0.0]);
        assert!(matches!(
            power_divergence(&p, &q0, DivergenceOrder::REDISTILL),
            Err(Error::SupportViolation { index: 1, .. })
        ));
        // p_k = 0 is fine wherever q puts mass.
        assert!(power_divergence(&q0, &p, DivergenceOrder::REDISTILL).unwrap() > 0.0);
    }

    #[test]
    fn kl_examples() {
        let p = pv(&[1.0 / 3.0, 2.0 / 3.0]);
        let q = pv(&[2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        // (1/3) ln(1/2) + (2/3) ln 2 = (1/3) ln 2 = 0.23104906018664842
        assert_relative_eq!(kl_divergence(&p, &q).unwrap(), 0.231_049_060_186_648_42, epsilon = 1e-15);
        let onehot = ProbVector::one_hot(3, 1).unwrap();
        let q3 = pv(&[0.2, 0.3, 0.5]);
        assert_relative_eq!(kl_divergence(&onehot, &q3).unwrap(), -(0.3f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn gradient_and_hessian_examples() {
        let p = pv(&[1.0 / 3.0, 2.0 / 3.0]);
        let q = pv(&[0.5, 0.5]);
        for lambda in [-0.5, 0.0, 2.0 / 3.0, 2.0] {
            let o = DivergenceOrder::new(lambda).unwrap();
            for g in grad_divergence_wrt_probs(&p, &p, o).unwrap() {
                assert_relative_eq!(g, -1.0 / (1.0 + lambda), epsilon = 1e-14);
            }
            let h = hessian_divergence_wrt_probs(&p, &p, o).unwrap();
            assert_relative_eq!(h[0], 3.0, epsilon = 1e-13);
            assert_relative_eq!(h[1], 1.5, epsilon = 1e-13);
        }
        let g = grad_divergence_wrt_probs(&p, &q, DivergenceOrder::KL).unwrap();
        assert_relative_eq!(g[0], -2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(g[1], -4.0 / 3.0, epsilon = 1e-15);
        let h = hessian_divergence_wrt_probs(&p, &q, DivergenceOrder::PEARSON).unwrap();
        assert_relative_eq!(h[0], 8.0 / 9.0, epsilon = 1e-14);
        assert_relative_eq!(h[1], 32.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn logit_gradient_vanishes_at_match_and_reduces_to_kd_at_zero() {
        let v = lv(&[0.3, -1.0, 2.0, 0.1]);
        let tau = Temperature::new(2.0).unwrap();
        let q = softmax(&v, tau);
        for lambda in [0.0, 2.0 / 3.0, 1.5] {
            let g = grad_divergence_wrt_logits(&q, &v, DivergenceOrder::new(lambda).unwrap(), tau)
                .unwrap();
            for gj in g {
                assert!(gj.abs() < 1e-15);
            }
        }
        let p = pv(&[0.1, 0.2, 0.3, 0.4]);
        let g = grad_divergence_wrt_logits(&p, &v, DivergenceOrder::KL, tau).unwrap();
        for j in 0..4 {
            let expected = (q.as_slice()[j] - p.as_slice()[j]) / 2.0;
            assert_relative_eq!(g[j], expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn scaled_divergence_examples() {
        let u = lv(&[0.5, -0.2, 0.1]);
        let v = lv(&[0.1, 0.4, -0.3]);
        let o = DivergenceOrder::REDISTILL;
        let tau4 = Temperature::new(4.0).unwrap();
        assert_eq!(scaled_temperature_divergence(&u, &u, o, tau4).unwrap(), 0.0);
        let plain = power_divergence(
            &softmax(&u, Temperature::ONE),
            &softmax(&v, Temperature::ONE),
            o,
        )
        .unwrap();
        assert_eq!(
            scaled_temperature_divergence(&u, &v, o, Temperature::ONE).unwrap(),
            plain
        );
    }

    #[test]
    fn asymptotic_gradient_is_the_high_temperature_limit() {
        let u = LogitVector::new(vec![1.0, -0.5, 2.0, 0.3]).unwrap();
        let v = LogitVector::new(vec![0.2, 0.4, -1.0, 0.9]).unwrap();
        let shifted = LogitVector::new(v.as_slice().iter().map(|x| x + 7.0).collect()).unwrap();
        let tau = Temperature::new(200.0).unwrap();
        let approx = asymptotic_logit_gradient(&u, &v, tau).unwrap();
        for (a, b) in approx.iter().zip(asymptotic_logit_gradient(&u, &shifted, tau).unwrap()) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
        // The leftover is first order in 1/τ: doubling τ halves it.
        let error = |lambda: f64, t: f64| {
            let tau = Temperature::new(t).unwrap();
            let exact = grad_divergence_wrt_logits(&softmax(&u, tau), &v, DivergenceOrder::new(lambda).unwrap(), tau).unwrap();
            crate::verify::relative_error(&exact, &asymptotic_logit_gradient(&u, &v, tau).unwrap(), 0.0)
        };
        for lambda in [0.0, 2.0 / 3.0, 2.0] {
            let (coarse, fine) = (error(lambda, 200.0), error(lambda, 400.0));
            assert!(coarse < 0.02, "lambda {lambda}: relative error {coarse}");
            assert_relative_eq!(fine / coarse, 0.5, epsilon = 0.02);
        }
    }

    #[test]
    fn serde_enforces_invariants() {
        let p: ProbVector = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<ProbVector>("[0.25, 0.5]").is_err());
        assert!(serde_json::from_str::<Temperature>("-1.0").is_err());
    }
}
