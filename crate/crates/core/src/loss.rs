//! Distillation objectives.
//!
//! [`redistill_loss`] is hard-label cross-entropy plus power divergences on the
//! decoupled target/non-target distributions, both softened at temperature τ
//! and multiplied by τ². With λ = 0 it is the decoupled-KD objective; with
//! α = β = 0 it is plain cross-entropy. [`kd_loss`] is the classic
//! non-decoupled KL baseline.
//!
//! All gradients are exact and taken with respect to the student logits.

use serde::{Deserialize, Serialize};

use crate::divergence::{kernel, LogitVector, ProbVector, Temperature};
use crate::error::{Error, Result};

/// Non-target mass below which the non-target term is dropped.
pub const DEGENERATE_MASS: f64 = 1e-9;

/// Hyper-parameters of the REDistill objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedistillConfig {
    /// Power-divergence order λ.
    pub lambda: f64,
    /// Weight of the target-vs-rest term.
    pub alpha: f64,
    /// Weight of the non-target term.
    pub beta: f64,
    /// Distillation temperature.
    pub tau: f64,
    /// Weight of the hard-label cross-entropy term.
    pub hard_weight: f64,
}

impl Default for RedistillConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0 / 3.0,
            alpha: 1.0,
            beta: 8.0,
            tau: 4.0,
            hard_weight: 1.0,
        }
    }
}

impl RedistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda {} is not finite", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("hard_weight", self.hard_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }
}

/// Target-vs-rest split of a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledDistributions {
    /// `(p_t, 1 − p_t)`.
    pub target_binary: ProbVector,
    /// `p_j / (1 − p_t)` for `j ≠ t`, in ascending class order.
    pub nontarget_conditional: ProbVector,
}

impl DecoupledDistributions {
    /// Rebuilds the full distribution.
    pub fn reconstruct(&self, target_class: usize) -> Vec<f64> {
        let rest = self.target_binary.as_slice()[1];
        let mut out = Vec::with_capacity(self.nontarget_conditional.len() + 1);
        let mut nontarget = self.nontarget_conditional.as_slice().iter();
        for k in 0..=self.nontarget_conditional.len() {
            if k == target_class {
                out.push(self.target_binary.as_slice()[0]);
            } else {
                out.push(rest * nontarget.next().copied().unwrap_or(0.0));
            }
        }
        out
    }
}

/// Splits `probs` around `target_class`.
pub fn decouple(probs: &ProbVector, target_class: usize) -> Result<DecoupledDistributions> {
    let k = probs.len();
    if target_class >= k {
        return Err(Error::ClassOutOfRange {
            index: target_class,
            classes: k,
        });
    }
    let pt = probs.as_slice()[target_class];
    let rest: f64 = probs
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_class)
        .map(|(_, &x)| x)
        .sum();
    if rest < DEGENERATE_MASS {
        return Err(Error::DegenerateNonTarget(pt));
    }
    let target_binary = ProbVector::new(vec![pt, 1.0 - pt])?;
    let conditional: Vec<f64> = probs
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_class)
        .map(|(_, &x)| x / rest)
        .collect();
    // K = 2 leaves a single non-target class, which always carries mass 1.
    let nontarget_conditional = if conditional.len() == 1 {
        ProbVector::single()
    } else {
        ProbVector::new(conditional)?
    };
    Ok(DecoupledDistributions {
        target_binary,
        nontarget_conditional,
    })
}

/// Loss value, its gradient with respect to the student logits, and the
/// individual terms that make it up.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub hard: f64,
    pub target: f64,
    pub nontarget: f64,
}

fn check_inputs(student: &[f64], teacher: Option<&[f64]>, label: usize) -> Result<()> {
    if let Some(t) = teacher {
        if t.len() != student.len() {
            return Err(Error::DimensionMismatch(student.len(), t.len()));
        }
        if let Some((index, &value)) = t.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteLogit { index, value });
        }
    }
    if let Some((index, &value)) = student.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLogit { index, value });
    }
    if label >= student.len() {
        return Err(Error::ClassOutOfRange {
            index: label,
            classes: student.len(),
        });
    }
    Ok(())
}

/// Hard-label cross-entropy `−ln softmax(v)_y`; adds `weight·(q − onehot)` into `grad`.
fn hard_term(student: &[f64], label: usize, weight: f64, grad: &mut [f64]) -> f64 {
    let q = kernel::softmax(student, 1.0);
    for (j, (g, qj)) in grad.iter_mut().zip(&q).enumerate() {
        let y = if j == label { 1.0 } else { 0.0 };
        *g += weight * (qj - y);
    }
    let ce = kernel::log_sum_exp(student, 1.0) - student[label];
    weight * ce
}

/// Cross-entropy against the ground-truth label.
pub fn cross_entropy_loss(student_logits: &LogitVector, label: usize) -> Result<LossOutput> {
    check_inputs(student_logits.as_slice(), None, label)?;
    Ok(cross_entropy_unchecked(student_logits.as_slice(), label))
}

pub(crate) fn cross_entropy_unchecked(student: &[f64], label: usize) -> LossOutput {
    let mut grad = vec![0.0; student.len()];
    let hard = hard_term(student, label, 1.0, &mut grad);
    LossOutput {
        loss: hard,
        grad,
        hard,
        target: 0.0,
        nontarget: 0.0,
    }
}

/// The REDistill objective and its exact gradient.
pub fn redistill_loss(
    student_logits: &LogitVector,
    teacher_logits: &LogitVector,
    label: usize,
    config: &RedistillConfig,
) -> Result<LossOutput> {
    config.validate()?;
    check_inputs(
        student_logits.as_slice(),
        Some(teacher_logits.as_slice()),
        label,
    )?;
    Ok(redistill_unchecked(
        student_logits.as_slice(),
        teacher_logits.as_slice(),
        label,
        config,
    ))
}

pub(crate) fn redistill_unchecked(
    v: &[f64],
    u: &[f64],
    label: usize,
    cfg: &RedistillConfig,
) -> LossOutput {
    let k = v.len();
    let tau = cfg.tau;
    let t2 = tau * tau;
    let lambda = cfg.lambda;
    let mut grad = vec![0.0; k];

    let hard = if cfg.hard_weight != 0.0 {
        hard_term(v, label, cfg.hard_weight, &mut grad)
    } else {
        0.0
    };

    // Non-target logits in ascending class order.
    let v_rest: Vec<f64> = (0..k).filter(|&j| j != label).map(|j| v[j]).collect();
    let u_rest: Vec<f64> = (0..k).filter(|&j| j != label).map(|j| u[j]).collect();
    let n_student = kernel::softmax(&v_rest, tau);
    let n_teacher = kernel::softmax(&u_rest, tau);

    // The binary distribution is a softmax over (v_t, τ·LSE(v_rest/τ));
    // the second coordinate has derivative n_student[j] in v_j.
    let z_student = [v[label], tau * kernel::log_sum_exp(&v_rest, tau)];
    let z_teacher = [u[label], tau * kernel::log_sum_exp(&u_rest, tau)];
    let b_student = kernel::softmax(&z_student, tau);
    let b_teacher = kernel::softmax(&z_teacher, tau);

    let mut target = 0.0;
    if cfg.alpha != 0.0 {
        target = cfg.alpha * t2 * kernel::power_divergence(&b_teacher, &b_student, lambda);
        let mut gz = [0.0; 2];
        kernel::grad_wrt_logits(&b_teacher, &z_student, lambda, tau, &mut gz);
        let w = cfg.alpha * t2;
        grad[label] += w * gz[0];
        for (idx, j) in (0..k).filter(|&j| j != label).enumerate() {
            grad[j] += w * gz[1] * n_student[idx];
        }
    }

    let mut nontarget = 0.0;
    let degenerate = b_teacher[1] < DEGENERATE_MASS || b_student[1] < DEGENERATE_MASS;
    if cfg.beta != 0.0 && !degenerate {
        nontarget = cfg.beta * t2 * kernel::power_divergence(&n_teacher, &n_student, lambda);
        let mut gn = vec![0.0; k - 1];
        kernel::grad_wrt_logits(&n_teacher, &v_rest, lambda, tau, &mut gn);
        let w = cfg.beta * t2;
        for (idx, j) in (0..k).filter(|&j| j != label).enumerate() {
            grad[j] += w * gn[idx];
        }
    }

    LossOutput {
        loss: hard + target + nontarget,
        grad,
        hard,
        target,
        nontarget,
    }
}

/// `c1·CE(y, softmax(v)) + c2·τ²·KL(softmax(u/τ), softmax(v/τ))`.
pub fn kd_loss(
    student_logits: &LogitVector,
    teacher_logits: &LogitVector,
    label: usize,
    c1: f64,
    c2: f64,
    tau: Temperature,
) -> Result<LossOutput> {
    check_inputs(
        student_logits.as_slice(),
        Some(teacher_logits.as_slice()),
        label,
    )?;
    Ok(kd_unchecked(
        student_logits.as_slice(),
        teacher_logits.as_slice(),
        label,
        c1,
        c2,
        tau.value(),
    ))
}

pub(crate) fn kd_unchecked(
    v: &[f64],
    u: &[f64],
    label: usize,
    c1: f64,
    c2: f64,
    tau: f64,
) -> LossOutput {
    let k = v.len();
    let mut grad = vec![0.0; k];
    let hard = hard_term(v, label, c1, &mut grad);
    let mut soft = 0.0;
    if c2 != 0.0 {
        let p = kernel::softmax(u, tau);
        let q = kernel::softmax(v, tau);
        soft = c2 * tau * tau * kernel::kl_divergence(&p, &q);
        for ((g, qj), pj) in grad.iter_mut().zip(&q).zip(&p) {
            *g += c2 * tau * (qj - pj);
        }
    }
    LossOutput {
        loss: hard + soft,
        grad,
        hard,
        target: soft,
        nontarget: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    /// Decoupled KD written out directly from full softmax outputs.
    fn dkd_oracle(v: &[f64], u: &[f64], label: usize, alpha: f64, beta: f64, tau: f64, hard: f64) -> f64 {
        let soft = |x: &[f64], t: f64| -> Vec<f64> {
            let e: Vec<f64> = x.iter().map(|a| (a / t).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|a| a / s).collect()
        };
        let kl = |p: &[f64], q: &[f64]| -> f64 {
            p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
        };
        let q1 = soft(v, 1.0);
        let ce = -q1[label].ln();
        let p = soft(u, tau);
        let q = soft(v, tau);
        let bp = [p[label], 1.0 - p[label]];
        let bq = [q[label], 1.0 - q[label]];
        let np: Vec<f64> = (0..p.len()).filter(|&j| j != label).map(|j| p[j] / bp[1]).collect();
        let nq: Vec<f64> = (0..q.len()).filter(|&j| j != label).map(|j| q[j] / bq[1]).collect();
        hard * ce + tau * tau * (alpha * kl(&bp, &bq) + beta * kl(&np, &nq))
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], step: f64, tol: f64) {
        let mut xp = x.to_vec();
        let numeric: Vec<f64> = (0..x.len())
            .map(|j| {
                xp[j] = x[j] + step;
                let hi = f(&xp);
                xp[j] = x[j] - step;
                let lo = f(&xp);
                xp[j] = x[j];
                (hi - lo) / (2.0 * step)
            })
            .collect();
        let diff: f64 = numeric.iter().zip(analytic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        assert!(diff / scale < tol, "rel err {} analytic {analytic:?} numeric {numeric:?}", diff / scale);
    }

    #[test]
    fn decouple_examples() {
        let d = decouple(&ProbVector::uniform(4).unwrap(), 0).unwrap();
        assert_eq!(d.target_binary.as_slice(), &[0.25, 0.75]);
        for x in d.nontarget_conditional.as_slice() {
            assert_relative_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }

        let p = pv(&[0.7, 0.2, 0.1]);
        let d = decouple(&p, 0).unwrap();
        assert_relative_eq!(d.target_binary.as_slice()[1], 0.3, epsilon = 1e-15);
        assert_relative_eq!(d.nontarget_conditional.as_slice()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(d.nontarget_conditional.as_slice()[1], 1.0 / 3.0, epsilon = 1e-15);
        for (a, b) in d.reconstruct(0).iter().zip(p.as_slice()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }

        let d = decouple(&pv(&[0.5, 0.5]), 1).unwrap();
        assert_eq!(d.target_binary.as_slice(), &[0.5, 0.5]);
        assert_eq!(d.nontarget_conditional.as_slice(), &[1.0]);

        assert!(matches!(decouple(&p, 3), Err(Error::ClassOutOfRange { .. })));
        assert!(matches!(
            decouple(&pv(&[1.0, 0.0, 0.0]), 0),
            Err(Error::DegenerateNonTarget(_))
        ));
    }

    #[test]
    fn matching_teacher_leaves_only_cross_entropy() {
        let v = lv(&[0.3, 2.0, -1.0, 0.5]);
        let cfg = RedistillConfig::default();
        let out = redistill_loss(&v, &v, 1, &cfg).unwrap();
        assert!(out.target.abs() < 1e-14 && out.nontarget.abs() < 1e-14);
        let ce = cross_entropy_loss(&v, 1).unwrap();
        assert_relative_eq!(out.loss, ce.loss, max_relative = 1e-12);
        for (a, b) in out.grad.iter().zip(&ce.grad) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_divergence_weights_reduce_to_cross_entropy() {
        let v = lv(&[0.3, 2.0, -1.0]);
        let u = lv(&[1.0, -2.0, 0.0]);
        let cfg = RedistillConfig {
            alpha: 0.0,
            beta: 0.0,
            ..Default::default()
        };
        let out = redistill_loss(&v, &u, 2, &cfg).unwrap();
        let ce = cross_entropy_loss(&v, 2).unwrap();
        assert_eq!(out.loss, ce.loss);
        assert_eq!(out.grad, ce.grad);
    }

    #[test]
    fn lambda_zero_matches_independent_decoupled_kd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let k = rng.random_range(2..12);
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let u: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let label = rng.random_range(0..k);
            let cfg = RedistillConfig {
                lambda: 0.0,
                alpha: rng.random_range(0.0..2.0),
                beta: rng.random_range(0.0..10.0),
                tau: rng.random_range(0.5..6.0),
                hard_weight: rng.random_range(0.0..2.0),
            };
            let got = redistill_loss(&lv(&v), &lv(&u), label, &cfg).unwrap().loss;
            let want = dkd_oracle(&v, &u, label, cfg.alpha, cfg.beta, cfg.tau, cfg.hard_weight);
            assert_relative_eq!(got, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn redistill_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &k in &[2usize, 5, 100] {
            for &lambda in &[0.0, 2.0 / 3.0, 1.0, 2.0] {
                for &tau in &[1.0, 4.0] {
                    let v: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let u: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let label = rng.random_range(0..k);
                    let cfg = RedistillConfig {
                        lambda,
                        tau,
                        ..Default::default()
                    };
                    let out = redistill_unchecked(&v, &u, label, &cfg);
                    fd_check(
                        |x| redistill_unchecked(x, &u, label, &cfg).loss,
                        &v,
                        &out.grad,
                        1e-5,
                        1e-5,
                    );
                }
            }
        }
    }

    #[test]
    fn kd_loss_behaviour() {
        let v = lv(&[0.2, -0.4, 1.1, 0.0, 0.7]);
        let u = lv(&[1.5, 0.3, -0.2, 0.9, -1.0]);
        let t = Temperature::new(4.0).unwrap();
        let ce = cross_entropy_loss(&v, 3).unwrap();
        let no_soft = kd_loss(&v, &u, 3, 1.0, 0.0, t).unwrap();
        assert_eq!(no_soft.loss, ce.loss);
        assert_eq!(no_soft.grad, ce.grad);
        let same = kd_loss(&v, &v, 3, 1.0, 0.9, t).unwrap();
        assert_relative_eq!(same.loss, ce.loss, max_relative = 1e-12);

        let out = kd_loss(&v, &u, 3, 0.5, 0.9, t).unwrap();
        fd_check(
            |x| kd_unchecked(x, u.as_slice(), 3, 0.5, 0.9, 4.0).loss,
            v.as_slice(),
            &out.grad,
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn degenerate_non_target_mass_drops_the_term() {
        let v = [0.0, 0.0, 0.0];
        let u = [60.0, 0.0, 0.0];
        let cfg = RedistillConfig {
            tau: 1.0,
            ..Default::default()
        };
        let out = redistill_unchecked(&v, &u, 0, &cfg);
        assert_eq!(out.nontarget, 0.0);
        assert!(out.loss.is_finite() && out.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn input_validation() {
        let v = lv(&[0.0, 1.0]);
        let u = lv(&[0.0, 1.0, 2.0]);
        let cfg = RedistillConfig::default();
        assert!(matches!(redistill_loss(&v, &u, 0, &cfg), Err(Error::DimensionMismatch(2, 3))));
        assert!(matches!(redistill_loss(&v, &v, 2, &cfg), Err(Error::ClassOutOfRange { .. })));
        let bad = RedistillConfig {
            tau: 0.0,
            ..Default::default()
        };
        assert!(redistill_loss(&v, &v, 0, &bad).is_err());
        let neg = RedistillConfig {
            beta: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn config_defaults_and_serde() {
        let cfg: RedistillConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RedistillConfig::default());
        assert_eq!(cfg.lambda, 2.0 / 3.0);
        assert_eq!((cfg.alpha, cfg.beta, cfg.tau, cfg.hard_weight), (1.0, 8.0, 4.0, 1.0));
        let back: RedistillConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<RedistillConfig>(r#"{"gamma": 1}"#).is_err());
    }
}
