//! Randomized self-checks of the divergence and loss implementations.
//!
//! Each suite draws random instances from a seeded stream, compares the
//! closed forms against identities or central finite differences, and stops
//! at the first failure with enough detail to reproduce it.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{self, kernel, DivergenceOrder, LogitVector, ProbVector, Temperature};
use crate::loss::{self, RedistillConfig};
use crate::neural::{Activation, Mlp, MlpSpec};
use crate::seed;

/// Orders exercised by the suites.
pub const LAMBDA_GRID: [f64; 8] = [-0.5, 0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0, 1.5, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Axioms,
    Identities,
    Gradients,
    Loss,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Axioms, Suite::Identities, Suite::Gradients, Suite::Loss];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Axioms => "axioms",
            Suite::Identities => "identities",
            Suite::Gradients => "gradients",
            Suite::Loss => "loss",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected axioms, identities, gradients or loss)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    /// Added to every analytic gradient before comparison. Non-zero values
    /// exist only to exercise the failure path.
    pub gradient_perturbation: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            gradient_perturbation: 0.0,
        }
    }
}

/// The first failing check of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub check: String,
    pub trial: usize,
    pub inputs: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub checks: usize,
    pub failure: Option<Counterexample>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

pub fn run_suite(suite: Suite, options: &VerifyOptions) -> SuiteReport {
    let mut ctx = Context {
        rng: seed::rng(options.seed, &[suite as u64]),
        checks: 0,
        perturbation: options.gradient_perturbation,
    };
    let mut failure = None;
    for trial in 0..options.trials {
        let result = match suite {
            Suite::Axioms => ctx.axioms(),
            Suite::Identities => ctx.identities(),
            Suite::Gradients => ctx.gradients(),
            Suite::Loss => ctx.loss(),
        };
        if let Err(mut c) = result {
            c.trial = trial;
            failure = Some(c);
            break;
        }
    }
    SuiteReport {
        suite,
        trials: options.trials,
        checks: ctx.checks,
        failure,
    }
}

pub fn run_all(options: &VerifyOptions) -> Vec<SuiteReport> {
    Suite::ALL.iter().map(|&s| run_suite(s, options)).collect()
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(floor);
    diff / scale
}

/// Central differences with per-coordinate step `step·max(|x_j|, 1)`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = step * x[j].abs().max(1.0);
            probe[j] = x[j] + h;
            let hi = f(&probe);
            probe[j] = x[j] - h;
            let lo = f(&probe);
            probe[j] = x[j];
            (hi - lo) / (2.0 * h)
        })
        .collect()
}

/// Dirichlet(1) draw mixed with the uniform distribution so every entry is
/// at least `floor`, then snapped onto the exact simplex with
/// [`exact_simplex`].
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, k: usize, floor: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    let mix = floor * k as f64;
    exact_simplex(&e.into_iter().map(|x| (1.0 - mix) * x / s + floor).collect::<Vec<_>>())
}

/// Rounds non-negative weights to multiples of 2⁻⁵² whose sum is exactly 1.
///
/// Rounded floats usually sum to 1 only within an ulp, and the divergence off
/// the simplex differs from its simplex identities by that defect. Inputs
/// from here sit on the simplex with no rounding at all.
pub fn exact_simplex(weights: &[f64]) -> Vec<f64> {
    const ONE: u64 = 1 << 52;
    let total: f64 = weights.iter().sum();
    let mut units: Vec<u64> = weights.iter().map(|w| (w / total * ONE as f64).round() as u64).collect();
    let assigned: u64 = units.iter().sum();
    let largest = (0..units.len()).max_by_key(|&i| units[i]).unwrap_or(0);
    if let Some(u) = units.get_mut(largest) {
        *u = (*u + ONE).saturating_sub(assigned);
    }
    units.into_iter().map(|u| u as f64 / ONE as f64).collect()
}

/// Fourth-order central differences (five-point stencil).
pub fn five_point_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut at = |j: usize, offset: f64| {
        probe[j] = x[j] + offset;
        let v = f(&probe);
        probe[j] = x[j];
        v
    };
    (0..x.len())
        .map(|j| {
            let h = step * x[j].abs().max(1.0);
            (at(j, -2.0 * h) - 8.0 * at(j, -h) + 8.0 * at(j, h) - at(j, 2.0 * h)) / (12.0 * h)
        })
        .collect()
}

struct Context {
    rng: ChaCha8Rng,
    checks: usize,
    perturbation: f64,
}

type Check = std::result::Result<(), Counterexample>;

fn fail(check: &str, inputs: String, detail: String) -> Check {
    Err(Counterexample {
        check: check.into(),
        trial: 0,
        inputs,
        detail,
    })
}

impl Context {
    fn classes(&mut self) -> usize {
        [2, 5, 100][self.rng.random_range(0..3)]
    }

    fn lambda(&mut self) -> f64 {
        LAMBDA_GRID[self.rng.random_range(0..LAMBDA_GRID.len())]
    }

    fn perturbed(&self, mut g: Vec<f64>) -> Vec<f64> {
        g.iter_mut().for_each(|x| *x += self.perturbation);
        g
    }

    fn ensure(&mut self, ok: bool, check: &str, inputs: impl FnOnce() -> String, detail: impl FnOnce() -> String) -> Check {
        self.checks += 1;
        if ok {
            Ok(())
        } else {
            fail(check, inputs(), detail())
        }
    }

    fn axioms(&mut self) -> Check {
        let k = self.classes();
        let lambda = self.lambda();
        let p = random_simplex(&mut self.rng, k, 1e-4);
        let q = random_simplex(&mut self.rng, k, 1e-4);
        let d = kernel::power_divergence(&p, &q, lambda);
        let distinct = p.iter().zip(&q).any(|(a, b)| (a - b).abs() >= 1e-9);
        self.ensure(d >= 0.0, "non-negativity", || format!("p={p:?} q={q:?} lambda={lambda}"), || format!("D = {d:e}"))?;
        self.ensure(!distinct || d > 0.0, "zero only at p = q", || format!("p={p:?} q={q:?} lambda={lambda}"), || format!("D = {d:e}"))?;
        let self_d = kernel::power_divergence(&p, &p, lambda);
        self.ensure(self_d.abs() <= 1e-12, "D(p, p) = 0", || format!("p={p:?} lambda={lambda}"), || format!("D(p,p) = {self_d:e}"))
    }

    fn identities(&mut self) -> Check {
        let k = self.classes();
        let p = random_simplex(&mut self.rng, k, 1e-3);
        let q = random_simplex(&mut self.rng, k, 1e-3);
        let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        let d0 = kernel::power_divergence(&p, &q, 0.0);
        self.ensure((d0 - kl).abs() <= 1e-6, "order 0 is KL", || format!("p={p:?} q={q:?}"), || format!("{d0} vs {kl}"))?;

        let pearson: f64 = 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).powi(2) / b).sum::<f64>();
        let d1 = kernel::power_divergence(&p, &q, 1.0);
        self.ensure(
            (d1 - pearson).abs() <= 1e-12 * pearson.abs().max(f64::MIN_POSITIVE),
            "order 1 is half Pearson",
            || format!("p={p:?} q={q:?}"),
            || format!("{d1} vs {pearson}"),
        )?;

        // The direct sum cancels across classes, so its own error scales
        // with the absolute terms rather than the result.
        let terms: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a * (a / b).ln()).collect();
        let reverse: f64 = terms.iter().sum();
        let conditioning: f64 = terms.iter().map(|t| t.abs()).sum();
        let dm1 = kernel::power_divergence(&p, &q, -1.0);
        self.ensure(
            (dm1 - reverse).abs() <= 1e-12 * conditioning.max(1e-300),
            "order -1 is reverse KL",
            || format!("p={p:?} q={q:?}"),
            || format!("{dm1} vs {reverse}"),
        )?;

        let x: f64 = self.rng.random_range(0.05..20.0);
        let near = divergence::gamma_log(x, 1.0 + 1e-7).unwrap_or(f64::NAN);
        self.ensure((near - x.ln()).abs() <= 1e-6 * x.ln().abs().max(1.0), "gamma-log branch continuity", || format!("x={x}"), || format!("{near} vs {}", x.ln()))
    }

    fn gradients(&mut self) -> Check {
        let k = [2, 5, 20][self.rng.random_range(0..3)];
        let lambda = [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0, 1.5, 2.0][self.rng.random_range(0..7)];
        let p = random_simplex(&mut self.rng, k, 0.02);
        let q = random_simplex(&mut self.rng, k, 0.02);
        let inputs = || format!("p={p:?} q={q:?} lambda={lambda}");

        let mut g = vec![0.0; k];
        kernel::grad_wrt_probs(&p, &q, lambda, &mut g);
        let g = self.perturbed(g);
        let fd = central_difference(|x| kernel::power_divergence(&p, x, lambda), &q, 1e-6);
        let err = relative_error(&g, &fd, 1e-12);
        self.ensure(err <= 1e-6, "probability gradient", inputs, || format!("relative error {err:e}"))?;

        let mut h = vec![0.0; k];
        kernel::hessian_wrt_probs(&p, &q, lambda, &mut h);
        let fd_h: Vec<f64> = (0..k)
            .map(|j| {
                let f = |x: &[f64]| {
                    let mut out = vec![0.0; k];
                    kernel::grad_wrt_probs(&p, x, lambda, &mut out);
                    out[j]
                };
                central_difference(f, &q, 1e-6)[j]
            })
            .collect();
        let err = relative_error(&h, &fd_h, 1e-12);
        self.ensure(err <= 1e-4, "Hessian diagonal", inputs, || format!("relative error {err:e}"))?;

        let tau = [1.0, 2.0, 4.0][self.rng.random_range(0..3)];
        let v: Vec<f64> = (0..k).map(|_| self.rng.random_range(-3.0..3.0)).collect();
        let mut gl = vec![0.0; k];
        kernel::grad_wrt_logits(&p, &v, lambda, tau, &mut gl);
        let sum: f64 = gl.iter().sum();
        let gl = self.perturbed(gl);
        let fd_l = five_point_difference(|x| kernel::power_divergence(&p, &kernel::softmax(x, tau), lambda), &v, 1e-4);
        let err = relative_error(&gl, &fd_l, 1e-10);
        self.ensure(err <= 1e-6, "logit gradient", || format!("p={p:?} v={v:?} lambda={lambda} tau={tau}"), || format!("relative error {err:e}"))?;
        self.ensure(sum.abs() <= 1e-10, "logit gradient sums to zero", || format!("p={p:?} v={v:?}"), || format!("sum {sum:e}"))
    }

    fn loss(&mut self) -> Check {
        let k = [2, 5, 100][self.rng.random_range(0..3)];
        let lambda = [0.0, 2.0 / 3.0, 1.0, 2.0][self.rng.random_range(0..4)];
        let tau = [1.0, 4.0][self.rng.random_range(0..2)];
        let v: Vec<f64> = (0..k).map(|_| self.rng.random_range(-2.0..2.0)).collect();
        let u: Vec<f64> = (0..k).map(|_| self.rng.random_range(-2.0..2.0)).collect();
        let label = self.rng.random_range(0..k);
        let cfg = RedistillConfig {
            lambda,
            tau,
            ..RedistillConfig::default()
        };
        let inputs = || format!("v={v:?} u={u:?} label={label} config={cfg:?}");
        let out = loss::redistill_unchecked(&v, &u, label, &cfg);
        self.ensure(out.loss >= 0.0, "loss is non-negative", inputs, || format!("loss {}", out.loss))?;
        let g = self.perturbed(out.grad.clone());
        let fd = five_point_difference(|x| loss::redistill_unchecked(x, &u, label, &cfg).loss, &v, 1e-4);
        let err = relative_error(&g, &fd, 1e-8);
        self.ensure(err <= 1e-5, "loss gradient", inputs, || format!("relative error {err:e}"))?;

        // At order 0 the objective is decoupled KD; rebuild it from the
        // probability-space decoupling and plain KL.
        let dkd_cfg = cfg.with_lambda(0.0);
        let got = loss::redistill_unchecked(&v, &u, label, &dkd_cfg).loss;
        let want = dkd_from_probabilities(&v, &u, label, &dkd_cfg);
        let rel = (got - want).abs() / want.abs().max(1e-300);
        self.ensure(rel <= 1e-10, "order 0 is decoupled KD", || format!("v={v:?} u={u:?} label={label}"), || format!("{got} vs {want}"))
    }
}

/// Relative error between the backpropagated parameter gradient of the full
/// REDistill loss and central differences over every parameter, on a random
/// 3-class, 8-feature network with one hidden layer of 6 tanh units.
pub fn parameter_chain_error(seed: u64, cfg: &RedistillConfig) -> f64 {
    let mut rng = seed::rng(seed, &[u64::from(b'p')]);
    let mut spec = MlpSpec::new(8, vec![6], 3).expect("valid spec");
    spec.activation = Activation::Tanh;
    let mut model = Mlp::init(spec, seed).expect("valid spec");
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let teacher: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let label = rng.random_range(0..3);

    let out = loss::redistill_unchecked(&model.logits(&x), &teacher, label, cfg);
    let analytic: Vec<f64> = match model.backward(&x, &out.grad) {
        Ok(g) => g.iter().copied().collect(),
        Err(_) => return f64::NAN,
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    for layer in 0..model.layers().len() {
        let n_weights = model.layers()[layer].weights.len();
        let n_bias = model.layers()[layer].bias.len();
        for idx in 0..n_weights + n_bias {
            let nudge = |model: &mut Mlp, delta: f64| {
                let l = &mut model.layers_mut()[layer];
                let slot = if idx < n_weights { &mut l.weights[idx] } else { &mut l.bias[idx - n_weights] };
                *slot += delta;
            };
            let h = 1e-6;
            nudge(&mut model, h);
            let hi = loss::redistill_unchecked(&model.logits(&x), &teacher, label, cfg).loss;
            nudge(&mut model, -2.0 * h);
            let lo = loss::redistill_unchecked(&model.logits(&x), &teacher, label, cfg).loss;
            nudge(&mut model, h);
            numeric.push((hi - lo) / (2.0 * h));
        }
    }
    relative_error(&analytic, &numeric, 1e-12)
}

fn dkd_from_probabilities(v: &[f64], u: &[f64], label: usize, cfg: &RedistillConfig) -> f64 {
    let tau = Temperature::new(cfg.tau).expect("validated temperature");
    let student = LogitVector::new(v.to_vec()).expect("finite logits");
    let teacher = LogitVector::new(u.to_vec()).expect("finite logits");
    let ce = -divergence::softmax(&student, Temperature::ONE).as_slice()[label].ln();
    let split = |l: &LogitVector| loss::decouple(&divergence::softmax(l, tau), label);
    let (Ok(p), Ok(q)) = (split(&teacher), split(&student)) else {
        return f64::NAN;
    };
    let kl = |a: &ProbVector, b: &ProbVector| {
        divergence::power_divergence(a, b, DivergenceOrder::KL).unwrap_or(f64::NAN)
    };
    let t2 = cfg.tau * cfg.tau;
    cfg.hard_weight * ce
        + cfg.alpha * t2 * kl(&p.target_binary, &q.target_binary)
        + cfg.beta * t2 * kl(&p.nontarget_conditional, &q.nontarget_conditional)
}
