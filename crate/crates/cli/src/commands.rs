use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use redistill::data::{self, SCHEMA_VERSION};
use redistill::lab::{self, RunRole, RunStatus};
use redistill::robust_stats::{self, AlternativeSpec};
use redistill::verify::{self, Suite, VerifyOptions};
use redistill::{ExperimentConfig, LossSpec, Mlp, ProbVector, RunRecord};

use crate::args::{Cli, Command, DistillArgs, GofArgs, InfluenceArgs, PowerArgs, ReportArgs, SweepArgs, VerifyArgs};
use crate::render::{exact, fixed, Output, Table};

/// The default order grid for sweeps.
pub const DEFAULT_LAMBDAS: [f64; 7] = [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0, 1.5, 2.0];

const INFLUENCE_LAMBDAS: [f64; 5] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 2.0];

pub enum Failure {
    /// Bad flags or unusable input files; exit code 2.
    Usage(anyhow::Error),
    /// A verification or experiment failed; exit code 1.
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<redistill::Error> for Failure {
    fn from(e: redistill::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// Input errors are usage errors; an optimizer that fails on valid input is
/// a run failure.
fn input_error(e: redistill::Error) -> Failure {
    match e {
        redistill::Error::NonConvergence { .. } => Failure::Run(e.into()),
        other => usage(other),
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

pub fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Verify(a) => verify(cli, a),
        Command::TrainTeacher => train_teacher(cli),
        Command::Distill(a) => distill(cli, a),
        Command::SweepLambda(a) => sweep_lambda(cli, a),
        Command::Compare => compare(cli),
        Command::Influence(a) => influence(cli, a),
        Command::Gof(a) => gof(cli, a),
        Command::Power(a) => power(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

/// Wraps a serializable body with the schema version.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

fn stamped<T: Serialize>(body: &T) -> Stamped<'_, T> {
    Stamped {
        schema_version: SCHEMA_VERSION,
        body,
    }
}

fn load_experiment(cli: &Cli) -> CmdResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| usage(anyhow!("--config is required for this command")))?;
    let mut config: ExperimentConfig = data::load_config(path).map_err(usage)?;
    if let Some(seed) = cli.seed {
        let n = config.seeds.len().max(1) as u64;
        config.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
    }
    config
        .validate()
        .map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    Ok(config)
}

fn out_dir(cli: &Cli) -> CmdResult<&Path> {
    fs::create_dir_all(&cli.out).with_context(|| format!("cannot create output directory {}", cli.out.display()))?;
    Ok(&cli.out)
}

fn wrote(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn save_records(dir: &Path, name: &str, records: &[RunRecord]) -> CmdResult<(PathBuf, Value)> {
    let path = dir.join(name);
    data::save_metrics(records, &path)?;
    wrote(&path);
    let raw: Value = data::read_json(&path)?;
    Ok((path, raw))
}

fn status_label(status: RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".into(),
        RunStatus::Diverged { epoch, .. } => format!("diverged@{epoch}"),
    }
}

fn loss_lambda(loss: &LossSpec) -> Option<f64> {
    match loss {
        LossSpec::Redistill(r) => Some(r.lambda),
        LossSpec::Dkd(_) => Some(0.0),
        _ => None,
    }
}

fn verify(cli: &Cli, a: &VerifyArgs) -> CmdResult {
    if a.trials == 0 {
        return Err(usage(anyhow!("--trials must be positive")));
    }
    let mut suites: Vec<Suite> = Vec::new();
    for s in if a.suites.is_empty() { &Suite::ALL[..] } else { &a.suites[..] } {
        if !suites.contains(s) {
            suites.push(*s);
        }
    }
    let options = VerifyOptions {
        trials: a.trials,
        seed: cli.seed.unwrap_or(0),
        gradient_perturbation: a.perturb_gradient,
    };
    let reports: Vec<_> = suites.iter().map(|&s| verify::run_suite(s, &options)).collect();

    let mut table = Table::new(["suite", "trials", "checks", "result"]);
    for r in &reports {
        table.push(vec![
            r.suite.to_string(),
            r.trials.to_string(),
            r.checks.to_string(),
            if r.passed() { "pass" } else { "FAIL" }.into(),
        ]);
    }
    let body = json!({ "seed": options.seed, "trials": options.trials, "suites": reports });
    Output::new(serde_json::to_value(stamped(&body)).map_err(anyhow::Error::from)?, table).print(cli.format)?;

    match reports.iter().find_map(|r| r.failure.as_ref().map(|c| (r.suite, c))) {
        None => Ok(()),
        Some((suite, c)) => {
            eprintln!("suite `{suite}` failed check `{}` at trial {}: {}", c.check, c.trial, c.detail);
            eprintln!("  inputs: {}", c.inputs);
            eprintln!(
                "  reproduce: redistill verify --suite {suite} --trials {} --seed {}",
                c.trial + 1,
                options.seed
            );
            Err(Failure::Run(anyhow!("verification failed")))
        }
    }
}

fn train_teacher(cli: &Cli) -> CmdResult {
    let config = load_experiment(cli)?;
    let dir = out_dir(cli)?;
    let results: Vec<(u64, redistill::Result<(Mlp, RunRecord)>)> = config
        .seeds
        .par_iter()
        .map(|&seed| (seed, lab::train_teacher(&config, seed)))
        .collect();

    let mut table = Table::new(["seed", "val_acc", "status", "checkpoint"]);
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (seed, result) in results {
        match result {
            Ok((model, record)) => {
                let path = dir.join(format!("teacher-{seed}.json"));
                data::save_checkpoint(&model, &path)?;
                table.push(vec![
                    seed.to_string(),
                    fixed(record.final_accuracy, 4),
                    status_label(record.status),
                    path.display().to_string(),
                ]);
                records.push(record);
            }
            Err(e) => {
                table.push(vec![seed.to_string(), "-".into(), format!("error: {e}"), "-".into()]);
                errors.push(format!("seed {seed}: {e}"));
            }
        }
    }
    let (_, json) = save_records(dir, "teacher-metrics.json", &records)?;
    Output::new(json, table).print(cli.format)?;
    fail_on(errors)
}

fn fail_on(errors: Vec<String>) -> CmdResult {
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(anyhow!("{} run(s) failed: {}", errors.len(), errors.join("; "))))
    }
}

fn distill(cli: &Cli, a: &DistillArgs) -> CmdResult {
    let config = load_experiment(cli)?;
    let fixed_teacher = match &a.teacher {
        Some(path) => Some(data::load_checkpoint(path).map_err(usage)?),
        None => None,
    };
    if let Some(t) = &fixed_teacher {
        let spec = t.spec();
        if spec.input_dim != config.dataset.features || spec.num_classes != config.dataset.num_classes {
            return Err(usage(anyhow!(
                "teacher maps {} features to {} classes; the dataset has {} and {}",
                spec.input_dim,
                spec.num_classes,
                config.dataset.features,
                config.dataset.num_classes
            )));
        }
    }
    let dir = out_dir(cli)?;
    type Outcome = redistill::Result<(Option<RunRecord>, Mlp, RunRecord)>;
    let results: Vec<(u64, Outcome)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = || -> Outcome {
                let (teacher, teacher_record) = match &fixed_teacher {
                    Some(t) => (t.clone(), None),
                    None => {
                        let (t, r) = lab::train_teacher(&config, seed)?;
                        (t, Some(r))
                    }
                };
                let (student, record) = lab::distill_student(&config, &teacher, seed)?;
                Ok((teacher_record, student, record))
            };
            (seed, run())
        })
        .collect();

    let mut table = Table::new(["seed", "loss", "teacher_acc", "student_acc", "status"]);
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (seed, result) in results {
        match result {
            Ok((teacher_record, student, record)) => {
                let path = dir.join(format!("student-{seed}.json"));
                data::save_checkpoint(&student, &path)?;
                table.push(vec![
                    seed.to_string(),
                    config.loss.name().into(),
                    teacher_record.as_ref().map_or("-".into(), |r| fixed(r.final_accuracy, 4)),
                    fixed(record.final_accuracy, 4),
                    status_label(record.status),
                ]);
                records.extend(teacher_record);
                records.push(record);
            }
            Err(e) => {
                table.push(vec![seed.to_string(), config.loss.name().into(), "-".into(), "-".into(), format!("error: {e}")]);
                errors.push(format!("seed {seed}: {e}"));
            }
        }
    }
    let (_, json) = save_records(dir, "distill-metrics.json", &records)?;
    Output::new(json, table).print(cli.format)?;
    fail_on(errors)
}

fn cell_records(cells: &[lab::Cell]) -> impl Iterator<Item = RunRecord> + '_ {
    cells.iter().filter_map(|c| c.record.clone())
}

fn cell_errors(label: &str, cells: &[lab::Cell]) -> Vec<String> {
    cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("{label}, seed {}: {e}", c.seed)))
        .collect()
}

fn sweep_lambda(cli: &Cli, a: &SweepArgs) -> CmdResult {
    let config = load_experiment(cli)?;
    let lambdas = a.lambdas.clone().unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
    if lambdas.len() < 2 || config.seeds.len() < 3 {
        return Err(usage(anyhow!(
            "a sweep needs at least 2 lambda values and 3 seeds (got {} and {})",
            lambdas.len(),
            config.seeds.len()
        )));
    }
    let dir = out_dir(cli)?;
    let report = lab::lambda_sweep(&config, &lambdas).map_err(usage)?;

    let path = dir.join("sweep.json");
    data::write_json(&path, &stamped(&report))?;
    wrote(&path);
    let records: Vec<RunRecord> = cell_records(&report.teachers)
        .chain(report.rows.iter().flat_map(|r| cell_records(&r.cells)))
        .collect();
    save_records(dir, "sweep-metrics.json", &records)?;

    let mut table = Table::new(["lambda", "mean_acc", "std_acc", "n_seeds", "diverged", "failed"]);
    let mut csv = Table::new(["lambda", "mean_acc", "std_acc", "n_seeds"]);
    let mut rows = Vec::new();
    let mut errors = cell_errors("teacher", &report.teachers);
    for r in &report.rows {
        table.push(vec![
            fixed(r.lambda, 4),
            fixed(r.mean_acc, 4),
            fixed(r.std_acc, 4),
            r.n_seeds.to_string(),
            r.n_diverged.to_string(),
            r.n_failed.to_string(),
        ]);
        csv.push(vec![exact(r.lambda), exact(r.mean_acc), exact(r.std_acc), r.n_seeds.to_string()]);
        rows.push(json!({
            "lambda": r.lambda,
            "mean_acc": r.mean_acc,
            "std_acc": r.std_acc,
            "n_seeds": r.n_seeds,
            "n_diverged": r.n_diverged,
            "n_failed": r.n_failed,
        }));
        errors.extend(cell_errors(&format!("lambda {}", r.lambda), &r.cells));
    }
    let body = json!({ "master_seeds": report.master_seeds, "rows": rows });
    Output::new(serde_json::to_value(stamped(&body)).map_err(anyhow::Error::from)?, table)
        .with_csv(csv)
        .print(cli.format)?;
    fail_on(errors)
}

fn compare(cli: &Cli) -> CmdResult {
    let config = load_experiment(cli)?;
    let dir = out_dir(cli)?;
    let report = lab::compare_losses(&config)?;

    let path = dir.join("comparison.json");
    data::write_json(&path, &stamped(&report))?;
    wrote(&path);
    let records: Vec<RunRecord> = cell_records(&report.teachers)
        .chain(report.losses.iter().flat_map(|l| cell_records(&l.cells)))
        .collect();
    save_records(dir, "compare-metrics.json", &records)?;

    let mut table = Table::new(["comparison", "mean_acc", "std_acc", "n_seeds", "median_diff", "wins", "losses", "p_value"]);
    let mut errors = cell_errors("teacher", &report.teachers);
    for l in &report.losses {
        table.push(vec![
            l.loss.clone(),
            fixed(l.mean_acc, 4),
            fixed(l.std_acc, 4),
            l.n_seeds.to_string(),
            "".into(),
            "".into(),
            "".into(),
            "".into(),
        ]);
        errors.extend(cell_errors(&l.loss, &l.cells));
    }
    for p in &report.pairs {
        table.push(vec![
            format!("{} - {}", p.better, p.worse),
            "".into(),
            "".into(),
            p.differences.len().to_string(),
            fixed(p.median_difference, 4),
            p.sign_test.positive.to_string(),
            p.sign_test.negative.to_string(),
            fixed(p.sign_test.p_value, 4),
        ]);
    }
    let body = json!({
        "master_seeds": report.master_seeds,
        "losses": report.losses.iter().map(|l| json!({
            "loss": l.loss, "mean_acc": l.mean_acc, "std_acc": l.std_acc, "n_seeds": l.n_seeds,
        })).collect::<Vec<_>>(),
        "pairs": report.pairs,
    });
    Output::new(serde_json::to_value(stamped(&body)).map_err(anyhow::Error::from)?, table).print(cli.format)?;
    fail_on(errors)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
}

fn influence(cli: &Cli, a: &InfluenceArgs) -> CmdResult {
    let q = ProbVector::new(a.q.clone()).map_err(usage)?;
    let lambdas = a.lambdas.clone().unwrap_or_else(|| INFLUENCE_LAMBDAS.to_vec());
    let outlier = match a.outlier {
        Some(class) => Some(ProbVector::one_hot(q.len(), class).map_err(usage)?),
        None => None,
    };
    let mut headers = vec!["lambda", "scaling", "norm", "influence"];
    if outlier.is_some() {
        headers.extend(["exact", "cos_empirical_exact", "cos_empirical_scaled_q"]);
    }
    let mut table = Table::new(headers);
    let mut rows = Vec::new();
    for &lambda in &lambdas {
        let analytic = robust_stats::influence_function(&q, lambda).map_err(usage)?;
        let mut cells = vec![
            fixed(lambda, 4),
            fixed(analytic.scaling, 4),
            fixed(analytic.norm(), 6),
            join(&analytic.vector),
        ];
        let mut row = json!({
            "lambda": lambda,
            "scaling": analytic.scaling,
            "norm": analytic.norm(),
            "influence": analytic.vector,
        });
        if let Some(outlier) = &outlier {
            let base = [q.clone()];
            let empirical = robust_stats::influence_empirical(&base, outlier, a.epsilon, lambda).map_err(input_error)?;
            let exact_if = robust_stats::influence_at_optimum(&base, outlier, lambda)?;
            let cos_exact = robust_stats::cosine_similarity(&empirical, &exact_if);
            let cos_scaled = robust_stats::cosine_similarity(&empirical, &analytic.vector);
            cells.extend([join(&exact_if), fixed(cos_exact, 6), fixed(cos_scaled, 6)]);
            row["empirical"] = json!(empirical);
            row["exact"] = json!(exact_if);
            row["cos_empirical_exact"] = json!(cos_exact);
            row["cos_empirical_scaled_q"] = json!(cos_scaled);
        }
        table.push(cells);
        rows.push(row);
    }
    let body = json!({ "q": q.as_slice(), "outlier": a.outlier, "epsilon": a.epsilon, "rows": rows });
    Output::new(serde_json::to_value(stamped(&body)).map_err(anyhow::Error::from)?, table).print(cli.format)?;
    Ok(())
}

fn gof(cli: &Cli, a: &GofArgs) -> CmdResult {
    let k = a.counts.len();
    let expected = match &a.expected {
        Some(p) => ProbVector::new(p.clone()),
        None => ProbVector::uniform(k),
    }
    .map_err(usage)?;
    let statistic = robust_stats::gof_statistic(&a.counts, &expected, a.lambda).map_err(usage)?;
    let df = (k - 1) as f64;
    let critical = robust_stats::chi_square_upper_quantile(df, a.alpha).map_err(usage)?;
    let p_value = robust_stats::chi_square_sf(statistic, df);
    let n: u64 = a.counts.iter().sum();
    let reject = statistic > critical;

    let mut table = Table::new(["lambda", "n", "df", "statistic", "critical", "p_value", "reject"]);
    table.push(vec![
        fixed(a.lambda, 4),
        n.to_string(),
        df.to_string(),
        fixed(statistic, 6),
        fixed(critical, 6),
        fixed(p_value, 6),
        reject.to_string(),
    ]);
    let body = json!({
        "lambda": a.lambda, "n": n, "df": df, "alpha": a.alpha, "statistic": statistic,
        "critical_value": critical, "p_value": p_value, "reject": reject,
    });
    Output::new(serde_json::to_value(stamped(&body)).map_err(anyhow::Error::from)?, table).print(cli.format)?;
    Ok(())
}

fn power(cli: &Cli, a: &PowerArgs) -> CmdResult {
    let alt = AlternativeSpec::new(a.k, a.delta).map_err(usage)?;
    let seed = cli.seed.unwrap_or(0);
    let estimate = robust_stats::mc_power(&alt, a.lambda, a.n, a.alpha, a.trials, seed).map_err(usage)?;

    let mut table = Table::new(["field", "value"]);
    for (name, value) in [
        ("k", a.k.to_string()),
        ("delta", a.delta.to_string()),
        ("lambda", fixed(estimate.lambda, 4)),
        ("sample_size", estimate.sample_size.to_string()),
        ("significance", estimate.significance.to_string()),
        ("trials", estimate.trials.to_string()),
        ("critical_value", fixed(estimate.critical_value, 6)),
        ("rejection_rate", fixed(estimate.rejection_rate, 4)),
        ("std_error", fixed(estimate.std_error, 4)),
        ("seed", seed.to_string()),
    ] {
        table.push(vec![name.into(), value]);
    }
    let body = json!({ "seed": seed, "k": a.k, "delta": a.delta, "estimate": estimate });
    Output::new(serde_json::to_value(stamped(&body)).map_err(anyhow::Error::from)?, table).print(cli.format)?;
    Ok(())
}

/// Grouping key for report rows: role, loss name, and order when defined.
#[derive(Debug, Clone, PartialEq, PartialOrd)]
struct GroupKey {
    role: u8,
    loss: String,
    lambda: Option<f64>,
}

fn report(cli: &Cli, a: &ReportArgs) -> CmdResult {
    let records: Vec<RunRecord> = data::load_metrics(&a.metrics).map_err(usage)?;
    let mut groups: BTreeMap<String, (GroupKey, Vec<&RunRecord>)> = BTreeMap::new();
    for r in &records {
        let key = match r.role {
            RunRole::Teacher => GroupKey {
                role: 0,
                loss: "teacher".into(),
                lambda: None,
            },
            RunRole::Student => GroupKey {
                role: 1,
                loss: r.config.loss.name().into(),
                lambda: loss_lambda(&r.config.loss),
            },
        };
        let id = format!("{}|{}|{:?}", key.role, key.loss, key.lambda.map(f64::to_bits));
        groups.entry(id).or_insert_with(|| (key, Vec::new())).1.push(r);
    }
    let mut groups: Vec<(GroupKey, Vec<&RunRecord>)> = groups.into_values().collect();
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut table = Table::new(["method", "lambda", "mean_acc", "std_acc", "n_runs", "diverged"]);
    let mut curve = Table::new(["lambda", "mean_acc", "std_acc", "n_seeds"]);
    let mut rows = Vec::new();
    for (key, runs) in &groups {
        let accs: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
        let (mean, std) = lab::mean_std(&accs);
        let diverged = runs.iter().filter(|r| matches!(r.status, RunStatus::Diverged { .. })).count();
        table.push(vec![
            key.loss.clone(),
            key.lambda.map_or("-".into(), |l| fixed(l, 4)),
            fixed(mean, 4),
            fixed(std, 4),
            runs.len().to_string(),
            diverged.to_string(),
        ]);
        if key.loss == "redistill" {
            if let Some(l) = key.lambda {
                curve.push(vec![exact(l), exact(mean), exact(std), runs.len().to_string()]);
            }
        }
        rows.push(json!({
            "method": key.loss, "lambda": key.lambda, "mean_acc": mean, "std_acc": std,
            "n_runs": runs.len(), "n_diverged": diverged,
        }));
    }
    let body = json!({ "source": a.metrics, "rows": rows });
    Output::new(serde_json::to_value(stamped(&body)).map_err(anyhow::Error::from)?, table)
        .with_csv(curve)
        .print(cli.format)?;
    Ok(())
}
