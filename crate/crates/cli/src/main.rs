mod svg;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use longterm::harness::{self, Method, MethodConfig, Scenario, SweepConfig, SweepParam, SweepResult};
use longterm::report::{matrix_rows, ReportFile};
use longterm::synthetic::{ExogenousScaling, SyntheticConfig, SyntheticTruth};
use longterm::{
    alternate_minimize, estimate_reward_coefficients, fit_stationary, ground_truth_delta, load_dataset,
    mean_initial_observation, save_dataset, simulate_dataset, value_stationary, NonstationaryConfig, RewardModel,
};

#[derive(Parser)]
#[command(name = "longterm", version, about = "Long-term treatment effects from short experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic experiment and write the dataset and its ground truth.
    GenSynthetic(GenArgs),
    /// Fit an estimator to a dataset and write a report.
    Estimate(EstimateArgs),
    /// Benchmark every estimator over a grid of one generator parameter.
    Sweep(SweepArgs),
    /// Summarize a results CSV or print a fit report.
    Report(ReportArgs),
}

fn discount(s: &str) -> Result<f64, String> {
    let g: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if g > 0.0 && g < 1.0 {
        Ok(g)
    } else {
        Err(format!("gamma must lie in (0, 1), got {g}"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(format!("{e}")),
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a nonnegative number, got {v}"))
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long = "d", default_value_t = 8, value_parser = positive)]
    dim: usize,
    /// Number of policies, control included.
    #[arg(long = "k", default_value_t = 2, value_parser = positive)]
    policies: usize,
    /// Individuals per policy.
    #[arg(long = "n", default_value_t = 500, value_parser = positive)]
    n: usize,
    #[arg(long = "T", default_value_t = 10, value_parser = positive)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0, value_parser = nonnegative)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Discount factor of the reported ground-truth effects.
    #[arg(long, default_value_t = 0.99, value_parser = discount)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0, value_parser = nonnegative)]
    noise_std: f64,
    #[arg(long, default_value_t = 1.0, value_parser = nonnegative)]
    init_std: f64,
    /// Comma-separated initial mean.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    s0_mean: Option<Vec<f64>>,
    /// Recenter each group's initial states on the mean.
    #[arg(long)]
    centered: bool,
    /// Add the unscaled random walk instead of the rescaled one.
    #[arg(long)]
    raw: bool,
    #[arg(long, default_value = "synthetic.csv")]
    out: PathBuf,
    /// Defaults to the dataset path with a `.truth.json` extension.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
#[group(id = "reward", required = true, multiple = false)]
struct RewardArgs {
    /// Use one observation coordinate as the reward.
    #[arg(long, group = "reward")]
    reward_feature: Option<usize>,
    /// JSON file with `{"theta": [...]}`.
    #[arg(long, group = "reward")]
    reward_coeffs: Option<PathBuf>,
    /// Regress the dataset's reward column on the observations.
    #[arg(long, group = "reward")]
    reward_fit: bool,
}

impl RewardArgs {
    fn resolve(&self, dataset: &longterm::ExperimentDataset) -> Result<RewardModel> {
        if let Some(i) = self.reward_feature {
            Ok(RewardModel::one_hot(dataset.dim(), i)?)
        } else if let Some(path) = &self.reward_coeffs {
            let theta = RewardModel::load(path).with_context(|| format!("reading {}", path.display()))?;
            theta.check_dim(dataset.dim())?;
            Ok(theta)
        } else {
            let fit = estimate_reward_coefficients(dataset)?;
            eprintln!("reward fit: residual rms {:.4e}", fit.residual_rms);
            Ok(fit.model)
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Discount factor; overrides the config file.
    #[arg(long, value_parser = discount)]
    gamma: Option<f64>,
    /// NonstationaryConfig as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = nonnegative)]
    lambda_z: Option<f64>,
    #[arg(long, value_parser = nonnegative)]
    lambda_m: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_parser = positive)]
    max_iters: Option<usize>,
    #[arg(long, value_parser = nonnegative)]
    ridge: Option<f64>,
    /// Report the naive baseline as an unscaled per-step difference.
    #[arg(long)]
    naive_unscaled: bool,
}

impl FitArgs {
    fn method_config(&self) -> Result<MethodConfig> {
        let mut ns = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<NonstationaryConfig>(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => NonstationaryConfig::default(),
        };
        if let Some(g) = self.gamma {
            ns.gamma = g;
        }
        if self.lambda_z.is_some() {
            ns.lambda_z = self.lambda_z;
        }
        if let Some(v) = self.lambda_m {
            ns.lambda_m = v;
        }
        if let Some(v) = self.tol {
            ns.tol = v;
        }
        if let Some(v) = self.max_iters {
            ns.max_iters = v;
        }
        if let Some(v) = self.ridge {
            ns.ridge = v;
        }
        ns.validate()?;
        Ok(MethodConfig { nonstationary: ns, naive_scaled: !self.naive_unscaled })
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, default_value = "nonstationary")]
    method: Method,
    #[arg(long)]
    data: PathBuf,
    /// Number of policies; inferred from the data when omitted.
    #[arg(long = "k", value_parser = positive)]
    policies: Option<usize>,
    #[command(flatten)]
    reward: RewardArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 20, value_parser = positive)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "d", default_value_t = 8, value_parser = positive)]
    dim: usize,
    #[arg(long = "k", default_value_t = 2, value_parser = positive)]
    policies: usize,
    #[arg(long = "n", default_value_t = 500, value_parser = positive)]
    n: usize,
    #[arg(long = "T", default_value_t = 10, value_parser = positive)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0, value_parser = nonnegative)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0, value_parser = nonnegative)]
    noise_std: f64,
    /// Reward coefficients; defaults to 1/d in every coordinate.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta: Option<Vec<f64>>,
    #[command(flatten)]
    fit: FitArgs,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Reuse replication seeds across values.
    #[arg(long)]
    crn: bool,
    /// Record wall-clock time per estimate (output is then not reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV from `sweep`, or a fit report JSON from `estimate`.
    input: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Serialize)]
struct GammaFreeTruth {
    gamma: f64,
    theta: Vec<f64>,
    delta: Vec<f64>,
}

#[derive(Serialize)]
struct TruthFile {
    matrices: Vec<Vec<Vec<f64>>>,
    z_scaled: Vec<Vec<f64>>,
    alpha: f64,
    scaling: ExogenousScaling,
    s0_mean: Vec<f64>,
    gamma_free_truth: GammaFreeTruth,
    seed: u64,
}

fn distinct(input: &Path, output: &Path) -> Result<()> {
    if input == output {
        bail!("input and output are the same file: {}", input.display());
    }
    Ok(())
}

fn gen_synthetic(a: GenArgs) -> Result<()> {
    if let Some(m) = &a.s0_mean {
        if m.len() != a.dim {
            bail!("--s0-mean has {} entries, expected d = {}", m.len(), a.dim);
        }
    }
    let truth_path = a.truth.clone().unwrap_or_else(|| a.out.with_extension("truth.json"));
    distinct(&a.out, &truth_path)?;
    let truth = SyntheticTruth::generate(&SyntheticConfig {
        dim: a.dim,
        num_policies: a.policies,
        max_horizon: a.horizon,
        alpha: a.alpha,
        s0_mean: a.s0_mean.clone(),
        init_std: a.init_std,
        noise_std: a.noise_std,
        centered_init: a.centered,
        scaling: if a.raw { ExogenousScaling::Raw } else { ExogenousScaling::Scaled },
        seed: a.seed,
    })?;
    let dataset = simulate_dataset(&truth, a.n, a.horizon)?;
    let theta = RewardModel::uniform(a.dim);
    let delta = ground_truth_delta(&truth, &theta, a.gamma)?;
    save_dataset(&dataset, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let file = TruthFile {
        matrices: truth.matrices.iter().map(matrix_rows).collect(),
        z_scaled: truth.exogenous.scaled.iter().map(|z| z.iter().copied().collect()).collect(),
        alpha: truth.alpha,
        scaling: truth.scaling,
        s0_mean: truth.s0_mean.iter().copied().collect(),
        gamma_free_truth: GammaFreeTruth { gamma: a.gamma, theta: theta.theta().iter().copied().collect(), delta },
        seed: a.seed,
    };
    std::fs::write(&truth_path, serde_json::to_string_pretty(&file)? + "\n")
        .with_context(|| format!("writing {}", truth_path.display()))?;
    println!("dataset: {}", a.out.display());
    println!("truth:   {}", truth_path.display());
    for (i, d) in file.gamma_free_truth.delta.iter().enumerate() {
        println!("delta[{}] = {d:.10e}", i + 1);
    }
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    distinct(&a.data, &a.out)?;
    let config = a.fit.method_config()?;
    let dataset = load_dataset(&a.data, a.policies).with_context(|| format!("loading {}", a.data.display()))?;
    let theta = a.reward.resolve(&dataset)?;
    let report = match a.method {
        Method::Naive => {
            let effects = harness::naive_average_estimate(&dataset, &theta, config.gamma(), config.naive_scaled)?;
            ReportFile::naive(config.gamma(), effects, config.naive_scaled)
        }
        Method::Stationary => {
            let fit = fit_stationary(&dataset, config.gamma(), config.nonstationary.ridge).context("stationary fit")?;
            let values = (0..dataset.num_policies())
                .map(|p| value_stationary(&fit.model, p, &theta, &mean_initial_observation(&dataset, p)?))
                .collect::<longterm::Result<Vec<f64>>>()
                .context("stationary evaluation")?;
            ReportFile::stationary(&fit, values)
        }
        Method::Nonstationary => {
            let fit = alternate_minimize(&dataset, &theta, &config.nonstationary).context("nonstationary fit")?;
            ReportFile::from(&fit)
        }
    };
    report.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{}", describe(&report));
    println!("report: {}", a.out.display());
    Ok(())
}

fn describe(r: &ReportFile) -> String {
    let mut s = format!("method: {}  gamma: {}\n", r.method, r.gamma);
    for (i, d) in r.effects.iter().enumerate() {
        s.push_str(&format!("delta_hat[{}] = {d:.10e}\n", i + 1));
    }
    if r.method == Method::Nonstationary {
        let first = r.loss_trace.first().copied().unwrap_or(f64::NAN);
        let last = r.loss_trace.last().copied().unwrap_or(f64::NAN);
        s.push_str(&format!(
            "iterations: {}  converged: {}  loss: {first:.6e} -> {last:.6e}\n",
            r.iterations, r.converged
        ));
    }
    s
}

fn write_outputs(
    results: &SweepResult,
    summary_path: Option<&Path>,
    svg_path: Option<&Path>,
) -> Result<harness::Summary> {
    let summary = harness::summarize(results)?;
    if let Some(p) = summary_path {
        summary.write_csv(BufWriter::new(File::create(p).with_context(|| format!("writing {}", p.display()))?))?;
    }
    if let Some(p) = svg_path {
        std::fs::write(p, svg::chart(&summary)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(summary)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let config = SweepConfig {
        scenario: Scenario {
            n: a.n,
            horizon: a.horizon,
            dim: a.dim,
            num_policies: a.policies,
            alpha: a.alpha,
            noise_std: a.noise_std,
            ..Scenario::default()
        },
        methods: a.fit.method_config()?,
        theta: a.theta.clone(),
        workers: a.workers,
        timing: a.timing,
        common_random_numbers: a.crn,
    };
    let results = harness::sweep(a.param, &a.values, a.reps, &config, a.seed)?;
    results.write_csv(BufWriter::new(File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?))?;
    let summary = write_outputs(&results, a.summary.as_deref(), a.svg.as_deref())?;
    print!("{}", summary.to_text());
    let failed = results.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} estimates failed; see the error column", results.rows.len());
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    if a.input.extension().is_some_and(|e| e == "json") {
        let r = ReportFile::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        print!("{}", describe(&r));
        return Ok(());
    }
    let file = File::open(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let results = SweepResult::read_csv(BufReader::new(file))?;
    let summary = write_outputs(&results, a.summary.as_deref(), a.svg.as_deref())?;
    print!("{}", summary.to_text());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Estimate(a) => estimate(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
