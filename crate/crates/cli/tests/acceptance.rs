//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use longterm::harness::{self, cell_seed, Method, Scenario, SweepConfig, SweepParam};
use longterm::nonstationary::data_loss;
use longterm::synthetic::{generate_exogenous, stream_rng, LOG_SCALE_VARIANCE, WALK_VARIANCE};
use longterm::{
    alternate_minimize, estimate_effects_stationary, ground_truth_delta, loss, simulate_dataset,
    solve_exogenous, solve_transitions, spectral_radius, value_nonstationary, value_stationary, ExogenousSeries,
    ExperimentDataset, NonstationaryConfig, Objective, ObservationTrajectory, RewardModel, SyntheticConfig,
    SyntheticTruth, TransitionModel,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn random_matrix<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| gauss(rng))
}

fn random_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| gauss(rng))
}

/// Gaussian observations, `per_policy[i]` individuals in policy `i`.
fn random_dataset<R: Rng>(rng: &mut R, d: usize, horizon: usize, per_policy: &[usize]) -> ExperimentDataset {
    let mut trajectories = Vec::new();
    for (p, &count) in per_policy.iter().enumerate() {
        for j in 0..count {
            let obs = (0..=horizon).map(|_| random_vector(rng, d)).collect();
            trajectories.push(ObservationTrajectory::new(format!("{p}-{j}"), p, obs));
        }
    }
    ExperimentDataset::new(trajectories, Some(per_policy.len())).expect("valid dataset")
}

fn group_mean(dataset: &ExperimentDataset, policy: usize, t: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(dataset.dim());
    let mut n = 0.0;
    for tr in dataset.trajectories().iter().filter(|tr| tr.policy_id == policy) {
        acc += &tr.observations[t];
        n += 1.0;
    }
    acc / n
}

/// `sum_{t<steps} gamma^t theta' M^t s` and the same sum of absolute terms.
fn rollout(m: &DMatrix<f64>, gamma: f64, theta: &DVector<f64>, start: &DVector<f64>, steps: usize) -> (f64, f64) {
    let mut s = start.clone();
    let (mut sum, mut abs, mut w) = (0.0, 0.0, 1.0);
    for _ in 0..steps {
        let r = w * theta.dot(&s);
        sum += r;
        abs += r.abs();
        s = m * s;
        w *= gamma;
    }
    (sum, abs)
}

fn criterion_1() -> Outcome {
    let mut rng = stream_rng(101, 0);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let d = rng.random_range(1..=8);
        let k = rng.random_range(2..=3);
        let gamma = rng.random_range(0.5..0.95);
        let matrices: Vec<DMatrix<f64>> = (0..k)
            .map(|_| {
                let m = random_matrix(&mut rng, d);
                let radius = rng.random_range(0.2..0.98);
                let r = spectral_radius(&m);
                if r > 0.0 {
                    m * (radius / r)
                } else {
                    m
                }
            })
            .collect();
        let model = TransitionModel::new(matrices.clone(), gamma).unwrap();
        let theta = RewardModel::new(random_vector(&mut rng, d)).unwrap();
        let horizon = rng.random_range(1..=4);
        let dataset = random_dataset(&mut rng, d, horizon, &vec![3; k]);
        let z = ExogenousSeries::new((0..=horizon).map(|_| random_vector(&mut rng, d)).collect()).unwrap();
        for p in 0..k {
            let o0 = group_mean(&dataset, p, 0);
            let checks = [
                (value_stationary(&model, p, &theta, &o0), o0.clone()),
                (value_nonstationary(&model, &z, &dataset, &theta, p), &o0 - z.step(0)),
            ];
            for (value, start) in checks {
                let Ok(v) = value else {
                    return outcome(false, format!("case {case}: value computation failed: {}", value.unwrap_err()));
                };
                let (sum, abs) = rollout(&matrices[p], gamma, theta.theta(), &start, 400);
                worst = worst.max((v - sum).abs() / abs.max(f64::MIN_POSITIVE));
            }
        }
    }
    outcome(worst <= 1e-8, format!("max relative gap to 400-step rollouts {worst:.2e} (tol 1e-8)"))
}

/// `M_i = (X^+ Y)'` with rows `o_t'` and `o_{t+1}'`, solved by SVD.
fn ols(dataset: &ExperimentDataset, policy: usize) -> DMatrix<f64> {
    let d = dataset.dim();
    let rows: Vec<(&DVector<f64>, &DVector<f64>)> = dataset
        .trajectories()
        .iter()
        .filter(|tr| tr.policy_id == policy)
        .flat_map(|tr| tr.observations.windows(2).map(|w| (&w[0], &w[1])))
        .collect();
    let x = DMatrix::from_fn(rows.len(), d, |r, c| rows[r].0[c]);
    let y = DMatrix::from_fn(rows.len(), d, |r, c| rows[r].1[c]);
    x.svd(true, true).solve(&y, 1e-14).unwrap().transpose()
}

fn criterion_2() -> Outcome {
    let mut rng = stream_rng(202, 0);
    let mut worst_ols: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..=8);
        let horizon = rng.random_range(2..=8);
        let dataset = random_dataset(&mut rng, d, horizon, &[20, 25, 30]);
        let fitted = solve_transitions(&ExogenousSeries::zeros(d, horizon), &dataset, 0.0, 0.0).unwrap();
        for (p, m) in fitted.iter().enumerate() {
            let reference = ols(&dataset, p);
            worst_ols = worst_ols.max((m - &reference).amax() / reference.amax().max(1.0));
        }
    }

    let mut worst_delta: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let d = 2 + (seed as usize % 5);
        let truth = SyntheticTruth::generate(&SyntheticConfig {
            dim: d,
            num_policies: 3,
            max_horizon: 6,
            alpha: 0.5,
            seed,
            ..Default::default()
        })
        .unwrap();
        let dataset = simulate_dataset(&truth, 100, 6).unwrap();
        let theta = RewardModel::uniform(d);
        let gamma = 0.5;
        let scale = (dataset.len() * dataset.horizon()) as f64 * dataset.mean_squared_norm();
        let config =
            NonstationaryConfig { lambda_z: Some(1e12 * scale), ..NonstationaryConfig::with_gamma(gamma) };
        match (estimate_effects_stationary(&dataset, &theta, gamma, 0.0), alternate_minimize(&dataset, &theta, &config))
        {
            (Ok(st), Ok(ns)) => {
                for (a, b) in ns.effects.iter().zip(&st) {
                    worst_delta = worst_delta.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
                }
            }
            (a, b) => failures.push(format!(
                "seed {seed}: stationary {:?}, nonstationary {:?}",
                a.err().map(|e| e.to_string()),
                b.err().map(|e| e.to_string())
            )),
        }
    }
    let pass = worst_ols <= 1e-12 && worst_delta <= 1e-6 && failures.is_empty();
    let mut detail = format!(
        "OLS gap {worst_ols:.2e} (tol 1e-12); heavy-lambda_z effect gap {worst_delta:.2e} (tol 1e-6) on 20 datasets"
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    outcome(pass, detail)
}

/// Objective written out term by term.
fn direct_loss(
    matrices: &[DMatrix<f64>],
    z: &[DVector<f64>],
    dataset: &ExperimentDataset,
    lambda_z: f64,
    lambda_m: f64,
) -> f64 {
    let mut total = 0.0;
    for tr in dataset.trajectories() {
        let m = &matrices[tr.policy_id];
        for t in 0..dataset.horizon() {
            let r = (&tr.observations[t + 1] - &z[t + 1]) - m * (&tr.observations[t] - &z[t]);
            total += r.norm_squared();
        }
    }
    let id = DMatrix::<f64>::identity(dataset.dim(), dataset.dim());
    total
        + lambda_z * z.iter().map(|v| v.norm_squared()).sum::<f64>()
        + lambda_m * matrices.iter().map(|m| (m - &id).norm_squared()).sum::<f64>()
}

fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut a = x.clone();
        let mut b = x.clone();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    })
}

/// Polak-Ribiere conjugate gradients with central-difference gradients and
/// a three-point parabolic line search.
fn conjugate_gradient(f: &dyn Fn(&DVector<f64>) -> f64, start: DVector<f64>) -> DVector<f64> {
    let h = 1e-3;
    let mut x = start;
    let mut g = fd_gradient(f, &x, h);
    let g0 = g.norm();
    let mut p = -&g;
    for iter in 0..(50 * x.len()) {
        if g.norm() <= 1e-14 * g0 {
            break;
        }
        let u = &p / p.norm();
        let f0 = f(&x);
        let (fp, fm) = (f(&(&x + &u)), f(&(&x - &u)));
        let curvature = fp - 2.0 * f0 + fm;
        if !(curvature > 0.0) {
            break;
        }
        x += &u * ((fm - fp) / (2.0 * curvature));
        let g_next = fd_gradient(f, &x, h);
        let beta = if (iter + 1) % x.len() == 0 {
            0.0
        } else {
            (g_next.dot(&(&g_next - &g)) / g.norm_squared()).max(0.0)
        };
        p = -&g_next + &p * beta;
        g = g_next;
    }
    x
}

fn unstack(v: &DVector<f64>, d: usize) -> Vec<DVector<f64>> {
    v.as_slice().chunks(d).map(DVector::from_column_slice).collect()
}

fn stack(ms: &[DMatrix<f64>]) -> DVector<f64> {
    DVector::from_iterator(ms.iter().map(|m| m.len()).sum(), ms.iter().flat_map(|m| m.iter().copied()))
}

fn criterion_3() -> Outcome {
    let mut rng = stream_rng(303, 0);
    let (mut worst_z, mut worst_gz, mut worst_gm, mut worst_loss): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for case in 0..50 {
        let d = rng.random_range(1..=3);
        let horizon = rng.random_range(1..=5);
        let k = 2;
        let per_policy: Vec<usize> = (0..k).map(|_| rng.random_range(1..=6)).collect();
        let dataset = random_dataset(&mut rng, d, horizon, &per_policy);
        let matrices: Vec<DMatrix<f64>> = (0..k).map(|_| random_matrix(&mut rng, d) * 0.6).collect();
        let lambda_z = rng.random_range(0.05..1.0);
        let lambda_m = rng.random_range(0.0..1.0);
        let n = d * (horizon + 1);

        let fz = |v: &DVector<f64>| direct_loss(&matrices, &unstack(v, d), &dataset, lambda_z, lambda_m);
        let reference = conjugate_gradient(&fz, DVector::zeros(n));
        let solved = solve_exogenous(&matrices, &dataset, lambda_z).unwrap();
        let z_hat = solved.stacked();
        worst_z = worst_z.max((&z_hat - &reference).amax());
        let objective = Objective { lambda_z, lambda_m, ..Objective::unregularized() };
        let lib = loss(&matrices, &solved, &dataset, &objective).unwrap();
        worst_loss = worst_loss.max((lib - fz(&z_hat)).abs() / lib);
        let g_ref = fd_gradient(&fz, &DVector::zeros(n), 1e-4).norm();
        worst_gz = worst_gz.max(fd_gradient(&fz, &z_hat, 1e-4).norm() / g_ref);

        let m_hat = solve_transitions(&solved, &dataset, lambda_m, 0.0).unwrap();
        let fm = |v: &DVector<f64>| {
            let ms: Vec<DMatrix<f64>> =
                v.as_slice().chunks(d * d).map(|c| DMatrix::from_column_slice(d, d, c)).collect();
            direct_loss(&ms, solved.steps(), &dataset, lambda_z, lambda_m)
        };
        let zero = DVector::zeros(k * d * d);
        let gm_ref = fd_gradient(&fm, &zero, 1e-4).norm();
        worst_gm = worst_gm.max(fd_gradient(&fm, &stack(&m_hat), 1e-4).norm() / gm_ref);
        if !worst_z.is_finite() {
            return outcome(false, format!("case {case}: nonfinite result"));
        }
    }
    let pass = worst_z <= 1e-6 && worst_gz <= 1e-6 && worst_gm <= 1e-6 && worst_loss <= 1e-12;
    outcome(
        pass,
        format!(
            "z gap to conjugate gradients {worst_z:.2e} (tol 1e-6); relative gradient at z block {worst_gz:.2e}, \
             at M block {worst_gm:.2e} (tol 1e-6); loss agreement {worst_loss:.2e}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let alphas = [0.0, 0.5, 1.0, 2.0, 4.0];
    let lambda_ms = [0.0, 0.1, 1.0];
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut steps = 0;
    for run in 0..100u64 {
        let d = 2 + (run as usize % 7);
        let truth = SyntheticTruth::generate(&SyntheticConfig {
            dim: d,
            num_policies: 2 + (run as usize % 3),
            max_horizon: 10,
            alpha: alphas[run as usize % 5],
            seed: 4000 + run,
            ..Default::default()
        })
        .unwrap();
        let horizon = 4 + (run as usize % 7);
        let dataset = simulate_dataset(&truth, 50 + 10 * (run as usize % 16), horizon).unwrap();
        let config = NonstationaryConfig {
            lambda_m: lambda_ms[run as usize % 3],
            tol: 1e-14,
            max_iters: 300,
            acceleration: if run % 4 == 0 { 0 } else { 5 },
            ..NonstationaryConfig::with_gamma(0.5)
        };
        match alternate_minimize(&dataset, &RewardModel::uniform(d), &config) {
            Ok(fit) => {
                for w in fit.loss_trace.windows(2) {
                    steps += 1;
                    let up = w[1] - w[0];
                    worst = worst.max(up);
                    if up > 1e-12 {
                        violations += 1;
                    }
                }
            }
            Err(e) => failures.push(format!("run {run}: {e}")),
        }
    }
    let pass = violations == 0 && failures.is_empty();
    let mut detail = format!("{violations} violations over {steps} steps in 100 runs; largest increase {worst:.2e}");
    if !failures.is_empty() {
        detail.push_str(&format!("; {} runs failed: {}", failures.len(), failures.join("; ")));
    }
    outcome(pass, detail)
}

fn noiseless_truth(alpha: f64, seed: u64) -> SyntheticTruth {
    SyntheticTruth::generate(&SyntheticConfig {
        dim: 4,
        num_policies: 4,
        max_horizon: 10,
        alpha,
        noise_std: 0.0,
        centered_init: true,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn tight_config() -> NonstationaryConfig {
    NonstationaryConfig {
        lambda_z: Some(1e-8),
        tol: 1e-20,
        max_iters: 5000,
        ..NonstationaryConfig::with_gamma(0.99)
    }
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_loss: f64 = 0.0;
    let mut problems = Vec::new();
    for alpha in [1.0, 4.0] {
        for seed in 0..3 {
            let truth = noiseless_truth(alpha, seed);
            let dataset = simulate_dataset(&truth, 200, 10).unwrap();
            let theta = RewardModel::uniform(4);
            let expected = ground_truth_delta(&truth, &theta, 0.99).unwrap();
            let config = tight_config();
            match alternate_minimize(&dataset, &theta, &config) {
                Ok(fit) => {
                    for (a, b) in fit.effects.iter().zip(&expected) {
                        worst = worst.max((a - b).abs() / b.abs());
                    }
                    let final_data = data_loss(fit.model.matrices(), &fit.exogenous, &dataset, 0).unwrap();
                    worst_loss = worst_loss.max(final_data / fit.loss_trace[0]);
                }
                Err(e) => problems.push(format!("alpha {alpha} seed {seed}: {e}")),
            }
        }
    }
    let pass = worst <= 1e-4 && worst_loss < 1e-10 && problems.is_empty();
    let mut detail = format!(
        "max relative effect error {worst:.2e} (tol 1e-4); final/initial data loss {worst_loss:.2e} (tol 1e-10); \
         alpha 1 and 4, 3 seeds, 3 treatments each"
    );
    if !problems.is_empty() {
        detail.push_str(&format!("; {}", problems.join("; ")));
    }
    outcome(pass, detail)
}

fn criterion_6() -> Outcome {
    let ns = [100, 316, 1000, 3162, 10000];
    match harness::oracle_rate_study(&Scenario::default(), &ns, 50, 0.99, 6006, 0) {
        Ok(study) => {
            let rmse: Vec<String> = study.rmse.iter().map(|r| format!("{r:.3e}")).collect();
            outcome(
                (-0.65..=-0.35).contains(&study.slope),
                format!("log-log slope {:.3} (want [-0.65, -0.35]); rmse {}", study.slope, rmse.join(", ")),
            )
        }
        Err(e) => outcome(false, format!("rate study failed: {e}")),
    }
}

fn median_with_failures(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else if values[n / 2 - 1].is_infinite() || values[n / 2].is_infinite() {
        f64::INFINITY
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn criterion_7() -> Outcome {
    let alphas = [0.5, 1.0, 2.0, 4.0];
    let config = SweepConfig::default();
    let results = match harness::sweep(SweepParam::Alpha, &alphas, 50, &config, 2024) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let median = |method: Method, alpha: f64| {
        let mut v: Vec<f64> = results
            .rows
            .iter()
            .filter(|r| r.method == method && r.value == alpha)
            .map(|r| if r.error.is_some() || !r.sq_err.is_finite() { f64::INFINITY } else { r.sq_err })
            .collect();
        median_with_failures(&mut v)
    };
    let table = |m: Method| alphas.map(|a| median(m, a));
    let (naive, st, ns) = (table(Method::Naive), table(Method::Stationary), table(Method::Nonstationary));
    let below_st = (0..4).all(|i| ns[i] < st[i]);
    let below_naive = (0..4).all(|i| ns[i] < naive[i]);
    let ns_max = ns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ns_min = ns.iter().copied().fold(f64::INFINITY, f64::min);
    let flat = ns_max.is_finite() && ns_max < 3.0 * ns_min;
    let st_up = st.windows(2).all(|w| w[0] <= w[1]);
    let fmt = |v: [f64; 4]| v.map(|x| format!("{x:.3e}")).join("/");
    let mark = |b: bool| if b { "ok" } else { "FAIL" };
    outcome(
        below_st && below_naive && flat && st_up,
        format!(
            "median sq err over alpha 0.5/1/2/4 (failed fits as inf): naive {}, stationary {}, nonstationary {}; \
             ns<stationary {}, ns<naive {}, ns spread {:.2}x<3 {}, stationary nondecreasing {}",
            fmt(naive),
            fmt(st),
            fmt(ns),
            mark(below_st),
            mark(below_naive),
            ns_max / ns_min,
            mark(flat),
            mark(st_up)
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut problems = Vec::new();
    let theta = RewardModel::uniform(4);
    for seed in 0..3u64 {
        let truth = noiseless_truth(1.0, 80 + seed);
        let dataset = simulate_dataset(&truth, 200, 10).unwrap();
        let base = match alternate_minimize(&dataset, &theta, &tight_config()) {
            Ok(fit) => fit.effects,
            Err(e) => {
                problems.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let scale = dataset.mean_squared_norm().sqrt();
        let mut rng = stream_rng(8000 + seed, 0);
        let shifts: Vec<(String, Vec<DVector<f64>>)> = vec![
            ("random x0.1".into(), (0..=10).map(|_| random_vector(&mut rng, 4).normalize() * 0.1 * scale).collect()),
            ("random x1".into(), (0..=10).map(|_| random_vector(&mut rng, 4).normalize() * scale).collect()),
            ("random x10".into(), (0..=10).map(|_| random_vector(&mut rng, 4).normalize() * 10.0 * scale).collect()),
            ("constant x10".into(), vec![DVector::from_element(4, 5.0 * scale); 11]),
            (
                "trend x10".into(),
                (0..=10).map(|t| DVector::from_fn(4, |c, _| (t as f64 - 5.0) * (c as f64 + 1.0)) * scale / 3.0).collect(),
            ),
        ];
        for (name, w) in shifts {
            let shifted = dataset.map_observations(|t, o| o + &w[t]).unwrap();
            match alternate_minimize(&shifted, &theta, &tight_config()) {
                Ok(fit) => {
                    for (a, b) in fit.effects.iter().zip(&base) {
                        worst = worst.max((a - b).abs() / b.abs());
                    }
                }
                Err(e) => problems.push(format!("seed {seed} {name}: {e}")),
            }
        }
    }
    let pass = worst < 1e-4 && problems.is_empty();
    let mut detail = format!("max relative change of effects {worst:.2e} (tol 1e-4) over 3 datasets x 5 shifts");
    if !problems.is_empty() {
        detail.push_str(&format!("; {}", problems.join("; ")));
    }
    outcome(pass, detail)
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_longterm"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let read = |name: &str| std::fs::read(p.join(name)).unwrap_or_default();
    let gen = |name: &str| {
        let truth = format!("{name}.truth.json");
        run_cli(
            p,
            &["gen-synthetic", "--d", "4", "--k", "3", "--n", "50", "--T", "8", "--alpha", "2", "--seed", "9", "--out", name, "--truth", &truth],
        )
    };
    let sweep = |name: &str, workers: &str| {
        run_cli(
            p,
            &[
                "sweep", "--param", "alpha", "--values", "0.5,2", "--reps", "4", "--d", "4", "--n", "100", "--seed", "5",
                "--workers", workers, "--out", name,
            ],
        )
    };
    let steps = [gen("a.csv"), gen("b.csv"), sweep("s1.csv", "1"), sweep("s1b.csv", "1"), sweep("s4.csv", "4")];
    if let Some(Err(e)) = steps.iter().find(|r| r.is_err()) {
        return outcome(false, format!("command failed: {e}"));
    }
    let same_data = read("a.csv") == read("b.csv") && !read("a.csv").is_empty();
    let same_truth = read("a.csv.truth.json") == read("b.csv.truth.json") && !read("a.csv.truth.json").is_empty();
    let same_runs = read("s1.csv") == read("s1b.csv") && !read("s1.csv").is_empty();
    let same_workers = read("s1.csv") == read("s4.csv");
    let mark = |b: bool| if b { "identical" } else { "DIFFERENT" };
    outcome(
        same_data && same_truth && same_runs && same_workers,
        format!(
            "gen-synthetic dataset {}, truth {}; sweep rerun {}, 1 vs 4 workers {}",
            mark(same_data),
            mark(same_truth),
            mark(same_runs),
            mark(same_workers)
        ),
    )
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn criterion_10() -> Outcome {
    let (mut worst_walk, mut worst_scale): (f64, f64) = (0.0, 0.0);
    for seed in 0..3u64 {
        let mut rng = stream_rng(cell_seed(1010, 0, seed as usize), 1);
        let draw = generate_exogenous(100_000, 2, &mut rng);
        for c in 0..2 {
            let inc: Vec<f64> = draw.raw.windows(2).map(|w| w[1][c] - w[0][c]).collect();
            let logs: Vec<f64> = draw.log_scales.iter().map(|b| b[c]).collect();
            worst_walk = worst_walk.max((sample_variance(&inc) / WALK_VARIANCE - 1.0).abs());
            worst_scale = worst_scale.max((sample_variance(&logs) / LOG_SCALE_VARIANCE - 1.0).abs());
        }
    }
    outcome(
        worst_walk < 0.05 && worst_scale < 0.05,
        format!(
            "increment variance off by {:.2}%, log-scale variance off by {:.2}% (tol 5%, 10^5 draws, 6 series)",
            100.0 * worst_walk,
            100.0 * worst_scale
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("closed-form values", criterion_1),
        ("exact reductions", criterion_2),
        ("block optimality", criterion_3),
        ("monotone loss", criterion_4),
        ("noiseless identifiability", criterion_5),
        ("oracle rate", criterion_6),
        ("alpha sweep ordering", criterion_7),
        ("exogenous shift invariance", criterion_8),
        ("determinism", criterion_9),
        ("synthetic moments", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<27} {} [{secs:.1}s] {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
