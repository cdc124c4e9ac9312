//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.
//!
//! Set `PKLM_ACCEPTANCE=3,8` to run a subset while iterating.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pklm::bench::{rejection_rate, run_replicates, simulate_cell, ReplicateOutcome};
use pklm::forest::OobProbabilities;
use pklm::perm_test::TestConfig;
use pklm::statistic::{one_sided_term, projection_statistic};
use pklm::synth::{partial_mar_example, yuan_example, Case, Mechanism};
use pklm::PklmError;

const ALPHA: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Result<Outcome, PklmError>;

fn p_values(outcomes: &[ReplicateOutcome]) -> Vec<f64> {
    outcomes.iter().map(|o| o.p_value).collect()
}

fn cell(
    case: u8,
    n: usize,
    p: usize,
    r: f64,
    mechanism: Mechanism,
    reps: usize,
    config: &TestConfig,
) -> Result<Vec<f64>, PklmError> {
    let outcomes = simulate_cell(Case::new(case)?, n, p, r, mechanism, reps, 20_240_101, config)?;
    Ok(p_values(&outcomes))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len().is_multiple_of(2) {
        (xs[m - 1] + xs[m]) / 2.0
    } else {
        xs[m]
    }
}

fn type_one_error() -> Result<Outcome, PklmError> {
    let config = TestConfig::default();
    let mut rates = Vec::new();
    for case in [1, 5] {
        let ps = cell(case, 200, 4, 0.65, Mechanism::Mcar, 300, &config)?;
        rates.push((case, rejection_rate(&ps, ALPHA)));
    }
    let pass = rates.iter().all(|&(_, rate)| rate <= 0.08);
    let detail = rates
        .iter()
        .map(|(c, rate)| format!("case {c}: {rate:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome::new(pass, format!("{detail} (bound 0.08)")))
}

fn p_value_validity() -> Result<Outcome, PklmError> {
    // The permitted reduction: 200 replicates and 50 projections.
    let reps = 200;
    let config = TestConfig {
        num_proj: 50,
        ..TestConfig::default()
    };
    let ps = cell(5, 500, 10, 0.65, Mechanism::Mcar, reps, &config)?;
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for step in 1..=19 {
        let z = f64::from(step) * 0.05;
        let ecdf = ps.iter().filter(|&&p| p <= z).count() as f64 / reps as f64;
        let bound = z + 3.0 * (z * (1.0 - z) / reps as f64).sqrt();
        worst = worst.max(ecdf - bound);
        pass &= ecdf <= bound;
    }
    let min_p = ps.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = 1.0 / (config.nrep as f64 + 1.0);
    pass &= min_p == floor;
    Ok(Outcome::new(
        pass,
        format!(
            "max ECDF excess over bound {worst:.4}; min p {min_p:.6} vs 1/(L+1) = {floor:.6}"
        ),
    ))
}

fn power_low_dimension() -> Result<Outcome, PklmError> {
    let ps = cell(2, 200, 4, 0.65, Mechanism::Mar, 300, &TestConfig::default())?;
    let power = rejection_rate(&ps, ALPHA);
    Ok(Outcome::new(power >= 0.85, format!("power {power:.3} (need >= 0.85)")))
}

fn power_moderate_dimension() -> Result<Outcome, PklmError> {
    let ps = cell(4, 500, 10, 0.65, Mechanism::Mar, 100, &TestConfig::default())?;
    let power = rejection_rate(&ps, ALPHA);
    Ok(Outcome::new(power >= 0.90, format!("power {power:.3} (need >= 0.90)")))
}

fn correlation_sensitivity() -> Result<Outcome, PklmError> {
    let config = TestConfig::default();
    let independent = rejection_rate(&cell(1, 500, 20, 0.35, Mechanism::Mar, 100, &config)?, ALPHA);
    let correlated = rejection_rate(&cell(2, 500, 20, 0.35, Mechanism::Mar, 100, &config)?, ALPHA);
    Ok(Outcome::new(
        correlated - independent >= 0.2,
        format!("case 2 power {correlated:.3} vs case 1 power {independent:.3} (need gap >= 0.2)"),
    ))
}

fn yuan_power() -> Result<Outcome, PklmError> {
    let outcomes = run_replicates(50, 6, &TestConfig::default(), |rng| yuan_example(1000, rng))?;
    let power = rejection_rate(&p_values(&outcomes), ALPHA);
    Ok(Outcome::new(power >= 0.95, format!("power {power:.3} (need >= 0.95)")))
}

fn partial_p_values() -> Result<Outcome, PklmError> {
    let config = TestConfig {
        compute_partial: true,
        ..TestConfig::default()
    };
    let outcomes = run_replicates(50, 7, &config, |rng| partial_mar_example(500, 4, 0.65, rng))?;
    let mut medians = Vec::new();
    for var in 0..4 {
        let values: Option<Vec<f64>> = outcomes
            .iter()
            .map(|o| o.partial_p_values.as_ref().and_then(|v| v[var]))
            .collect();
        match values {
            Some(v) => medians.push(median(v)),
            None => return Ok(Outcome::new(false, format!("variable {} lacks a partial p-value", var + 1))),
        }
    }
    let pass = medians[0] >= 0.3 && medians[1..].iter().all(|&m| m <= 0.05);
    Ok(Outcome::new(
        pass,
        format!(
            "medians {:.3} / {:.3} / {:.3} / {:.3} (need >= 0.3, then <= 0.05)",
            medians[0], medians[1], medians[2], medians[3]
        ),
    ))
}

/// Direct evaluation of the symmetrized statistic with explicit index sets.
fn brute_force(rows: &[Vec<f64>], covered: &[bool], labels: &[Option<usize>], k: usize) -> Option<f64> {
    let log_odds = |p: f64| {
        let q = p.clamp(1e-9, 1.0 - 1e-9);
        q.ln() - (1.0 - q).ln()
    };
    let mut total = 0.0;
    let mut any = false;
    for g in 0..k {
        let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..rows.len() {
            if !covered[i] {
                continue;
            }
            let v = log_odds(rows[i][g]);
            if labels[i] == Some(g) {
                s_in += v;
                n_in += 1;
            } else {
                s_out += v;
                n_out += 1;
            }
        }
        if n_in > 0 && n_out > 0 {
            total += s_in / n_in as f64 - s_out / n_out as f64;
            any = true;
        }
    }
    any.then_some(total)
}

fn statistic_oracle() -> Result<Outcome, PklmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let k = rng.random_range(2..=4);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                // Occasional exact zeros and ones exercise the truncation.
                let mut r: Vec<f64> = (0..k)
                    .map(|_| match rng.random_range(0..10) {
                        0 => 0.0,
                        _ => rng.random::<f64>(),
                    })
                    .collect();
                let s: f64 = r.iter().sum();
                if s == 0.0 {
                    r[0] = 1.0;
                } else {
                    r.iter_mut().for_each(|v| *v /= s);
                }
                r
            })
            .collect();
        let coverage: Vec<u32> = (0..n).map(|_| if rng.random_bool(0.9) { 1 } else { 0 }).collect();
        let labels: Vec<Option<usize>> = (0..n)
            .map(|_| rng.random_bool(0.85).then(|| rng.random_range(0..k)))
            .collect();
        let covered: Vec<bool> = coverage.iter().map(|&c| c > 0).collect();
        let probs = OobProbabilities::from_rows(&rows, coverage)?;
        let expected = brute_force(&rows, &covered, &labels, k);
        match (projection_statistic(&labels, &probs), expected) {
            (Ok(s), Some(e)) => {
                let err = (s.value - e).abs();
                worst = worst.max(err);
                if err > 1e-10 {
                    mismatches += 1;
                }
            }
            (Err(PklmError::NoValidClassTerm), None) => {}
            _ => mismatches += 1,
        }
    }
    Ok(Outcome::new(
        mismatches == 0,
        format!("{mismatches} mismatches in 1000 instances; max abs error {worst:.2e}"),
    ))
}

fn divergence_convergence() -> Result<Outcome, PklmError> {
    // Classes N(0,1) and N(1,1) with equal priors; the exact posterior of
    // class 0 replaces the forest estimate, so U_0 targets KL = 1/2.
    let density = |x: f64, mu: f64| (-(x - mu) * (x - mu) / 2.0).exp();
    let mut mean_errors = Vec::new();
    for (j, n) in [1_000usize, 10_000, 100_000].into_iter().enumerate() {
        let mut err = 0.0;
        for rep in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + 100 * j as u64 + rep);
            let mut posteriors = Vec::new();
            for _ in 0..n {
                let class0 = rng.random_bool(0.5);
                let z: f64 = StandardNormal.sample(&mut rng);
                let x = if class0 { z } else { z + 1.0 };
                if class0 {
                    let (f0, f1) = (density(x, 0.0), density(x, 1.0));
                    posteriors.push(f0 / (f0 + f1));
                }
            }
            err += (one_sided_term(&posteriors, 0.5) - 0.5).abs();
        }
        mean_errors.push((n, err / 20.0));
    }
    let decreasing = mean_errors.windows(2).all(|w| w[1].1 < w[0].1);
    let last = mean_errors[2].1;
    let detail = mean_errors
        .iter()
        .map(|(n, e)| format!("n={n}: {e:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome::new(
        decreasing && last < 0.02,
        format!("mean |U - 0.5| {detail}"),
    ))
}

fn run_cli(threads: usize, args: &[&str]) -> Result<Vec<u8>, PklmError> {
    let out = Command::new(env!("CARGO_BIN_EXE_pklm"))
        .env("PKLM_THREADS", threads.to_string())
        .args(args)
        .output()?;
    if !out.status.success() {
        return Err(PklmError::InvalidData(format!(
            "pklm {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    Ok(out.stdout)
}

fn determinism() -> Result<Outcome, PklmError> {
    let dir = tempfile::tempdir()?;
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut failures = Vec::new();
    let inputs = [
        ("mar.csv", vec!["--case", "2", "--mechanism", "mar"]),
        ("partial.csv", vec!["--example", "partial", "--n", "300"]),
    ];
    for (name, sim_args) in inputs {
        let path = dir.path().join(name);
        let path_str = path.to_str().expect("utf-8 temp path");
        let mut args = vec!["simulate", "--seed", "11", "--out", path_str];
        args.extend(&sim_args);
        run_cli(1, &args)?;
        let reports: Vec<Vec<u8>> = [1, 2, max, 1]
            .into_iter()
            .map(|t| test_report(t, &path))
            .collect::<Result<_, _>>()?;
        if reports.iter().any(|r| r != &reports[0]) {
            failures.push(name);
        }
    }
    Ok(Outcome::new(
        failures.is_empty(),
        format!("threads 1, 2, {max} and a repeat; differing inputs: {failures:?}"),
    ))
}

fn test_report(threads: usize, path: &Path) -> Result<Vec<u8>, PklmError> {
    run_cli(
        threads,
        &["test", path.to_str().expect("utf-8 temp path"), "--seed", "5", "--partial"],
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 10] = [
        (1, "type-I error, cases 1 and 5", type_one_error),
        (2, "p-value validity curve", p_value_validity),
        (3, "power, low dimension", power_low_dimension),
        (4, "power, moderate dimension", power_moderate_dimension),
        (5, "correlation sensitivity", correlation_sensitivity),
        (6, "three-band example", yuan_power),
        (7, "partial p-values", partial_p_values),
        (8, "statistic oracle equivalence", statistic_oracle),
        (9, "divergence convergence", divergence_convergence),
        (10, "thread-count determinism", determinism),
    ];
    let selected: Option<Vec<u32>> = std::env::var("PKLM_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());

    let mut failed = 0;
    for (id, name, check) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let secs = started.elapsed().as_secs_f64();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status}: {name}: {} [{secs:.0}s]", outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
