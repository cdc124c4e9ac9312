//! Monte Carlo harness for rejection rates over a grid of simulation cells.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::DataMatrix;
use crate::error::{PklmError, Result};
use crate::perm_test::{pklm_test, TestConfig};
use crate::rng::{derive_seed, substream, tag, StreamRng};
use crate::synth::{ampute_mar, ampute_mcar, gen_case, Case, Mechanism, SimSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub p_value: f64,
    pub partial_p_values: Option<Vec<Option<f64>>>,
}

/// Runs `reps` independent generate-then-test rounds. Replicate `k` draws its
/// data from substream `(seed, k)` and tests with a seed derived from the
/// same pair, so outcomes do not depend on scheduling.
pub fn run_replicates<F>(
    reps: usize,
    seed: u64,
    config: &TestConfig,
    generate: F,
) -> Result<Vec<ReplicateOutcome>>
where
    F: Fn(&mut StreamRng) -> Result<DataMatrix> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, &[tag::REPLICATE, k as u64]);
            let data = generate(&mut rng)?;
            let cfg = TestConfig {
                seed: derive_seed(seed, &[tag::TEST, k as u64]),
                ..config.clone()
            };
            let report = pklm_test(&data, &cfg)?;
            Ok(ReplicateOutcome {
                p_value: report.p_value,
                partial_p_values: report.partial_p_values,
            })
        })
        .collect()
}

pub fn rejection_rate(p_values: &[f64], alpha: f64) -> f64 {
    p_values.iter().filter(|&&p| p <= alpha).count() as f64 / p_values.len() as f64
}

/// Replicates of one simulation cell; the cell's parameters are folded into
/// the seed so distinct cells use unrelated streams.
#[allow(clippy::too_many_arguments)]
pub fn simulate_cell(
    case: Case,
    n: usize,
    p: usize,
    r: f64,
    mechanism: Mechanism,
    reps: usize,
    seed: u64,
    config: &TestConfig,
) -> Result<Vec<ReplicateOutcome>> {
    let template = SimSpec {
        case,
        n,
        p,
        r,
        mechanism,
        seed: 0,
    };
    template.validate()?;
    let cell_seed = derive_seed(
        seed,
        &[
            u64::from(case.id()),
            n as u64,
            p as u64,
            r.to_bits(),
            u64::from(mechanism == Mechanism::Mar),
        ],
    );
    run_replicates(reps, cell_seed, config, |rng| {
        let full = gen_case(&template, rng)?;
        match mechanism {
            Mechanism::Mcar => ampute_mcar(&full, r, rng),
            Mechanism::Mar => ampute_mar(&full, r, rng),
        }
    })
}

#[derive(Debug, Clone)]
pub struct BenchGrid {
    pub cases: Vec<Case>,
    pub ns: Vec<usize>,
    pub ps: Vec<usize>,
    pub rs: Vec<f64>,
    pub mechanisms: Vec<Mechanism>,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub test: TestConfig,
}

impl BenchGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PklmError::InvalidConfig(m.to_string()));
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.cases.is_empty() || self.ns.is_empty() || self.ps.is_empty() || self.rs.is_empty() {
            return bad("every grid axis needs at least one value");
        }
        if self.mechanisms.is_empty() {
            return bad("at least one mechanism is required");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        self.test.validate()
    }
}

/// One line of the results table: MCAR replicates give the type-I error,
/// MAR replicates the power.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub p: usize,
    pub r: f64,
    pub case: u8,
    pub reps: usize,
    pub power: Option<f64>,
    pub type_i_error: Option<f64>,
}

pub fn run_bench(grid: &BenchGrid) -> Result<Vec<BenchRow>> {
    grid.validate()?;
    let mut rows = Vec::new();
    for &n in &grid.ns {
        for &p in &grid.ps {
            for &r in &grid.rs {
                for &case in &grid.cases {
                    let mut row = BenchRow {
                        n,
                        p,
                        r,
                        case: case.id(),
                        reps: grid.reps,
                        power: None,
                        type_i_error: None,
                    };
                    for &mech in &grid.mechanisms {
                        let outcomes =
                            simulate_cell(case, n, p, r, mech, grid.reps, grid.seed, &grid.test)?;
                        let ps: Vec<f64> = outcomes.iter().map(|o| o.p_value).collect();
                        let rate = Some(rejection_rate(&ps, grid.alpha));
                        match mech {
                            Mechanism::Mcar => row.type_i_error = rate,
                            Mechanism::Mar => row.power = rate,
                        }
                    }
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
