//! Synthetic benchmark data: eight complete-data distributions, MCAR and
//! MAR amputation, and two MAR examples with structured missingness.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, DataMatrix, MissingnessMask};
use crate::error::{PklmError, Result};
use crate::rng::{substream, tag};

/// Off-diagonal entry of the correlated covariance matrix.
pub const CORRELATION: f64 = 0.7;
const T_DOF: f64 = 4.0;

/// Distribution case, `1..=8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Case(u8);

impl Case {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=8).contains(&id) {
            Ok(Self(id))
        } else {
            Err(PklmError::BadSpec(format!("case must be in 1..=8, got {id}")))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Case> {
        (1..=8).map(Case)
    }
}

impl TryFrom<u8> for Case {
    type Error = PklmError;
    fn try_from(id: u8) -> Result<Self> {
        Case::new(id)
    }
}

impl From<Case> for u8 {
    fn from(c: Case) -> u8 {
        c.0
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
}

impl FromStr for Mechanism {
    type Err = PklmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            other => Err(PklmError::BadSpec(format!("unknown mechanism {other:?}"))),
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub case: Case,
    pub n: usize,
    pub p: usize,
    /// Expected fraction of fully observed rows.
    pub r: f64,
    pub mechanism: Mechanism,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(PklmError::BadSpec("n must be at least 1".into()));
        }
        if self.p < 2 {
            let why = match self.mechanism {
                Mechanism::Mar => "MAR amputation needs p >= 2",
                Mechanism::Mcar => "p must be at least 2",
            };
            return Err(PklmError::BadSpec(why.into()));
        }
        check_fraction(self.r)
    }
}

fn check_fraction(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(PklmError::BadSpec(format!("r must lie in (0, 1], got {r}")))
    }
}

/// Applies the symmetric square root of the equicorrelation matrix
/// `(1 - rho) I + rho 11'` in place.
///
/// Its eigenvalues are `1 - rho` (multiplicity `p - 1`) and `1 + (p - 1) rho`
/// on the all-ones direction, so `S^(1/2) = a I + b 11'` with
/// `a = sqrt(1 - rho)` and `b = (sqrt(1 + (p - 1) rho) - a) / p`.
pub fn apply_equicorrelation_sqrt(v: &mut [f64], rho: f64) {
    let p = v.len() as f64;
    let a = (1.0 - rho).sqrt();
    let b = ((1.0 + (p - 1.0) * rho).sqrt() - a) / p;
    let shift = b * v.iter().sum::<f64>();
    v.iter_mut().for_each(|x| *x = a * *x + shift);
}

fn numeric_matrix(p: usize, cells: Vec<Option<f64>>) -> Result<DataMatrix> {
    DataMatrix::new(
        (1..=p).map(|j| format!("X{j}")).collect(),
        vec![ColumnKind::Numeric; p],
        cells,
    )
}

/// Draws `spec.n` complete rows from the selected distribution.
pub fn gen_case<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<DataMatrix> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let chi2 = ChiSquared::new(T_DOF).expect("valid degrees of freedom");
    let weibull = Weibull::new(1.0, 2.0).expect("valid Weibull parameters");
    let mut cells = Vec::with_capacity(n * p);
    let mut row = vec![0.0; p];
    for _ in 0..n {
        match spec.case.id() {
            1 | 2 | 3 | 4 | 7 => row.iter_mut().for_each(|x| *x = StandardNormal.sample(rng)),
            5 | 6 => row.iter_mut().for_each(|x| *x = rng.random::<f64>()),
            8 => row.iter_mut().for_each(|x| *x = weibull.sample(rng)),
            _ => unreachable!("case validated on construction"),
        }
        match spec.case.id() {
            2 | 4 | 6 => apply_equicorrelation_sqrt(&mut row, CORRELATION),
            7 => row.iter_mut().for_each(|z| *z += 0.1 * z.powi(3)),
            _ => {}
        }
        if matches!(spec.case.id(), 3 | 4) {
            let scale = (T_DOF / chi2.sample(rng)).sqrt();
            row.iter_mut().for_each(|x| *x *= scale);
        }
        cells.extend(row.iter().map(|&x| Some(x)));
    }
    numeric_matrix(p, cells)
}

fn require_complete(data: &DataMatrix) -> Result<()> {
    if data.is_fully_observed() {
        Ok(())
    } else {
        Err(PklmError::BadSpec("amputation needs a fully observed dataset".into()))
    }
}

/// Each cell missing independently with probability `1 - r^(1/p)`; rows that
/// come out all-missing are redrawn.
pub fn ampute_mcar<R: Rng + ?Sized>(data: &DataMatrix, r: f64, rng: &mut R) -> Result<DataMatrix> {
    check_fraction(r)?;
    require_complete(data)?;
    let (n, p) = (data.n_rows(), data.n_cols());
    let q = 1.0 - r.powf(1.0 / p as f64);
    let mut bits = Vec::with_capacity(n * p);
    let mut row = vec![0u8; p];
    for _ in 0..n {
        loop {
            row.iter_mut().for_each(|b| *b = u8::from(rng.random::<f64>() < q));
            if row.contains(&0) {
                break;
            }
        }
        bits.extend_from_slice(&row);
    }
    data.with_mask(&MissingnessMask::from_bits(n, p, bits)?)
}

/// MAR amputation driven by the first column.
///
/// A mask is drawn with column 1 observed and the other cells missing with
/// probability `1 - r^(1/(p-1))`, then split into complete and incomplete
/// rows. Data rows below the column-1 mean take an incomplete mask row with
/// probability 5/6, rows at or above it with probability 1/6. Mask rows are
/// used without replacement; once a group runs out the other one is used.
pub fn ampute_mar<R: Rng + ?Sized>(data: &DataMatrix, r: f64, rng: &mut R) -> Result<DataMatrix> {
    check_fraction(r)?;
    let (n, p) = (data.n_rows(), data.n_cols());
    if p < 2 {
        return Err(PklmError::BadSpec("MAR amputation needs p >= 2".into()));
    }
    if data.column_kinds()[0] != ColumnKind::Numeric {
        return Err(PklmError::BadSpec("MAR amputation needs a numeric first column".into()));
    }
    require_complete(data)?;

    let q = 1.0 - r.powf(1.0 / (p - 1) as f64);
    let mut complete: Vec<Vec<u8>> = Vec::new();
    let mut incomplete: Vec<Vec<u8>> = Vec::new();
    for _ in 0..n {
        let mut row = vec![0u8; p];
        row[1..].iter_mut().for_each(|b| *b = u8::from(rng.random::<f64>() < q));
        if row.contains(&1) {
            incomplete.push(row);
        } else {
            complete.push(row);
        }
    }
    complete.shuffle(rng);
    incomplete.shuffle(rng);

    let mean = (0..n).map(|i| data.get(i, 0).unwrap_or_default()).sum::<f64>() / n as f64;
    let mut bits = Vec::with_capacity(n * p);
    for i in 0..n {
        let below = data.get(i, 0).unwrap_or_default() < mean;
        let u: f64 = rng.random();
        let want_incomplete = if below { u < 5.0 / 6.0 } else { u < 1.0 / 6.0 };
        let (first, second) = if want_incomplete {
            (&mut incomplete, &mut complete)
        } else {
            (&mut complete, &mut incomplete)
        };
        let row = first.pop().or_else(|| second.pop()).expect("one mask row per data row");
        bits.extend_from_slice(&row);
    }
    data.with_mask(&MissingnessMask::from_bits(n, p, bits)?)
}

/// Thresholds on `X1` that make `X2` missing; they leave about 30% of `X2`
/// missing while keeping group means and variances close.
const YUAN_OUTER: f64 = 1.932;
const YUAN_INNER: f64 = 0.314;

/// Bivariate normal with correlation 0.5 where `X2` is missing whenever
/// `X1` lies in `(-inf, -1.932] U (-0.314, 0.314] U (1.932, inf)`.
pub fn yuan_example<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DataMatrix> {
    if n == 0 {
        return Err(PklmError::BadSpec("n must be at least 1".into()));
    }
    let mut cells = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let x1 = z1;
        let x2 = 0.5 * z1 + 0.75f64.sqrt() * z2;
        let hidden = x1 <= -YUAN_OUTER || (x1 > -YUAN_INNER && x1 <= YUAN_INNER) || x1 > YUAN_OUTER;
        cells.push(Some(x1));
        cells.push((!hidden).then_some(x2));
    }
    numeric_matrix(2, cells)
}

/// Standard normal data where only `X1` has MAR missingness: `X1` is missing
/// when `X2 > 0.5`; the other columns get MCAR holes with `r` complete rows
/// among them (`1 - r^(1/(p-1))` per cell).
pub fn partial_mar_example<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    r: f64,
    rng: &mut R,
) -> Result<DataMatrix> {
    if n == 0 || p < 2 {
        return Err(PklmError::BadSpec("need n >= 1 and p >= 2".into()));
    }
    check_fraction(r)?;
    let q = 1.0 - r.powf(1.0 / (p - 1) as f64);
    let mut cells = Vec::with_capacity(n * p);
    let mut values = vec![0.0; p];
    let mut holes = vec![false; p];
    for _ in 0..n {
        values.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
        holes[0] = values[1] > 0.5;
        loop {
            holes[1..].iter_mut().for_each(|h| *h = rng.random::<f64>() < q);
            if !holes.iter().all(|&h| h) {
                break;
            }
        }
        cells.extend(values.iter().zip(&holes).map(|(&x, &h)| (!h).then_some(x)));
    }
    numeric_matrix(p, cells)
}

/// Complete data for `spec` followed by its amputation, each from its own
/// substream of `spec.seed`.
pub fn simulate(spec: &SimSpec) -> Result<DataMatrix> {
    spec.validate()?;
    let full = gen_case(spec, &mut substream(spec.seed, &[tag::SIMULATE]))?;
    let mut rng = substream(spec.seed, &[tag::AMPUTE]);
    match spec.mechanism {
        Mechanism::Mcar => ampute_mcar(&full, spec.r, &mut rng),
        Mechanism::Mar => ampute_mar(&full, spec.r, &mut rng),
    }
}
