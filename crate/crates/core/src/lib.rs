//! PKLM: a test of the missing-completely-at-random hypothesis.
//!
//! Random pairs of variable subsets `(A, B)` are drawn; rows fully observed on
//! `A` are labeled by their missingness pattern on `B`, and a probability
//! forest trained on the `A` columns estimates how well the labels can be
//! predicted. The averaged log-odds statistic is calibrated by permuting the
//! rows of the missingness mask, which yields a finite-sample valid p-value.
//!
//! ```no_run
//! use pklm::{data, perm_test};
//!
//! let x = data::load_csv("data.csv", &data::CsvOptions::default())?;
//! let report = perm_test::pklm_test(&x, &perm_test::TestConfig::default())?;
//! println!("p = {}", report.p_value);
//! # Ok::<(), pklm::PklmError>(())
//! ```

pub mod bench;
pub mod data;
pub mod error;
pub mod forest;
pub mod projection;
pub mod report;
pub mod rng;
pub mod statistic;
pub mod synth;

pub use error::{PklmError, Result};
