//! Monte Carlo delay-RMSE sweeps over schemes, grid sizes, estimator
//! variants and absorption on/off.
//!
//! Every (scheme, rectified, absorption, K, trial) cell is independent and
//! runs on the rayon pool. Trial `t` uses noise seed `base_seed + t` in every
//! cell, so schemes are compared on common random numbers. Rows are sorted
//! before they are returned, which makes the output independent of the
//! worker count.
//!
//! With absorption on, the data are always synthesized with the absorption
//! model. LR-SAGE estimates with the same model. Plain SAGE estimates with a
//! lossless model unless `plain_knows_absorption` is set: with a matched
//! model its objective is already the exact single-path likelihood, so the
//! failure of classical SAGE under absorption is the failure of an
//! estimator that ignores the frequency-dependent gain.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::absorption::AbsorptionModel;
use crate::analysis::delay_rmse;
use crate::channel::{fmt12, reference_channel, PathParams, SoundingModel};
use crate::error::{invalid, Error, Result};
use crate::estimator::{run, SageConfig};
use crate::grid::{FrequencyGrid, Scheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schemes: Vec<Scheme>,
    pub ks: Vec<usize>,
    #[serde(default = "both")]
    pub rectified: Vec<bool>,
    #[serde(default = "both")]
    pub absorption_on: Vec<bool>,
    pub n_trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// `None` for noiseless trials.
    pub snr_db: Option<f64>,
    pub f_start_hz: f64,
    pub bandwidth_hz: f64,
    pub paths: Vec<PathParams>,
    pub absorption: AbsorptionModel,
    pub sage: SageConfig,
    /// Number of strongest paths scored.
    pub top_n: usize,
    #[serde(default)]
    pub plain_knows_absorption: bool,
}

fn both() -> Vec<bool> {
    vec![false, true]
}

impl SweepConfig {
    /// Reference channel, 370–390 GHz, 50 dB SNR, delay search 0–220 ns.
    pub fn reference(schemes: Vec<Scheme>, ks: Vec<usize>, n_trials: usize) -> Self {
        let paths = reference_channel();
        Self {
            schemes,
            ks,
            rectified: both(),
            absorption_on: both(),
            n_trials,
            base_seed: 0,
            snr_db: Some(50.0),
            f_start_hz: 370e9,
            bandwidth_hz: 20e9,
            top_n: paths.len(),
            sage: SageConfig::new(paths.len(), 0.0, 220e-9),
            paths,
            absorption: AbsorptionModel::default_water(),
            plain_knows_absorption: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Empty("schemes"));
        }
        if let Some(s) = self.schemes.iter().find(|s| **s == Scheme::Custom) {
            return Err(Error::UnsupportedScheme(s.to_string()));
        }
        if self.ks.is_empty() {
            return Err(Error::Empty("ks"));
        }
        if self.rectified.is_empty() || self.absorption_on.is_empty() {
            return Err(Error::Empty("estimator variants"));
        }
        if self.n_trials == 0 {
            return Err(invalid("n_trials must be at least 1"));
        }
        if self.paths.is_empty() {
            return Err(Error::Empty("paths"));
        }
        for p in &self.paths {
            p.validate()?;
        }
        if self.top_n == 0 || self.top_n > self.paths.len().min(self.sage.n_paths) {
            return Err(invalid("top_n must be between 1 and the number of paths"));
        }
        self.sage.validate()
    }

    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &scheme in &self.schemes {
            for &rectified in &self.rectified {
                for &ma in &self.absorption_on {
                    for &k in &self.ks {
                        for trial in 0..self.n_trials {
                            cells.push(Cell {
                                scheme,
                                rectified,
                                ma,
                                k,
                                trial,
                            });
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    scheme: Scheme,
    rectified: bool,
    ma: bool,
    k: usize,
    trial: usize,
}

/// One trial's score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub rectified: bool,
    pub ma: bool,
    pub k: usize,
    pub trial: usize,
    pub rmse_s: f64,
}

impl SweepRow {
    fn key(&self) -> (usize, bool, bool, usize, usize) {
        let s = Scheme::ALL_GENERATED.iter().position(|x| *x == self.scheme).unwrap_or(usize::MAX);
        (s, self.rectified, self.ma, self.k, self.trial)
    }
}

/// Aggregate over the trials of one sweep point, `sqrt(mean rmse²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub scheme: Scheme,
    pub rectified: bool,
    pub ma: bool,
    pub k: usize,
    pub rmse_s: f64,
}

fn run_cell(cfg: &SweepConfig, cell: Cell) -> Result<SweepRow> {
    let grid = FrequencyGrid::generate(cell.scheme, cfg.f_start_hz, cfg.bandwidth_hz, cell.k)?;
    let truth_model = if cell.ma {
        SoundingModel::single(grid.clone(), cfg.absorption.clone())?
    } else {
        SoundingModel::single(grid.clone(), AbsorptionModel::none())?
    };
    let seed = cfg.base_seed.wrapping_add(cell.trial as u64);
    let y = truth_model.synthesize(&cfg.paths, cfg.snr_db, seed)?;
    let est_model = if cell.ma && !cell.rectified && !cfg.plain_knows_absorption {
        SoundingModel::single(grid, AbsorptionModel::none())?
    } else {
        truth_model
    };
    let sage = cfg.sage.clone().rectified(cell.rectified);
    let est = run(&y, &sage, &est_model)?;
    Ok(SweepRow {
        scheme: cell.scheme,
        rectified: cell.rectified,
        ma: cell.ma,
        k: cell.k,
        trial: cell.trial,
        rmse_s: delay_rmse(&est.paths, &cfg.paths, cfg.top_n)?,
    })
}

/// Runs every cell and returns the rows in sorted order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = cfg
        .cells()
        .into_par_iter()
        .map(|c| run_cell(cfg, c))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.key());
    Ok(rows)
}

/// Collapses trials into one RMSE per sweep point.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepPoint> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.key());
    let mut out: Vec<SweepPoint> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for r in sorted {
        match out.last_mut() {
            Some(p) if p.scheme == r.scheme && p.rectified == r.rectified && p.ma == r.ma && p.k == r.k => {
                p.rmse_s += r.rmse_s * r.rmse_s;
                *counts.last_mut().expect("paired") += 1;
            }
            _ => {
                out.push(SweepPoint {
                    scheme: r.scheme,
                    rectified: r.rectified,
                    ma: r.ma,
                    k: r.k,
                    rmse_s: r.rmse_s * r.rmse_s,
                });
                counts.push(1);
            }
        }
    }
    for (p, n) in out.iter_mut().zip(counts) {
        p.rmse_s = (p.rmse_s / n as f64).sqrt();
    }
    out
}

/// Long-format CSV `scheme,rectified,ma,k,trial,rmse_s`.
pub fn write_rows_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "scheme,rectified,ma,k,trial,rmse_s")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.scheme, r.rectified, r.ma, r.k, r.trial, fmt12(r.rmse_s))?;
    }
    w.flush()?;
    Ok(())
}
