//! Post-processing: impulse responses from the adjoint nonuniform DFT,
//! power-delay-angular profiles, delay RMSE scoring, path loss, RMS delay
//! spread and empirical CDFs.
//!
//! The impulse response is the raw adjoint `h(τ) = Σ_k y_k exp(+j2πf_kτ)`
//! with no `1/K` normalization. On a uniform grid this is the inverse DFT
//! times `K`, up to the phase of the start frequency.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{fmt12, MeasurementSet, PathParams, Pointing};
use crate::error::{invalid, Error, Result};
use crate::grid::FrequencyGrid;
use crate::likelihood::phasor;

/// Delay steps between exact phasor re-evaluations.
const BLOCK: usize = 64;

/// Impulse-response power on a uniform delay grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CirProfile {
    pub delay_grid: Vec<f64>,
    /// `20·log10|h|`, floored at the smallest positive double so that
    /// all-zero bins stay finite.
    pub power_db: Vec<f64>,
    pub response: Vec<Complex64>,
    /// `None` for an aggregate profile.
    pub pointing: Option<Pointing>,
}

impl CirProfile {
    /// Index of the strongest bin.
    pub fn peak_index(&self) -> usize {
        let mut j = 0;
        for (i, v) in self.response.iter().enumerate() {
            if v.norm() > self.response[j].norm() {
                j = i;
            }
        }
        j
    }
}

fn to_db(h: Complex64) -> f64 {
    20.0 * h.norm().max(f64::MIN_POSITIVE).log10()
}

fn uniform_step(delay_grid: &[f64]) -> Result<f64> {
    match delay_grid.len() {
        0 => Err(Error::Empty("delay grid")),
        1 => Ok(0.0),
        n => {
            let step = (delay_grid[n - 1] - delay_grid[0]) / (n - 1) as f64;
            if !(step > 0.0) {
                return Err(invalid("delay grid must be increasing"));
            }
            let tol = 1e-6 * step;
            for (j, &t) in delay_grid.iter().enumerate() {
                if (t - (delay_grid[0] + j as f64 * step)).abs() > tol {
                    return Err(invalid("delay grid must be uniform"));
                }
            }
            Ok(step)
        }
    }
}

/// Adjoint sum at one delay.
pub fn adjoint_at(samples: &[Complex64], freqs: &[f64], tau: f64) -> Complex64 {
    samples.iter().zip(freqs).map(|(y, &f)| y * phasor(f, tau)).sum()
}

/// Impulse response of one pointing's samples on a uniform delay grid.
pub fn adjoint_nudft_cir(samples: &[Complex64], grid: &FrequencyGrid, delay_grid: &[f64]) -> Result<CirProfile> {
    let freqs = grid.frequencies();
    if samples.len() != freqs.len() {
        return Err(Error::LengthMismatch {
            expected: freqs.len(),
            actual: samples.len(),
        });
    }
    let step = uniform_step(delay_grid)?;
    let lo = delay_grid[0];
    let mut response = vec![Complex64::new(0.0, 0.0); delay_grid.len()];
    response.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
        let tau0 = lo + (b * BLOCK) as f64 * step;
        let mut p: Vec<Complex64> = samples.iter().zip(freqs).map(|(y, &f)| y * phasor(f, tau0)).collect();
        let r: Vec<Complex64> = freqs.iter().map(|&f| phasor(f, step)).collect();
        for (j, slot) in chunk.iter_mut().enumerate() {
            if j > 0 {
                for (pi, ri) in p.iter_mut().zip(&r) {
                    *pi *= ri;
                }
            }
            *slot = p.iter().sum();
        }
    });
    Ok(CirProfile {
        delay_grid: delay_grid.to_vec(),
        power_db: response.iter().map(|&h| to_db(h)).collect(),
        response,
        pointing: None,
    })
}

/// One impulse response per pointing.
pub fn pdap(measurement: &MeasurementSet, delay_grid: &[f64]) -> Result<Vec<CirProfile>> {
    measurement
        .pointings
        .par_iter()
        .enumerate()
        .map(|(m, &p)| {
            let mut cir = adjoint_nudft_cir(measurement.pointing_samples(m), &measurement.grid, delay_grid)?;
            cir.pointing = Some(p);
            Ok(cir)
        })
        .collect()
}

/// Writes `pointing_az_deg,tau_s,power_db`.
pub fn write_pdap_csv(profiles: &[CirProfile], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "pointing_az_deg,tau_s,power_db")?;
    for p in profiles {
        let az = p.pointing.map_or(0.0, |q| q.az.to_degrees());
        for (t, db) in p.delay_grid.iter().zip(&p.power_db) {
            writeln!(w, "{},{},{}", fmt12(az), fmt12(*t), fmt12(*db))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn by_amplitude(paths: &[PathParams]) -> Vec<PathParams> {
    let mut v = paths.to_vec();
    v.sort_by(|a, b| b.amplitude.norm().total_cmp(&a.amplitude.norm()).then(a.delay.total_cmp(&b.delay)));
    v
}

/// Delay RMSE over the `top_n` strongest paths, pairing estimates and truth
/// by descending-amplitude rank.
pub fn delay_rmse(estimates: &[PathParams], truth: &[PathParams], top_n: usize) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Empty("estimates"));
    }
    if truth.is_empty() {
        return Err(Error::Empty("truth"));
    }
    if top_n == 0 || top_n > estimates.len().min(truth.len()) {
        return Err(invalid(format!(
            "top_n = {top_n} must be in 1..={}",
            estimates.len().min(truth.len())
        )));
    }
    let e = by_amplitude(estimates);
    let t = by_amplitude(truth);
    let mse = e.iter().zip(&t).take(top_n).map(|(a, b)| (a.delay - b.delay).powi(2)).sum::<f64>() / top_n as f64;
    Ok(mse.sqrt())
}

/// Path loss and RMS delay spread of a set of paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    /// `-10·log10 Σ|α|²`.
    pub path_loss_db: f64,
    pub rms_delay_spread_s: f64,
}

pub fn channel_stats(paths: &[PathParams]) -> Result<ChannelStats> {
    let total: f64 = paths.iter().map(|p| p.amplitude.norm_sqr()).sum();
    if !(total > 0.0) {
        return Err(invalid("channel stats need at least one path with positive power"));
    }
    let mean = paths.iter().map(|p| p.amplitude.norm_sqr() * p.delay).sum::<f64>() / total;
    // central moment form avoids cancellation between τ² and mean²
    let var = paths.iter().map(|p| p.amplitude.norm_sqr() * (p.delay - mean).powi(2)).sum::<f64>() / total;
    Ok(ChannelStats {
        path_loss_db: -10.0 * total.log10(),
        rms_delay_spread_s: var.max(0.0).sqrt(),
    })
}

/// Empirical CDF: sorted samples with cumulative probability `i/n`.
pub fn cdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::Empty("cdf input"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid("cdf input contains NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect())
}

pub fn write_cdf_csv(points: &[(f64, f64)], header: &str, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{header},probability")?;
    for (x, p) in points {
        writeln!(w, "{},{}", fmt12(*x), fmt12(*p))?;
    }
    w.flush()?;
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Multipath components read off an impulse response: local maxima more
/// than `threshold_db` above the median bin power. Each peak is refined by
/// golden-section search of `|h|` within one bin, and its amplitude is
/// `h(τ̂)/K`.
pub fn pick_peaks(samples: &[Complex64], grid: &FrequencyGrid, cir: &CirProfile, threshold_db: f64) -> Result<Vec<PathParams>> {
    let n = cir.response.len();
    if n < 3 {
        return Err(invalid("peak picking needs at least three delay bins"));
    }
    if samples.len() != grid.k_count() {
        return Err(Error::LengthMismatch {
            expected: grid.k_count(),
            actual: samples.len(),
        });
    }
    let step = uniform_step(&cir.delay_grid)?;
    let floor = median(cir.power_db.clone());
    let freqs = grid.frequencies();
    let k = freqs.len() as f64;
    let mut out = Vec::new();
    for j in 1..n - 1 {
        let p = cir.power_db[j];
        if p > floor + threshold_db && p > cir.power_db[j - 1] && p >= cir.power_db[j + 1] {
            let t = cir.delay_grid[j];
            let (tau, _) = golden_peak(|x| adjoint_at(samples, freqs, x).norm(), t - step, t + step, step * 1e-6);
            let h = adjoint_at(samples, freqs, tau);
            out.push(PathParams::new(h / k, tau.max(0.0)));
        }
    }
    Ok(out)
}

fn golden_peak(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
