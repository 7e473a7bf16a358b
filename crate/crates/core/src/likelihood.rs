//! Single-path delay likelihood: profiles, rectification, the Poisson-sum
//! decomposition and profile metrics.
//!
//! The single-path objective at delay `τ` for a direction `(φ, θ)` is
//! `|a(τ)ᴴ y| / ‖a(τ)‖`. Its rectified form replaces `a` by `I ∘ a` with
//! `I_k = f'_k ‖a(τ)‖ / (Ĝ_k(τ) Ĝ_k(τ_ref))`, where `f'_k` is the local
//! frequency step and `Ĝ` the absorption gain clipped at the model floor.
//! The step weight compensates the sampling density of a nonuniform grid and
//! the gain division undoes the absorption tilt that would otherwise widen
//! the mainlobe.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{fmt12, SoundingModel};
use crate::error::{invalid, Error, Result};
use crate::grid::{FrequencyGrid, SchemeParams};

/// Number of delay steps between exact phasor re-evaluations in a scan.
const BLOCK: usize = 64;

/// Minimum number of delay points before a scan is split across threads.
const PAR_THRESHOLD: usize = 4 * BLOCK;

/// Objective variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Weighting {
    Plain,
    /// Rectified objective anchored at `ref_delay`.
    Rectified { ref_delay: f64 },
}

impl Weighting {
    pub fn is_rectified(&self) -> bool {
        matches!(self, Weighting::Rectified { .. })
    }
}

/// Default delay step, `1/(8B)`.
pub fn default_delta(grid: &FrequencyGrid) -> f64 {
    1.0 / (8.0 * grid.bandwidth())
}

/// Delay-domain evaluator of the single-path objective for one direction.
///
/// The observation is first reduced over pointings with the antenna gains of
/// the direction, `z_k = Σ_m g_m y_{m,k}`, after which the objective is a
/// one-dimensional sum over frequency. Scans use a phasor recurrence that is
/// restarted exactly every `BLOCK` steps from the start of the scan, so
/// results do not depend on how the scan is split across threads.
#[derive(Debug, Clone)]
pub struct DelayKernel<'a> {
    freqs: &'a [f64],
    rates: &'a [f64],
    z: Vec<Complex64>,
    /// `Σ_m g_m²`.
    beam_power: f64,
    /// Rectified: `f'_k / Ĝ_k(τ_ref)`.
    weights: Option<Vec<f64>>,
    floor: f64,
    absorbing: bool,
}

#[derive(Clone, Copy)]
enum Mode {
    Lossless,
    Absorbing,
    RectifiedLossless,
    RectifiedAbsorbing,
}

impl<'a> DelayKernel<'a> {
    /// Builds a kernel for observation `y` (stacked `K·M`) toward `(az, el)`.
    pub fn new(model: &'a SoundingModel, y: &[Complex64], az: f64, el: f64, weighting: Weighting) -> Result<Self> {
        if y.len() != model.len() {
            return Err(Error::LengthMismatch {
                expected: model.len(),
                actual: y.len(),
            });
        }
        let k = model.k();
        let gains = model.pointing_gains(az, el);
        let mut z = vec![Complex64::new(0.0, 0.0); k];
        for (m, &g) in gains.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (zk, yk) in z.iter_mut().zip(&y[m * k..(m + 1) * k]) {
                *zk += yk * g;
            }
        }
        let beam_power = gains.iter().map(|g| g * g).sum();
        Self::from_reduced(model, z, beam_power, weighting)
    }

    /// Builds a kernel from an already reduced observation.
    pub fn from_reduced(model: &'a SoundingModel, z: Vec<Complex64>, beam_power: f64, weighting: Weighting) -> Result<Self> {
        let weights = match weighting {
            Weighting::Plain => None,
            Weighting::Rectified { ref_delay } => {
                if !(ref_delay >= 0.0) {
                    return Err(invalid(format!("reference delay must be >= 0, got {ref_delay}")));
                }
                let steps = model.grid.local_steps();
                let g_ref = model.clipped_gains(ref_delay);
                Some(steps.iter().zip(&g_ref).map(|(s, g)| s / g).collect())
            }
        };
        Ok(Self {
            freqs: model.frequencies(),
            rates: model.rates(),
            z,
            beam_power,
            weights,
            floor: model.absorption.floor_linear(),
            absorbing: model.has_absorption(),
        })
    }

    fn mode(&self) -> Mode {
        match (self.weights.is_some(), self.absorbing) {
            (false, false) => Mode::Lossless,
            (false, true) => Mode::Absorbing,
            (true, false) => Mode::RectifiedLossless,
            (true, true) => Mode::RectifiedAbsorbing,
        }
    }

    /// Complex numerator and `‖a(τ)‖²` at one delay.
    fn parts(&self, tau: f64) -> (Complex64, f64) {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut gsum = 0.0;
        for k in 0..self.freqs.len() {
            let g = if self.absorbing { (-self.rates[k] * tau).exp() } else { 1.0 };
            let w = match &self.weights {
                None => g,
                Some(w) => w[k] * g / g.max(self.floor),
            };
            acc += self.z[k] * phasor(self.freqs[k], tau) * w;
            gsum += g * g;
        }
        (acc, gsum * self.beam_power)
    }

    /// Objective at one delay.
    pub fn value(&self, tau: f64) -> f64 {
        let (num, norm2) = self.parts(tau);
        finish(num, norm2, self.weights.is_some())
    }

    /// Complex correlation `a(τ)ᴴ y` (plain weighting regardless of mode).
    pub fn correlation(&self, tau: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..self.freqs.len() {
            let g = if self.absorbing { (-self.rates[k] * tau).exp() } else { 1.0 };
            acc += self.z[k] * phasor(self.freqs[k], tau) * g;
        }
        acc
    }

    /// Objective at `lo + jδ` for `j = 0..n`.
    pub fn scan(&self, lo: f64, delta: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        if n >= PAR_THRESHOLD {
            out.par_chunks_mut(BLOCK)
                .enumerate()
                .for_each(|(b, chunk)| self.scan_block(lo, delta, b * BLOCK, chunk));
        } else {
            for (b, chunk) in out.chunks_mut(BLOCK).enumerate() {
                self.scan_block(lo, delta, b * BLOCK, chunk);
            }
        }
        out
    }

    fn scan_block(&self, lo: f64, delta: f64, start: usize, out: &mut [f64]) {
        let k = self.freqs.len();
        let tau0 = lo + start as f64 * delta;
        let mode = self.mode();
        let mut pr = Vec::with_capacity(k);
        let mut pi = Vec::with_capacity(k);
        let mut rr = Vec::with_capacity(k);
        let mut ri = Vec::with_capacity(k);
        let mut g = Vec::with_capacity(k);
        let mut d = Vec::with_capacity(k);
        for i in 0..k {
            let w = self.weights.as_ref().map_or(1.0, |w| w[i]);
            let p = self.z[i] * phasor(self.freqs[i], tau0) * w;
            pr.push(p.re);
            pi.push(p.im);
            let r = phasor(self.freqs[i], delta);
            rr.push(r.re);
            ri.push(r.im);
            if self.absorbing {
                g.push((-self.rates[i] * tau0).exp());
                d.push((-self.rates[i] * delta).exp());
            }
        }
        let rectified = self.weights.is_some();
        for (j, slot) in out.iter_mut().enumerate() {
            if j > 0 {
                for i in 0..k {
                    let (a, b) = (pr[i], pi[i]);
                    pr[i] = a * rr[i] - b * ri[i];
                    pi[i] = a * ri[i] + b * rr[i];
                }
                if self.absorbing {
                    for i in 0..k {
                        g[i] *= d[i];
                    }
                }
            }
            let (mut sr, mut si, mut gs) = (0.0, 0.0, 0.0);
            match mode {
                Mode::Lossless | Mode::RectifiedLossless => {
                    for i in 0..k {
                        sr += pr[i];
                        si += pi[i];
                    }
                    gs = k as f64;
                }
                Mode::Absorbing => {
                    for i in 0..k {
                        sr += g[i] * pr[i];
                        si += g[i] * pi[i];
                        gs += g[i] * g[i];
                    }
                }
                Mode::RectifiedAbsorbing => {
                    let floor = self.floor;
                    for i in 0..k {
                        let w = g[i] / g[i].max(floor);
                        sr += w * pr[i];
                        si += w * pi[i];
                        gs += g[i] * g[i];
                    }
                }
            }
            *slot = finish(Complex64::new(sr, si), gs * self.beam_power, rectified);
        }
    }
}

fn finish(num: Complex64, norm2: f64, rectified: bool) -> f64 {
    let norm = norm2.sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    if rectified {
        // I carries a factor ‖a‖ that the denominator removes again.
        (num * norm).norm() / norm
    } else {
        num.norm() / norm
    }
}

/// `exp(+j 2π f τ)` with the cycle count reduced before the trigonometry.
#[inline]
pub(crate) fn phasor(f: f64, tau: f64) -> Complex64 {
    let cycles = f * tau;
    let (s, c) = (TAU * (cycles - cycles.round())).sin_cos();
    Complex64::new(c, s)
}

/// Sampled single-path likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodProfile {
    pub delay_grid: Vec<f64>,
    /// Normalized so that the largest value is 1 (all zeros if the input was zero).
    pub values: Vec<f64>,
    /// Peak value before normalization.
    pub normalization: f64,
    pub rectified: bool,
    pub ref_delay: Option<f64>,
}

impl LikelihoodProfile {
    pub fn from_raw(delay_grid: Vec<f64>, raw: Vec<f64>, weighting: Weighting) -> Result<Self> {
        if delay_grid.is_empty() {
            return Err(Error::Empty("delay grid"));
        }
        if delay_grid.len() != raw.len() {
            return Err(Error::LengthMismatch {
                expected: delay_grid.len(),
                actual: raw.len(),
            });
        }
        let peak = raw.iter().copied().fold(0.0, f64::max);
        let values = if peak > 0.0 { raw.iter().map(|v| v / peak).collect() } else { raw };
        let ref_delay = match weighting {
            Weighting::Plain => None,
            Weighting::Rectified { ref_delay } => Some(ref_delay),
        };
        Ok(Self {
            delay_grid,
            values,
            normalization: peak,
            rectified: weighting.is_rectified(),
            ref_delay,
        })
    }

    pub fn delta(&self) -> f64 {
        if self.delay_grid.len() < 2 {
            0.0
        } else {
            self.delay_grid[1] - self.delay_grid[0]
        }
    }

    /// Index of the largest value (first on ties).
    pub fn peak_index(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn peak_delay(&self) -> f64 {
        self.delay_grid[self.peak_index()]
    }

    pub fn values_db(&self) -> Vec<f64> {
        self.values.iter().map(|&v| 20.0 * v.log10()).collect()
    }

    /// Writes `tau_s,value_linear,value_db`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tau_s", "value_linear", "value_db"])?;
        for (t, v) in self.delay_grid.iter().zip(&self.values) {
            w.write_record([fmt12(*t), fmt12(*v), fmt12(20.0 * v.log10())])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform delay grid `lo, lo+δ, …` up to and including `hi` (within rounding).
pub fn delay_grid(lo: f64, hi: f64, delta: f64) -> Result<Vec<f64>> {
    if !(lo >= 0.0) || !(hi > lo) {
        return Err(invalid(format!("delay range must satisfy 0 <= lo < hi, got [{lo}, {hi}]")));
    }
    if !(delta > 0.0) {
        return Err(invalid(format!("delay step must be positive, got {delta}")));
    }
    let n = ((hi - lo) / delta + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|j| lo + j as f64 * delta).collect())
}

fn compute_profile(
    y: &[Complex64],
    model: &SoundingModel,
    az: f64,
    el: f64,
    range: (f64, f64),
    delta: f64,
    weighting: Weighting,
) -> Result<LikelihoodProfile> {
    let grid = delay_grid(range.0, range.1, delta)?;
    let kernel = DelayKernel::new(model, y, az, el, weighting)?;
    let raw = kernel.scan(range.0, delta, grid.len());
    LikelihoodProfile::from_raw(grid, raw, weighting)
}

/// `|aᴴ y| / ‖a‖` over a delay range, for the direction `(est_az, est_el)`.
pub fn profile(
    y: &[Complex64],
    model: &SoundingModel,
    est_az: f64,
    est_el: f64,
    range: (f64, f64),
    delta: f64,
) -> Result<LikelihoodProfile> {
    compute_profile(y, model, est_az, est_el, range, delta, Weighting::Plain)
}

/// Rectified profile anchored at `ref_delay`.
pub fn rectified_profile(
    y: &[Complex64],
    model: &SoundingModel,
    est_az: f64,
    est_el: f64,
    range: (f64, f64),
    delta: f64,
    ref_delay: f64,
) -> Result<LikelihoodProfile> {
    compute_profile(y, model, est_az, est_el, range, delta, Weighting::Rectified { ref_delay })
}

/// Mainlobe width definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WidthKind {
    NullToNull,
    Minus3Db,
}

/// Mainlobe width measured outward from the peak bin.
pub fn mainlobe_width(p: &LikelihoodProfile, kind: WidthKind) -> Result<f64> {
    let v = &p.values;
    let n = v.len();
    let i0 = p.peak_index();
    if n < 3 || v[i0] <= 0.0 || v.iter().all(|&x| x == v[i0]) {
        return Err(Error::NoStructure("peak"));
    }
    match kind {
        WidthKind::NullToNull => {
            let right = (i0 + 1..n - 1).find(|&i| v[i] <= v[i - 1] && v[i] <= v[i + 1] && v[i] < v[i0]);
            let left = (1..i0).rev().find(|&i| v[i] <= v[i - 1] && v[i] <= v[i + 1] && v[i] < v[i0]);
            match (left, right) {
                (Some(l), Some(r)) => Ok(p.delay_grid[r] - p.delay_grid[l]),
                _ => Err(Error::NoStructure("mainlobe nulls")),
            }
        }
        WidthKind::Minus3Db => {
            let level = v[i0] * 10f64.powf(-3.0 / 20.0);
            let right = (i0 + 1..n).find(|&i| v[i] < level).map(|i| {
                let t = (v[i - 1] - level) / (v[i - 1] - v[i]);
                p.delay_grid[i - 1] + t * (p.delay_grid[i] - p.delay_grid[i - 1])
            });
            let left = (0..i0).rev().find(|&i| v[i] < level).map(|i| {
                let t = (v[i + 1] - level) / (v[i + 1] - v[i]);
                p.delay_grid[i + 1] - t * (p.delay_grid[i + 1] - p.delay_grid[i])
            });
            match (left, right) {
                (Some(l), Some(r)) => Ok(r - l),
                _ => Err(Error::NoStructure("-3 dB crossings")),
            }
        }
    }
}

/// Sidelobe summary outside an exclusion window around the peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidelobeMetrics {
    /// Largest value outside the window, dB relative to the peak.
    pub max_sidelobe_db: f64,
    /// Median level outside the window, dB relative to the peak.
    pub floor_db: f64,
    /// Delays of local maxima outside the window, strongest first.
    pub positions: Vec<f64>,
}

pub fn sidelobe_metrics(p: &LikelihoodProfile, exclusion: f64) -> Result<SidelobeMetrics> {
    let i0 = p.peak_index();
    let t0 = p.delay_grid[i0];
    let peak = p.values[i0];
    if peak <= 0.0 {
        return Err(Error::NoStructure("peak"));
    }
    let outside: Vec<usize> = (0..p.values.len())
        .filter(|&i| (p.delay_grid[i] - t0).abs() > exclusion)
        .collect();
    if outside.is_empty() {
        return Err(invalid("exclusion window covers the entire profile"));
    }
    let db = |i: usize| 20.0 * (p.values[i] / peak).log10();
    let mut levels: Vec<f64> = outside.iter().map(|&i| db(i)).collect();
    let max_sidelobe_db = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    levels.sort_by(f64::total_cmp);
    let mid = levels.len() / 2;
    let floor_db = if levels.len() % 2 == 1 {
        levels[mid]
    } else {
        0.5 * (levels[mid - 1] + levels[mid])
    };
    let v = &p.values;
    let mut maxima: Vec<usize> = outside
        .iter()
        .copied()
        .filter(|&i| i > 0 && i + 1 < v.len() && v[i] >= v[i - 1] && v[i] > v[i + 1])
        .collect();
    maxima.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    Ok(SidelobeMetrics {
        max_sidelobe_db,
        floor_db,
        positions: maxima.iter().map(|&i| p.delay_grid[i]).collect(),
    })
}

/// Delays of local maxima (with their dB level) outside `exclusion`.
pub fn local_maxima(p: &LikelihoodProfile, exclusion: f64) -> Vec<(f64, f64)> {
    let i0 = p.peak_index();
    let t0 = p.delay_grid[i0];
    let v = &p.values;
    (1..v.len().saturating_sub(1))
        .filter(|&i| (p.delay_grid[i] - t0).abs() > exclusion && v[i] >= v[i - 1] && v[i] > v[i + 1])
        .map(|i| (p.delay_grid[i] - t0, 20.0 * (v[i] / v[i0]).log10()))
        .collect()
}

/// Noiseless single path at zero delay, no absorption, one isotropic pointing.
pub fn ambiguity_profile(grid: &FrequencyGrid, horizon: f64, delta: f64) -> Result<LikelihoodProfile> {
    let model = SoundingModel::single(grid.clone(), crate::absorption::AbsorptionModel::none())?;
    let y = vec![Complex64::new(1.0, 0.0); grid.k_count()];
    profile(&y, &model, 0.0, std::f64::consts::FRAC_PI_2, (0.0, horizon), delta)
}

/// Smallest delay offset beyond the mainlobe at which the ambiguity profile
/// comes back within `threshold_db` of its peak, or `None` within `horizon`.
///
/// The returned offset is the interpolated top of the first lobe that
/// crosses the threshold.
pub fn empirical_udr(grid: &FrequencyGrid, horizon: f64, threshold_db: f64, delta: Option<f64>) -> Result<Option<f64>> {
    let delta = delta.unwrap_or_else(|| default_delta(grid));
    let p = ambiguity_profile(grid, horizon, delta)?;
    let v = &p.values;
    let n = v.len();
    let Some(null) = (1..n.saturating_sub(1)).find(|&i| v[i] <= v[i - 1] && v[i] <= v[i + 1]) else {
        return Ok(None);
    };
    let level = 10f64.powf(threshold_db / 20.0);
    let Some(mut i) = (null..n).find(|&i| v[i] >= level) else {
        return Ok(None);
    };
    while i + 1 < n && v[i + 1] > v[i] {
        i += 1;
    }
    let mut t = p.delay_grid[i];
    if i + 1 < n {
        let (a, b, c) = (v[i - 1], v[i], v[i + 1]);
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            t += 0.5 * (a - c) / den * delta;
        }
    }
    Ok(Some(t))
}

/// Predicted delay band of one family of ambiguous lobes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidelobePrediction {
    pub order: i64,
    /// Offset band relative to the true delay, seconds.
    pub band: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidelobeBands {
    pub bands: Vec<SidelobePrediction>,
    /// True when the smallest step is at least half the largest, so
    /// consecutive bands do not overlap.
    pub non_overlapping: bool,
}

impl SidelobeBands {
    pub fn contains(&self, offset: f64) -> bool {
        let tol = 1e-12 * offset.abs().max(1e-9);
        self.bands.iter().any(|b| offset >= b.band.0 - tol && offset <= b.band.1 + tol)
    }
}

/// Smallest and largest local frequency step of a grid.
pub fn step_range(grid: &FrequencyGrid) -> (f64, f64) {
    match *grid.params() {
        SchemeParams::Pfs { kappa, .. } => (kappa, 2.0 * kappa),
        SchemeParams::Ufs { delta_f_hz } => (delta_f_hz, delta_f_hz),
        _ => grid.step_extrema(),
    }
}

/// Lobe bands `m / f'` for `1 <= |m| <= m_max`.
pub fn predict_sidelobe_bands(grid: &FrequencyGrid, m_max: u32) -> Result<SidelobeBands> {
    if m_max < 1 {
        return Err(invalid("m_max must be at least 1"));
    }
    let (lo, hi) = step_range(grid);
    let mut bands = Vec::new();
    for m in 1..=m_max as i64 {
        let mf = m as f64;
        bands.push(SidelobePrediction {
            order: -m,
            band: (-mf / lo, -mf / hi),
        });
        bands.push(SidelobePrediction {
            order: m,
            band: (mf / hi, mf / lo),
        });
    }
    bands.sort_by_key(|b| b.order);
    Ok(SidelobeBands {
        bands,
        non_overlapping: lo >= hi / 2.0 * (1.0 - 1e-12),
    })
}

/// Weighting of the continuous-index integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoissonWeighting {
    Plain,
    /// Multiply by `f'(v)` and divide out the (clipped) absorption gains.
    Rectified,
}

/// Continuous-index single-path integrand `h(v; τ)` for one probe.
struct PoissonSetup<'a> {
    grid: &'a FrequencyGrid,
    absorption: &'a crate::absorption::AbsorptionModel,
    tau_true: f64,
    weighting: PoissonWeighting,
}

impl PoissonSetup<'_> {
    fn h(&self, v: f64, tau: f64, inv_norm: f64) -> Result<Complex64> {
        let f = self.grid.analytic_frequency(v)?;
        let g = self.absorption.gain(f, tau)?;
        let g_true = self.absorption.gain(f, self.tau_true)?;
        let amp = match self.weighting {
            PoissonWeighting::Plain => g * g_true * inv_norm,
            PoissonWeighting::Rectified => {
                let floor = self.absorption.floor_linear();
                self.grid.analytic_step(v)? * g * g_true / (g.max(floor) * g_true.max(floor))
            }
        };
        Ok(phasor(f, tau - self.tau_true) * amp)
    }

    fn inv_norm(&self, tau: f64) -> Result<f64> {
        let mut s = 0.0;
        for &f in self.grid.frequencies() {
            let g = self.absorption.gain(f, tau)?;
            s += g * g;
        }
        Ok(1.0 / s.sqrt())
    }
}

/// Component `s_m(τ) = ∫_1^K h(v; τ) e^{-j2πmv} dv` of the Poisson-sum
/// decomposition of the single-path response of a grid with an analytic
/// frequency law, sampled at each delay in `taus`.
///
/// `h(v; τ) = G(f(v), τ) G(f(v), τ_true) e^{j2π f(v)(τ - τ_true)} / ‖a(τ)‖`
/// for plain weighting.
pub fn poisson_component(
    grid: &FrequencyGrid,
    m: i64,
    taus: &[f64],
    absorption: &crate::absorption::AbsorptionModel,
    tau_true: f64,
    weighting: PoissonWeighting,
) -> Result<Vec<Complex64>> {
    grid.analytic_frequency(1.0)?;
    let setup = PoissonSetup {
        grid,
        absorption,
        tau_true,
        weighting,
    };
    let k = grid.k_count() as f64;
    taus.par_iter()
        .map(|&tau| {
            let inv = setup.inv_norm(tau)?;
            let mut err = None;
            let integrand = |v: f64| match setup.h(v, tau, inv) {
                Ok(h) => h * phasor(-(m as f64), v),
                Err(e) => {
                    err.get_or_insert(e);
                    Complex64::new(0.0, 0.0)
                }
            };
            // Absolute floor relative to the integrand scale so that
            // components near a null still terminate.
            let scale = (setup.h(1.0, tau, inv)?.norm() + setup.h(k, tau, inv)?.norm()) * 0.5 * (k - 1.0);
            let val = quadrature::integrate(integrand, 1.0, k, grid.k_count() - 1, 1e-8, 1e-10 * scale);
            match err {
                Some(e) => Err(e),
                None => Ok(val),
            }
        })
        .collect()
}

/// Half-weight endpoint term `(h(1) + h(K))/2` that completes the Poisson
/// identity `Σ_k h(k) = Σ_m s_m + (h(1) + h(K))/2` for an integrand cut off
/// at the first and last probe.
pub fn poisson_endpoint_term(
    grid: &FrequencyGrid,
    taus: &[f64],
    absorption: &crate::absorption::AbsorptionModel,
    tau_true: f64,
    weighting: PoissonWeighting,
) -> Result<Vec<Complex64>> {
    let setup = PoissonSetup {
        grid,
        absorption,
        tau_true,
        weighting,
    };
    let k = grid.k_count() as f64;
    taus.iter()
        .map(|&tau| {
            let inv = setup.inv_norm(tau)?;
            Ok((setup.h(1.0, tau, inv)? + setup.h(k, tau, inv)?) * 0.5)
        })
        .collect()
}

mod quadrature {
    //! Adaptive Gauss–Kronrod (7/15) integration of complex integrands.

    use num_complex::Complex64;

    const XGK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WGK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_728_0,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];

    fn gk15<F: FnMut(f64) -> Complex64>(f: &mut F, a: f64, b: f64) -> (Complex64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut kron = fc * WGK[7];
        let mut gauss = fc * WG[3];
        for j in 0..7 {
            let x = h * XGK[j];
            let s = f(c - x) + f(c + x);
            kron += s * WGK[j];
            if j % 2 == 1 {
                gauss += s * WG[j / 2];
            }
        }
        ((kron * h), ((kron - gauss) * h).norm())
    }

    /// Integrates `f` over `[a, b]`, starting from `pieces` equal panels and
    /// bisecting the worst panel until the error estimate falls below
    /// `max(abs_tol, rel_tol·|I|)`.
    pub fn integrate<F: FnMut(f64) -> Complex64>(mut f: F, a: f64, b: f64, pieces: usize, rel_tol: f64, abs_tol: f64) -> Complex64 {
        let pieces = pieces.max(1);
        let mut panels: Vec<(f64, f64, Complex64, f64)> = (0..pieces)
            .map(|i| {
                let lo = a + (b - a) * i as f64 / pieces as f64;
                let hi = a + (b - a) * (i + 1) as f64 / pieces as f64;
                let (v, e) = gk15(&mut f, lo, hi);
                (lo, hi, v, e)
            })
            .collect();
        let mut total: Complex64 = panels.iter().map(|p| p.2).sum();
        let mut err: f64 = panels.iter().map(|p| p.3).sum();
        for _ in 0..10_000 {
            if err <= abs_tol.max(rel_tol * total.norm()) {
                break;
            }
            let (worst, _) = panels
                .iter()
                .enumerate()
                .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
                .expect("non-empty");
            let (lo, hi, v, e) = panels.swap_remove(worst);
            let mid = 0.5 * (lo + hi);
            let (v1, e1) = gk15(&mut f, lo, mid);
            let (v2, e2) = gk15(&mut f, mid, hi);
            total += v1 + v2 - v;
            err += e1 + e2 - e;
            panels.push((lo, mid, v1, e1));
            panels.push((mid, hi, v2, e2));
        }
        panels.sort_by(|x, y| x.0.total_cmp(&y.0));
        panels.iter().map(|p| p.2).sum()
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absorption::AbsorptionModel;
    use crate::channel::{azimuth_ring, AntennaPattern, PathParams};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn single_path(model: &SoundingModel, tau: f64) -> Vec<Complex64> {
        model
            .clean_response(&[PathParams::new(Complex64::new(1.0, 0.0), tau)])
            .unwrap()
    }

    /// Direct oracle: steering vectors built element by element.
    fn direct_value(model: &SoundingModel, y: &[Complex64], tau: f64, w: Weighting) -> f64 {
        let a = model.steering_vector(tau, 0.0, FRAC_PI_2).unwrap();
        let norm = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let steps = model.grid.local_steps();
        let floor = model.absorption.floor_linear();
        let k = model.k();
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, (ai, yi)) in a.iter().zip(y).enumerate() {
            let f = model.frequencies()[i % k];
            let weight = match w {
                Weighting::Plain => 1.0,
                Weighting::Rectified { ref_delay } => {
                    let g = model.absorption.gain(f, tau).unwrap().max(floor);
                    let gr = model.absorption.gain(f, ref_delay).unwrap().max(floor);
                    steps[i % k] * norm / (g * gr)
                }
            };
            acc += (ai * weight).conj() * yi;
        }
        acc.norm() / norm
    }

    #[test]
    fn scan_matches_direct_oracle() {
        let grid = FrequencyGrid::pfs(370e9, 20e9, 50).unwrap();
        for absn in [AbsorptionModel::none(), AbsorptionModel::default_water().with_floor_db(-3.0)] {
            let model = SoundingModel::single(grid.clone(), absn).unwrap();
            let y = model
                .clean_response(&[
                    PathParams::new(Complex64::new(1.0, 0.5), 40e-9),
                    PathParams::new(Complex64::new(-0.2, 0.1), 130e-9),
                ])
                .unwrap();
            for w in [Weighting::Plain, Weighting::Rectified { ref_delay: 40e-9 }] {
                let kernel = DelayKernel::new(&model, &y, 0.0, FRAC_PI_2, w).unwrap();
                let delta = 0.37e-9;
                let scan = kernel.scan(1e-9, delta, 600);
                for j in (0..600).step_by(7) {
                    let tau = 1e-9 + j as f64 * delta;
                    let want = direct_value(&model, &y, tau, w);
                    assert!((scan[j] - want).abs() <= 1e-9 * want.max(1e-3), "{w:?} j={j}: {} vs {want}", scan[j]);
                    assert!((kernel.value(tau) - want).abs() <= 1e-9 * want.max(1e-3));
                }
            }
        }
    }

    #[test]
    fn scan_is_independent_of_chunking() {
        let grid = FrequencyGrid::pfs(370e9, 20e9, 80).unwrap();
        let model = SoundingModel::single(grid, AbsorptionModel::default_water()).unwrap();
        let y = single_path(&model, 70e-9);
        let kernel = DelayKernel::new(&model, &y, 0.0, FRAC_PI_2, Weighting::Plain).unwrap();
        let delta = 1e-11;
        let full = kernel.scan(0.0, delta, 5000);
        let mut pieces = Vec::new();
        for b in 0..(5000 / BLOCK + 1) {
            let start = b * BLOCK;
            let len = BLOCK.min(5000 - start);
            let mut chunk = vec![0.0; len];
            kernel.scan_block(0.0, delta, start, &mut chunk);
            pieces.extend(chunk);
        }
        assert_eq!(full, pieces);
        let serial = kernel.scan(0.0, delta, PAR_THRESHOLD - 1);
        assert_eq!(&full[..PAR_THRESHOLD - 1], &serial[..]);
    }

    #[test]
    fn ufs_dirichlet_nulls_and_ambiguities() {
        let b = 10e9;
        let grid = FrequencyGrid::ufs(380e9, b, 35).unwrap();
        let model = SoundingModel::single(grid, AbsorptionModel::none()).unwrap();
        let tau = 20e-9;
        let y = single_path(&model, tau);
        let delta = 1.0 / (8.0 * b);
        let p = profile(&y, &model, 0.0, FRAC_PI_2, (0.0, 30e-9), delta).unwrap();
        let w = mainlobe_width(&p, WidthKind::NullToNull).unwrap();
        assert!((w - 2.0 / b).abs() <= delta + 1e-15, "width {w}");
        assert!(p.values[(tau / delta).round() as usize] > 1.0 - 1e-9);
        // ambiguous copies at multiples of 1/Δf with the mainlobe height
        let step = 34.0 / b;
        for n in [-5i32, -1, 1, 2] {
            let t = tau + n as f64 * step;
            let i = ((t / delta).round()) as usize;
            assert!(p.values[i] > 1.0 - 1e-9, "n={n} value {}", p.values[i]);
        }
    }

    #[test]
    fn rectified_equals_plain_on_uniform_grid() {
        let grid = FrequencyGrid::ufs(370e9, 20e9, 40).unwrap();
        let model = SoundingModel::single(grid, AbsorptionModel::none()).unwrap();
        let y = single_path(&model, 33e-9);
        let a = profile(&y, &model, 0.0, FRAC_PI_2, (0.0, 60e-9), 1e-10).unwrap();
        let b = rectified_profile(&y, &model, 0.0, FRAC_PI_2, (0.0, 60e-9), 1e-10, 33e-9).unwrap();
        for (x, z) in a.values.iter().zip(&b.values) {
            assert!((x - z).abs() < 1e-9);
        }
        assert!(b.rectified && b.ref_delay == Some(33e-9));
    }

    #[test]
    fn sinc_minus3db_width() {
        // A very dense uniform grid approximates a continuous band: sinc profile.
        let b = 1e9;
        let grid = FrequencyGrid::ufs(10e9, b, 2001).unwrap();
        let model = SoundingModel::single(grid, AbsorptionModel::none()).unwrap();
        let y = single_path(&model, 50e-9);
        let p = profile(&y, &model, 0.0, FRAC_PI_2, (45e-9, 55e-9), 1e-12).unwrap();
        let w = mainlobe_width(&p, WidthKind::Minus3Db).unwrap();
        // |sinc(B t)| = 10^(-3/20) at B t = 0.4429…
        let half = bisect(|x| (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) - 10f64.powf(-0.15), 0.1, 0.9);
        assert!((w * b - 2.0 * half).abs() < 0.05 * 2.0 * half, "w·B = {}", w * b);
        assert!((2.0 * half - 0.886).abs() < 0.01);
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn flat_profile_has_no_structure() {
        let p = LikelihoodProfile::from_raw(vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4], Weighting::Plain).unwrap();
        assert!(matches!(mainlobe_width(&p, WidthKind::NullToNull), Err(Error::NoStructure(_))));
        assert!(LikelihoodProfile::from_raw(vec![], vec![], Weighting::Plain).is_err());
        assert!(delay_grid(5.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn sidelobe_metrics_exclusion_checks() {
        let p = LikelihoodProfile::from_raw(vec![0.0, 1.0, 2.0], vec![0.1, 1.0, 0.1], Weighting::Plain).unwrap();
        assert!(sidelobe_metrics(&p, 5.0).is_err());
        let m = sidelobe_metrics(&p, 0.5).unwrap();
        assert!((m.max_sidelobe_db + 20.0).abs() < 1e-12);
    }

    #[test]
    fn udr_examples() {
        let b = 10e9;
        let delta = 1.0 / (8.0 * b);
        let ufs = FrequencyGrid::ufs(380e9, b, 35).unwrap();
        let u = empirical_udr(&ufs, 10e-9, -1.0, None).unwrap().unwrap();
        assert!((u - 3.4e-9).abs() <= delta);
        let cfs = FrequencyGrid::cfs_auto(380e9, b, 35).unwrap();
        let c = empirical_udr(&cfs, 70e-9, -1.0, None).unwrap().unwrap();
        assert!((c - 30.6e-9).abs() <= delta, "cfs udr {c}");
    }

    #[test]
    fn band_predictions() {
        let pfs = FrequencyGrid::pfs(370e9, 10e9, 35).unwrap();
        let SchemeParams::Pfs { kappa, .. } = *pfs.params() else { unreachable!() };
        let bands = predict_sidelobe_bands(&pfs, 3).unwrap();
        assert!(bands.non_overlapping);
        let b1 = bands.bands.iter().find(|b| b.order == 1).unwrap().band;
        let b2 = bands.bands.iter().find(|b| b.order == 2).unwrap().band;
        assert!((b1.0 - 1.0 / (2.0 * kappa)).abs() < 1e-20);
        assert!((b1.1 - 1.0 / kappa).abs() < 1e-20);
        assert!((b1.1 - b2.0).abs() <= 1e-12 * b1.1);
        let ufs = FrequencyGrid::ufs(370e9, 10e9, 35).unwrap();
        let ub = predict_sidelobe_bands(&ufs, 2).unwrap();
        for b in &ub.bands {
            assert!((b.band.0 - b.band.1).abs() < 1e-21);
        }
        assert!(predict_sidelobe_bands(&ufs, 0).is_err());
    }

    #[test]
    fn poisson_ufs_lobes_sit_at_period() {
        let b = 10e9;
        let grid = FrequencyGrid::ufs(370e9, b, 21).unwrap();
        let df = b / 20.0;
        let taus: Vec<f64> = (-40..=40).map(|i| 1.0 / df + i as f64 * 1e-11).collect();
        let s1 = poisson_component(&grid, 1, &taus, &AbsorptionModel::none(), 0.0, PoissonWeighting::Plain).unwrap();
        let (imax, _) = s1
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        assert_eq!(imax, 40);
    }

    #[test]
    fn poisson_m0_rectified_is_band_sinc() {
        let b = 10e9;
        let grid = FrequencyGrid::pfs(370e9, b, 35).unwrap();
        let tau_true = 5e-9;
        let taus: Vec<f64> = (-20..=20).map(|i| tau_true + i as f64 * 0.02e-9).collect();
        let s0 = poisson_component(&grid, 0, &taus, &AbsorptionModel::none(), tau_true, PoissonWeighting::Rectified).unwrap();
        for (s, &t) in s0.iter().zip(&taus) {
            let x = std::f64::consts::PI * b * (t - tau_true);
            let sinc = if x == 0.0 { 1.0 } else { x.sin() / x };
            assert!((s.norm() / b - sinc.abs()).abs() < 1e-6, "t={t}: {} vs {sinc}", s.norm() / b);
        }
    }

    #[test]
    fn pointing_reduction_matches_full_vectors() {
        let grid = FrequencyGrid::pfs(370e9, 20e9, 30).unwrap();
        let horn = AntennaPattern::GaussianHorn {
            hpbw_rad: 0.6,
            boresight_gain: 1.0,
        };
        let model = SoundingModel::new(grid, azimuth_ring(6), horn, AbsorptionModel::default_water()).unwrap();
        let y = model
            .clean_response(&[PathParams::new(Complex64::new(0.4, 0.1), 60e-9).with_direction(1.1, FRAC_PI_2)])
            .unwrap();
        let kernel = DelayKernel::new(&model, &y, 1.0, FRAC_PI_2, Weighting::Plain).unwrap();
        for tau in [10e-9, 60e-9, 61.3e-9] {
            let a = model.steering_vector(tau, 1.0, FRAC_PI_2).unwrap();
            let num: Complex64 = a.iter().zip(&y).map(|(ai, yi)| ai.conj() * yi).sum();
            let norm = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!((kernel.value(tau) - num.norm() / norm).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn peak_at_true_delay(scheme in 0usize..4, tau in 5e-9..150e-9f64, absorbing in any::<bool>()) {
            let b = 10e9;
            let grid = match scheme {
                0 => FrequencyGrid::ufs(370e9, b, 201).unwrap(),
                1 => FrequencyGrid::cfs_auto(370e9, b, 41).unwrap(),
                2 => FrequencyGrid::nfs_auto(370e9, b, 40).unwrap(),
                _ => FrequencyGrid::pfs(370e9, b, 60).unwrap(),
            };
            let absn = if absorbing { AbsorptionModel::default_water() } else { AbsorptionModel::none() };
            let model = SoundingModel::single(grid, absn).unwrap();
            let y = single_path(&model, tau);
            let delta = 1.0 / (8.0 * b);
            let lo = (tau - 2e-9).max(0.0);
            let p = profile(&y, &model, 0.0, FRAC_PI_2, (lo, tau + 2e-9), delta).unwrap();
            prop_assert!((p.peak_delay() - tau).abs() <= delta);
        }

        #[test]
        fn normalized_profile_is_scale_invariant(re in -3.0..3.0f64, im in -3.0..3.0f64) {
            prop_assume!(re.abs() + im.abs() > 1e-3);
            let c = Complex64::new(re, im);
            let grid = FrequencyGrid::pfs(370e9, 10e9, 40).unwrap();
            let model = SoundingModel::single(grid, AbsorptionModel::default_water()).unwrap();
            let y = single_path(&model, 80e-9);
            let ys: Vec<Complex64> = y.iter().map(|v| v * c).collect();
            let p = profile(&y, &model, 0.0, FRAC_PI_2, (60e-9, 100e-9), 1e-10).unwrap();
            let q = profile(&ys, &model, 0.0, FRAC_PI_2, (60e-9, 100e-9), 1e-10).unwrap();
            for (a, b) in p.values.iter().zip(&q.values) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
