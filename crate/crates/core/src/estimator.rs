//! SAGE and likelihood-rectified SAGE (LR-SAGE) multipath extraction.
//!
//! Each path update forms the interference-cancelled target signal
//! (E-step), maximizes the single-path objective over delay and direction
//! (M-step) and re-projects the amplitude. LR-SAGE differs only in the
//! M-step objective, which is the rectified likelihood anchored at the
//! path's previous delay estimate.
//!
//! Initialization is serial interference cancellation: paths are added one
//! at a time from the residual, and after each addition the paths found so
//! far are refined with a few SAGE sweeps so that early errors do not leak
//! into later detections.
//!
//! Every accepted update is checked against the plain single-path objective
//! of the current target signal and rejected if it would lower it. This
//! keeps the data likelihood non-decreasing for both variants. The
//! convergence metric is the explained energy `‖y‖² - ‖y - Σ α̂ a‖²`.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{MeasurementSet, PathParams, SoundingModel};
use crate::error::{invalid, Error, Result};
use crate::likelihood::{default_delta, DelayKernel, Weighting};

/// Direction grids for the alternating angle search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleSearch {
    pub azimuths_rad: Vec<f64>,
    #[serde(default = "horizon_only")]
    pub elevations_rad: Vec<f64>,
}

fn horizon_only() -> Vec<f64> {
    vec![FRAC_PI_2]
}

impl AngleSearch {
    /// `n` azimuths evenly spread on the horizon.
    pub fn azimuth_ring(n: usize) -> Self {
        Self {
            azimuths_rad: (0..n).map(|i| std::f64::consts::TAU * i as f64 / n as f64).collect(),
            elevations_rad: horizon_only(),
        }
    }
}

/// Estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SageConfig {
    pub n_paths: usize,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_eps")]
    pub convergence_eps: f64,
    /// Delay search range, seconds.
    pub delay_lo: f64,
    pub delay_hi: f64,
    /// Coarse scan step; `1/(8B)` when absent.
    #[serde(default)]
    pub delay_step: Option<f64>,
    #[serde(default = "default_true")]
    pub refine: bool,
    #[serde(default)]
    pub rectified: bool,
    #[serde(default)]
    pub angle_search: Option<AngleSearch>,
    /// Refinement sweeps over the already detected paths after each
    /// detection during initialization.
    #[serde(default = "default_init_sweeps")]
    pub init_sweeps: usize,
    /// Jointly refit all amplitudes by least squares after every sweep.
    #[serde(default = "default_true")]
    pub joint_amplitudes: bool,
    /// Finish with a joint least-squares refinement of all delays.
    #[serde(default = "default_true")]
    pub joint_polish: bool,
}

fn default_iterations() -> usize {
    20
}
fn default_eps() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}
fn default_init_sweeps() -> usize {
    3
}

impl SageConfig {
    pub fn new(n_paths: usize, delay_lo: f64, delay_hi: f64) -> Self {
        Self {
            n_paths,
            max_iterations: default_iterations(),
            convergence_eps: default_eps(),
            delay_lo,
            delay_hi,
            delay_step: None,
            refine: true,
            rectified: false,
            angle_search: None,
            init_sweeps: default_init_sweeps(),
            joint_amplitudes: true,
            joint_polish: true,
        }
    }

    pub fn rectified(mut self, on: bool) -> Self {
        self.rectified = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(invalid("n_paths must be at least 1"));
        }
        if self.max_iterations < 1 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        if !(self.delay_lo >= 0.0) || !(self.delay_hi > self.delay_lo) {
            return Err(invalid(format!(
                "delay search range must satisfy 0 <= lo < hi, got [{}, {}]",
                self.delay_lo, self.delay_hi
            )));
        }
        if let Some(d) = self.delay_step {
            if !(d > 0.0) {
                return Err(invalid("delay_step must be positive"));
            }
        }
        if !(self.convergence_eps >= 0.0) {
            return Err(invalid("convergence_eps must be >= 0"));
        }
        if let Some(a) = &self.angle_search {
            if a.azimuths_rad.is_empty() || a.elevations_rad.is_empty() {
                return Err(Error::Empty("angle search grid"));
            }
        }
        Ok(())
    }
}

/// Estimator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    /// Sorted by descending amplitude magnitude.
    pub paths: Vec<PathParams>,
    #[serde(rename = "iterations")]
    pub iterations_used: usize,
    pub final_objective: f64,
    #[serde(rename = "objective_trace")]
    pub per_iteration_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EstimateSet {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Target signal for path `target`: `y` minus every other path's contribution.
pub fn e_step(y: &[Complex64], estimates: &[PathParams], target: usize, model: &SoundingModel) -> Result<Vec<Complex64>> {
    if target >= estimates.len() {
        return Err(Error::IndexOutOfRange {
            index: target + 1,
            len: estimates.len(),
        });
    }
    if y.len() != model.len() {
        return Err(Error::LengthMismatch {
            expected: model.len(),
            actual: y.len(),
        });
    }
    let mut r = y.to_vec();
    for (l, p) in estimates.iter().enumerate() {
        if l == target || p.amplitude == Complex64::new(0.0, 0.0) {
            continue;
        }
        let a = model.steering_vector(p.delay, p.azimuth, p.elevation)?;
        for (ri, ai) in r.iter_mut().zip(a) {
            *ri -= p.amplitude * ai;
        }
    }
    Ok(r)
}

/// Least-squares amplitude `aᴴ r / ‖a‖²`.
pub fn estimate_amplitude(residual: &[Complex64], steering: &[Complex64]) -> Result<Complex64> {
    if residual.len() != steering.len() {
        return Err(Error::LengthMismatch {
            expected: steering.len(),
            actual: residual.len(),
        });
    }
    let norm2: f64 = steering.iter().map(|a| a.norm_sqr()).sum();
    if norm2 == 0.0 {
        return Err(invalid("steering vector is zero"));
    }
    let dot: Complex64 = steering.iter().zip(residual).map(|(a, r)| a.conj() * r).sum();
    Ok(dot / norm2)
}

/// Result of one M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStep {
    pub delay: f64,
    pub azimuth: f64,
    pub elevation: f64,
    /// Value of the objective that was maximized.
    pub objective: f64,
}

struct Searcher<'a> {
    model: &'a SoundingModel,
    config: &'a SageConfig,
    delta: f64,
    n: usize,
}

impl<'a> Searcher<'a> {
    fn new(model: &'a SoundingModel, config: &'a SageConfig) -> Result<Self> {
        config.validate()?;
        let delta = config.delay_step.unwrap_or_else(|| default_delta(&model.grid));
        let n = ((config.delay_hi - config.delay_lo) / delta + 1e-9).floor() as usize + 1;
        Ok(Self { model, config, delta, n })
    }

    /// Best delay at a fixed direction.
    fn best_delay(&self, r: &[Complex64], az: f64, el: f64, w: Weighting) -> Result<(f64, f64)> {
        let lo = self.config.delay_lo;
        let kernel = DelayKernel::new(self.model, r, az, el, w)?;
        let values = kernel.scan(lo, self.delta, self.n);
        let mut j = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[j] {
                j = i;
            }
        }
        if values[j] == 0.0 {
            return Ok((lo, 0.0));
        }
        let tau = lo + j as f64 * self.delta;
        if !self.config.refine {
            return Ok((tau, values[j]));
        }
        let a = (tau - self.delta).max(lo);
        let b = (tau + self.delta).min(self.config.delay_hi);
        Ok(golden_max(|t| kernel.value(t), a, b, self.delta * 1e-6, (tau, values[j])))
    }

    /// Best direction on the search grid at a fixed delay, by the plain
    /// objective (rectification only reshapes the delay response).
    fn best_angle(&self, r: &[Complex64], tau: f64, grid: &AngleSearch) -> (f64, f64, f64) {
        let k = self.model.k();
        let gains = self.model.gains(tau);
        let phasors: Vec<Complex64> = self
            .model
            .frequencies()
            .iter()
            .zip(&gains)
            .map(|(&f, &g)| crate::likelihood::phasor(f, tau) * g)
            .collect();
        let per_pointing: Vec<Complex64> = (0..self.model.m())
            .map(|m| r[m * k..(m + 1) * k].iter().zip(&phasors).map(|(y, p)| y * p).sum())
            .collect();
        let gsum: f64 = gains.iter().map(|g| g * g).sum();
        let mut best = (grid.azimuths_rad[0], grid.elevations_rad[0], f64::NEG_INFINITY);
        for &el in &grid.elevations_rad {
            for &az in &grid.azimuths_rad {
                let g = self.model.pointing_gains(az, el);
                let num: Complex64 = g.iter().zip(&per_pointing).map(|(gm, c)| c * gm).sum();
                let norm = (g.iter().map(|x| x * x).sum::<f64>() * gsum).sqrt();
                let v = if norm > 0.0 { num.norm() / norm } else { 0.0 };
                if v > best.2 {
                    best = (az, el, v);
                }
            }
        }
        best
    }

    fn weighting(&self, anchor: f64) -> Weighting {
        if self.config.rectified {
            Weighting::Rectified { ref_delay: anchor }
        } else {
            Weighting::Plain
        }
    }

    fn m_step(&self, r: &[Complex64], prev: &PathParams, anchor: f64) -> Result<MStep> {
        let w = self.weighting(anchor);
        let (mut az, mut el) = (prev.azimuth, prev.elevation);
        let alternate = self.model.m() > 1 && self.config.angle_search.is_some();
        let sweeps = if alternate { 2 } else { 1 };
        let mut tau = prev.delay;
        let mut objective = 0.0;
        for _ in 0..sweeps {
            let (t, v) = self.best_delay(r, az, el, w)?;
            tau = t;
            objective = v;
            if let (true, Some(grid)) = (alternate, &self.config.angle_search) {
                let (a, e, v) = self.best_angle(r, tau, grid);
                az = a;
                el = e;
                objective = v;
            }
        }
        Ok(MStep {
            delay: tau,
            azimuth: az,
            elevation: el,
            objective,
        })
    }
}

/// Golden-section maximization on `[a, b]` down to width `tol`; returns the
/// best point seen, never worse than `seed`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64, seed: (f64, f64)) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut best = seed;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
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
        for (t, v) in [(c, fc), (d, fd)] {
            if v > best.1 {
                best = (t, v);
            }
        }
    }
    best
}

/// One M-step on a target signal. `prev` supplies the starting direction
/// and, for LR-SAGE, the rectifier anchor.
pub fn m_step(residual: &[Complex64], config: &SageConfig, model: &SoundingModel, prev: &PathParams) -> Result<MStep> {
    Searcher::new(model, config)?.m_step(residual, prev, prev.delay)
}

/// Plain single-path objective `|aᴴ r| / ‖a‖` at one parameter point.
fn plain_objective(model: &SoundingModel, r: &[Complex64], p: &PathParams) -> f64 {
    let a = model.steering_unchecked(p.delay, p.azimuth, p.elevation);
    let norm2: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    if norm2 == 0.0 {
        return 0.0;
    }
    let dot: Complex64 = a.iter().zip(r).map(|(x, y)| x.conj() * y).sum();
    dot.norm() / norm2.sqrt()
}

/// Least-squares fit at fixed delays.
struct Fit {
    a: DMatrix<Complex64>,
    x: DVector<Complex64>,
    pinv: DMatrix<Complex64>,
    r: DVector<Complex64>,
}

struct State<'a> {
    model: &'a SoundingModel,
    y: &'a [Complex64],
    paths: Vec<PathParams>,
    contributions: Vec<Vec<Complex64>>,
    total: Vec<Complex64>,
    y_energy: f64,
}

impl<'a> State<'a> {
    fn new(model: &'a SoundingModel, y: &'a [Complex64]) -> Self {
        Self {
            model,
            y,
            paths: Vec::new(),
            contributions: Vec::new(),
            total: vec![Complex64::new(0.0, 0.0); y.len()],
            y_energy: y.iter().map(|v| v.norm_sqr()).sum(),
        }
    }

    fn target(&self, l: usize) -> Vec<Complex64> {
        let c = &self.contributions[l];
        self.y
            .iter()
            .zip(&self.total)
            .zip(c)
            .map(|((y, t), c)| y - t + c)
            .collect()
    }

    fn residual(&self) -> Vec<Complex64> {
        self.y.iter().zip(&self.total).map(|(y, t)| y - t).collect()
    }

    fn set(&mut self, l: usize, p: PathParams) {
        let a = self.model.steering_unchecked(p.delay, p.azimuth, p.elevation);
        let c: Vec<Complex64> = a.iter().map(|v| v * p.amplitude).collect();
        if l == self.paths.len() {
            self.paths.push(p);
            self.contributions.push(vec![Complex64::new(0.0, 0.0); self.y.len()]);
        }
        for ((t, old), new) in self.total.iter_mut().zip(&self.contributions[l]).zip(&c) {
            *t += new - old;
        }
        self.contributions[l] = c;
        self.paths[l] = p;
    }

    /// Least-squares refit of all amplitudes at the current delays and
    /// directions. Kept only if it does not lower the explained energy.
    fn refit_amplitudes(&mut self, active: &[bool]) {
        let idx: Vec<usize> = (0..self.paths.len()).filter(|&l| active[l]).collect();
        if idx.len() < 2 {
            return;
        }
        let cols: Vec<Vec<Complex64>> = idx
            .iter()
            .map(|&l| {
                let p = self.paths[l];
                self.model.steering_unchecked(p.delay, p.azimuth, p.elevation)
            })
            .collect();
        let a = DMatrix::from_fn(self.y.len(), idx.len(), |i, j| cols[j][i]);
        let b = DVector::from_column_slice(self.y);
        let Ok(x) = a.clone().svd(true, true).solve(&b, 1e-12) else {
            return;
        };
        let before = self.explained();
        let saved = (self.paths.clone(), self.contributions.clone(), self.total.clone());
        for (j, &l) in idx.iter().enumerate() {
            let p = PathParams {
                amplitude: x[j],
                ..self.paths[l]
            };
            self.set(l, p);
        }
        if self.explained() < before {
            (self.paths, self.contributions, self.total) = saved;
        }
    }

    /// Joint Levenberg–Marquardt refinement of the active delays with the
    /// amplitudes projected out by least squares (variable projection).
    /// Coordinate-wise updates crawl when the steering vectors of different
    /// paths are strongly correlated; this moves all delays together. Kept
    /// only if it raises the explained energy.
    fn polish(&mut self, active: &[bool], range: (f64, f64), tol: f64, max_steps: usize) {
        let idx: Vec<usize> = (0..self.paths.len()).filter(|&l| active[l]).collect();
        if idx.is_empty() {
            return;
        }
        let model = self.model;
        let k = model.k();
        // d a / d τ = (-j2πf - rate) a, per frequency, repeated per pointing
        let dlog: Vec<Complex64> = model.frequencies().iter().zip(model.rates()).map(|(&f, &r)| Complex64::new(-r, -TAU * f)).collect();
        let y = DVector::from_column_slice(self.y);
        let dirs: Vec<(f64, f64)> = idx.iter().map(|&l| (self.paths[l].azimuth, self.paths[l].elevation)).collect();
        let solve = |delays: &[f64]| -> Option<Fit> {
            let cols: Vec<Vec<Complex64>> = delays.iter().zip(&dirs).map(|(&d, &(az, el))| model.steering_unchecked(d, az, el)).collect();
            let a = DMatrix::from_fn(y.len(), cols.len(), |i, j| cols[j][i]);
            let pinv = a.clone().pseudo_inverse(1e-12 * a.norm()).ok()?;
            let x = &pinv * &y;
            let r = &y - &a * &x;
            Some(Fit { a, x, pinv, r })
        };
        let mut delays: Vec<f64> = idx.iter().map(|&l| self.paths[l].delay).collect();
        let Some(mut fit) = solve(&delays) else {
            return;
        };
        let mut mu = 1e-3;
        for _ in 0..max_steps {
            let mut jac = DMatrix::<Complex64>::zeros(y.len(), idx.len());
            for j in 0..idx.len() {
                // Golub–Pereyra derivative of the projected residual
                let da = DVector::from_fn(y.len(), |i, _| fit.a[(i, j)] * dlog[i % k]);
                let d = &da * fit.x[j];
                let proj = &d - &fit.a * (&fit.pinv * &d);
                let back = fit.pinv.row(j).adjoint() * da.dotc(&fit.r);
                jac.set_column(j, &(-(proj + back)));
            }
            let n = (jac.adjoint() * &jac).map(|v| v.re);
            let g = (jac.adjoint() * &fit.r).map(|v| v.re);
            let mut accepted = false;
            for _ in 0..8 {
                let mut damped = n.clone();
                for j in 0..idx.len() {
                    damped[(j, j)] *= 1.0 + mu;
                }
                let Some(step) = damped.lu().solve(&(-&g)) else {
                    mu *= 10.0;
                    continue;
                };
                let trial: Vec<f64> = delays.iter().zip(step.iter()).map(|(d, s)| (d + s).clamp(range.0, range.1)).collect();
                if let Some(t) = solve(&trial) {
                    if t.r.norm_squared() < fit.r.norm_squared() {
                        let moved = delays.iter().zip(&trial).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        (delays, fit) = (trial, t);
                        mu = (mu / 10.0).max(1e-12);
                        accepted = moved > tol;
                        break;
                    }
                }
                mu *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        let before = self.explained();
        let saved = (self.paths.clone(), self.contributions.clone(), self.total.clone());
        for (j, &l) in idx.iter().enumerate() {
            let p = PathParams {
                amplitude: fit.x[j],
                delay: delays[j],
                ..self.paths[l]
            };
            self.set(l, p);
        }
        if self.explained() < before {
            (self.paths, self.contributions, self.total) = saved;
        }
    }

    /// Escapes joint-fit basins that coordinate updates cannot leave:
    /// each path, then each pair of paths, is dropped, the others are
    /// re-polished without them, and the dropped paths are detected again
    /// from the new residual. A move is kept only when it raises the
    /// explained energy.
    fn redetect(&mut self, searcher: &Searcher<'_>, plain: &Searcher<'_>, active: &[bool], range: (f64, f64)) -> Result<()> {
        let idx: Vec<usize> = (0..self.paths.len()).filter(|&l| active[l]).collect();
        let mut groups: Vec<Vec<usize>> = idx.iter().map(|&l| vec![l]).collect();
        for (i, &a) in idx.iter().enumerate() {
            for &b in &idx[i + 1..] {
                groups.push(vec![a, b]);
            }
        }
        for _round in 0..3 {
            let mut improved = false;
            for g in &groups {
                improved |= self.try_redetect(searcher, plain, active, range, g)?;
            }
            if !improved {
                break;
            }
        }
        Ok(())
    }

    fn try_redetect(&mut self, searcher: &Searcher<'_>, plain: &Searcher<'_>, active: &[bool], range: (f64, f64), group: &[usize]) -> Result<bool> {
        let tol = searcher.delta * 1e-6;
        let before = self.explained();
        let saved = (self.paths.clone(), self.contributions.clone(), self.total.clone());
        let mut others = active.to_vec();
        for &l in group {
            self.set(l, PathParams { amplitude: Complex64::new(0.0, 0.0), ..self.paths[l] });
            others[l] = false;
        }
        self.polish(&others, range, tol, 50);
        for &l in group {
            let p = self.paths[l];
            let r = self.target(l);
            let first = plain.m_step(&r, &p, range.0)?;
            let step = if searcher.config.rectified {
                let seeded = PathParams::new(Complex64::new(0.0, 0.0), first.delay).with_direction(first.azimuth, first.elevation);
                searcher.m_step(&r, &seeded, first.delay)?
            } else {
                first
            };
            let q = self.fit(&r, step.delay, step.azimuth, step.elevation)?;
            self.set(l, q);
            others[l] = true;
            self.polish(&others, range, tol, 50);
        }
        if self.explained() > before * (1.0 + 1e-12) {
            return Ok(true);
        }
        (self.paths, self.contributions, self.total) = saved;
        Ok(false)
    }

    fn explained(&self) -> f64 {
        let res: f64 = self.y.iter().zip(&self.total).map(|(y, t)| (y - t).norm_sqr()).sum();
        self.y_energy - res
    }

    /// Projects `r` onto the model at `(delay, direction)`.
    fn fit(&self, r: &[Complex64], delay: f64, az: f64, el: f64) -> Result<PathParams> {
        let a = self.model.steering_unchecked(delay, az, el);
        let amplitude = estimate_amplitude(r, &a)?;
        Ok(PathParams {
            amplitude,
            delay,
            azimuth: az,
            elevation: el,
        })
    }

    /// One SAGE update of path `l`; returns the absolute delay change.
    fn update(&mut self, searcher: &Searcher<'_>, l: usize) -> Result<f64> {
        let prev = self.paths[l];
        let r = self.target(l);
        let step = searcher.m_step(&r, &prev, prev.delay)?;
        let cand = self.fit(&r, step.delay, step.azimuth, step.elevation)?;
        let keep = self.fit(&r, prev.delay, prev.azimuth, prev.elevation)?;
        let chosen = if plain_objective(self.model, &r, &cand) >= plain_objective(self.model, &r, &keep) {
            cand
        } else {
            keep
        };
        self.set(l, chosen);
        Ok((chosen.delay - prev.delay).abs())
    }
}

/// Runs SAGE (or LR-SAGE when `config.rectified`) on a measurement.
pub fn run(y: &MeasurementSet, config: &SageConfig, model: &SoundingModel) -> Result<EstimateSet> {
    let noise = (y.noise_variance > 0.0).then_some(y.noise_variance);
    run_samples(&y.samples, noise, config, model)
}

/// Runs the estimator on a raw stacked sample vector. When the noise
/// variance is known, detections whose objective does not clear five noise
/// standard deviations are replaced by zero-amplitude placeholders.
pub fn run_samples(y: &[Complex64], noise_variance: Option<f64>, config: &SageConfig, model: &SoundingModel) -> Result<EstimateSet> {
    if y.len() != model.len() {
        return Err(Error::LengthMismatch {
            expected: model.len(),
            actual: y.len(),
        });
    }
    let searcher = Searcher::new(model, config)?;
    let mut plain_cfg = config.clone();
    plain_cfg.rectified = false;
    let plain = Searcher::new(model, &plain_cfg)?;
    let mut state = State::new(model, y);
    let mut active = Vec::with_capacity(config.n_paths);
    let mut warnings = Vec::new();
    let threshold = noise_variance.map(|v| 5.0 * v.sqrt());
    let start_dir = match &config.angle_search {
        Some(g) if model.m() > 1 => (g.azimuths_rad[0], g.elevations_rad[0]),
        _ => (0.0, FRAC_PI_2),
    };

    for l in 0..config.n_paths {
        let r = state.residual();
        let seed = PathParams::new(Complex64::new(0.0, 0.0), config.delay_lo).with_direction(start_dir.0, start_dir.1);
        let first = plain.m_step(&r, &seed, config.delay_lo)?;
        let seeded = PathParams::new(Complex64::new(0.0, 0.0), first.delay).with_direction(first.azimuth, first.elevation);
        let step = if config.rectified {
            searcher.m_step(&r, &seeded, first.delay)?
        } else {
            first
        };
        let p = state.fit(&r, step.delay, step.azimuth, step.elevation)?;
        let weak = first.objective == 0.0 || threshold.is_some_and(|t| plain_objective(model, &r, &p) < t);
        if weak {
            warnings.push(format!("path {} is below the noise floor; padded with a zero-amplitude placeholder", l + 1));
            state.set(l, PathParams { amplitude: Complex64::new(0.0, 0.0), ..p });
            active.push(false);
            continue;
        }
        state.set(l, p);
        active.push(true);
        for _ in 0..config.init_sweeps {
            for j in 0..=l {
                if active[j] {
                    state.update(&searcher, j)?;
                }
            }
            if config.joint_amplitudes {
                state.refit_amplitudes(&active);
            }
        }
    }

    let mut trace = vec![state.explained()];
    let mut iterations = 0;
    for _ in 0..config.max_iterations {
        iterations += 1;
        let mut moved: f64 = 0.0;
        for l in 0..config.n_paths {
            if active[l] {
                moved = moved.max(state.update(&searcher, l)?);
            }
        }
        if config.joint_amplitudes {
            state.refit_amplitudes(&active);
        }
        let e = state.explained();
        let prev = *trace.last().expect("non-empty");
        trace.push(e);
        let rel = (e - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        if rel < config.convergence_eps || moved < searcher.delta / 100.0 {
            break;
        }
    }
    if config.joint_polish {
        let range = (config.delay_lo, config.delay_hi);
        state.polish(&active, range, searcher.delta * 1e-6, 50);
        // re-detection only when the fit is clearly worse than the noise
        // allows, or always when the noise level is unknown
        let n = y.len() as f64;
        let misfit = noise_variance.is_none_or(|v| state.y_energy - state.explained() > v * (n + 4.0 * n.sqrt()));
        if misfit {
            state.redetect(&searcher, &plain, &active, range)?;
            state.polish(&active, range, searcher.delta * 1e-6, 50);
        }
        let e = state.explained();
        if e > *trace.last().expect("non-empty") {
            trace.push(e);
        }
    }
    let mut paths = state.paths;
    paths.sort_by(|a, b| b.amplitude.norm().total_cmp(&a.amplitude.norm()));
    Ok(EstimateSet {
        paths,
        iterations_used: iterations,
        final_objective: *trace.last().expect("non-empty"),
        per_iteration_trace: trace,
        warnings,
    })
}
