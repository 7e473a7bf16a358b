//! Multipath channel synthesis over frequency and antenna pointing.
//!
//! Samples are stacked pointing-major: the sample for pointing `m` and
//! frequency `k` (both 1-based) sits at index `(m-1)K + k - 1`.
//!
//! Directions use azimuth in `[0, 2π)` and elevation as a polar angle in
//! `[0, π]` measured from the zenith, so `el = π/2` is the horizon.

use std::f64::consts::{LN_2, PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::absorption::{gain_rates, AbsorptionModel};
use crate::error::{invalid, Error, Result};
use crate::grid::FrequencyGrid;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PathRecord", into = "PathRecord")]
pub struct PathParams {
    pub amplitude: Complex64,
    pub delay: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathRecord {
    amp_re: f64,
    amp_im: f64,
    delay_s: f64,
    #[serde(default)]
    az_rad: f64,
    #[serde(default = "horizon")]
    el_rad: f64,
}

fn horizon() -> f64 {
    PI / 2.0
}

impl From<PathRecord> for PathParams {
    fn from(r: PathRecord) -> Self {
        Self {
            amplitude: Complex64::new(r.amp_re, r.amp_im),
            delay: r.delay_s,
            azimuth: r.az_rad,
            elevation: r.el_rad,
        }
    }
}

impl From<PathParams> for PathRecord {
    fn from(p: PathParams) -> Self {
        Self {
            amp_re: p.amplitude.re,
            amp_im: p.amplitude.im,
            delay_s: p.delay,
            az_rad: p.azimuth,
            el_rad: p.elevation,
        }
    }
}

impl PathParams {
    /// A path on the horizon at azimuth 0.
    pub fn new(amplitude: Complex64, delay: f64) -> Self {
        Self {
            amplitude,
            delay,
            azimuth: 0.0,
            elevation: PI / 2.0,
        }
    }

    pub fn with_direction(mut self, azimuth: f64, elevation: f64) -> Self {
        self.azimuth = azimuth;
        self.elevation = elevation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay >= 0.0) || !self.delay.is_finite() {
            return Err(invalid(format!("path delay must be finite and >= 0, got {}", self.delay)));
        }
        if !(0.0..TAU).contains(&self.azimuth) {
            return Err(invalid(format!("azimuth {} outside [0, 2π)", self.azimuth)));
        }
        if !(0.0..=PI).contains(&self.elevation) {
            return Err(invalid(format!("elevation {} outside [0, π]", self.elevation)));
        }
        if !self.amplitude.re.is_finite() || !self.amplitude.im.is_finite() {
            return Err(invalid("path amplitude must be finite"));
        }
        Ok(())
    }

    pub fn power(&self) -> f64 {
        self.amplitude.norm_sqr()
    }
}

/// The five-path reference channel: delays 5 to 200 ns with amplitudes
/// decaying from 1 to 0.03.
pub fn reference_channel() -> Vec<PathParams> {
    let delays = [5e-9, 50e-9, 100e-9, 150e-9, 200e-9];
    let amps = [1.0, 0.3, 0.1, 0.07, 0.03];
    let phases = [0.0, PI / 4.0, PI / 4.0, -PI / 3.0, -PI / 3.0];
    delays
        .iter()
        .zip(amps)
        .zip(phases)
        .map(|((&d, a), p)| PathParams::new(Complex64::from_polar(a, p), d))
        .collect()
}

/// Antenna radiation pattern, real-valued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AntennaPattern {
    Isotropic,
    GaussianHorn {
        hpbw_rad: f64,
        #[serde(default = "unit")]
        boresight_gain: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl Default for AntennaPattern {
    fn default() -> Self {
        AntennaPattern::Isotropic
    }
}

/// Antenna pointing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pointing {
    pub az: f64,
    pub el: f64,
}

impl Pointing {
    pub fn horizon(az: f64) -> Self {
        Self { az, el: PI / 2.0 }
    }
}

/// `m` pointings evenly spaced in azimuth on the horizon, starting at 0.
pub fn azimuth_ring(m: usize) -> Vec<Pointing> {
    (0..m).map(|i| Pointing::horizon(TAU * i as f64 / m as f64)).collect()
}

/// Great-circle angle between two directions.
pub fn angular_distance(az1: f64, el1: f64, az2: f64, el2: f64) -> f64 {
    let cos = el1.cos() * el2.cos() + el1.sin() * el2.sin() * (az1 - az2).cos();
    cos.clamp(-1.0, 1.0).acos()
}

impl AntennaPattern {
    pub fn validate(&self) -> Result<()> {
        if let AntennaPattern::GaussianHorn { hpbw_rad, boresight_gain } = *self {
            if !(hpbw_rad > 0.0) || !(boresight_gain > 0.0) {
                return Err(invalid("gaussian horn needs positive hpbw and boresight gain"));
            }
        }
        Ok(())
    }

    /// Amplitude gain toward `(az, el)` with the boresight at `pointing`.
    ///
    /// The horn's power pattern is `exp(-4 ln2 (Δψ/hpbw)^2)`, so the
    /// amplitude returned here is its square root and the power is exactly
    /// -3 dB at `Δψ = hpbw/2`.
    pub fn gain(&self, az: f64, el: f64, pointing: Pointing) -> f64 {
        match *self {
            AntennaPattern::Isotropic => 1.0,
            AntennaPattern::GaussianHorn { hpbw_rad, boresight_gain } => {
                let d = angular_distance(az, el, pointing.az, pointing.el) / hpbw_rad;
                boresight_gain * (-2.0 * LN_2 * d * d).exp()
            }
        }
    }

    pub fn is_isotropic(&self) -> bool {
        matches!(self, AntennaPattern::Isotropic)
    }
}

/// Everything needed to evaluate steering vectors for one measurement setup.
#[derive(Debug, Clone)]
pub struct SoundingModel {
    pub grid: FrequencyGrid,
    pub pointings: Vec<Pointing>,
    pub pattern: AntennaPattern,
    pub absorption: AbsorptionModel,
    rates: Vec<f64>,
}

impl SoundingModel {
    pub fn new(
        grid: FrequencyGrid,
        pointings: Vec<Pointing>,
        pattern: AntennaPattern,
        absorption: AbsorptionModel,
    ) -> Result<Self> {
        if pointings.is_empty() {
            return Err(Error::Empty("pointing list"));
        }
        pattern.validate()?;
        let rates = gain_rates(&absorption.coefficients(grid.frequencies())?);
        Ok(Self {
            grid,
            pointings,
            pattern,
            absorption,
            rates,
        })
    }

    /// One isotropic pointing on the horizon.
    pub fn single(grid: FrequencyGrid, absorption: AbsorptionModel) -> Result<Self> {
        Self::new(grid, vec![Pointing::horizon(0.0)], AntennaPattern::Isotropic, absorption)
    }

    /// Same geometry with a different absorption model (used for estimators
    /// that ignore absorption).
    pub fn with_absorption(&self, absorption: AbsorptionModel) -> Result<Self> {
        Self::new(self.grid.clone(), self.pointings.clone(), self.pattern, absorption)
    }

    pub fn k(&self) -> usize {
        self.grid.k_count()
    }

    pub fn m(&self) -> usize {
        self.pointings.len()
    }

    pub fn len(&self) -> usize {
        self.k() * self.m()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frequencies(&self) -> &[f64] {
        self.grid.frequencies()
    }

    /// Per-frequency absorption exponent rates, `G_k(τ) = exp(-rate_k τ)`.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn has_absorption(&self) -> bool {
        self.rates.iter().any(|&r| r != 0.0)
    }

    /// Absorption amplitude gains at delay `tau`.
    pub fn gains(&self, tau: f64) -> Vec<f64> {
        self.rates.iter().map(|r| (-r * tau).exp()).collect()
    }

    /// Gains clipped at the absorption floor.
    pub fn clipped_gains(&self, tau: f64) -> Vec<f64> {
        let floor = self.absorption.floor_linear();
        self.rates.iter().map(|r| (-r * tau).exp().max(floor)).collect()
    }

    /// Antenna gain of each pointing toward `(az, el)`.
    pub fn pointing_gains(&self, az: f64, el: f64) -> Vec<f64> {
        self.pointings.iter().map(|&p| self.pattern.gain(az, el, p)).collect()
    }

    /// Full steering vector of length `K·M`.
    pub fn steering_vector(&self, tau: f64, az: f64, el: f64) -> Result<Vec<Complex64>> {
        if !(tau >= 0.0) {
            return Err(invalid(format!("delay must be >= 0, got {tau}")));
        }
        Ok(self.steering_unchecked(tau, az, el))
    }

    pub(crate) fn steering_unchecked(&self, tau: f64, az: f64, el: f64) -> Vec<Complex64> {
        let freq_part: Vec<Complex64> = self
            .frequencies()
            .iter()
            .zip(&self.rates)
            .map(|(&f, &r)| crate::likelihood::phasor(f, tau).conj() * (-r * tau).exp())
            .collect();
        let mut out = Vec::with_capacity(self.len());
        for g in self.pointing_gains(az, el) {
            out.extend(freq_part.iter().map(|&v| v * g));
        }
        out
    }

    /// Noiseless superposition of all paths.
    pub fn clean_response(&self, paths: &[PathParams]) -> Result<Vec<Complex64>> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.len()];
        for p in paths {
            p.validate()?;
            for (yi, ai) in y.iter_mut().zip(self.steering_unchecked(p.delay, p.azimuth, p.elevation)) {
                *yi += p.amplitude * ai;
            }
        }
        Ok(y)
    }

    /// Synthesizes a measurement with circular Gaussian noise at `snr_db`
    /// relative to the strongest path (`None` for noiseless).
    pub fn synthesize(&self, paths: &[PathParams], snr_db: Option<f64>, seed: u64) -> Result<MeasurementSet> {
        let mut samples = self.clean_response(paths)?;
        let noise_variance = match snr_db {
            None => 0.0,
            Some(snr) => {
                let strongest = paths
                    .iter()
                    .map(PathParams::power)
                    .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
                    .ok_or(Error::Empty("path list (needed for a relative SNR)"))?;
                let var = strongest / 10f64.powf(snr / 10.0);
                add_noise(&mut samples, var, seed);
                var
            }
        };
        Ok(MeasurementSet {
            grid: self.grid.clone(),
            pointings: self.pointings.clone(),
            samples,
            noise_variance,
            absorption_id: self.absorption.id(),
            seed,
            snr_db,
            truth: Some(paths.to_vec()),
        })
    }
}

/// Adds circularly-symmetric complex Gaussian noise of per-sample variance `var`.
pub fn add_noise(samples: &mut [Complex64], var: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (var / 2.0).sqrt();
    for s in samples.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *s += Complex64::new(re * sd, im * sd);
    }
}

/// Stacked CFR samples plus the setup that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub grid: FrequencyGrid,
    pub pointings: Vec<Pointing>,
    pub samples: Vec<Complex64>,
    pub noise_variance: f64,
    pub absorption_id: String,
    pub seed: u64,
    pub snr_db: Option<f64>,
    /// Ground truth when the data is synthetic.
    pub truth: Option<Vec<PathParams>>,
}

/// Sidecar metadata stored next to a measurement CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementMeta {
    pub scheme: crate::grid::SchemeFile,
    pub noise_variance: f64,
    pub absorption_id: String,
    pub seed: u64,
    pub snr_db: Option<f64>,
    pub truth: Option<Vec<PathParams>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    pointing_az_deg: f64,
    pointing_el_deg: f64,
    f_hz: f64,
    re: f64,
    im: f64,
}

/// Formats a float with 12 significant digits.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

impl MeasurementSet {
    pub fn k(&self) -> usize {
        self.grid.k_count()
    }

    pub fn m(&self) -> usize {
        self.pointings.len()
    }

    /// Samples of pointing `m` (0-based).
    pub fn pointing_samples(&self, m: usize) -> &[Complex64] {
        let k = self.k();
        &self.samples[m * k..(m + 1) * k]
    }

    pub fn meta(&self) -> MeasurementMeta {
        MeasurementMeta {
            scheme: self.grid.to_scheme_file(),
            noise_variance: self.noise_variance,
            absorption_id: self.absorption_id.clone(),
            seed: self.seed,
            snr_db: self.snr_db,
            truth: self.truth.clone(),
        }
    }

    /// Writes the `pointing_az_deg,pointing_el_deg,f_hz,re,im` CSV.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pointing_az_deg", "pointing_el_deg", "f_hz", "re", "im"])?;
        let k = self.k();
        for (m, p) in self.pointings.iter().enumerate() {
            for (i, &f) in self.grid.frequencies().iter().enumerate() {
                let s = self.samples[m * k + i];
                w.write_record([
                    fmt12(p.az.to_degrees()),
                    fmt12(p.el.to_degrees()),
                    fmt12(f),
                    fmt12(s.re),
                    fmt12(s.im),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Path of the JSON sidecar for a measurement CSV.
    pub fn meta_path(csv_path: &Path) -> std::path::PathBuf {
        csv_path.with_extension("meta.json")
    }

    /// Writes the CSV and its `.meta.json` sidecar.
    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        self.write_csv(csv_path)?;
        std::fs::write(Self::meta_path(csv_path), serde_json::to_string_pretty(&self.meta())?)?;
        Ok(())
    }

    /// Reads a measurement CSV. When `grid` is given the file's frequencies
    /// must match it (to 1e-9 relative) and it replaces the parsed list;
    /// otherwise a sidecar scheme is used if present, else a custom grid.
    pub fn load(csv_path: impl AsRef<Path>, grid: Option<FrequencyGrid>) -> Result<Self> {
        let csv_path = csv_path.as_ref();
        let meta: Option<MeasurementMeta> = match std::fs::read_to_string(Self::meta_path(csv_path)) {
            Ok(text) => Some(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let mut reader = csv::Reader::from_path(csv_path)?;
        let mut pointings: Vec<Pointing> = Vec::new();
        let mut freqs: Vec<Vec<f64>> = Vec::new();
        let mut samples = Vec::new();
        for (i, rec) in reader.deserialize::<SampleRow>().enumerate() {
            let row = i + 2;
            let r = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
            if [r.pointing_az_deg, r.pointing_el_deg, r.f_hz, r.re, r.im].iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse { row, msg: "non-finite value".into() });
            }
            let p = Pointing {
                az: r.pointing_az_deg.to_radians(),
                el: r.pointing_el_deg.to_radians(),
            };
            let same = pointings.last().is_some_and(|q| q.az == p.az && q.el == p.el);
            if !same {
                pointings.push(p);
                freqs.push(Vec::new());
            }
            let fl = freqs.last_mut().expect("pushed above");
            if fl.last().is_some_and(|&f| r.f_hz <= f) {
                return Err(Error::Parse { row, msg: "frequencies not increasing within a pointing".into() });
            }
            fl.push(r.f_hz);
            samples.push(Complex64::new(r.re, r.im));
        }
        if pointings.is_empty() {
            return Err(Error::Empty("measurement file"));
        }
        if freqs.iter().any(|f| f != &freqs[0]) {
            return Err(invalid("every pointing must use the same frequency list"));
        }
        let parsed = &freqs[0];
        let grid = match grid.or_else(|| meta.as_ref().and_then(|m| FrequencyGrid::from_scheme_file(m.scheme.clone()).ok())) {
            Some(g) => {
                let ok = g.k_count() == parsed.len()
                    && g.frequencies().iter().zip(parsed).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0));
                if !ok {
                    return Err(invalid("measurement frequencies do not match the scheme grid"));
                }
                g
            }
            None => FrequencyGrid::custom(parsed.clone())?,
        };
        let (noise_variance, absorption_id, seed, snr_db, truth) = match meta {
            Some(m) => (m.noise_variance, m.absorption_id, m.seed, m.snr_db, m.truth),
            None => (0.0, "unknown".into(), 0, None, None),
        };
        Ok(Self {
            grid,
            pointings,
            samples,
            noise_variance,
            absorption_id,
            seed,
            snr_db,
            truth,
        })
    }
}
