//! Molecular-absorption path gain.
//!
//! The model stores a power absorption coefficient `k(f)` in 1/m. A path of
//! delay `τ` travels `d = cτ`, so its amplitude gain is `exp(-k(f) c τ / 2)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default clipping floor for gains used as rectification weights.
pub const DEFAULT_FLOOR_DB: f64 = -40.0;

/// One Lorentzian absorption line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub center_hz: f64,
    pub strength_per_m: f64,
    pub halfwidth_hz: f64,
}

impl Line {
    /// Water line used by the simulation defaults. With the default floor it
    /// gives roughly 5 to 10 dB of gain variation across a 10 to 20 GHz band
    /// starting at 370 GHz for a 200 ns path.
    pub fn default_water() -> Self {
        Self {
            center_hz: 380.2e9,
            strength_per_m: 0.04,
            halfwidth_hz: 3e9,
        }
    }

    fn eval(&self, f: f64) -> f64 {
        let hw2 = self.halfwidth_hz * self.halfwidth_hz;
        let d = f - self.center_hz;
        self.strength_per_m * hw2 / (d * d + hw2)
    }
}

/// One row of a tabulated spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TablePoint {
    pub f_hz: f64,
    pub coeff_per_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Spectrum {
    None,
    SyntheticLines { lines: Vec<Line> },
    Tabulated {
        table: Vec<TablePoint>,
        /// Clamp to the end values outside the table instead of failing.
        #[serde(default = "default_true")]
        clamp: bool,
    },
}

fn default_true() -> bool {
    true
}

/// Frequency-dependent absorption with a clipping floor for rectification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionModel {
    #[serde(flatten)]
    pub spectrum: Spectrum,
    #[serde(default = "default_floor")]
    pub floor_db: f64,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR_DB
}

impl Default for AbsorptionModel {
    fn default() -> Self {
        Self::none()
    }
}

impl AbsorptionModel {
    pub fn none() -> Self {
        Self {
            spectrum: Spectrum::None,
            floor_db: DEFAULT_FLOOR_DB,
        }
    }

    pub fn synthetic(lines: Vec<Line>) -> Result<Self> {
        for l in &lines {
            if !(l.strength_per_m >= 0.0 && l.halfwidth_hz > 0.0 && l.center_hz.is_finite()) {
                return Err(invalid(format!("bad absorption line {l:?}")));
            }
        }
        Ok(Self {
            spectrum: Spectrum::SyntheticLines { lines },
            floor_db: DEFAULT_FLOOR_DB,
        })
    }

    /// The single-line water model used by the simulation defaults.
    pub fn default_water() -> Self {
        Self::synthetic(vec![Line::default_water()]).expect("valid default line")
    }

    pub fn tabulated(mut table: Vec<TablePoint>, clamp: bool) -> Result<Self> {
        if table.len() < 2 {
            return Err(Error::Empty("absorption table needs at least two rows"));
        }
        table.sort_by(|a, b| a.f_hz.total_cmp(&b.f_hz));
        if table.windows(2).any(|w| w[1].f_hz <= w[0].f_hz) {
            return Err(invalid("absorption table frequencies must be distinct"));
        }
        if table.iter().any(|p| !(p.coeff_per_m >= 0.0) || !p.f_hz.is_finite()) {
            return Err(invalid("absorption coefficients must be finite and non-negative"));
        }
        Ok(Self {
            spectrum: Spectrum::Tabulated { table, clamp },
            floor_db: DEFAULT_FLOOR_DB,
        })
    }

    /// Reads a `f_hz,coeff_per_m` CSV file.
    pub fn load_table(path: impl AsRef<Path>, clamp: bool) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut table = Vec::new();
        for (i, rec) in reader.deserialize::<TablePoint>().enumerate() {
            let p = rec.map_err(|e| Error::Parse {
                row: i + 2,
                msg: e.to_string(),
            })?;
            table.push(p);
        }
        Self::tabulated(table, clamp)
    }

    pub fn with_floor_db(mut self, floor_db: f64) -> Self {
        self.floor_db = floor_db;
        self
    }

    pub fn is_none(&self) -> bool {
        matches!(self.spectrum, Spectrum::None)
    }

    /// Short identifier recorded in measurement metadata.
    pub fn id(&self) -> String {
        match &self.spectrum {
            Spectrum::None => "none".into(),
            Spectrum::SyntheticLines { lines } => format!("synthetic_lines({})", lines.len()),
            Spectrum::Tabulated { table, .. } => format!("tabulated({})", table.len()),
        }
    }

    /// Power absorption coefficient at `f`, in 1/m.
    pub fn coefficient(&self, f: f64) -> Result<f64> {
        match &self.spectrum {
            Spectrum::None => Ok(0.0),
            Spectrum::SyntheticLines { lines } => Ok(lines.iter().map(|l| l.eval(f)).sum()),
            Spectrum::Tabulated { table, clamp } => interpolate(table, f, *clamp),
        }
    }

    /// Amplitude gain `exp(-k(f) c τ / 2)`.
    pub fn gain(&self, f: f64, tau: f64) -> Result<f64> {
        if !(tau >= 0.0) {
            return Err(invalid(format!("delay must be >= 0, got {tau}")));
        }
        Ok((-self.coefficient(f)? * SPEED_OF_LIGHT * tau / 2.0).exp())
    }

    /// Smallest gain allowed downstream, linear amplitude.
    pub fn floor_linear(&self) -> f64 {
        10f64.powf(self.floor_db / 20.0)
    }

    /// `gain` raised to the clipping floor.
    pub fn clipped_gain(&self, f: f64, tau: f64) -> Result<f64> {
        Ok(self.gain(f, tau)?.max(self.floor_linear()))
    }

    /// Coefficients on a frequency list, checked once so that the hot loops
    /// can work with plain exponentials.
    pub fn coefficients(&self, freqs: &[f64]) -> Result<Vec<f64>> {
        freqs.iter().map(|&f| self.coefficient(f)).collect()
    }
}

/// Per-frequency exponent rates: `gain_k(τ) = exp(-rate_k τ)`.
pub fn gain_rates(coefficients: &[f64]) -> Vec<f64> {
    coefficients.iter().map(|k| k * SPEED_OF_LIGHT / 2.0).collect()
}

fn interpolate(table: &[TablePoint], f: f64, clamp: bool) -> Result<f64> {
    let first = table[0];
    let last = table[table.len() - 1];
    if f < first.f_hz || f > last.f_hz {
        if !clamp {
            return Err(Error::OutsideTable(f));
        }
        return Ok(if f < first.f_hz { first.coeff_per_m } else { last.coeff_per_m });
    }
    let i = table.partition_point(|p| p.f_hz <= f).clamp(1, table.len() - 1);
    let (a, b) = (table[i - 1], table[i]);
    let t = (f - a.f_hz) / (b.f_hz - a.f_hz);
    Ok(a.coeff_per_m + t * (b.coeff_per_m - a.coeff_per_m))
}

/// A measured gain at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSample {
    pub f_hz: f64,
    pub gain: f64,
}

/// Beer–Lambert extrapolation of reference gains measured over `d_ref`
/// metres to a path of delay `tau`: `g^(c τ / d_ref)`.
pub fn estimate_from_reference(reference: &[GainSample], d_ref: f64, tau: f64) -> Result<Vec<GainSample>> {
    if !(d_ref > 0.0) {
        return Err(invalid(format!("reference distance must be positive, got {d_ref}")));
    }
    if !(tau >= 0.0) {
        return Err(invalid(format!("delay must be >= 0, got {tau}")));
    }
    let scale = SPEED_OF_LIGHT * tau / d_ref;
    reference
        .iter()
        .map(|s| {
            if !(s.gain > 0.0 && s.gain <= 1.0) {
                return Err(invalid(format!("reference gain must lie in (0, 1], got {}", s.gain)));
            }
            Ok(GainSample {
                f_hz: s.f_hz,
                gain: (scale * s.gain.ln()).exp(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn line(s: f64, hw: f64) -> AbsorptionModel {
        AbsorptionModel::synthetic(vec![Line {
            center_hz: 380.2e9,
            strength_per_m: s,
            halfwidth_hz: hw,
        }])
        .unwrap()
    }

    #[test]
    fn none_is_lossless() {
        let m = AbsorptionModel::none();
        assert_eq!(m.coefficient(380e9).unwrap(), 0.0);
        assert_eq!(m.gain(380e9, 1e-6).unwrap(), 1.0);
    }

    #[test]
    fn lorentzian_peak_and_halfwidth() {
        let m = line(0.05, 2e9);
        assert_relative_eq!(m.coefficient(380.2e9).unwrap(), 0.05);
        assert_relative_eq!(m.coefficient(382.2e9).unwrap(), 0.025, max_relative = 1e-12);
    }

    #[test]
    fn gain_laws() {
        let m = line(0.05, 2e9);
        assert_eq!(m.gain(375e9, 0.0).unwrap(), 1.0);
        let g1 = m.gain(379e9, 50e-9).unwrap();
        let g2 = m.gain(379e9, 100e-9).unwrap();
        assert_relative_eq!(g2, g1 * g1, max_relative = 1e-12);
        assert!(m.gain(379e9, -1e-9).is_err());
    }

    #[test]
    fn default_spectrum_variation_is_moderate() {
        let m = AbsorptionModel::default_water();
        for (lo, hi) in [(370e9, 380e9), (370e9, 390e9)] {
            let mut extreme = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..=200 {
                let f = lo + (hi - lo) * i as f64 / 200.0;
                let g = 20.0 * m.gain(f, 200e-9).unwrap().log10();
                extreme = (extreme.0.min(g), extreme.1.max(g));
            }
            let span = extreme.1 - extreme.0;
            assert!((1.0..=10.0).contains(&span), "variation {span} dB over {lo}..{hi}");
        }
    }

    #[test]
    fn tabulated_interpolation_and_clamp() {
        let table = vec![
            TablePoint { f_hz: 1.0, coeff_per_m: 0.0 },
            TablePoint { f_hz: 3.0, coeff_per_m: 2.0 },
        ];
        let m = AbsorptionModel::tabulated(table.clone(), true).unwrap();
        assert_relative_eq!(m.coefficient(2.0).unwrap(), 1.0);
        assert_relative_eq!(m.coefficient(5.0).unwrap(), 2.0);
        let strict = AbsorptionModel::tabulated(table, false).unwrap();
        assert!(matches!(strict.coefficient(5.0), Err(Error::OutsideTable(_))));
    }

    #[test]
    fn reference_extrapolation_examples() {
        let r = [GainSample { f_hz: 1.0, gain: 0.5 }, GainSample { f_hz: 2.0, gain: 1.0 }];
        let d = 3.0;
        let same = estimate_from_reference(&r, d, d / SPEED_OF_LIGHT).unwrap();
        assert_relative_eq!(same[0].gain, 0.5, max_relative = 1e-14);
        let twice = estimate_from_reference(&r, d, 2.0 * d / SPEED_OF_LIGHT).unwrap();
        assert_relative_eq!(twice[0].gain, 0.25, max_relative = 1e-14);
        assert_eq!(twice[1].gain, 1.0);
        assert!(estimate_from_reference(&[GainSample { f_hz: 1.0, gain: 0.0 }], d, 0.0).is_err());
        assert!(estimate_from_reference(&[GainSample { f_hz: 1.0, gain: 1.5 }], d, 0.0).is_err());
    }

    #[test]
    fn floor_clips() {
        let m = line(10.0, 2e9).with_floor_db(-40.0);
        assert_relative_eq!(m.clipped_gain(380.2e9, 1e-6).unwrap(), 0.01, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn gain_monotone_in_delay(s in 0.0..0.2f64, f in 360e9..400e9f64, t1 in 0.0..1e-6f64, t2 in 0.0..1e-6f64) {
            let m = line(s, 3e9);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(m.gain(f, hi).unwrap() <= m.gain(f, lo).unwrap());
        }

        #[test]
        fn gain_monotone_in_strength(s1 in 0.0..0.2f64, s2 in 0.0..0.2f64, f in 360e9..400e9f64, t in 0.0..1e-6f64) {
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(line(hi, 3e9).gain(f, t).unwrap() <= line(lo, 3e9).gain(f, t).unwrap());
        }

        #[test]
        fn beer_lambert_round_trip(s in 0.0..0.2f64, d_ref in 0.1..50.0f64, tau in 0.0..1e-6f64) {
            let m = line(s, 3e9);
            let freqs: Vec<f64> = (0..16).map(|i| 370e9 + i as f64 * 1.3e9).collect();
            let tau_ref = d_ref / SPEED_OF_LIGHT;
            let reference: Vec<GainSample> = freqs
                .iter()
                .map(|&f| GainSample { f_hz: f, gain: m.gain(f, tau_ref).unwrap() })
                .collect();
            let est = estimate_from_reference(&reference, d_ref, tau).unwrap();
            for (e, &f) in est.iter().zip(&freqs) {
                let truth = m.gain(f, tau).unwrap();
                prop_assert!((e.gain - truth).abs() <= 1e-12 * truth);
            }
        }

        #[test]
        fn clipped_gain_respects_floor(s in 0.0..50.0f64, f in 360e9..400e9f64, t in 0.0..1e-6f64) {
            let m = line(s, 3e9);
            prop_assert!(m.clipped_gain(f, t).unwrap() >= m.floor_linear());
        }
    }
}
