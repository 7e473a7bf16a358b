//! Probe-frequency grids for frequency-domain channel sounding.
//!
//! Four constructions are provided:
//!
//! * uniform (UFS): `f_k = f_start + (k - 1) Δf`;
//! * coprime (CFS): union of two sparse uniform sub-sets with steps `N Δf_base`
//!   and `M Δf_base`;
//! * nested (NFS): a dense inner sub-set with step `Δf_base` followed by a sparse
//!   outer sub-set with step `N1 Δf_base`;
//! * parabolic (PFS): the local step `f'(v) = a (v - (K+1)/2)^2 + κ` is a parabola
//!   whose minimum is half its maximum, which spreads the ambiguous lobes of the
//!   delay likelihood instead of stacking them at fixed periods.
//!
//! Grids can also be loaded from a scheme file with an arbitrary (custom)
//! frequency list.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Sampling scheme tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ufs,
    Cfs,
    Nfs,
    Pfs,
    Custom,
}

impl Scheme {
    pub const ALL_GENERATED: [Scheme; 4] = [Scheme::Ufs, Scheme::Cfs, Scheme::Nfs, Scheme::Pfs];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Ufs => "ufs",
            Scheme::Cfs => "cfs",
            Scheme::Nfs => "nfs",
            Scheme::Pfs => "pfs",
            Scheme::Custom => "custom",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ufs" => Ok(Scheme::Ufs),
            "cfs" => Ok(Scheme::Cfs),
            "nfs" => Ok(Scheme::Nfs),
            "pfs" => Ok(Scheme::Pfs),
            "custom" => Ok(Scheme::Custom),
            other => Err(invalid(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Scheme-specific construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeParams {
    Ufs {
        delta_f_hz: f64,
    },
    Cfs {
        m: u64,
        n: u64,
        delta_f_base_hz: f64,
        unique_count: usize,
    },
    Nfs {
        n1: u64,
        n2: u64,
        delta_f_base_hz: f64,
        unique_count: usize,
    },
    Pfs {
        /// Curvature `a` of the local step, Hz per index².
        a: f64,
        /// Minimum local step `κ`, Hz per index.
        kappa: f64,
    },
    Custom {},
}

/// An ordered set of probe frequencies plus the metadata of the scheme that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    frequencies: Vec<f64>,
    scheme: Scheme,
    f_start: f64,
    bandwidth: f64,
    params: SchemeParams,
}

/// Unambiguous delay range predicted from the grid construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictedUdr {
    Finite(f64),
    /// No periodic ambiguity by construction (PFS).
    Unbounded,
    /// Custom grid: only empirical detection applies.
    Unknown,
}

impl fmt::Display for PredictedUdr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictedUdr::Finite(t) => write!(f, "{:.4} ns", t * 1e9),
            PredictedUdr::Unbounded => f.write_str("unbounded"),
            PredictedUdr::Unknown => f.write_str("unknown"),
        }
    }
}

fn check_band(f_start: f64, bandwidth: f64) -> Result<()> {
    if !f_start.is_finite() || f_start < 0.0 {
        return Err(invalid(format!("f_start must be finite and >= 0, got {f_start}")));
    }
    if !bandwidth.is_finite() || bandwidth <= 0.0 {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok(())
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl FrequencyGrid {
    /// Uniform grid of `k` points spanning `[f_start, f_start + bandwidth]`.
    pub fn ufs(f_start: f64, bandwidth: f64, k: usize) -> Result<Self> {
        check_band(f_start, bandwidth)?;
        if k < 2 {
            return Err(invalid(format!("uniform grid needs k >= 2, got {k}")));
        }
        let steps = (k - 1) as f64;
        let delta_f = bandwidth / steps;
        let frequencies = (0..k)
            .map(|i| f_start + bandwidth * (i as f64 / steps))
            .collect();
        Ok(Self {
            frequencies,
            scheme: Scheme::Ufs,
            f_start,
            bandwidth,
            params: SchemeParams::Ufs { delta_f_hz: delta_f },
        })
    }

    /// Coprime grid: `f_start + ({i N Δf_base} ∪ {j M Δf_base})` with
    /// `Δf_base = bandwidth / (M N)`.
    pub fn cfs(f_start: f64, bandwidth: f64, m: u64, n: u64) -> Result<Self> {
        check_band(f_start, bandwidth)?;
        if m == 0 || n == 0 {
            return Err(invalid("coprime factors must be positive"));
        }
        if gcd(m, n) != 1 {
            return Err(Error::NotCoprime { m, n });
        }
        if m >= n {
            return Err(invalid(format!("coprime grid requires m < n, got m = {m}, n = {n}")));
        }
        let base = bandwidth / (m * n) as f64;
        let offsets: BTreeSet<u64> = (0..m).map(|i| i * n).chain((0..n).map(|j| j * m)).collect();
        let frequencies: Vec<f64> = offsets.iter().map(|&o| f_start + o as f64 * base).collect();
        let unique_count = frequencies.len();
        Ok(Self {
            frequencies,
            scheme: Scheme::Cfs,
            f_start,
            bandwidth,
            params: SchemeParams::Cfs {
                m,
                n,
                delta_f_base_hz: base,
                unique_count,
            },
        })
    }

    /// Coprime grid with the UDR-maximising split of a nominal budget of `k`
    /// points (`k = M + N`).
    ///
    /// Odd `k` uses the consecutive pair `((k-1)/2, (k+1)/2)`. Even `k` uses
    /// `(k/2 - 1, k/2 + 1)` when coprime, otherwise `(k/2 - 1, k/2)`, which
    /// gives up one point of the budget.
    pub fn cfs_auto(f_start: f64, bandwidth: f64, k: usize) -> Result<Self> {
        let (m, n) = cfs_split(k)?;
        Self::cfs(f_start, bandwidth, m, n)
    }

    /// Nested grid: `f_start + ({i Δf_base : 1..=n1} ∪ {j n1 Δf_base : 1..=n2})`
    /// with `Δf_base = bandwidth / (n1 n2)`.
    pub fn nfs(f_start: f64, bandwidth: f64, n1: u64, n2: u64) -> Result<Self> {
        check_band(f_start, bandwidth)?;
        if n1 < 2 || n2 < 2 {
            return Err(invalid(format!("nested grid needs n1, n2 >= 2, got n1 = {n1}, n2 = {n2}")));
        }
        let base = bandwidth / (n1 * n2) as f64;
        let offsets: BTreeSet<u64> = (1..=n1).chain((1..=n2).map(|j| j * n1)).collect();
        let frequencies: Vec<f64> = offsets
            .iter()
            .map(|&o| {
                if o == n1 * n2 {
                    f_start + bandwidth
                } else {
                    f_start + o as f64 * base
                }
            })
            .collect();
        let unique_count = frequencies.len();
        Ok(Self {
            frequencies,
            scheme: Scheme::Nfs,
            f_start,
            bandwidth,
            params: SchemeParams::Nfs {
                n1,
                n2,
                delta_f_base_hz: base,
                unique_count,
            },
        })
    }

    /// Nested grid with the split `n1 + n2 = k` that maximizes `n1·n2`:
    /// `n1 = n2 = k/2` for even `k`, otherwise `n2 = n1 + 1`.
    pub fn nfs_auto(f_start: f64, bandwidth: f64, k: usize) -> Result<Self> {
        if k < 4 {
            return Err(invalid(format!("nested auto split needs k >= 4, got {k}")));
        }
        let n1 = (k / 2) as u64;
        Self::nfs(f_start, bandwidth, n1, k as u64 - n1)
    }

    /// Parabolic frequency sampling with `k` points.
    ///
    /// The local step is `f'(v) = a (v - (K+1)/2)^2 + κ` with
    /// `a = 3B/(K-1)^3` and `κ = 3B/(4(K-1))`, so that `f'_min = f'_max / 2`
    /// and `∫_1^K f'(v) dv = B`. Frequencies come straight from the integrated
    /// cubic, so `f(1) = f_start` and `f(K) = f_start + B` exactly.
    pub fn pfs(f_start: f64, bandwidth: f64, k: usize) -> Result<Self> {
        check_band(f_start, bandwidth)?;
        if k < 4 {
            return Err(invalid(format!("parabolic grid needs k >= 4, got {k}")));
        }
        let span = (k - 1) as f64;
        let a = 3.0 * bandwidth / span.powi(3);
        let kappa = 3.0 * bandwidth / (4.0 * span);
        let frequencies = (1..=k)
            .map(|v| f_start + bandwidth * pfs_unit(v as f64, k))
            .collect();
        Ok(Self {
            frequencies,
            scheme: Scheme::Pfs,
            f_start,
            bandwidth,
            params: SchemeParams::Pfs { a, kappa },
        })
    }

    /// Wraps an arbitrary strictly increasing frequency list.
    pub fn custom(frequencies: Vec<f64>) -> Result<Self> {
        validate_frequencies(&frequencies)?;
        let f_start = frequencies[0];
        let bandwidth = frequencies[frequencies.len() - 1] - f_start;
        Ok(Self {
            frequencies,
            scheme: Scheme::Custom,
            f_start,
            bandwidth,
            params: SchemeParams::Custom {},
        })
    }

    /// Builds a grid of the given scheme with the auto split for CFS/NFS.
    pub fn generate(scheme: Scheme, f_start: f64, bandwidth: f64, k: usize) -> Result<Self> {
        match scheme {
            Scheme::Ufs => Self::ufs(f_start, bandwidth, k),
            Scheme::Cfs => Self::cfs_auto(f_start, bandwidth, k),
            Scheme::Nfs => Self::nfs_auto(f_start, bandwidth, k),
            Scheme::Pfs => Self::pfs(f_start, bandwidth, k),
            Scheme::Custom => Err(invalid("custom grids are loaded, not generated")),
        }
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn f_start(&self) -> f64 {
        self.f_start
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn k_count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn center(&self) -> f64 {
        self.f_start + 0.5 * self.bandwidth
    }

    /// Local frequency step at 1-based `index`: analytic `f'(v)` for PFS, a
    /// central difference elsewhere (one-sided at the ends).
    pub fn local_step(&self, index: usize) -> Result<f64> {
        let k = self.k_count();
        if index == 0 || index > k {
            return Err(Error::IndexOutOfRange { index, len: k });
        }
        if let SchemeParams::Pfs { a, kappa } = self.params {
            let d = index as f64 - (k as f64 + 1.0) / 2.0;
            return Ok(a * d * d + kappa);
        }
        let f = &self.frequencies;
        let i = index - 1;
        Ok(if i == 0 {
            f[1] - f[0]
        } else if i == k - 1 {
            f[k - 1] - f[k - 2]
        } else {
            0.5 * (f[i + 1] - f[i - 1])
        })
    }

    /// `local_step` at every index.
    pub fn local_steps(&self) -> Vec<f64> {
        (1..=self.k_count())
            .map(|i| self.local_step(i).expect("index in range"))
            .collect()
    }

    /// Smallest and largest consecutive frequency differences.
    pub fn step_extrema(&self) -> (f64, f64) {
        self.frequencies
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| (lo.min(d), hi.max(d)))
    }

    /// Analytic frequency law `f(v)` for continuous index `v`, when the scheme has one.
    pub fn analytic_frequency(&self, v: f64) -> Result<f64> {
        match self.params {
            SchemeParams::Pfs { .. } => Ok(self.f_start + self.bandwidth * pfs_unit(v, self.k_count())),
            SchemeParams::Ufs { delta_f_hz } => Ok(self.f_start + (v - 1.0) * delta_f_hz),
            _ => Err(Error::UnsupportedScheme(self.scheme.to_string())),
        }
    }

    /// Analytic local step `f'(v)` for continuous `v`.
    pub fn analytic_step(&self, v: f64) -> Result<f64> {
        match self.params {
            SchemeParams::Pfs { a, kappa } => {
                let d = v - (self.k_count() as f64 + 1.0) / 2.0;
                Ok(a * d * d + kappa)
            }
            SchemeParams::Ufs { delta_f_hz } => Ok(delta_f_hz),
            _ => Err(Error::UnsupportedScheme(self.scheme.to_string())),
        }
    }

    /// Unambiguous delay range implied by the construction.
    pub fn predicted_udr(&self) -> PredictedUdr {
        match self.params {
            SchemeParams::Ufs { delta_f_hz } => PredictedUdr::Finite(1.0 / delta_f_hz),
            SchemeParams::Cfs { delta_f_base_hz, .. } | SchemeParams::Nfs { delta_f_base_hz, .. } => {
                PredictedUdr::Finite(1.0 / delta_f_base_hz)
            }
            SchemeParams::Pfs { .. } => PredictedUdr::Unbounded,
            SchemeParams::Custom {} => PredictedUdr::Unknown,
        }
    }

    pub fn to_scheme_file(&self) -> SchemeFile {
        SchemeFile {
            scheme: self.scheme,
            f_start_hz: self.f_start,
            bandwidth_hz: self.bandwidth,
            k: self.k_count(),
            frequencies_hz: self.frequencies.clone(),
            params: serde_json::to_value(&self.params).unwrap_or(serde_json::Value::Null),
        }
    }

    /// Rebuilds a grid from a scheme file. The frequency list is
    /// authoritative; parameters are kept only when they parse for the tag.
    pub fn from_scheme_file(file: SchemeFile) -> Result<Self> {
        validate_frequencies(&file.frequencies_hz)?;
        if file.k != file.frequencies_hz.len() {
            return Err(Error::LengthMismatch {
                expected: file.k,
                actual: file.frequencies_hz.len(),
            });
        }
        let params = parse_params(file.scheme, &file.params);
        let (scheme, params) = match params {
            Some(p) => (file.scheme, p),
            None => (Scheme::Custom, SchemeParams::Custom {}),
        };
        Ok(Self {
            f_start: file.f_start_hz,
            bandwidth: file.bandwidth_hz,
            frequencies: file.frequencies_hz,
            scheme,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_scheme_file())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SchemeFile = serde_json::from_str(&text)?;
        Self::from_scheme_file(file)
    }
}

/// Normalised PFS law `(f(v) - f_start) / B`, exactly 0 at `v = 1` and 1 at `v = K`.
fn pfs_unit(v: f64, k: usize) -> f64 {
    let span = (k - 1) as f64;
    let u = (v - (k as f64 + 1.0) / 2.0) / span;
    u * u * u + 0.125 + 0.75 * (v - 1.0) / span
}

fn cfs_split(k: usize) -> Result<(u64, u64)> {
    if k < 5 {
        return Err(invalid(format!("coprime auto split needs k >= 5, got {k}")));
    }
    let k = k as u64;
    if k % 2 == 1 {
        return Ok(((k - 1) / 2, k.div_ceil(2)));
    }
    let half = k / 2;
    if gcd(half - 1, half + 1) == 1 {
        Ok((half - 1, half + 1))
    } else {
        Ok((half - 1, half))
    }
}

fn validate_frequencies(f: &[f64]) -> Result<()> {
    if f.len() < 2 {
        return Err(invalid("a grid needs at least two frequencies"));
    }
    if f.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(invalid("frequencies must be finite and non-negative"));
    }
    if f.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("frequencies must be strictly increasing"));
    }
    Ok(())
}

fn parse_params(scheme: Scheme, value: &serde_json::Value) -> Option<SchemeParams> {
    #[derive(Deserialize)]
    struct Ufs {
        delta_f_hz: f64,
    }
    #[derive(Deserialize)]
    struct Cfs {
        m: u64,
        n: u64,
        delta_f_base_hz: f64,
        unique_count: usize,
    }
    #[derive(Deserialize)]
    struct Nfs {
        n1: u64,
        n2: u64,
        delta_f_base_hz: f64,
        unique_count: usize,
    }
    #[derive(Deserialize)]
    struct Pfs {
        a: f64,
        kappa: f64,
    }
    let v = value.clone();
    match scheme {
        Scheme::Ufs => serde_json::from_value::<Ufs>(v)
            .ok()
            .map(|p| SchemeParams::Ufs { delta_f_hz: p.delta_f_hz }),
        Scheme::Cfs => serde_json::from_value::<Cfs>(v).ok().map(|p| SchemeParams::Cfs {
            m: p.m,
            n: p.n,
            delta_f_base_hz: p.delta_f_base_hz,
            unique_count: p.unique_count,
        }),
        Scheme::Nfs => serde_json::from_value::<Nfs>(v).ok().map(|p| SchemeParams::Nfs {
            n1: p.n1,
            n2: p.n2,
            delta_f_base_hz: p.delta_f_base_hz,
            unique_count: p.unique_count,
        }),
        Scheme::Pfs => serde_json::from_value::<Pfs>(v)
            .ok()
            .map(|p| SchemeParams::Pfs { a: p.a, kappa: p.kappa }),
        Scheme::Custom => Some(SchemeParams::Custom {}),
    }
}

/// On-disk scheme description (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeFile {
    pub scheme: Scheme,
    pub f_start_hz: f64,
    pub bandwidth_hz: f64,
    pub k: usize,
    pub frequencies_hz: Vec<f64>,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn ufs_eleven_points() {
        let g = FrequencyGrid::ufs(380e9, 10e9, 11).unwrap();
        let f = g.frequencies();
        assert_eq!(f.len(), 11);
        for (i, x) in f.iter().enumerate() {
            assert!(rel(*x, 380e9 + i as f64 * 1e9) < 1e-15);
        }
        assert_eq!(g.params(), &SchemeParams::Ufs { delta_f_hz: 1e9 });
    }

    #[test]
    fn ufs_two_points_and_udr() {
        let g = FrequencyGrid::ufs(0.0, 5e9, 2).unwrap();
        assert_eq!(g.frequencies(), &[0.0, 5e9]);
        let g = FrequencyGrid::ufs(370e9, 60e9, 12001).unwrap();
        match g.predicted_udr() {
            PredictedUdr::Finite(t) => assert!(rel(t, 200e-9) < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ufs_rejects_bad_input() {
        assert!(FrequencyGrid::ufs(0.0, 1e9, 1).is_err());
        assert!(FrequencyGrid::ufs(0.0, 0.0, 5).is_err());
        assert!(FrequencyGrid::ufs(0.0, -1.0, 5).is_err());
    }

    #[test]
    fn cfs_two_three() {
        let b = 6e9;
        let g = FrequencyGrid::cfs(0.0, b, 2, 3).unwrap();
        let expect = [0.0, b / 3.0, b / 2.0, 2.0 * b / 3.0];
        assert_eq!(g.k_count(), 4);
        for (x, e) in g.frequencies().iter().zip(expect) {
            assert!((x - e).abs() < 1e-3);
        }
        assert!(matches!(
            FrequencyGrid::cfs(0.0, b, 3, 3),
            Err(Error::NotCoprime { m: 3, n: 3 })
        ));
        assert!(matches!(FrequencyGrid::cfs(0.0, b, 4, 6), Err(Error::NotCoprime { .. })));
    }

    #[test]
    fn cfs_auto_splits() {
        let g = FrequencyGrid::cfs_auto(0.0, 10e9, 35).unwrap();
        assert!(matches!(g.params(), SchemeParams::Cfs { m: 17, n: 18, unique_count: 34, .. }));
        match g.predicted_udr() {
            PredictedUdr::Finite(t) => assert!(rel(t, (35.0 * 35.0 - 1.0) / (4.0 * 10e9)) < 1e-12),
            other => panic!("{other:?}"),
        }
        let ufs = FrequencyGrid::ufs(0.0, 10e9, 35).unwrap();
        if let (PredictedUdr::Finite(c), PredictedUdr::Finite(u)) = (g.predicted_udr(), ufs.predicted_udr()) {
            // (K^2-1)/4 / (K-1) = (K+1)/4 = 9 for K = 35, close to K/4 = 8.75
            assert!(rel(c / u, 9.0) < 1e-12);
        }
        let g = FrequencyGrid::cfs_auto(0.0, 10e9, 5).unwrap();
        assert!(matches!(g.params(), SchemeParams::Cfs { m: 2, n: 3, .. }));
        assert!(FrequencyGrid::cfs_auto(0.0, 10e9, 4).is_err());
        // even budgets
        let g = FrequencyGrid::cfs_auto(0.0, 10e9, 120).unwrap();
        assert!(matches!(g.params(), SchemeParams::Cfs { m: 59, n: 61, .. }));
        let g = FrequencyGrid::cfs_auto(0.0, 10e9, 150).unwrap();
        assert!(matches!(g.params(), SchemeParams::Cfs { m: 74, n: 75, .. }));
    }

    #[test]
    fn nfs_two_two() {
        let b = 4e9;
        let g = FrequencyGrid::nfs(0.0, b, 2, 2).unwrap();
        assert_eq!(g.frequencies(), &[b / 4.0, b / 2.0, b]);
        assert!(FrequencyGrid::nfs(0.0, b, 1, 3).is_err());
        let g = FrequencyGrid::nfs(0.0, 10e9, 10, 10).unwrap();
        match g.predicted_udr() {
            PredictedUdr::Finite(t) => assert!(rel(t, 10e-9) < 1e-12),
            other => panic!("{other:?}"),
        }
        let g = FrequencyGrid::nfs_auto(0.0, 10e9, 21).unwrap();
        assert!(matches!(g.params(), SchemeParams::Nfs { n1: 10, n2: 11, unique_count: 20, .. }));
        let g = FrequencyGrid::nfs_auto(0.0, 10e9, 20).unwrap();
        assert!(matches!(g.params(), SchemeParams::Nfs { n1: 10, n2: 10, unique_count: 19, .. }));
    }

    #[test]
    fn pfs_parameters_k35() {
        let g = FrequencyGrid::pfs(370e9, 10e9, 35).unwrap();
        let SchemeParams::Pfs { a, kappa } = *g.params() else {
            panic!("not pfs")
        };
        assert!(rel(a, 3.0 * 10e9 / 34f64.powi(3)) < 1e-15);
        assert!(rel(a, 7.6328e5) < 1e-4);
        assert!(rel(kappa, 2.20588e8) < 1e-5);
        assert_eq!(g.frequencies()[0], 370e9);
        assert_eq!(g.frequencies()[34], 380e9);
        assert!(rel(g.local_step(18).unwrap(), kappa) < 1e-15);
        assert!(rel(g.local_step(1).unwrap(), 2.0 * kappa) < 1e-15);
        assert!(rel(g.local_step(35).unwrap(), 2.0 * kappa) < 1e-15);
        assert_eq!(g.predicted_udr(), PredictedUdr::Unbounded);
        let (lo, hi) = g.step_extrema();
        assert!((hi / lo - 2.0).abs() < 0.1, "step ratio {}", hi / lo);
    }

    #[test]
    fn local_step_on_uniform_and_bounds() {
        let g = FrequencyGrid::ufs(100e9, 10e9, 11).unwrap();
        for i in 1..=11 {
            assert!(rel(g.local_step(i).unwrap(), 1e9) < 1e-9);
        }
        assert!(matches!(g.local_step(0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(g.local_step(12), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn pfs_rejects_small_k() {
        assert!(FrequencyGrid::pfs(0.0, 1e9, 3).is_err());
    }

    #[test]
    fn custom_udr_unknown() {
        let g = FrequencyGrid::custom(vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(g.predicted_udr(), PredictedUdr::Unknown);
        assert!(FrequencyGrid::custom(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn scheme_file_keeps_frequencies_authoritative() {
        let g = FrequencyGrid::pfs(280e9, 20e9, 40).unwrap();
        let mut file = g.to_scheme_file();
        file.params = serde_json::json!({"bogus": 1});
        let back = FrequencyGrid::from_scheme_file(file).unwrap();
        assert_eq!(back.frequencies(), g.frequencies());
        assert_eq!(back.scheme(), Scheme::Custom);
    }
}
