//! Subcommand implementations. Each one resolves its configuration, writes
//! it next to the outputs and then produces its artifacts.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::Serialize;

use sparse_sounder::analysis::{adjoint_nudft_cir, cdf, channel_stats, delay_rmse, pdap, pick_peaks, write_cdf_csv, write_pdap_csv};
use sparse_sounder::benchmark::{run_sweep, summarize, write_rows_csv};
use sparse_sounder::channel::fmt12;
use sparse_sounder::estimator::run;
use sparse_sounder::likelihood::{
    ambiguity_profile, default_delta, delay_grid, empirical_udr, mainlobe_width, predict_sidelobe_bands, profile,
    rectified_profile, sidelobe_metrics, SidelobeMetrics, WidthKind,
};
use sparse_sounder::{AbsorptionModel, EstimateSet, MeasurementSet, PathParams, PredictedUdr, Scheme, SoundingModel};

use crate::config::{config_error, RunConfig, SweepSpec};

/// Delays in nanoseconds, up to 6 significant digits, trailing zeros trimmed.
pub fn ns(t: f64) -> String {
    let v = t * 1e9;
    let digits = 6 - (v.abs().max(1e-300).log10().floor() as i32 + 1);
    let s = format!("{:.*}", digits.clamp(0, 15) as usize, v);
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    format!("{s} ns")
}

/// Mainlobe and sidelobe audit of a grid, written to `audit.json`.
#[derive(Debug, Serialize)]
pub struct Audit {
    pub scheme: Scheme,
    pub k: usize,
    pub f_start_hz: f64,
    pub bandwidth_hz: f64,
    pub predicted_udr_s: Option<f64>,
    pub search_horizon_s: f64,
    pub empirical_udr_s: Option<f64>,
    pub mainlobe_null_to_null_s: Option<f64>,
    pub mainlobe_minus3db_s: Option<f64>,
    pub max_sidelobe_db: Option<f64>,
    pub sidelobe_floor_db: Option<f64>,
    pub predicted_sidelobe_bands_s: Vec<(i64, f64, f64)>,
}

pub fn scheme(cfg: &RunConfig, horizon: Option<f64>) -> anyhow::Result<String> {
    let grid = cfg.scheme.build()?;
    cfg.persist()?;
    grid.save(cfg.out("scheme.json"))?;

    let b = grid.bandwidth();
    let delta = default_delta(&grid);
    let predicted = grid.predicted_udr();
    let horizon = horizon.unwrap_or(match predicted {
        PredictedUdr::Finite(t) => 1.5 * t,
        _ => 500e-9,
    });
    if !(horizon > 0.0) {
        bail!(config_error("audit horizon must be positive"));
    }
    let empirical = empirical_udr(&grid, horizon, -1.0, Some(delta))?;
    let amb = ambiguity_profile(&grid, horizon, delta)?;
    amb.write_csv(cfg.out("ambiguity.csv"))?;
    let metrics: Option<SidelobeMetrics> = sidelobe_metrics(&amb, 2.0 / b).ok();

    // mainlobe of a lossless noiseless path placed well inside the window
    let model = SoundingModel::single(grid.clone(), AbsorptionModel::none())?;
    let tau0 = 10.0 / b;
    let y = model.clean_response(&[PathParams::new(1.0.into(), tau0)])?;
    let p = profile(&y, &model, 0.0, std::f64::consts::FRAC_PI_2, (0.0, 2.0 * tau0), delta / 8.0)?;
    let nn = mainlobe_width(&p, WidthKind::NullToNull).ok();
    let m3 = mainlobe_width(&p, WidthKind::Minus3Db).ok();
    let bands = predict_sidelobe_bands(&grid, 3)?;

    let audit = Audit {
        scheme: grid.scheme(),
        k: grid.k_count(),
        f_start_hz: grid.f_start(),
        bandwidth_hz: b,
        predicted_udr_s: match predicted {
            PredictedUdr::Finite(t) => Some(t),
            _ => None,
        },
        search_horizon_s: horizon,
        empirical_udr_s: empirical,
        mainlobe_null_to_null_s: nn,
        mainlobe_minus3db_s: m3,
        max_sidelobe_db: metrics.as_ref().map(|m| m.max_sidelobe_db),
        sidelobe_floor_db: metrics.as_ref().map(|m| m.floor_db),
        predicted_sidelobe_bands_s: bands.bands.iter().map(|s| (s.order, s.band.0, s.band.1)).collect(),
    };
    std::fs::write(cfg.out("audit.json"), serde_json::to_string_pretty(&audit)?)?;

    let mut r = String::new();
    writeln!(r, "scheme {} with K = {} over {} to {} GHz", grid.scheme(), grid.k_count(), grid.f_start() / 1e9, (grid.f_start() + b) / 1e9)?;
    match predicted {
        PredictedUdr::Finite(t) => writeln!(r, "predicted UDR: {}", ns(t))?,
        other => writeln!(r, "predicted UDR: {other}")?,
    }
    match empirical {
        Some(t) => writeln!(r, "empirical UDR: {} (searched to {})", ns(t), ns(horizon))?,
        None => writeln!(r, "empirical UDR: none found (searched to {})", ns(horizon))?,
    }
    let width = |w: Option<f64>| w.map_or("n/a".to_string(), ns);
    writeln!(r, "mainlobe width: {} null to null, {} at -3 dB", width(nn), width(m3))?;
    if let Some(m) = &metrics {
        writeln!(r, "max sidelobe: {:.2} dB, median floor {:.2} dB", m.max_sidelobe_db, m.floor_db)?;
    }
    let shown: Vec<String> = bands
        .bands
        .iter()
        .filter(|s| s.order > 0)
        .map(|s| format!("m={}: {} to {}", s.order, ns(s.band.0), ns(s.band.1)))
        .collect();
    writeln!(r, "predicted sidelobe bands: {}", shown.join("; "))?;
    Ok(r)
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<String> {
    let ch = cfg.channel()?.clone();
    let grid = cfg.scheme.build()?;
    let model = cfg.model(grid)?;
    cfg.persist()?;
    let m = model.synthesize(&ch.paths, ch.snr_db, cfg.base_seed)?;
    let path = cfg.out("measurement.csv");
    m.save(&path)?;
    m.grid.save(cfg.out("scheme.json"))?;
    let snr = ch.snr_db.map_or("noiseless".into(), |s| format!("SNR {s} dB"));
    Ok(format!(
        "wrote {} rows ({} paths, {} x {} pointing(s), {snr}) to {}\n",
        m.samples.len(),
        ch.paths.len(),
        m.k(),
        m.m(),
        path.display()
    ))
}

pub fn extract(cfg: &RunConfig, measurement: &PathBuf) -> anyhow::Result<String> {
    let sage = cfg.sage_or_default();
    sage.validate().map_err(|e| config_error(e.to_string()))?;
    let m = MeasurementSet::load(measurement, None).with_context(|| format!("loading {}", measurement.display()))?;
    // the file's pointings are authoritative
    let mut aware = cfg.model(m.grid.clone())?;
    aware.pointings = m.pointings.clone();
    // plain SAGE is the classical estimator that ignores absorption
    let model = if sage.rectified { aware } else { aware.with_absorption(AbsorptionModel::none())? };
    cfg.persist()?;

    let est = run(&m, &sage, &model)?;
    est.save(cfg.out("estimates.json"))?;

    let delta = default_delta(&m.grid);
    let range = (sage.delay_lo, sage.delay_hi);
    let strongest = est.paths[0];
    let y0 = m.pointing_samples(0);
    let single = SoundingModel::new(m.grid.clone(), vec![m.pointings[0]], model.pattern, model.absorption.clone())?;
    let p = if sage.rectified {
        rectified_profile(y0, &single, strongest.azimuth, strongest.elevation, range, delta, strongest.delay)?
    } else {
        profile(y0, &single, strongest.azimuth, strongest.elevation, range, delta)?
    };
    p.write_csv(cfg.out("profile.csv"))?;
    write_pdap_csv(&pdap(&m, &delay_grid(range.0, range.1, delta)?)?, cfg.out("pdap.csv"))?;

    let mut r = String::new();
    let kind = if sage.rectified { "LR-SAGE" } else { "SAGE" };
    writeln!(r, "{kind}: {} path(s) after {} iteration(s)", est.paths.len(), est.iterations_used)?;
    for (i, q) in est.paths.iter().enumerate() {
        writeln!(
            r,
            "  path {}: delay {} s, |alpha| {}, phase {} rad, az {} rad, el {} rad",
            i + 1,
            fmt12(q.delay),
            fmt12(q.amplitude.norm()),
            fmt12(q.amplitude.arg()),
            fmt12(q.azimuth),
            fmt12(q.elevation)
        )?;
    }
    for w in &est.warnings {
        writeln!(r, "warning: {w}")?;
    }
    if let Some(truth) = &m.truth {
        let top = truth.len().min(est.paths.len());
        let rmse = delay_rmse(&est.paths, truth, top)?;
        writeln!(r, "delay RMSE vs truth ({top} strongest): {}", ns(rmse))?;
        if rmse > 0.01e-9 {
            writeln!(r, "WARNING: delay RMSE above 0.01 ns, the extraction did not resolve the channel")?;
        }
    }
    Ok(r)
}

pub fn benchmark(cfg: &RunConfig) -> anyhow::Result<String> {
    let sweep = cfg.sweep_config()?;
    cfg.persist()?;
    let rows = run_sweep(&sweep)?;
    write_rows_csv(&rows, cfg.out("rmse.csv"))?;
    let points = summarize(&rows);
    let mut csv = String::from("scheme,rectified,ma,k,rmse_s\n");
    let mut r = String::new();
    writeln!(r, "{:<6}{:<10}{:<6}{:>6}  rmse", "scheme", "estimator", "ma", "k")?;
    for p in &points {
        writeln!(csv, "{},{},{},{},{}", p.scheme, p.rectified, p.ma, p.k, fmt12(p.rmse_s))?;
        let est = if p.rectified { "lr-sage" } else { "sage" };
        writeln!(r, "{:<6}{:<10}{:<6}{:>6}  {}", p.scheme, est, if p.ma { "on" } else { "off" }, p.k, ns(p.rmse_s))?;
    }
    std::fs::write(cfg.out("rmse_summary.csv"), csv)?;
    writeln!(r, "wrote {} rows to {}", rows.len(), cfg.out("rmse.csv").display())?;
    Ok(r)
}

/// Paths from an estimate file, or from CIR peak picking on a measurement.
fn paths_of(file: &PathBuf, threshold_db: f64, max_delay: f64) -> anyhow::Result<Vec<PathParams>> {
    if file.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        return Ok(EstimateSet::load(file)?.paths.into_iter().filter(|p| p.amplitude.norm() > 0.0).collect());
    }
    let m = MeasurementSet::load(file, None)?;
    // native IDFT bins; off-bin evaluation would turn sidelobes into peaks
    let taus = delay_grid(0.0, max_delay, 1.0 / m.grid.bandwidth())?;
    // the pointing with the strongest CIR peak stands in for the channel
    let mut best: Option<(f64, Vec<PathParams>)> = None;
    for i in 0..m.m() {
        let y = m.pointing_samples(i);
        let cir = adjoint_nudft_cir(y, &m.grid, &taus)?;
        let peak = cir.response[cir.peak_index()].norm();
        if best.as_ref().is_none_or(|(b, _)| peak > *b) {
            best = Some((peak, pick_peaks(y, &m.grid, &cir, threshold_db)?));
        }
    }
    Ok(best.map(|b| b.1).unwrap_or_default())
}

pub fn stats(cfg: &RunConfig, files: &[PathBuf], threshold_db: f64, max_delay: f64) -> anyhow::Result<String> {
    if files.is_empty() {
        bail!(config_error("stats needs at least one measurement or estimate file"));
    }
    cfg.persist()?;
    let mut table = String::from("file,n_paths,path_loss_db,rms_delay_spread_s\n");
    let (mut pl, mut ds) = (Vec::new(), Vec::new());
    let mut r = String::new();
    for f in files {
        let paths = paths_of(f, threshold_db, max_delay).with_context(|| format!("reading {}", f.display()))?;
        if paths.is_empty() {
            bail!("{}: no paths found", f.display());
        }
        let s = channel_stats(&paths)?;
        writeln!(table, "{},{},{},{}", f.display(), paths.len(), fmt12(s.path_loss_db), fmt12(s.rms_delay_spread_s))?;
        writeln!(r, "{}: {} paths, path loss {:.3} dB, RMS delay spread {}", f.display(), paths.len(), s.path_loss_db, ns(s.rms_delay_spread_s))?;
        pl.push(s.path_loss_db);
        ds.push(s.rms_delay_spread_s);
    }
    std::fs::write(cfg.out("stats.csv"), table)?;
    write_cdf_csv(&cdf(&pl)?, "path_loss_db", cfg.out("path_loss_cdf.csv"))?;
    write_cdf_csv(&cdf(&ds)?, "rms_delay_spread_s", cfg.out("delay_spread_cdf.csv"))?;
    Ok(r)
}

/// Applies `--ks`, `--schemes` and `--trials` on top of the config sweep.
pub fn override_sweep(cfg: &mut RunConfig, ks: Option<Vec<usize>>, schemes: Option<Vec<Scheme>>, trials: Option<usize>) -> anyhow::Result<()> {
    if cfg.sweep.is_none() {
        let Some(ks) = ks.clone() else {
            return Ok(());
        };
        cfg.sweep = Some(SweepSpec {
            schemes: Scheme::ALL_GENERATED.to_vec(),
            ks,
            n_trials: 10,
            rectified: vec![false, true],
            absorption_on: vec![false, true],
            top_n: None,
            plain_knows_absorption: false,
        });
    }
    let s = cfg.sweep.as_mut().expect("set above");
    if let Some(ks) = ks {
        s.ks = ks;
    }
    if let Some(schemes) = schemes {
        s.schemes = schemes;
    }
    if let Some(t) = trials {
        s.n_trials = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ns_formatting() {
        assert_eq!(ns(3.4e-9), "3.4 ns");
        assert_eq!(ns(200e-9), "200 ns");
        assert_eq!(ns(1.234567e-12), "0.00123457 ns");
        assert_eq!(ns(0.0), "0 ns");
    }
}
