//! Learning-curve figures: one SVG per environment, one curve per run mode
//! (mean over seeds with a 95% confidence band) and a dashed separator at
//! the day/night boundary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::metrics::{read_metrics, EpochRecord, Phase};
use crate::error::{Error, Result};

/// Mean and 95% normal-approximation half-width of `xs`.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub mode: String,
    /// `(epoch, mean, half-width)`
    pub points: Vec<(usize, f64, f64)>,
    pub runs: usize,
}

/// Aggregates runs per run mode; points exist where every run of the mode has a record.
pub fn curves(runs: &[Vec<EpochRecord>]) -> Vec<Curve> {
    let mut by_mode: BTreeMap<String, Vec<&Vec<EpochRecord>>> = BTreeMap::new();
    for run in runs.iter().filter(|r| !r.is_empty()) {
        by_mode.entry(run[0].run_mode.clone()).or_default().push(run);
    }
    by_mode
        .into_iter()
        .map(|(mode, group)| {
            let len = group.iter().map(|r| r.len()).min().unwrap_or(0);
            let points = (0..len)
                .map(|i| {
                    let ys: Vec<f64> = group.iter().map(|r| r[i].test_reward).collect();
                    let (m, ci) = mean_ci(&ys);
                    (group[0][i].global_epoch, m, ci)
                })
                .collect();
            Curve { mode, points, runs: group.len() }
        })
        .collect()
}

fn boundary(runs: &[Vec<EpochRecord>]) -> Option<f64> {
    runs.iter()
        .flatten()
        .filter(|r| r.phase == Phase::Night)
        .map(|r| r.global_epoch)
        .min()
        .map(|e| e as f64 - 0.5)
}

/// Reads every log, writes `<out>/<env>.svg` per environment and returns the paths.
pub fn plot_metrics(logs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if logs.is_empty() {
        return Err(Error::Config("plot needs at least one metrics log".into()));
    }
    let mut by_env: BTreeMap<String, Vec<Vec<EpochRecord>>> = BTreeMap::new();
    for path in logs {
        let records = read_metrics(path)?;
        let env = records
            .first()
            .map(|r| r.env.clone())
            .ok_or_else(|| Error::Validation(format!("{} holds no records", path.display())))?;
        by_env.entry(env).or_default().push(records);
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for (env, runs) in by_env {
        let path = out.join(format!("{}.svg", env.replace([':', '/'], "_")));
        draw(&path, &env, &runs).map_err(|e| Error::Validation(format!("plotting {env}: {e}")))?;
        written.push(path);
    }
    Ok(written)
}

fn draw(path: &Path, env: &str, runs: &[Vec<EpochRecord>]) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let curves = curves(runs);
    let max_x = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, m, ci) in curves.iter().flat_map(|c| &c.points) {
        lo = lo.min(m - ci);
        hi = hi.max(m + ci);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        hi += 0.5;
        lo -= 0.5;
    }
    let pad = 0.05 * (hi - lo);

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{env}: test reward"), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..max_x, (lo - pad)..(hi + pad))?;
    chart.configure_mesh().x_desc("epoch").y_desc("mean return").draw()?;

    for (i, curve) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        if curve.runs > 1 {
            let mut band: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.0 as f64, p.1 + p.2)).collect();
            band.extend(curve.points.iter().rev().map(|p| (p.0 as f64, p.1 - p.2)));
            chart.draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))?;
        }
        chart
            .draw_series(LineSeries::new(
                curve.points.iter().map(|p| (p.0 as f64, p.1)),
                color.stroke_width(2),
            ))?
            .label(format!("{} (n={})", curve.mode, curve.runs))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    if let Some(x) = boundary(runs) {
        let (y0, y1) = (lo - pad, hi + pad);
        let steps = 40;
        let dash = (y1 - y0) / steps as f64;
        chart.draw_series((0..steps).step_by(2).map(|k| {
            let a = y0 + k as f64 * dash;
            PathElement::new(vec![(x, a), (x, a + dash)], BLACK.stroke_width(1))
        }))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_of_constant_and_pair() {
        assert_eq!(mean_ci(&[3.0]), (3.0, 0.0));
        let (m, ci) = mean_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((ci - 1.96 * (2.0f64 / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_list_is_a_usage_error() {
        assert!(plot_metrics(&[], Path::new("/tmp")).unwrap_err().is_config());
    }
}
