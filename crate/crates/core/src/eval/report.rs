//! Report emission: metrics.csv, friedman.csv, manifest.json, and one SVG
//! line plot of predicted-vs-actual per (model, ratio) cell. All output is
//! byte-deterministic for a given report.

use std::path::{Path, PathBuf};

use crate::eval::{EvalError, RatioSweepReport, SweepCell};
use crate::stats::FriedmanResult;

/// Formats with six significant digits, plain decimal notation.
pub fn format_significant(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

fn metrics_csv(report: &RatioSweepReport) -> String {
    let mut out = String::from("model,ratio,train_rmse,train_rmse_ci,val_rmse,val_rmse_ci\n");
    for label in &report.labels {
        for &ratio in &report.ratios {
            let cell = report.cell(label, ratio).expect("complete grid");
            let (train, train_ci, val, val_ci) = match (&cell.mean, &cell.ci) {
                (Some(mean), Some(ci)) => (
                    format_significant(mean.train.rmse),
                    format_significant(ci.train.rmse.half_width),
                    format_significant(mean.val.rmse),
                    format_significant(ci.val.rmse.half_width),
                ),
                (Some(mean), None) => (
                    format_significant(mean.train.rmse),
                    String::new(),
                    format_significant(mean.val.rmse),
                    String::new(),
                ),
                _ => (String::new(), String::new(), String::new(), String::new()),
            };
            out.push_str(&format!("{label},{:.2},{train},{train_ci},{val},{val_ci}\n", ratio));
        }
    }
    out
}

fn friedman_csv(rows: &[(String, FriedmanResult)]) -> String {
    let mut out = String::from("metric,df,chi_squared,p_value\n");
    for (name, result) in rows {
        out.push_str(&format!(
            "{name},{},{},{}\n",
            result.df,
            format_significant(result.chi_squared),
            format_significant(result.p_value),
        ));
    }
    out
}

fn plot_svg(cell: &SweepCell) -> String {
    const W: f64 = 800.0;
    const H: f64 = 300.0;
    const PAD: f64 = 40.0;
    let points = &cell.val_tail;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &(a, p) in points {
        min = min.min(a).min(p);
        max = max.max(a).max(p);
    }
    if !min.is_finite() || max <= min {
        min = 0.0;
        max = 1.0;
    }
    let n = points.len().max(2) as f64;
    let x_at = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n - 1.0);
    let y_at = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - min) / (max - min);
    let path = |pick: &dyn Fn(&(f64, f64)) -> f64| -> String {
        points
            .iter()
            .enumerate()
            .map(|(i, pair)| format!("{:.2},{:.2}", x_at(i), y_at(pick(pair))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let actual = path(&|p| p.0);
    let predicted = path(&|p| p.1);
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{pad}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">",
            "{label} at ratio {ratio:.2}: actual vs predicted (validation tail)</text>\n",
            "<text x=\"{pad}\" y=\"{h_lab}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">",
            "normalized target, {count} points, range [{lo}, {hi}]</text>\n",
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{actual}\"/>\n",
            "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.2\" points=\"{predicted}\"/>\n",
            "<rect x=\"{leg_x}\" y=\"10\" width=\"10\" height=\"3\" fill=\"#1f77b4\"/>",
            "<text x=\"{leg_tx}\" y=\"16\" font-family=\"sans-serif\" font-size=\"11\">actual</text>\n",
            "<rect x=\"{leg_x2}\" y=\"10\" width=\"10\" height=\"3\" fill=\"#d62728\"/>",
            "<text x=\"{leg_tx2}\" y=\"16\" font-family=\"sans-serif\" font-size=\"11\">predicted</text>\n",
            "</svg>\n"
        ),
        w = W,
        h = H,
        pad = PAD,
        h_lab = H - 10.0,
        label = cell.label,
        ratio = cell.ratio,
        count = points.len(),
        lo = format_significant(min),
        hi = format_significant(max),
        actual = actual,
        predicted = predicted,
        leg_x = W - 220.0,
        leg_tx = W - 205.0,
        leg_x2 = W - 130.0,
        leg_tx2 = W - 115.0,
    )
}

/// Writes metrics.csv, friedman.csv, manifest.json, and plots/*.svg into
/// `out_dir`, returning the created paths. Re-running on the same report
/// produces byte-identical files.
pub fn emit_report(
    report: &RatioSweepReport,
    friedman_rows: &[(String, FriedmanResult)],
    manifest_json: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let metrics_path = out_dir.join("metrics.csv");
    std::fs::write(&metrics_path, metrics_csv(report))?;
    written.push(metrics_path);

    let friedman_path = out_dir.join("friedman.csv");
    std::fs::write(&friedman_path, friedman_csv(friedman_rows))?;
    written.push(friedman_path);

    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, manifest_json)?;
    written.push(manifest_path);

    let plots_dir = out_dir.join("plots");
    std::fs::create_dir_all(&plots_dir)?;
    for cell in &report.cells {
        if cell.val_tail.is_empty() {
            continue;
        }
        let path = plots_dir.join(format!("{}_{:.2}.svg", cell.label, cell.ratio));
        std::fs::write(&path, plot_svg(cell))?;
        written.push(path);
    }
    Ok(written)
}
