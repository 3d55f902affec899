//! Plot and table emission from sweep results: coverage and W1 versus
//! generator sparsity, one series per (method, s_d). SVG is rendered
//! directly with fixed-precision formatting, so identical input yields
//! byte-identical files.

use crate::error::{Error, Result};
use crate::sweep::{aggregate, AggregateRow, SweepRow};
use std::path::Path;

pub struct Series {
    pub label: String,
    /// (x, y), ascending x.
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

const W: f64 = 640.0;
const H: f64 = 440.0;
const ML: f64 = 62.0;
const MR: f64 = 170.0;
const MT: f64 = 42.0;
const MB: f64 = 52.0;

fn fmt(v: f64) -> String {
    format!("{:.2}", v)
}

fn fmt_tick(v: f64) -> String {
    format!("{:.3}", v)
}

fn fmt_coord(v: f64) -> String {
    format!("{:.2}", v)
}

/// Renders series on shared axes. y_range pins the scale (coverage sits in
/// [0,1]); when absent the range fits the data with 10% headroom.
pub fn line_plot_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    y_range: Option<(f64, f64)>,
) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Config("nothing to plot".into()));
    }
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let (mut x0, mut x1) = min_max(&xs);
    if x0 == x1 {
        x0 -= 0.05;
        x1 += 0.05;
    }
    let (y0, y1) = match y_range {
        Some(r) => r,
        None => {
            let (lo, hi) = min_max(&ys);
            let pad = if hi == lo { lo.abs().max(1e-3) * 0.1 } else { (hi - lo) * 0.1 };
            ((lo - pad).min(0.0), hi + pad)
        }
    };
    let pw = W - ML - MR;
    let ph = H - MT - MB;
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MT + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        fmt_coord(ML + pw / 2.0),
        title
    ));

    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let gx = px(fx);
        let gy = py(fy);
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#dddddd\"/>\n",
            fmt_coord(gx),
            fmt_coord(MT),
            fmt_coord(MT + ph)
        ));
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" stroke=\"#dddddd\"/>\n",
            fmt_coord(ML),
            fmt_coord(ML + pw),
            fmt_coord(gy)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt_coord(gx),
            fmt_coord(MT + ph + 18.0),
            fmt(fx)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            fmt_coord(ML - 6.0),
            fmt_coord(gy + 4.0),
            fmt_tick(fy)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\"/>\n",
        fmt_coord(ML),
        fmt_coord(MT),
        fmt_coord(pw),
        fmt_coord(ph)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        fmt_coord(ML + pw / 2.0),
        fmt_coord(H - 14.0),
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        fmt_coord(MT + ph / 2.0),
        fmt_coord(MT + ph / 2.0),
        y_label
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() > 1 {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{},{}", fmt_coord(px(x)), fmt_coord(py(y))))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                pts.join(" "),
                color
            ));
        }
        for &(x, y) in &s.points {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n",
                fmt_coord(px(x)),
                fmt_coord(py(y)),
                color
            ));
        }
        let ly = MT + 14.0 + i as f64 * 18.0;
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"1.5\"/>\n",
            fmt_coord(W - MR + 12.0),
            fmt_coord(ly),
            fmt_coord(W - MR + 34.0),
            color
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            fmt_coord(W - MR + 40.0),
            fmt_coord(ly + 4.0),
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

/// One series per (method, s_d), ordered; points are seed-means over s_g.
fn metric_series(agg: &[AggregateRow], metric: &dyn Fn(&AggregateRow) -> Option<f64>) -> Vec<Series> {
    let mut keys: Vec<(crate::sweep::Method, u64)> = agg
        .iter()
        .map(|r| (r.method, r.s_d.to_bits()))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, s_d_bits)| {
            let s_d = f64::from_bits(s_d_bits);
            let mut points: Vec<(f64, f64)> = agg
                .iter()
                .filter(|r| r.method == method && r.s_d.to_bits() == s_d_bits)
                .filter_map(|r| metric(r).map(|y| (r.s_g, y)))
                .collect();
            points.sort_by_key(|p| p.0.to_bits());
            Series {
                label: format!("{} sD={:.2}", method.as_str(), s_d),
                points,
            }
        })
        .filter(|s| !s.points.is_empty())
        .collect()
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.4}", x),
        None => "-".into(),
    }
}

fn opt_pm(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{:.4} ± {:.4}", m, s),
        _ => "-".into(),
    }
}

pub fn summary_markdown(agg: &[AggregateRow]) -> String {
    let mut out = String::from(
        "| method | s_G | s_D | n | div | coverage | hq_ratio | w1 | itop | train flops | test flops |\n\
         |---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in agg {
        out.push_str(&format!(
            "| {} | {:.2} | {:.2} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.method.as_str(),
            r.s_g,
            r.s_d,
            r.n,
            r.n_diverged,
            opt_pm(r.coverage_mean, r.coverage_std),
            opt_pm(r.hq_mean, r.hq_std),
            opt_pm(r.w1_mean, r.w1_std),
            opt(r.itop_rate_g_mean),
            opt(r.training_flops_ratio),
            opt(r.testing_flops_ratio),
        ));
    }
    out
}

/// Writes coverage.svg, w1.svg, and summary.md from sweep rows.
pub fn write_report(rows: &[SweepRow], out_dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("results contain no rows".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let agg = aggregate(rows);
    let cov = metric_series(&agg, &|r| r.coverage_mean);
    let w1 = metric_series(&agg, &|r| r.w1_mean);
    std::fs::write(
        out_dir.join("coverage.svg"),
        line_plot_svg(
            "Mode coverage vs generator sparsity",
            "s_G",
            "mode coverage",
            &cov,
            Some((0.0, 1.0)),
        )?,
    )?;
    std::fs::write(
        out_dir.join("w1.svg"),
        line_plot_svg(
            "Sliced W1 vs generator sparsity",
            "s_G",
            "sliced W1",
            &w1,
            None,
        )?,
    )?;
    std::fs::write(out_dir.join("summary.md"), summary_markdown(&agg))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::Method;

    fn row(method: Method, s_g: f64, seed: u64, coverage: f64, w1: f64) -> SweepRow {
        SweepRow {
            method,
            s_g,
            s_d: 0.5,
            seed,
            config_hash: "0".into(),
            run_dir: "runs/x".into(),
            diverged: false,
            steps_done: 10,
            coverage: Some(coverage),
            hq_ratio: Some(0.9),
            w1: Some(w1),
            itop_rate_g: 0.5,
            training_flops_ratio: 0.5,
            testing_flops_ratio: 0.5,
        }
    }

    #[test]
    fn empty_rows_error_not_empty_plot() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_report(&[], dir.path()).is_err());
    }

    #[test]
    fn single_row_renders_one_marker() {
        let dir = tempfile::tempdir().unwrap();
        write_report(&[row(Method::Stu, 0.9, 0, 0.8, 0.1)], dir.path()).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("coverage.svg")).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let rows = vec![
            row(Method::Stu, 0.5, 0, 0.9, 0.05),
            row(Method::Stu, 0.9, 0, 0.7, 0.12),
            row(Method::Static, 0.5, 0, 0.8, 0.07),
            row(Method::Static, 0.9, 0, 0.5, 0.20),
        ];
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_report(&rows, a.path()).unwrap();
        write_report(&rows, b.path()).unwrap();
        for f in ["coverage.svg", "w1.svg", "summary.md"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{} differs",
                f
            );
        }
    }

    #[test]
    fn series_split_by_method_and_sd() {
        let mut rows = vec![
            row(Method::Stu, 0.5, 0, 0.9, 0.05),
            row(Method::Stu, 0.9, 0, 0.7, 0.12),
            row(Method::Static, 0.5, 0, 0.8, 0.07),
        ];
        rows.push(SweepRow {
            s_d: 0.0,
            ..row(Method::Stu, 0.5, 1, 0.95, 0.04)
        });
        let agg = aggregate(&rows);
        let series = metric_series(&agg, &|r| r.coverage_mean);
        let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(
            labels,
            vec!["stu sD=0.00", "stu sD=0.50", "static sD=0.50"]
        );
        assert_eq!(series[1].points.len(), 2);
        // seed means: two rows at (stu, 0.5, 0.5) would average; here single seeds
        assert_eq!(series[1].points[0], (0.5, 0.9));
    }

    #[test]
    fn diverged_only_cell_is_dropped_from_series() {
        let mut bad = row(Method::Stu, 0.7, 0, 0.0, 0.0);
        bad.diverged = true;
        bad.coverage = None;
        bad.w1 = None;
        let rows = vec![row(Method::Stu, 0.5, 0, 0.9, 0.05), bad];
        let agg = aggregate(&rows);
        let series = metric_series(&agg, &|r| r.coverage_mean);
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].points.len(), 1);
        let md = summary_markdown(&agg);
        assert!(md.contains("| 1 | 1 | - |"));
    }

    #[test]
    fn summary_table_has_one_line_per_cell() {
        let rows = vec![
            row(Method::Stu, 0.5, 0, 0.9, 0.05),
            row(Method::Stu, 0.5, 1, 0.8, 0.06),
            row(Method::Static, 0.5, 0, 0.8, 0.07),
        ];
        let md = summary_markdown(&aggregate(&rows));
        assert_eq!(md.lines().count(), 2 + 2);
        assert!(md.contains("0.8500 ± 0.0707"));
    }
}
