//! CSV tables and standalone SVG plots for metrics and comparisons.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evalstats::compare::ComparisonReport;
use crate::evalstats::metrics::{MetricsReport, RocPoint, METRIC_NAMES};

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// One row per named report: counts and the five metrics.
pub fn metrics_csv(rows: &[(String, &MetricsReport)]) -> String {
    let mut s = String::from("name,n,tp,tn,fp,fn,accuracy,auc,precision,recall,f1\n");
    for (name, r) in rows {
        let c = r.confusion;
        let auc = r.auc.map_or(String::new(), |a| format!("{a:.6}"));
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{:.6},{auc},{:.6},{:.6},{:.6}",
            r.n, c.tp, c.tn, c.fp, c.fn_, r.accuracy, r.precision, r.recall, r.f1
        );
    }
    s
}

/// Mean and SD per model and metric plus every post-hoc test.
pub fn comparison_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("metric,model,mean,std\n");
    for m in &report.metrics {
        for (i, model) in report.models.iter().enumerate() {
            let _ = writeln!(s, "{},{model},{:.6},{:.6}", m.metric, m.means[i], m.stds[i]);
        }
    }
    s.push_str("\nmetric,test,a,b,statistic,p_raw,p_adjusted,significant\n");
    for m in &report.metrics {
        let stat = |v: Option<f64>| v.map_or("inf".to_string(), |x| format!("{x:.6}"));
        let _ = writeln!(
            s,
            "{},anova,,,{},{:.6e},{:.6e},{}",
            m.metric,
            stat(m.anova.statistic),
            m.anova.p_raw,
            m.anova.p_adjusted,
            m.anova.significant
        );
        for p in &m.pairwise {
            let r = &p.result;
            let _ = writeln!(
                s,
                "{},paired_t,{},{},{},{:.6e},{:.6e},{}",
                m.metric,
                p.a,
                p.b,
                stat(r.statistic),
                r.p_raw,
                r.p_adjusted,
                r.significant
            );
        }
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn svg_header(w: u32, h: u32) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// ROC curves on the unit square, one polyline per model.
pub fn roc_svg(curves: &[(String, &[RocPoint], Option<f64>)]) -> String {
    let (size, m) = (400.0, 50.0);
    let mut s = svg_header((size + 2.0 * m) as u32, (size + 2.0 * m) as u32);
    let x = |v: f64| m + v * size;
    let y = |v: f64| m + (1.0 - v) * size;
    let _ = writeln!(s, "<rect x=\"{m}\" y=\"{m}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"black\"/>");
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>",
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.1}</text>", x(v), y(0.0) + 16.0);
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>", x(0.0) - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">False positive rate</text>", x(0.5), y(0.0) + 36.0);
    let _ = writeln!(
        s,
        "<text transform=\"translate({:.1},{:.1}) rotate(-90)\" text-anchor=\"middle\">True positive rate</text>",
        x(0.0) - 34.0,
        y(0.5)
    );
    for (i, (name, pts, auc)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
        let label = match auc {
            Some(a) => format!("{name} (AUC {a:.3})"),
            None => name.clone(),
        };
        let ly = y(0.0) - 12.0 - 16.0 * (curves.len() - 1 - i) as f64;
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{ly:.1}\" fill=\"{color}\" text-anchor=\"end\">{label}</text>", x(1.0) - 8.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bars of mean metric values (with SD whiskers) per model.
pub fn grouped_bars_svg(report: &ComparisonReport) -> String {
    let (w, h, m) = (640.0, 360.0, 50.0);
    let mut s = svg_header(w as u32, h as u32);
    let plot_h = h - 2.0 * m;
    let group_w = (w - 2.0 * m) / METRIC_NAMES.len() as f64;
    let k = report.models.len() as f64;
    let bar_w = group_w * 0.8 / k;
    let y = |v: f64| m + (1.0 - v.clamp(0.0, 1.0)) * plot_h;
    let _ = writeln!(s, "<line x1=\"{m}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>", y(0.0), w - m, y(0.0));
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>", m - 6.0, y(v) + 4.0);
    }
    for (g, metric) in report.metrics.iter().enumerate() {
        let gx = m + g as f64 * group_w + group_w * 0.1;
        for (i, (&mean, &sd)) in metric.means.iter().zip(&metric.stds).enumerate() {
            let bx = gx + i as f64 * bar_w;
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                s,
                "<rect x=\"{bx:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\"/>",
                y(mean),
                bar_w * 0.9,
                y(0.0) - y(mean)
            );
            let cx = bx + bar_w * 0.45;
            let _ = writeln!(
                s,
                "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
                y(mean - sd),
                y(mean + sd)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            gx + group_w * 0.4,
            y(0.0) + 16.0,
            metric.metric
        );
    }
    for (i, model) in report.models.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let lx = m + 10.0 + 110.0 * i as f64;
        let _ = writeln!(s, "<rect x=\"{lx:.1}\" y=\"16\" width=\"12\" height=\"12\" fill=\"{color}\"/>");
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"26\">{model}</text>", lx + 16.0);
    }
    s.push_str("</svg>\n");
    s
}
