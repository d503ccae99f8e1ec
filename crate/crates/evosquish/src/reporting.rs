//! Results-table rendering: reduction factors recomputed from raw bytes,
//! CSV/JSON emission, and dependency-free SVG charts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolve::GenerationRecord;

/// How many times smaller `size_bytes` is than `baseline_bytes`.
pub fn reduction_factor(baseline_bytes: f64, size_bytes: f64) -> f64 {
    baseline_bytes / size_bytes
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub generation: u32,
    pub model_size_bytes: u64,
    pub reduction_vs_seed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduction_vs_baseline: Option<f64>,
    pub top1_accuracy: f64,
    pub macs: u64,
    pub images_per_sec: f64,
}

/// Reduction factors are always recomputed from the raw byte counts; no
/// stored ratio is trusted.
pub fn build_report(
    records: &[GenerationRecord],
    baseline_bytes: Option<u64>,
) -> Result<Vec<ReportRow>> {
    let seed = records.first().ok_or(Error::MalformedFile {
        path: "evolution.csv".into(),
        detail: "no records".into(),
    })?;
    Ok(records
        .iter()
        .map(|r| ReportRow {
            generation: r.generation,
            model_size_bytes: r.model_size_bytes,
            reduction_vs_seed: reduction_factor(
                seed.model_size_bytes as f64,
                r.model_size_bytes as f64,
            ),
            reduction_vs_baseline: baseline_bytes
                .map(|b| reduction_factor(b as f64, r.model_size_bytes as f64)),
            top1_accuracy: r.top1_accuracy,
            macs: r.macs,
            images_per_sec: r.images_per_sec,
        })
        .collect())
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "generation,model_size_bytes,reduction_vs_seed,reduction_vs_baseline,top1,macs,images_per_sec\n",
    );
    for r in rows {
        let baseline = r
            .reduction_vs_baseline
            .map(|v| format!("{v:.2}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.2},{},{:.6},{},{:.3}\n",
            r.generation,
            r.model_size_bytes,
            r.reduction_vs_seed,
            baseline,
            r.top1_accuracy,
            r.macs,
            r.images_per_sec
        ));
    }
    out
}

pub fn report_json(rows: &[ReportRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

struct Chart<'a> {
    title: &'a str,
    ys: Vec<f64>,
    y_label: &'a str,
}

fn polyline(xs: &[f64], ys: &[f64], x0: f64, y0: f64, w: f64, h: f64) -> String {
    let (xmin, xmax) = (xs[0], xs[xs.len() - 1]);
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let yspan = if (ymax - ymin).abs() < 1e-12 { 1.0 } else { ymax - ymin };
    let xspan = if (xmax - xmin).abs() < 1e-12 { 1.0 } else { xmax - xmin };
    let points: Vec<String> = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| {
            let px = x0 + (x - xmin) / xspan * w;
            let py = y0 + h - (y - ymin) / yspan * h;
            format!("{px:.1},{py:.1}")
        })
        .collect();
    points.join(" ")
}

/// Two line charts: model size versus generation and top-1 versus
/// generation. Pure string assembly, no plotting dependency.
pub fn report_svg(records: &[GenerationRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::MalformedFile {
            path: "evolution.csv".into(),
            detail: "no records".into(),
        });
    }
    let xs: Vec<f64> = records.iter().map(|r| f64::from(r.generation)).collect();
    let charts = [
        Chart {
            title: "model size vs generation",
            ys: records.iter().map(|r| r.model_size_bytes as f64).collect(),
            y_label: "bytes",
        },
        Chart {
            title: "top-1 accuracy vs generation",
            ys: records.iter().map(|r| r.top1_accuracy).collect(),
            y_label: "top-1",
        },
    ];
    let (panel_w, panel_h, margin) = (360.0, 240.0, 40.0);
    let total_w = 2.0 * (panel_w + 2.0 * margin);
    let total_h = panel_h + 2.0 * margin;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {total_w} {total_h}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    for (i, chart) in charts.iter().enumerate() {
        let x0 = margin + i as f64 * (panel_w + 2.0 * margin);
        let y0 = margin;
        let ymin = chart.ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let ymax = chart.ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        svg.push_str(&format!(
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{panel_w}\" height=\"{panel_h}\" \
             fill=\"none\" stroke=\"#888\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x0 + panel_w / 2.0,
            y0 - 10.0,
            chart.title
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>\n",
            x0 - 4.0,
            y0 + 12.0,
            ymax
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>\n",
            x0 - 4.0,
            y0 + panel_h,
            ymin
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">generation</text>\n",
            x0 + panel_w / 2.0,
            y0 + panel_h + 24.0
        ));
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"#1f6feb\" stroke-width=\"2\" points=\"{}\"/>\n",
            polyline(&xs, &chart.ys, x0, y0, panel_w, panel_h)
        ));
        let _ = chart.y_label;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(g: u32, bytes: u64, top1: f64) -> GenerationRecord {
        GenerationRecord {
            generation: g,
            live_params: bytes / 4,
            model_size_bytes: bytes,
            macs: bytes * 10,
            top1_accuracy: top1,
            images_per_sec: 0.0,
            wallclock_train_sec: 0.0,
        }
    }

    #[test]
    fn halved_size_reports_two_x() {
        let records = vec![record(0, 2_910_504, 0.9), record(7, 1_455_252, 0.85)];
        let rows = build_report(&records, None).unwrap();
        assert!((rows[1].reduction_vs_seed - 2.0).abs() < 1e-9);
        assert!((rows[0].reduction_vs_seed - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reduction_ratios_from_fixture_sizes() {
        // 0.95 MB against a 4.915 MB baseline lands within 0.5% of 5.17X.
        let factor = reduction_factor(4_915_000.0, 950_000.0);
        assert!((factor / 5.17 - 1.0).abs() < 0.005, "factor {factor}");
        // And a 2.4 MB row against the same baseline is about 2.05X.
        let factor = reduction_factor(4_915_000.0, 2_400_000.0);
        assert!((factor / 2.05 - 1.0).abs() < 0.005, "factor {factor}");
    }

    #[test]
    fn csv_and_json_render() {
        let records = vec![record(0, 4000, 0.8), record(1, 2000, 0.78)];
        let rows = build_report(&records, Some(8000)).unwrap();
        let csv = report_csv(&rows);
        assert!(csv.starts_with("generation,"));
        assert!(csv.contains("2.00"));
        assert!(csv.contains("4.00")); // 8000 / 2000
        let json = report_json(&rows).unwrap();
        assert!(json.contains("\"reduction_vs_baseline\": 4.0"));
    }

    #[test]
    fn svg_has_two_polylines() {
        let records = vec![record(0, 4000, 0.8), record(1, 3000, 0.7), record(2, 2000, 0.75)];
        let svg = report_svg(&records).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("model size vs generation"));
    }
}
