//! Byte-stable report rendering: canonical JSON, CSV tables and SVG bar
//! charts.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

use crate::cost::{total_loss, CostError, LossComponents, LossWeights};
use crate::simulator::{Scene, SimulationReport};
use crate::speaq::AssignmentResult;

/// Significant digits kept for floats in canonical JSON.
pub const SIGNIFICANT_DIGITS: usize = 6;

/// Rounds `x` to [`SIGNIFICANT_DIGITS`] and prints the shortest form that
/// reads back to the rounded value. Integral values keep a trailing `.0`.
pub fn format_float(x: f64) -> Option<String> {
    if !x.is_finite() {
        return None;
    }
    let rounded: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("scientific notation parses");
    // Avoid "-0".
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    let mut s = format!("{rounded}");
    if !s.contains(['.', 'e', 'E']) {
        s.push_str(".0");
    }
    Some(s)
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |out: &mut String, n: usize| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                match n.as_f64().and_then(format_float) {
                    Some(s) => out.push_str(&s),
                    None => out.push_str("null"),
                }
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            // Scalar arrays stay on one line.
            if items.iter().all(|i| !i.is_array() && !i.is_object()) {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, item, indent);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, indent + 2);
                write_value(out, item, indent + 2);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                pad(out, indent + 2);
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[*k], indent + 2);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
    }
}

/// Serializes `value` with sorted keys, two-space indentation and
/// 6-significant-digit floats. Non-finite floats become `null`.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cell(x: f64) -> String {
    format_float(x).unwrap_or_default()
}

/// One CSV file per metric, keyed by file name.
pub fn report_tables(report: &SimulationReport) -> Result<Vec<(String, String)>, csv::Error> {
    let mut tables = Vec::new();

    let mut rows = vec![vec![
        "strategy".into(),
        "iou_threshold".into(),
        "ratio".into(),
    ]];
    for (name, s) in &report.strategies {
        for (t, r) in &s.suppressed_promising_ratio {
            rows.push(vec![name.clone(), t.clone(), cell(*r)]);
        }
    }
    tables.push(("suppressed_promising_ratio.csv".into(), csv_string(rows)?));

    let mut rows = vec![vec![
        "strategy".into(),
        "avg_d".into(),
        "avg_gts_per_query".into(),
    ]];
    for (name, s) in &report.strategies {
        rows.push(vec![name.clone(), cell(s.avg_d), cell(s.avg_gts_per_query)]);
    }
    tables.push(("summary.csv".into(), csv_string(rows)?));

    let mut header = vec!["group".to_string(), "gt".to_string()];
    header.extend(report.strategies.keys().cloned());
    let mut rows = vec![header];
    for (g, gt) in report.gt_frequency_per_group.iter().enumerate() {
        let mut row = vec![g.to_string(), cell(*gt)];
        row.extend(
            report
                .strategies
                .values()
                .map(|s| cell(s.prediction_frequency_per_group[g])),
        );
        rows.push(row);
    }
    tables.push((
        "prediction_frequency_per_group.csv".into(),
        csv_string(rows)?,
    ));

    for (name, s) in &report.strategies {
        let n = s.per_group_cross_tab.len();
        let mut header = vec!["gt_group".to_string()];
        header.extend((0..n).map(|q| format!("query_group_{q}")));
        let mut rows = vec![header];
        for (p, row) in s.per_group_cross_tab.iter().enumerate() {
            let mut r = vec![p.to_string()];
            r.extend(row.iter().map(|&v| cell(v)));
            rows.push(r);
        }
        tables.push((format!("cross_tab_{name}.csv"), csv_string(rows)?));
    }
    Ok(tables)
}

const PALETTE: [&str; 6] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860",
];

/// Grouped bar chart with one bar per series in each group.
pub fn bar_chart_svg(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let n_groups = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let (width, height, margin) = (640.0, 360.0, 50.0);
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin;
    let max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let slot = plot_w / n_groups.max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let base = height - margin;
    let _ = writeln!(
        s,
        r#"<line x1="{margin}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        width - margin
    );
    for (si, (_, values)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for (g, &v) in values.iter().enumerate() {
            let h = if v.is_finite() { v / max * plot_h } else { 0.0 };
            let x = margin + g as f64 * slot + slot * 0.1 + si as f64 * bar;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{h:.2}" fill="{color}"/>"#,
                base - h
            );
        }
    }
    for g in 0..n_groups {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">G{}</text>"#,
            margin + (g as f64 + 0.5) * slot,
            base + 16.0,
            g + 1
        );
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let y = margin + 14.0 * si as f64;
        let color = PALETTE[si % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            width - margin - 110.0,
            y - 9.0,
            width - margin - 95.0,
            y,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Per-group frequency chart: GT share next to each strategy's share of
/// labelled predictions.
pub fn frequency_svg(report: &SimulationReport) -> String {
    let mut series = vec![("gt".to_string(), report.gt_frequency_per_group.clone())];
    series.extend(
        report
            .strategies
            .iter()
            .map(|(n, s)| (n.clone(), s.prediction_frequency_per_group.clone())),
    );
    bar_chart_svg("Share per predicate group", &series)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub gt: usize,
    pub prediction: usize,
    pub cost: f64,
    pub loss: LossComponents,
    pub loss_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneAssignment {
    pub scene: usize,
    pub pairs: Vec<PairRecord>,
    pub d: Vec<usize>,
    pub total_cost: f64,
    /// Summed loss of unpaired predictions against the no-object target.
    pub unpaired_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignmentReport {
    pub strategy: String,
    pub scenes: Vec<SceneAssignment>,
}

/// Pairs, duplication counts, costs and losses of one strategy over `scenes`.
pub fn assignment_report(
    strategy: &str,
    scenes: &[Scene],
    results: &[AssignmentResult],
    lw: &LossWeights,
) -> Result<AssignmentReport, CostError> {
    let scenes = scenes
        .iter()
        .zip(results)
        .enumerate()
        .map(|(i, (scene, result))| {
            let pairs = result
                .pairs
                .iter()
                .map(|p| {
                    let loss = total_loss(Some(&scene.gts[p.gt]), &scene.preds[p.prediction], lw)?;
                    Ok(PairRecord {
                        gt: p.gt,
                        prediction: p.prediction,
                        cost: p.cost,
                        loss,
                        loss_total: loss.total(),
                    })
                })
                .collect::<Result<Vec<_>, CostError>>()?;
            let assigned = result.assigned_mask(scene.preds.len());
            let unpaired: Vec<f64> = scene
                .preds
                .iter()
                .zip(&assigned)
                .filter(|(_, &a)| !a)
                .map(|(p, _)| total_loss(None, p, lw).map(|l| l.total()))
                .collect::<Result<_, _>>()?;
            Ok(SceneAssignment {
                scene: i,
                pairs,
                d: result.d.clone(),
                total_cost: result.total_cost,
                unpaired_loss: unpaired.iter().sum(),
            })
        })
        .collect::<Result<Vec<_>, CostError>>()?;
    Ok(AssignmentReport {
        strategy: strategy.to_string(),
        scenes,
    })
}
