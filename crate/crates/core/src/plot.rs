//! Plot data files (CSV) and plain SVG renderings of the missingness
//! diagnostics and the strategy comparison.

use std::fmt::Write as _;

use crate::diagnostics::{ConditionRate, MarginalSummary};
use crate::domain::StudyDesign;
use crate::metrics::SensitivityRow;
use crate::report::format_number;

/// Half-width multiplier of the error bars in the strategy comparison.
pub const ERROR_BAR_Z: f64 = 1.96;

fn write_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn beeswarm_csv(rates: &[ConditionRate]) -> String {
    write_csv(
        &["method", "condition_id", "rate"],
        rates
            .iter()
            .map(|r| vec![r.method.clone(), r.condition_id.to_string(), format_number(r.rate)]),
    )
}

pub fn marginal_csv(rows: &[MarginalSummary]) -> String {
    write_csv(
        &["method", "factor", "level", "min", "q1", "median", "q3", "max", "mean", "highlight"],
        rows.iter().map(|r| {
            vec![
                r.method.clone(),
                r.factor.clone(),
                r.level.clone(),
                format_number(r.min),
                format_number(r.q1),
                format_number(r.median),
                format_number(r.q3),
                format_number(r.max),
                format_number(r.mean),
                r.highlight.to_string(),
            ]
        }),
    )
}

pub fn strategy_comparison_csv(rows: &[SensitivityRow], design: &StudyDesign) -> String {
    write_csv(
        &["condition_id", "condition", "method", "measure", "strategy", "value", "mcse", "n_used", "missing_rate"],
        rows.iter().map(|r| {
            vec![
                r.condition_id.to_string(),
                design.condition_label(r.condition_id),
                r.method.clone(),
                r.measure.to_string(),
                r.strategy.clone(),
                r.value.value().map(format_number).unwrap_or_else(|| "NA".into()),
                r.mcse.map(format_number).unwrap_or_else(|| "NA".into()),
                r.n_used.to_string(),
                format_number(r.missing_rate),
            ]
        }),
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const ROW_H: f64 = 28.0;
const LEFT: f64 = 160.0;
const PLOT_W: f64 = 420.0;
const TOP: f64 = 30.0;

fn svg_open(s: &mut String, height: f64, title: &str) {
    let width = LEFT + PLOT_W + 40.0;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="16" font-size="13">{}</text>"#, LEFT, escape(title));
}

/// Horizontal axis for [lo, hi] at `y`, five ticks.
fn axis(s: &mut String, y: f64, lo: f64, hi: f64) {
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#, LEFT + PLOT_W);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let x = LEFT + PLOT_W * i as f64 / 4.0;
        let _ = writeln!(s, r#"<line x1="{x}" y1="{y}" x2="{x}" y2="{}" stroke="black"/>"#, y + 4.0);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, y + 16.0, format_number(v));
    }
}

fn scale(v: f64, lo: f64, hi: f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    LEFT + PLOT_W * ((v - lo) / span).clamp(0.0, 1.0)
}

/// One strip per method with a dot per condition; equal rates are stacked
/// vertically so no point hides another.
pub fn beeswarm_svg(rates: &[ConditionRate]) -> String {
    let mut methods: Vec<&str> = rates.iter().map(|r| r.method.as_str()).collect();
    methods.dedup();
    let height = TOP + ROW_H * 2.0 * methods.len() as f64 + 40.0;
    let mut s = String::new();
    svg_open(&mut s, height, "Condition-wise missingness rate by method");
    for (i, m) in methods.iter().enumerate() {
        let yc = TOP + ROW_H * (2.0 * i as f64 + 1.0);
        let _ = writeln!(s, r#"<text x="{}" y="{yc}" text-anchor="end" dominant-baseline="middle">{}</text>"#, LEFT - 8.0, escape(m));
        let mut placed: Vec<(f64, usize)> = Vec::new();
        for r in rates.iter().filter(|r| r.method == *m) {
            let x = scale(r.rate, 0.0, 1.0);
            let k = placed.iter().filter(|(px, _)| (px - x).abs() < 4.0).count();
            placed.push((x, k));
            let dy = if k % 2 == 0 { 1.0 } else { -1.0 } * (k.div_ceil(2) as f64) * 3.5;
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{:.2}" r="2" fill="steelblue"><title>condition {}: {}</title></circle>"#,
                yc + dy.clamp(-ROW_H + 2.0, ROW_H - 2.0),
                r.condition_id,
                format_number(r.rate)
            );
        }
    }
    axis(&mut s, height - 30.0, 0.0, 1.0);
    s.push_str("</svg>\n");
    s
}

/// Box glyphs (min, quartiles, max) per method and factor level; a diamond
/// marks the mean, red when highlighted.
pub fn marginal_svg(rows: &[MarginalSummary]) -> String {
    let height = TOP + ROW_H * rows.len() as f64 + 40.0;
    let mut s = String::new();
    svg_open(&mut s, height, "Marginal missingness rates by factor level");
    for (i, r) in rows.iter().enumerate() {
        let yc = TOP + ROW_H * (i as f64 + 0.5);
        let label = format!("{} {}={}", r.method, r.factor, r.level);
        let _ = writeln!(s, r#"<text x="{}" y="{yc}" text-anchor="end" dominant-baseline="middle">{}</text>"#, LEFT - 8.0, escape(&label));
        let x = |v: f64| scale(v, 0.0, 1.0);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{yc}" x2="{:.2}" y2="{yc}" stroke="black"/>"#, x(r.min), x(r.max));
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{}" width="{:.2}" height="12" fill="white" stroke="black"/>"#,
            x(r.q1),
            yc - 6.0,
            (x(r.q3) - x(r.q1)).max(0.5)
        );
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{}" x2="{:.2}" y2="{}" stroke="black" stroke-width="2"/>"#, x(r.median), yc - 6.0, x(r.median), yc + 6.0);
        let (mx, colour) = (x(r.mean), if r.highlight { "red" } else { "grey" });
        let _ = writeln!(
            s,
            r#"<polygon points="{mx:.2},{} {:.2},{yc} {mx:.2},{} {:.2},{yc}" fill="{colour}"/>"#,
            yc - 4.0,
            mx + 4.0,
            yc + 4.0,
            mx - 4.0
        );
    }
    axis(&mut s, height - 30.0, 0.0, 1.0);
    s.push_str("</svg>\n");
    s
}

/// Dot and error bar (value ± 1.96 MCSE) per row, grouped by condition,
/// method and measure.
pub fn strategy_comparison_svg(rows: &[SensitivityRow]) -> String {
    let finite: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.value.value().map(|v| (v, r.mcse.unwrap_or(0.0))))
        .flat_map(|(v, m)| [v - ERROR_BAR_Z * m, v + ERROR_BAR_Z * m])
        .filter(|v| v.is_finite())
        .collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi.max(lo + 1e-9)) } else { (0.0, 1.0) };
    let height = TOP + ROW_H * rows.len() as f64 + 40.0;
    let mut s = String::new();
    svg_open(&mut s, height, "Performance by missingness handling strategy (bars: 1.96 MCSE)");
    for (i, r) in rows.iter().enumerate() {
        let yc = TOP + ROW_H * (i as f64 + 0.5);
        let label = format!("c{} {} {} [{}]", r.condition_id, r.method, r.measure, r.strategy);
        let _ = writeln!(s, r#"<text x="{}" y="{yc}" text-anchor="end" dominant-baseline="middle">{}</text>"#, LEFT - 8.0, escape(&label));
        let Some(v) = r.value.value().filter(|v| v.is_finite()) else {
            let _ = writeln!(s, r#"<text x="{LEFT}" y="{yc}" dominant-baseline="middle" fill="grey">not analyzed</text>"#);
            continue;
        };
        if let Some(m) = r.mcse {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{yc}" x2="{:.2}" y2="{yc}" stroke="black"/>"#,
                scale(v - ERROR_BAR_Z * m, lo, hi),
                scale(v + ERROR_BAR_Z * m, lo, hi)
            );
        }
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{yc}" r="3" fill="black"/>"#, scale(v, lo, hi));
    }
    axis(&mut s, height - 30.0, lo, hi);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates() -> Vec<ConditionRate> {
        let mut v = Vec::new();
        for m in ["A", "B"] {
            for c in 0..3 {
                v.push(ConditionRate {
                    method: m.into(),
                    condition_id: c,
                    rate: c as f64 * 0.1,
                });
            }
        }
        v
    }

    #[test]
    fn beeswarm_rows() {
        let csv = beeswarm_csv(&rates());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,condition_id,rate");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[3], "A,2,0.2");
        let svg = beeswarm_svg(&rates());
        assert_eq!(svg.matches("<circle").count(), 6);
    }

    #[test]
    fn marginal_highlight_column() {
        let row = MarginalSummary {
            method: "A".into(),
            factor: "k".into(),
            level: "10".into(),
            min: 0.0,
            q1: 0.0,
            median: 0.0,
            q3: 0.002,
            max: 0.008,
            mean: 0.002,
            highlight: true,
        };
        let csv = marginal_csv(std::slice::from_ref(&row));
        assert_eq!(csv.lines().nth(1).unwrap(), "A,k,10,0,0,0,0.002,0.008,0.002,true");
        assert!(marginal_svg(&[row]).contains("fill=\"red\""));
    }
}
