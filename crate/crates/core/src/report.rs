//! Text tables and SVG plots, each a pure function of logged results.
//!
//! Tables are pipe-separated and column-aligned, so they read well in a
//! terminal and render as Markdown.

use std::fmt::Write as _;

use crate::adaptation::{AblationResult, RunRecord, Sweep, SweepResult};
use crate::metrics::{MeanStd, MetricsReport};

/// Row label of the unadapted source model.
pub const BASELINE_LABEL: &str = "w/o adaptation";
/// Row label of the adapted model.
pub const ADAPTED_LABEL: &str = "MCDA";

fn pm(v: &MeanStd) -> String {
    format!("{:.2} ± {:.2}", v.mean, v.std)
}

/// Aligns `rows` into a pipe table with a rule under the first `header_rows`.
fn render(rows: &[Vec<String>], header_rows: usize) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = (0..cols)
            .map(|c| {
                let s = row.get(c).map(String::as_str).unwrap_or("");
                format!("{s}{}", " ".repeat(widths[c] - s.chars().count()))
            })
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i + 1 == header_rows {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        }
    }
    out
}

fn metric_cells(r: &MetricsReport) -> Vec<String> {
    let asd = |a: Option<MeanStd>, excluded: usize| match a {
        Some(a) if excluded > 0 => format!("{} ({excluded} n/a)", pm(&a)),
        Some(a) => pm(&a),
        None => "n/a".to_string(),
    };
    let mut cells = Vec::with_capacity(6);
    for c in &r.classes {
        cells.push(pm(&c.dice));
        cells.push(asd(c.asd, c.asd_excluded));
    }
    cells.push(format!("{:.2}", r.avg_dice));
    cells.push(r.avg_asd.map_or("n/a".to_string(), |a| format!("{a:.2}")));
    cells
}

/// Per-class Dice and ASD, one row per labeled report.
pub fn metrics_table(rows: &[(&str, &MetricsReport)]) -> String {
    let mut table = vec![
        vec![
            "Method".to_string(),
            "Optic disc segmentation".to_string(),
            String::new(),
            "Optic cup segmentation".to_string(),
            String::new(),
            "Avg".to_string(),
            String::new(),
        ],
        std::iter::once(String::new())
            .chain((0..3).flat_map(|_| ["Dice [%]".to_string(), "ASD (pixel)".to_string()]))
            .collect(),
    ];
    for (label, report) in rows {
        let mut row = vec![label.to_string()];
        row.extend(metric_cells(report));
        table.push(row);
    }
    render(&table, 2)
}

/// Source model against adapted model on the same labeled test set.
pub fn comparison_table(baseline: &MetricsReport, adapted: &MetricsReport) -> String {
    metrics_table(&[(BASELINE_LABEL, baseline), (ADAPTED_LABEL, adapted)])
}

/// Comparison table straight from an adaptation record.
pub fn comparison_from_record(record: &RunRecord) -> Option<String> {
    Some(comparison_table(record.baseline.as_ref()?, record.final_metrics()?))
}

/// The four-row loss ablation: one check/cross column per loss term.
pub fn ablation_table(result: &AblationResult) -> String {
    let mut table = vec![
        ["L_Tseg", "L_bc", "L_fc", "Disc Dice [%]", "Cup Dice [%]", "Avg Dice [%]", "Avg ASD (pixel)"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>(),
    ];
    for row in &result.rows {
        let mark = |on: bool| if on { "✓" } else { "✗" }.to_string();
        let active = row.combination.active();
        let mut cells: Vec<String> = active.iter().map(|&a| mark(a)).collect();
        match row.record.final_metrics() {
            Some(m) => {
                cells.push(pm(&m.classes[0].dice));
                cells.push(pm(&m.classes[1].dice));
                cells.push(format!("{:.2}", m.avg_dice));
                cells.push(m.avg_asd.map_or("n/a".into(), |a| format!("{a:.2}")));
            }
            None => cells.extend(vec!["n/a".to_string(); 4]),
        }
        table.push(cells);
    }
    render(&table, 1)
}

/// Dice per class against each weight value of a sweep.
pub fn sweep_table(result: &SweepResult) -> String {
    let mut header = vec![result.sweep.symbol().to_string()];
    header.extend(result.points.iter().map(|(v, _)| format_value(*v)));
    let mut table = vec![header];
    for (label, pick) in [
        ("Disc Dice [%]", Some(0usize)),
        ("Cup Dice [%]", Some(1)),
        ("Avg Dice [%]", None),
    ] {
        let mut row = vec![label.to_string()];
        for (_, rec) in &result.points {
            row.push(rec.final_metrics().map_or("n/a".into(), |m| {
                format!("{:.2}", pick.map_or(m.avg_dice, |c| m.dice(c)))
            }));
        }
        table.push(row);
    }
    render(&table, 1)
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// One named series of y-values over categorical x positions.
pub struct Series<'a> {
    pub name: &'a str,
    pub values: Vec<f64>,
    pub color: &'a str,
}

/// Standalone SVG line chart with evenly spaced categorical x ticks.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, ticks: &[String], series: &[Series<'_>]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        lo = 0.0;
        hi = 100.0;
    }
    if hi - lo < 1.0 {
        let mid = (hi + lo) / 2.0;
        lo = mid - 0.5;
        hi = mid + 0.5;
    }
    let pad = (hi - lo) * 0.1;
    let (lo, hi) = (lo - pad, hi + pad);
    let n = ticks.len().max(1);
    let x_at = |i: usize| {
        if n == 1 {
            left + pw / 2.0
        } else {
            left + pw * i as f64 / (n - 1) as f64
        }
    };
    let y_at = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_at(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    for (i, t) in ticks.iter().enumerate() {
        let x = x_at(i);
        let _ = writeln!(
            svg,
            r#"<g class="xtick"><line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle">{}</text></g>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 20.0,
            escape(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.1},{:.1}", x_at(i), y_at(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            s.color,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="3" fill="{}"/>"#, s.color);
        }
        let ly = top + 10.0 + 18.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            s.color,
            lx + 24.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Dice against the swept weight, one line per class plus the average.
pub fn sweep_plot_svg(result: &SweepResult) -> String {
    let ticks: Vec<String> = result.points.iter().map(|(v, _)| format_value(*v)).collect();
    let pick = |f: &dyn Fn(&MetricsReport) -> f64| -> Vec<f64> {
        result
            .points
            .iter()
            .map(|(_, r)| r.final_metrics().map_or(f64::NAN, f))
            .collect()
    };
    let series = [
        Series {
            name: "Optic disc",
            values: pick(&|m| m.dice(0)),
            color: "#1f77b4",
        },
        Series {
            name: "Optic cup",
            values: pick(&|m| m.dice(1)),
            color: "#d62728",
        },
        Series {
            name: "Avg",
            values: pick(&|m| m.avg_dice),
            color: "#2ca02c",
        },
    ];
    let symbol = result.sweep.symbol();
    line_plot_svg(
        &format!("Dice under varying {symbol}"),
        symbol,
        "Dice [%]",
        &ticks,
        &series,
    )
}

/// File stem for a sweep's table and plot.
pub fn sweep_stem(sweep: Sweep) -> &'static str {
    match sweep {
        Sweep::Alpha => "sweep_alpha",
        Sweep::Beta => "sweep_beta",
    }
}
