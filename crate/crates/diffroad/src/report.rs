//! Metric tables and histogram plots.

use std::fmt::Write;

use diffroad_core::metrics::{Histogram, MetricRow};
use serde::Serialize;

use crate::config::MetricsConfig;

pub fn text_table(rows: &[MetricRow], toggles: &MetricsConfig) -> String {
    let mut head = vec!["type", "gen", "real"];
    if toggles.hd {
        head.push("HD");
    }
    if toggles.jsd {
        head.extend(["JSD-RL", "JSD-CPD"]);
    }
    if toggles.sisd {
        head.push("SISD");
    }
    let mut lines = vec![head.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for r in rows {
        let mut cells = vec![
            r.scenario_type.map_or("all".to_string(), |t| t.name().to_string()),
            r.generated.to_string(),
            r.real.to_string(),
        ];
        if toggles.hd {
            cells.push(format!("{:.4}", r.hd));
        }
        if toggles.jsd {
            cells.push(format!("{:.4}", r.jsd_rl));
            cells.push(format!("{:.4}", r.jsd_cpd));
        }
        if toggles.sisd {
            cells.push(format!("{:.4}", r.sisd));
        }
        lines.push(cells);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, l) in lines.iter().enumerate() {
        let row: Vec<String> = l
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", row.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct MetricsReport<'a> {
    pub config_hash: &'a str,
    pub seed: u64,
    pub rows: &'a [MetricRow],
}

/// Side-by-side bars of two histograms over the same bins.
pub fn histogram_svg(title: &str, real: &Histogram, generated: &Histogram) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let bins = real.probs.len().max(1);
    let peak = real
        .probs
        .iter()
        .chain(&generated.probs)
        .copied()
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let bw = (w - 2.0 * pad) / bins as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>");
    for (series, color, offset) in [(&real.probs, "#4477aa", 0.0), (&generated.probs, "#ee6677", 0.5)] {
        for (i, p) in series.iter().enumerate() {
            let bh = p / peak * (h - 2.0 * pad);
            let x = pad + (i as f64 + offset) * bw;
            let y = h - pad - bh;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{bh:.2}\" fill=\"{color}\"/>",
                bw / 2.0
            );
        }
    }
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>",
        y = h - pad,
        x2 = w - pad
    );
    let _ = writeln!(
        s,
        "<text x=\"{pad}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{:.1}</text>",
        h - pad + 16.0,
        real.lo
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.1}</text>",
        w - pad,
        h - pad + 16.0,
        real.hi
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\"><tspan fill=\"#4477aa\">real</tspan> / <tspan fill=\"#ee6677\">generated</tspan></text>",
        w - pad
    );
    s.push_str("</svg>\n");
    s
}
