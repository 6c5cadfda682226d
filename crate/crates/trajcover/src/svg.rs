//! Minimal deterministic SVG line charts built from a sweep summary.

use std::fmt::Write as _;

use crate::experiment::SummaryTable;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const PLOT: (f64, f64, f64, f64) = (70.0, 30.0, 560.0, 360.0); // left, top, right, bottom

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

impl LinePlot {
    /// Distinct x values are placed at evenly spaced positions in sorted order.
    pub fn render(&self) -> String {
        let mut xs: Vec<f64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let ys: Vec<f64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
        let (mut lo, mut hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = (hi - lo) * 0.05;
        let (lo, hi) = (lo - pad, hi + pad);
        let (l, t, r, b) = PLOT;
        let px = |x: f64| {
            let i = xs.iter().position(|&v| v == x).unwrap_or(0) as f64;
            if xs.len() <= 1 { (l + r) / 2.0 } else { l + (r - l) * i / (xs.len() - 1) as f64 }
        };
        let py = |y: f64| b - (b - t) * (y - lo) / (hi - lo);

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, (l + r) / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<polyline points="{l},{t} {l},{b} {r},{b}" fill="none" stroke="black"/>"#);
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let y = py(v);
            let _ = writeln!(s, r##"<line x1="{l}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#dddddd"/>"##);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, l - 6.0, y + 4.0, tick(v));
        }
        for &x in &xs {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, px(x), b + 16.0, tick(x));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, b + 40.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (t + b) / 2.0,
            (t + b) / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
            for &(x, y) in &series.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
            }
            let ly = t + 16.0 * i as f64;
            let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="4" fill="{color}"/>"#, r + 20.0, ly + 4.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, r + 38.0, ly + 10.0, escape(&series.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Seed-mean groups as (axis values by name, metric by name).
struct Group {
    axes: Vec<(String, String)>,
    values: Vec<(String, Option<f64>)>,
}

impl Group {
    fn axis(&self, name: &str) -> &str {
        self.axes.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str()).unwrap_or("")
    }

    fn value(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == name).and_then(|(_, v)| *v)
    }

    fn label_without(&self, skip: &[&str]) -> String {
        let parts: Vec<String> = self
            .axes
            .iter()
            .filter(|(k, _)| !skip.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        if parts.is_empty() { "all".into() } else { parts.join(" ") }
    }
}

fn groups(table: &SummaryTable) -> Vec<Group> {
    let header = table.mean_header();
    let n_axes = crate::experiment::SUMMARY_AXES.len() - 2;
    table
        .seed_means()
        .into_iter()
        .map(|(key, vals)| Group {
            axes: header[..n_axes].iter().cloned().zip(key).collect(),
            values: header[n_axes..].iter().cloned().zip(vals).collect(),
        })
        .collect()
}

/// Only axes that actually vary are used to label series.
fn constant_axes(gs: &[Group]) -> Vec<String> {
    let Some(first) = gs.first() else { return vec![] };
    first
        .axes
        .iter()
        .filter(|(k, v)| gs.iter().all(|g| g.axis(k) == v))
        .map(|(k, _)| k.clone())
        .collect()
}

fn xy_plot(gs: &[Group], x_axis: &str, x_of: impl Fn(&Group) -> Option<f64>, y: &str, title: &str, x_label: &str, filter: impl Fn(&Group) -> bool) -> LinePlot {
    let fixed = constant_axes(gs);
    let mut skip: Vec<&str> = fixed.iter().map(String::as_str).collect();
    skip.push(x_axis);
    let mut series: Vec<Series> = Vec::new();
    for g in gs.iter().filter(|g| filter(g)) {
        let (Some(x), Some(v)) = (x_of(g), g.value(y)) else { continue };
        let label = g.label_without(&skip);
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((x, v)),
            None => series.push(Series { label, points: vec![(x, v)] }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    LinePlot { title: title.into(), x_label: x_label.into(), y_label: y.into(), series }
}

/// The five report figures, as `(file name, svg)`.
pub fn sweep_plots(table: &SummaryTable) -> Vec<(String, String)> {
    let gs = groups(table);
    let num = |name: &'static str| move |g: &Group| g.axis(name).parse::<f64>().ok();
    let mut plots = vec![
        ("dac_vs_lambda.svg", xy_plot(&gs, "lambda", num("lambda"), "dac", "DAC vs off-road weight", "lambda", |_| true)),
        (
            "minade5_vs_data_fraction.svg",
            xy_plot(&gs, "data_fraction", num("data_fraction"), "minade5", "minADE5 vs training data fraction", "data fraction", |_| true),
        ),
    ];

    let fixed = constant_axes(&gs);
    let skip: Vec<&str> = fixed.iter().map(String::as_str).collect();
    let rank_series = gs
        .iter()
        .map(|g| Series {
            label: g.label_without(&skip),
            points: (1..)
                .map_while(|r| g.values.iter().find(|(k, _)| *k == format!("dac_rank_{r}")).map(|(_, v)| (r as f64, *v)))
                .filter_map(|(r, v)| v.map(|v| (r, v)))
                .collect(),
        })
        .collect();
    plots.push((
        "dac_by_rank.svg",
        LinePlot { title: "DAC by mode probability rank".into(), x_label: "rank".into(), y_label: "dac".into(), series: rank_series },
    ));

    let mut variants: Vec<String> = Vec::new();
    for g in &gs {
        let v = g.axis("loss_variant");
        if !variants.iter().any(|n| n == v) {
            variants.push(v.to_string());
        }
    }
    let legend = variants.iter().enumerate().map(|(i, n)| format!("{i}={n}")).collect::<Vec<_>>().join(", ");
    let variant_x = |g: &Group| variants.iter().position(|v| v == g.axis("loss_variant")).map(|i| i as f64);
    let x_label = format!("loss variant ({legend})");
    let mode_plot = xy_plot(&gs, "loss_variant", variant_x, "mean_mode_dist", "Mean distance between top modes", &x_label, |_| true);
    plots.push(("mode_distance_by_variant.svg", mode_plot));

    let set_len = |g: &Group| g.value("set_len");
    let regression = |g: &Group| g.axis("head") == "ordinal_regression";
    let mut res = xy_plot(&gs, "set", set_len, "residual_l1", "Residual norms vs anchor count", "anchor count", regression);
    let linf = xy_plot(&gs, "set", set_len, "residual_linf", "", "", regression);
    for s in &mut res.series {
        s.label = format!("l1 {}", s.label);
    }
    res.series.extend(linf.series.into_iter().map(|s| Series { label: format!("linf {}", s.label), ..s }));
    res.y_label = "residual (m)".into();
    plots.push(("residuals_vs_anchor_count.svg", res));

    plots.into_iter().map(|(n, p)| (n.to_string(), p.render())).collect()
}
