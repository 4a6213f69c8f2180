//! Minimal SVG line charts.

use std::fmt::Write;

use flexrl_core::trainers::MetricsRow;
use flexrl_core::{ConvexGenerator, LossProfile, LpMode, Penalty};

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 44.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    (x0, x1, y0, y1)
}

fn num(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn render_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let (x0, x1, y0, y1) = bounds(panel);
    let (w, h) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let px = |x: f64| ox + MARGIN + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| oy + MARGIN + (y1 - y) / (y1 - y0) * h;
    let _ = writeln!(out, r#"<g class="panel">"#);
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#, num(ox + PANEL_W / 2.0), num(oy + 18.0), escape(&panel.title));
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        num(ox + MARGIN),
        num(oy + MARGIN),
        num(w),
        num(h)
    );
    for (v, anchor, x, y) in [
        (x0, "start", ox + MARGIN, oy + MARGIN + h + 14.0),
        (x1, "end", ox + MARGIN + w, oy + MARGIN + h + 14.0),
    ] {
        let _ = writeln!(out, r#"<text class="xtick" x="{}" y="{}" font-size="10" text-anchor="{anchor}">{}</text>"#, num(x), num(y), num(v));
    }
    for (v, y) in [(y0, oy + MARGIN + h), (y1, oy + MARGIN + 8.0)] {
        let _ = writeln!(out, r#"<text class="ytick" x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#, num(ox + MARGIN - 4.0), num(y), num(v));
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
        num(ox + PANEL_W / 2.0),
        num(oy + PANEL_H - 8.0),
        escape(&panel.x_label)
    );
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(out, r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#ccc"/>"##, num(px(x0)), num(px(x1)), y = num(py(0.0)));
    }
    for (i, s) in panel.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        // break the line at non-finite points
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                segments.last_mut().unwrap().push((x, y));
            } else if !segments.last().unwrap().is_empty() {
                segments.push(Vec::new());
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let pts: Vec<String> = seg.iter().map(|&(x, y)| format!("{},{}", num(px(x)), num(py(y)))).collect();
            let _ = writeln!(
                out,
                r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                escape(&s.label),
                pts.join(" ")
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
            num(ox + MARGIN + 6.0),
            num(oy + MARGIN + 14.0 + 12.0 * i as f64),
            escape(&s.label)
        );
    }
    let _ = writeln!(out, "</g>");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Lay panels out two per row.
pub fn render(title: &str, panels: &[Panel]) -> String {
    let cols = panels.len().clamp(1, 2);
    let rows = panels.len().div_ceil(2).max(1);
    let (width, height) = (PANEL_W * cols as f64, PANEL_H * rows as f64 + 30.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        num(width),
        num(height),
        num(width),
        num(height)
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(out, r#"<text x="{}" y="20" font-size="15" text-anchor="middle">{}</text>"#, num(width / 2.0), escape(title));
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, PANEL_W * (i % 2) as f64, 30.0 + PANEL_H * (i / 2) as f64);
    }
    out.push_str("</svg>\n");
    out
}

/// Evaluation grid clipped to a domain; includes a closed endpoint exactly.
fn grid(lo: f64, hi: f64, dom_lo: f64, dom_hi: f64, lo_closed: bool, hi_closed: bool, n: usize) -> Vec<f64> {
    let step = 1e-6;
    let a = if dom_lo > lo { if lo_closed { dom_lo } else { dom_lo + step } } else { lo };
    let b = if dom_hi < hi { if hi_closed { dom_hi } else { dom_hi - step } } else { hi };
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// g*, g*'⁻¹, g and the loss −e + g(e) of a penalty.
pub fn function_panels(p: &Penalty) -> Vec<Panel> {
    let zd = p.zeta_domain();
    let ed = p.e_domain();
    let zs = grid(0.0, 3.0, zd.lo, zd.hi, zd.lo_closed, zd.hi_closed, 301);
    let es = grid(-2.0, 2.0, ed.lo, ed.hi, ed.lo_closed, ed.hi_closed, 301);
    let curve = |xs: &[f64], f: &dyn Fn(f64) -> Option<f64>| -> Vec<(f64, f64)> {
        xs.iter().map(|&x| (x, f(x).unwrap_or(f64::NAN))).collect()
    };
    let loss = LossProfile::new(*p, LpMode::NegTdError);
    let one = |title: &str, x_label: &str, pts: Vec<(f64, f64)>| Panel {
        title: title.to_string(),
        x_label: x_label.to_string(),
        series: vec![Series {
            label: p.to_string(),
            points: pts,
        }],
    };
    vec![
        one("g*(zeta)", "zeta", curve(&zs, &|z| p.gstar(z).ok())),
        one("g*'^-1(e)", &format!("e in {ed}"), curve(&es, &|e| p.gstar_prime_inv(e).ok())),
        one("g(e)", &format!("e in {ed}"), curve(&es, &|e| p.conj(e).ok())),
        one("-e + g(e)", &format!("e in {ed}"), curve(&es, &|e| loss.bellman_loss(e).ok())),
    ]
}

/// α±/β against step, and the normalized return.
pub fn metrics_panels(rows: &[MetricsRow]) -> Vec<Panel> {
    let series = |label: &str, f: &dyn Fn(&MetricsRow) -> f64| Series {
        label: label.to_string(),
        points: rows.iter().map(|r| (r.step as f64, f(r))).collect(),
    };
    vec![
        Panel {
            title: "alpha and beta".into(),
            x_label: "step".into(),
            series: vec![
                series("alpha_plus", &|r| r.alpha_plus),
                series("alpha_minus", &|r| r.alpha_minus),
                series("beta", &|r| r.beta),
            ],
        },
        Panel {
            title: "normalized return".into(),
            x_label: "step".into(),
            series: vec![series("norm_return", &|r| r.norm_return)],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use flexrl_core::Divergence;

    #[test]
    fn le_cam_plot_stops_at_quarter() {
        let panels = function_panels(&Divergence::LeCam.into());
        let xs: Vec<f64> = panels[2].series[0].points.iter().map(|p| p.0).collect();
        assert_eq!(*xs.last().unwrap(), 0.25);
        assert!((panels[2].series[0].points.last().unwrap().1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = render("t", &function_panels(&"iql:0.7".parse().unwrap()));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<g class=\"panel\">").count(), 4);
        assert_eq!(svg.matches("<polyline").count(), 4);
    }

    #[test]
    fn breaks_lines_at_gaps() {
        let p = Panel {
            title: "x".into(),
            x_label: "x".into(),
            series: vec![Series {
                label: "s".into(),
                points: vec![(0.0, 0.0), (1.0, 1.0), (2.0, f64::NAN), (3.0, 0.0), (4.0, 2.0)],
            }],
        };
        assert_eq!(render("t", &[p]).matches("<polyline").count(), 2);
    }
}
