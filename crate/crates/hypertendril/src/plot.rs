// SPDX-License-Identifier: Apache-2.0

//! Static SVG renderings of the peak history, exploration history and
//! marginal curves.

use std::fmt::Write;

use hypertendril_core::importance::MarginalCurve;
use hypertendril_core::Scale;

use crate::query::{Exploration, PeakSeries};

const W: f64 = 640.0;
const PANEL_H: f64 = 200.0;
const PAD: f64 = 40.0;

struct Frame {
    top: f64,
    x: (f64, f64),
    y: (f64, f64),
    log_y: bool,
}

impl Frame {
    fn new(top: f64, x: (f64, f64), y: (f64, f64), log_y: bool) -> Frame {
        let widen = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, b + 0.5) };
        let y = if log_y && y.0 > 0.0 { (y.0.ln(), y.1.ln()) } else { y };
        Frame {
            top,
            x: widen(x),
            y: widen(y),
            log_y: log_y && y.0.is_finite(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        let y = if self.log_y { y.max(f64::MIN_POSITIVE).ln() } else { y };
        self.top + PANEL_H - PAD / 2.0 - (y - self.y.0) / (self.y.1 - self.y.0) * (PANEL_H - PAD)
    }

    fn axes(&self, out: &mut String, title: &str) {
        let (x0, x1) = (PAD, W - PAD);
        let (y0, y1) = (self.top + PAD / 2.0, self.top + PANEL_H - PAD / 2.0);
        let _ = write!(
            out,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#999"/><text x="{x0}" y="{}" font-size="12">{}</text>"##,
            x1 - x0,
            y1 - y0,
            y0 - 4.0,
            escape(title)
        );
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

fn finite_or(r: (f64, f64), d: (f64, f64)) -> (f64, f64) {
    if r.0.is_finite() && r.1.is_finite() {
        r
    } else {
        d
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn document(height: f64, body: &str) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}">{body}</svg>
"#
    )
}

fn polyline(points: &[(f64, f64)], style: &str) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(r#"<polyline points="{}" fill="none" {style}/>"#, pts.join(" "))
}

pub fn peak_svg(series: &PeakSeries) -> String {
    let mut body = String::new();
    let n = series.points.len();
    let yr = finite_or(
        range(series.points.iter().flat_map(|p| [p.objective, p.best])),
        (0.0, 1.0),
    );
    let f = Frame::new(0.0, (0.0, n.saturating_sub(1).max(1) as f64), yr, false);
    f.axes(&mut body, &format!("peak performance: {}", series.process_id));
    for p in &series.points {
        let _ = write!(
            body,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2" fill="#bbb"/>"##,
            f.px(p.index as f64),
            f.py(p.objective)
        );
    }
    let line: Vec<(f64, f64)> = series.points.iter().map(|p| (f.px(p.index as f64), f.py(p.best))).collect();
    body.push_str(&polyline(&line, r##"stroke="#1f77b4" stroke-width="2""##));
    document(PANEL_H, &body)
}

/// Darker for better objectives within the plotted range.
fn shade(objective: Option<f64>, lo: f64, hi: f64, higher_better: bool) -> String {
    let Some(v) = objective else { return "#d62728".into() };
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
    let t = if higher_better { t } else { 1.0 - t };
    let g = (220.0 - 200.0 * t.clamp(0.0, 1.0)) as u8;
    format!("#{g:02x}{g:02x}{:02x}", g.saturating_add(30))
}

pub fn exploration_svg(exp: &Exploration, higher_better: bool) -> String {
    let mut body = String::new();
    let iters = finite_or(
        range(exp.params.iter().flat_map(|p| {
            p.points
                .iter()
                .flat_map(|pt| std::iter::once(pt.iteration as f64).chain(pt.history.iter().map(|h| h.iteration as f64)))
        })),
        (0.0, 1.0),
    );
    let obj = range(exp.params.iter().flat_map(|p| p.points.iter().filter_map(|pt| pt.objective)));
    for (i, p) in exp.params.iter().enumerate() {
        let yr = finite_or(range(p.points.iter().map(|pt| pt.value)), (0.0, 1.0));
        let f = Frame::new(i as f64 * PANEL_H, iters, yr, p.scale == Some(Scale::Log));
        f.axes(&mut body, &p.name);
        for pt in &p.points {
            let y = f.py(pt.value);
            if pt.history.len() > 1 {
                let line: Vec<(f64, f64)> = pt.history.iter().map(|h| (f.px(h.iteration as f64), y)).collect();
                body.push_str(&polyline(&line, r##"stroke="#888" stroke-dasharray="4 3""##));
            }
            if let Some(parent) = &pt.parent {
                if let Some(src) = p.points.iter().find(|q| q.trials.contains(parent)) {
                    let it = src
                        .history
                        .iter()
                        .find(|h| &h.trial == parent)
                        .map_or(src.iteration, |h| h.iteration);
                    let (x0, y0, x1) = (f.px(it as f64), f.py(src.value), f.px(pt.iteration as f64));
                    let _ = write!(
                        body,
                        r##"<path d="M{x0:.2},{y0:.2} Q{:.2},{y0:.2} {x1:.2},{y:.2}" fill="none" stroke="#2ca02c"/>"##,
                        (x0 + x1) / 2.0
                    );
                }
            }
            let _ = write!(
                body,
                r#"<circle cx="{:.2}" cy="{y:.2}" r="3" fill="{}"><title>{}</title></circle>"#,
                f.px(pt.iteration as f64),
                shade(pt.objective, obj.0, obj.1, higher_better),
                escape(&pt.trial)
            );
        }
    }
    document(PANEL_H * exp.params.len().max(1) as f64, &body)
}

pub fn marginal_svg(curve: &MarginalCurve) -> String {
    let mut body = String::new();
    if curve.axes.len() == 2 {
        let n = curve.axes[0].len();
        let f = Frame::new(0.0, (0.0, 1.0), (0.0, 1.0), false);
        f.axes(&mut body, &curve.params.join(" x "));
        let (lo, hi) = finite_or(range(curve.mean.iter().copied()), (0.0, 1.0));
        let cw = (W - 2.0 * PAD) / n as f64;
        let ch = (PANEL_H - PAD) / n as f64;
        for (idx, m) in curve.mean.iter().enumerate() {
            let (i, j) = (idx / n, idx % n);
            let _ = write!(
                body,
                r#"<rect x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="{}"/>"#,
                PAD + i as f64 * cw,
                PANEL_H - PAD / 2.0 - (j + 1) as f64 * ch,
                shade(Some(*m), lo, hi, true)
            );
        }
        return document(PANEL_H, &body);
    }
    let xs = &curve.axes[0];
    let yr = finite_or(
        range(curve.mean.iter().zip(&curve.std).flat_map(|(m, s)| [m - s, m + s])),
        (0.0, 1.0),
    );
    let f = Frame::new(0.0, (0.0, 1.0), yr, false);
    f.axes(&mut body, &format!("marginal: {}", curve.params.join(", ")));
    let upper: Vec<(f64, f64)> = xs.iter().zip(curve.mean.iter().zip(&curve.std)).map(|(x, (m, s))| (f.px(*x), f.py(m + s))).collect();
    let lower: Vec<(f64, f64)> = xs.iter().zip(curve.mean.iter().zip(&curve.std)).rev().map(|(x, (m, s))| (f.px(*x), f.py(m - s))).collect();
    let band: Vec<String> = upper.iter().chain(&lower).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = write!(body, r##"<polygon points="{}" fill="#98df8a" opacity="0.5"/>"##, band.join(" "));
    let line: Vec<(f64, f64)> = xs.iter().zip(&curve.mean).map(|(x, m)| (f.px(*x), f.py(*m))).collect();
    body.push_str(&polyline(&line, r##"stroke="#2ca02c" stroke-width="2""##));
    document(PANEL_H, &body)
}
