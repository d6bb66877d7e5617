//! Minimal deterministic SVG output: stacked time-series panels and phase portraits.

use std::fmt::Write as _;

use crate::contour::Polyline;
use crate::lyapunov::Rect;
use crate::models::State;
use crate::sim::Trajectory;

const W: f64 = 720.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const PANEL_H: f64 = 180.0;
const GAP: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<[f64; 2]>,
    pub dashed: bool,
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: [f64; 2],
    yr: [f64; 2],
}

impl Frame {
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let sx = (p[0] - self.xr[0]) / (self.xr[1] - self.xr[0]);
        let sy = (p[1] - self.yr[0]) / (self.yr[1] - self.yr[0]);
        (self.x0 + sx * self.w, self.y0 + (1.0 - sy) * self.h)
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.xr[0] + f * (self.xr[1] - self.xr[0]);
            let yv = self.yr[0] + f * (self.yr[1] - self.yr[0]);
            let px = self.x0 + f * self.w;
            let py = self.y0 + (1.0 - f) * self.h;
            let _ = writeln!(
                s,
                r#"<text x="{px:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
                self.y0 + self.h + 14.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
                self.x0 - 4.0,
                py + 3.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            self.x0 + 0.5 * self.w,
            self.y0 + self.h + 30.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            self.x0 - 50.0,
            self.y0 + 0.5 * self.h,
            self.x0 - 50.0,
            self.y0 + 0.5 * self.h,
            escape(ylabel)
        );
    }

    fn polyline(&self, s: &mut String, pts: &[[f64; 2]], color: &str, dashed: bool, closed: bool) {
        if pts.is_empty() {
            return;
        }
        let mut d = String::new();
        for (i, p) in pts.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                continue;
            }
            let (x, y) = self.map(*p);
            let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 || d.is_empty() { "M" } else { " L" });
        }
        if closed {
            d.push_str(" Z");
        }
        let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.2"{dash}/>"#);
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> [f64; 2] {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return [0.0, 1.0];
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.05 * (1.0 + lo.abs());
        return [lo - pad, hi + pad];
    }
    let pad = 0.05 * (hi - lo);
    [lo - pad, hi + pad]
}

fn header(h: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h:.0}" viewBox="0 0 {W} {h:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

/// Vertically stacked panels sharing the horizontal variable.
pub fn stacked_panels(title: &str, xlabel: &str, panels: &[(&str, Vec<Series>)]) -> String {
    let h = 40.0 + panels.len() as f64 * (PANEL_H + GAP) + 10.0;
    let mut s = header(h, title);
    for (i, (ylabel, series)) in panels.iter().enumerate() {
        let frame = Frame {
            x0: MARGIN_L,
            y0: 40.0 + i as f64 * (PANEL_H + GAP),
            w: W - MARGIN_L - MARGIN_R - 110.0,
            h: PANEL_H,
            xr: range(series.iter().flat_map(|s| s.points.iter().map(|p| p[0]))),
            yr: range(series.iter().flat_map(|s| s.points.iter().map(|p| p[1]))),
        };
        frame.axes(&mut s, xlabel, ylabel);
        for (j, se) in series.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            frame.polyline(&mut s, &se.points, color, se.dashed, false);
            let ly = frame.y0 + 12.0 + 14.0 * j as f64;
            let lx = frame.x0 + frame.w + 10.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
                lx + 16.0,
                lx + 20.0,
                ly + 4.0,
                escape(se.name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// `x1`, `x2` (with its reference) and `u` against time.
pub fn time_series_svg(tr: &Trajectory) -> String {
    let col = |f: &dyn Fn(&crate::sim::Row) -> f64| -> Vec<[f64; 2]> { tr.rows.iter().map(|r| [r.t, f(r)]).collect() };
    let panels = vec![
        (
            "x1",
            vec![Series {
                name: "x1",
                points: col(&|r| r.x[0]),
                dashed: false,
            }],
        ),
        (
            "x2",
            vec![
                Series {
                    name: "x2",
                    points: col(&|r| r.x[1]),
                    dashed: false,
                },
                Series {
                    name: "x2 ref",
                    points: col(&|r| r.x2_ref),
                    dashed: true,
                },
            ],
        ),
        (
            "u",
            vec![
                Series {
                    name: "u applied",
                    points: col(&|r| r.u_applied),
                    dashed: false,
                },
                Series {
                    name: "u raw",
                    points: col(&|r| r.u_raw),
                    dashed: true,
                },
            ],
        ),
    ];
    stacked_panels(&format!("{} ({})", tr.id, tr.kind), "t (normalized)", &panels)
}

/// Level curves, trajectories and the equilibrium in the `(x1, x2)` plane.
pub fn phase_portrait_svg(
    title: &str,
    rect: &Rect,
    levels: &[(f64, &[Polyline])],
    trajectories: &[Vec<State>],
    x_star: State,
) -> String {
    let h = 40.0 + 480.0 + 50.0;
    let mut s = header(h, title);
    let frame = Frame {
        x0: MARGIN_L,
        y0: 40.0,
        w: W - MARGIN_L - MARGIN_R - 110.0,
        h: 480.0,
        xr: rect.x1_range,
        yr: rect.x2_range,
    };
    frame.axes(&mut s, "x1", "x2");
    for (j, (p_bar, curves)) in levels.iter().enumerate() {
        let color = PALETTE[(j + 1) % PALETTE.len()];
        for c in curves.iter() {
            frame.polyline(&mut s, &c.points, color, false, c.closed);
        }
        let ly = frame.y0 + 12.0 + 14.0 * j as f64;
        let lx = frame.x0 + frame.w + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}"/><text x="{:.2}" y="{:.2}" font-size="11">P = {}</text>"#,
            lx + 16.0,
            lx + 20.0,
            ly + 4.0,
            tick(*p_bar)
        );
    }
    for tr in trajectories {
        frame.polyline(&mut s, tr, "#888", true, false);
    }
    let (cx, cy) = frame.map(x_star);
    let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3.5" fill="black"/>"#);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panels_are_deterministic_and_well_formed() {
        let series = || {
            vec![(
                "y",
                vec![Series {
                    name: "a<b",
                    points: vec![[0.0, 1.0], [1.0, 2.0], [2.0, f64::NAN]],
                    dashed: false,
                }],
            )]
        };
        let a = stacked_panels("t", "x", &series());
        let b = stacked_panels("t", "x", &series());
        assert_eq!(a, b);
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("a&lt;b"));
        assert!(!a.contains("NaN"));
    }

    #[test]
    fn flat_series_gets_padded_range() {
        let r = range([2.0, 2.0].into_iter());
        assert!(r[0] < 2.0 && r[1] > 2.0);
    }
}
