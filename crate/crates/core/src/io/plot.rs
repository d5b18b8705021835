//! Static SVG plots. Output depends only on the input data, so rerunning on
//! the same files reproduces the same bytes.

use std::fmt::Write as _;

use super::report::SweepSeries;
use super::trajectory::TrajectoryFile;
use crate::error::{Error, Result};
use crate::eval::SUCCESS_THRESHOLD;

const PANEL: f64 = 420.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Copy, Debug)]
struct Bounds {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Bounds {
    fn empty() -> Self {
        Bounds {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        }
    }

    fn include(&mut self, x: f64, y: f64) {
        if x.is_finite() && y.is_finite() {
            self.x0 = self.x0.min(x);
            self.x1 = self.x1.max(x);
            self.y0 = self.y0.min(y);
            self.y1 = self.y1.max(y);
        }
    }

    /// Pads degenerate or empty ranges so the mapping stays finite.
    fn padded(mut self, frac: f64) -> Self {
        if !self.x0.is_finite() {
            self = Bounds {
                x0: -1.0,
                x1: 1.0,
                y0: -1.0,
                y1: 1.0,
            };
        }
        let px = ((self.x1 - self.x0) * frac).max(0.5);
        let py = ((self.y1 - self.y0) * frac).max(0.5);
        Bounds {
            x0: self.x0 - px,
            x1: self.x1 + px,
            y0: self.y0 - py,
            y1: self.y1 + py,
        }
    }
}

/// Maps data coordinates into a `w`×`h` box at `(ox, oy)`, y up.
#[derive(Clone, Copy)]
struct Frame {
    b: Bounds,
    ox: f64,
    oy: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn x(&self, x: f64) -> f64 {
        self.ox + (x - self.b.x0) / (self.b.x1 - self.b.x0) * self.w
    }

    fn y(&self, y: f64) -> f64 {
        self.oy + self.h - (y - self.b.y0) / (self.b.y1 - self.b.y0) * self.h
    }
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Side-by-side panels, one per trajectory: every agent's path as a faint
/// polyline, and positions with velocity arrows at each of `steps`.
pub fn trajectory_svg(panels: &[(String, TrajectoryFile)], steps: &[usize]) -> Result<String> {
    if panels.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let width = panels.len() as f64 * (PANEL + MARGIN) + MARGIN;
    let height = PANEL + 2.0 * MARGIN;
    let mut out = String::new();
    header(&mut out, width, height);
    for (p, (title, file)) in panels.iter().enumerate() {
        let mut b = Bounds::empty();
        for r in &file.rows {
            b.include(r.position.x, r.position.y);
        }
        let b = b.padded(0.05);
        let side = (b.x1 - b.x0).max(b.y1 - b.y0);
        let (cx, cy) = ((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0);
        let frame = Frame {
            b: Bounds {
                x0: cx - side / 2.0,
                x1: cx + side / 2.0,
                y0: cy - side / 2.0,
                y1: cy + side / 2.0,
            },
            ox: MARGIN + p as f64 * (PANEL + MARGIN),
            oy: MARGIN,
            w: PANEL,
            h: PANEL,
        };
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{PANEL:.0}" height="{PANEL:.0}" fill="none" stroke="#888"/>"##,
            frame.ox, frame.oy
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            frame.ox,
            frame.oy - 8.0,
            escape(title)
        );
        for agent in 0..file.agents {
            let mut pts = String::new();
            for t in 0..file.steps {
                let r = &file.rows[t * file.agents + agent];
                if r.position.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", frame.x(r.position.x), frame.y(r.position.y));
                }
            }
            let _ = writeln!(
                out,
                r##"<polyline points="{}" fill="none" stroke="#bbb" stroke-width="0.8"/>"##,
                pts.trim_end()
            );
        }
        // Arrows are drawn as one second of travel.
        for (k, &t) in steps.iter().filter(|&&t| t < file.steps).enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            for r in file.step(t) {
                if !(r.position.is_finite() && r.velocity.is_finite()) {
                    continue;
                }
                let (x, y) = (frame.x(r.position.x), frame.y(r.position.y));
                let tip = r.position + r.velocity * 0.25;
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
                let _ = writeln!(
                    out,
                    r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1"/>"#,
                    frame.x(tip.x),
                    frame.y(tip.y)
                );
            }
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" fill="{color}">t = {t}</text>"#,
                frame.ox + 6.0 + 60.0 * k as f64,
                frame.oy + PANEL + 18.0
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Median normalized cost against the swept value, one line per table,
/// with interquartile bars and the success threshold dashed.
pub fn sweep_svg(series: &[SweepSeries]) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Config("nothing to plot".into()));
    }
    let mut b = Bounds::empty();
    for s in series {
        for p in &s.points {
            b.include(p.value, p.median);
            b.include(p.value, p.q1);
            b.include(p.value, p.q3);
        }
    }
    b.include(b.x0, 0.0);
    b.include(b.x0, SUCCESS_THRESHOLD);
    let b = b.padded(0.08);
    let (w, h) = (PANEL * 1.5, PANEL);
    let frame = Frame {
        b,
        ox: 2.0 * MARGIN,
        oy: MARGIN,
        w,
        h,
    };
    let mut out = String::new();
    header(&mut out, w + 3.0 * MARGIN, h + 3.0 * MARGIN);
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{w:.0}" height="{h:.0}" fill="none" stroke="#888"/>"##,
        frame.ox, frame.oy
    );
    let ty = frame.y(SUCCESS_THRESHOLD);
    let _ = writeln!(
        out,
        r##"<line x1="{:.2}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}" stroke="#444" stroke-dasharray="6 4"/>"##,
        frame.ox,
        frame.ox + w
    );
    for s in series {
        for p in &s.points {
            let x = frame.x(p.value);
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                frame.oy + h + 16.0,
                p.value
            );
        }
    }
    let axis = series.iter().map(|s| s.axis.as_str()).find(|a| !a.is_empty()).unwrap_or("");
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        frame.ox + w / 2.0,
        frame.oy + h + 36.0,
        escape(axis)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">normalized cost</text>"#,
        frame.oy + h / 2.0,
        frame.oy + h / 2.0
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for p in s.points.iter().filter(|p| p.median.is_finite()) {
            let (x, y) = (frame.x(p.value), frame.y(p.median));
            let _ = write!(pts, "{x:.2},{y:.2} ");
            let hi = if p.q3.is_finite() { frame.y(p.q3) } else { frame.oy };
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{hi:.2}" stroke="{color}"/>"#,
                frame.y(p.q1)
            );
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.trim_end()
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            frame.ox + 8.0,
            frame.oy + 16.0 + 16.0 * k as f64,
            escape(&s.controller)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::report::SweepPoint;
    use crate::io::trajectory::TrajectoryRow;
    use crate::vec2::Vec2;

    fn single_agent() -> TrajectoryFile {
        let rows = (0..5)
            .map(|t| TrajectoryRow {
                t,
                agent: 0,
                position: Vec2::new(t as f64 * 0.1, 0.0),
                velocity: Vec2::new(1.0, 0.0),
                executed: Vec2::ZERO,
                expert: Vec2::ZERO,
                degree: 0,
            })
            .collect();
        TrajectoryFile {
            config_hash: "h".into(),
            controller: "expert".into(),
            seed: 0,
            agents: 1,
            steps: 5,
            hash_mismatch: false,
            rows,
        }
    }

    #[test]
    fn single_agent_draws_one_polyline() {
        let svg = trajectory_svg(&[("one".into(), single_agent())], &[0, 4]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn plots_are_deterministic() {
        let panels = vec![("a".to_string(), single_agent()), ("b".to_string(), single_agent())];
        assert_eq!(
            trajectory_svg(&panels, &[0]).unwrap(),
            trajectory_svg(&panels, &[0]).unwrap()
        );
        let s = SweepSeries {
            axis: "taps".into(),
            controller: "grnn".into(),
            config_hash: "h".into(),
            points: vec![
                SweepPoint {
                    value: 2.0,
                    median: 2.0,
                    q1: 1.5,
                    q3: 2.5,
                    success: true,
                },
                SweepPoint {
                    value: 3.0,
                    median: f64::INFINITY,
                    q1: 2.0,
                    q3: f64::INFINITY,
                    success: false,
                },
            ],
        };
        let a = sweep_svg(std::slice::from_ref(&s)).unwrap();
        assert_eq!(a, sweep_svg(&[s]).unwrap());
        assert!(!a.contains("NaN") && !a.contains("inf"));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(trajectory_svg(&[], &[0]).is_err());
        assert!(sweep_svg(&[]).is_err());
    }
}
