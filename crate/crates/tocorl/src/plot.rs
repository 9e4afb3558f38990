//! Minimal self-contained SVG line plots for run metrics.
//!
//! The CSV is the authoritative record; these plots exist so a run directory
//! can be eyeballed without external tooling. Output is deterministic plain
//! text.

use std::fmt::Write as _;
use std::path::Path;

use crate::Result;

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

const PANEL_WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 36.0;

/// One named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// One panel: a titled axis with several series.
#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let raw_step = (hi - lo) / target as f64;
    let magnitude = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / magnitude;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    } * magnitude;
    let mut ticks = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + 1e-9 * step {
        ticks.push(t);
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(0.001..1000.0).contains(&a) {
        format!("{v:.0e}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn render_panel(out: &mut String, panel: &Panel, y_offset: f64) {
    let (x0, x1) = (MARGIN_LEFT, PANEL_WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (y_offset + PANEL_HEIGHT - MARGIN_BOTTOM, y_offset + MARGIN_TOP);

    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in &panel.series {
        for &(x, y) in &s.points {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
    }
    if !x_lo.is_finite() {
        x_lo = 0.0;
        x_hi = 1.0;
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    // breathe a little above and below the data
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);

    let sx = move |x: f64| x0 + (x - x_lo) / (x_hi - x_lo) * (x1 - x0);
    let sy = move |y: f64| y0 - (y - y_lo) / (y_hi - y_lo) * (y0 - y1);

    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="14" font-family="monospace" fill="#222">{}</text>"##,
        x0,
        y_offset + 18.0,
        panel.title
    );

    // frame
    let _ = writeln!(
        out,
        r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#444" stroke-width="1"/>"##,
        x1 - x0,
        y0 - y1
    );

    for t in nice_ticks(x_lo, x_hi, 6) {
        let x = sx(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="#444" stroke-width="1"/>"##,
            y0 + 4.0
        );
        let _ = writeln!(
            out,
            r##"<text x="{x:.2}" y="{}" font-size="11" font-family="monospace" fill="#222" text-anchor="middle">{}</text>"##,
            y0 + 16.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(y_lo, y_hi, 5) {
        let y = sy(t);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="#444" stroke-width="1"/>"##,
            x0 - 4.0
        );
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd" stroke-width="0.5"/>"##
        );
        let _ = writeln!(
            out,
            r##"<text x="{}" y="{:.2}" font-size="11" font-family="monospace" fill="#222" text-anchor="end">{}</text>"##,
            x0 - 8.0,
            y + 3.5,
            fmt_tick(t)
        );
    }

    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="12" font-family="monospace" fill="#222" text-anchor="middle">{}</text>"##,
        (x0 + x1) / 2.0,
        y0 + 30.0,
        panel.x_label
    );
    let _ = writeln!(
        out,
        r##"<text x="14" y="{:.2}" font-size="12" font-family="monospace" fill="#222" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"##,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        panel.y_label
    );

    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for &(x, y) in &s.points {
            let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"##,
            path.trim_end()
        );
        // legend entry
        let lx = x1 - 150.0;
        let ly = y1 + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r##"<line x1="{lx}" y1="{ly:.2}" x2="{}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"##,
            lx + 18.0
        );
        let _ = writeln!(
            out,
            r##"<text x="{}" y="{:.2}" font-size="11" font-family="monospace" fill="#222">{}</text>"##,
            lx + 24.0,
            ly + 3.5,
            s.name
        );
    }
}

/// Render stacked panels into one SVG document.
pub fn render_svg(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_WIDTH}" height="{height}" viewBox="0 0 {PANEL_WIDTH} {height}">"##
    );
    let _ = writeln!(
        out,
        r##"<rect width="{PANEL_WIDTH}" height="{height}" fill="white"/>"##
    );
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut out, panel, PANEL_HEIGHT * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg(path: &Path, panels: &[Panel]) -> Result<()> {
    std::fs::write(path, render_svg(panels))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_panels() -> Vec<Panel> {
        vec![Panel {
            title: "accuracy".into(),
            x_label: "step".into(),
            y_label: "accuracy".into(),
            series: vec![Series {
                name: "run".into(),
                points: (0..50).map(|i| (i as f64, (i as f64 / 50.0).sqrt())).collect(),
            }],
        }]
    }

    #[test]
    fn renders_wellformed_svg() {
        let svg = render_svg(&sample_panels());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
        assert!(svg.matches("<text").count() > 5);
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(render_svg(&sample_panels()), render_svg(&sample_panels()));
    }

    #[test]
    fn empty_series_does_not_panic() {
        let svg = render_svg(&[Panel {
            title: "empty".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![],
        }]);
        assert!(svg.contains("</svg>"));
    }
}
