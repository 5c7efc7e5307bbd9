//! SVG heat maps of stability manifolds.

use std::fmt::Write;

use crate::asm::{grid_contour, linspace};
use crate::classifier::LabeledSample;
use crate::error::{Error, Result};

/// Inputs of one manifold plot. `prob` and `in_rpi` hold `res × res`
/// values with the second axis fastest.
pub struct ManifoldPlot<'a> {
    pub title: &'a str,
    pub names: [&'a str; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub res: usize,
    pub prob: &'a [f64],
    pub in_rpi: Option<&'a [bool]>,
    pub p_th: f64,
    pub samples: &'a [LabeledSample],
    pub star: Option<[f64; 2]>,
}

const W: f64 = 480.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 36.0;
const MB: f64 = 56.0;

fn color(p: f64) -> String {
    let p = p.clamp(0.0, 1.0);
    let r = (214.0 * (1.0 - p) + 40.0 * p).round() as u8;
    let g = (48.0 * (1.0 - p) + 170.0 * p).round() as u8;
    let b = (39.0 * (1.0 - p) + 60.0 * p).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Render the plot: probability field (green stable, red unstable), cells
/// outside the region of practical interest shaded, solid `p_th` contour,
/// dashed region boundary, sampled points and the tuned-point star.
pub fn manifold_svg(plot: &ManifoldPlot) -> Result<String> {
    let n = plot.res;
    if n < 2 {
        return Err(Error::Domain(format!(
            "plot resolution must be at least 2, got {n}"
        )));
    }
    if plot.prob.len() != n * n || plot.in_rpi.is_some_and(|m| m.len() != n * n) {
        return Err(Error::Domain(format!(
            "plot grid must hold {} values",
            n * n
        )));
    }
    let pw = W - ML - MR;
    let ph = H - MT - MB;
    let sx = |x: f64| ML + (x - plot.lo[0]) / (plot.hi[0] - plot.lo[0]) * pw;
    let sy = |y: f64| MT + ph - (y - plot.lo[1]) / (plot.hi[1] - plot.lo[1]) * ph;
    let xs = linspace(plot.lo[0], plot.hi[0], n);
    let ys = linspace(plot.lo[1], plot.hi[1], n);
    let cw = pw / (n - 1) as f64;
    let chh = ph / (n - 1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(plot.title)
    );
    let _ = writeln!(
        s,
        r#"<clipPath id="plot"><rect x="{ML}" y="{MT}" width="{pw}" height="{ph}"/></clipPath>"#
    );
    let _ = writeln!(
        s,
        r#"<g clip-path="url(#plot)" shape-rendering="crispEdges">"#
    );
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let x = sx(xs[i]) - cw / 2.0;
            let y = sy(ys[j]) - chh / 2.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                cw + 0.5,
                chh + 0.5,
                color(plot.prob[k])
            );
            if plot.in_rpi.is_some_and(|m| !m[k]) {
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="white" fill-opacity="0.55"/>"#,
                    cw + 0.5,
                    chh + 0.5
                );
            }
        }
    }
    let _ = writeln!(s, "</g>");

    let path = |segs: &[[[f64; 2]; 2]]| -> String {
        let mut d = String::new();
        for seg in segs {
            let _ = write!(
                d,
                "M{:.2},{:.2}L{:.2},{:.2}",
                sx(seg[0][0]),
                sy(seg[0][1]),
                sx(seg[1][0]),
                sy(seg[1][1])
            );
        }
        d
    };
    let contour = grid_contour(&xs, &ys, plot.prob, plot.p_th);
    if !contour.is_empty() {
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
            path(&contour)
        );
    }
    if let Some(mask) = plot.in_rpi {
        let vals: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let edge = grid_contour(&xs, &ys, &vals, 0.5);
        if !edge.is_empty() {
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="black" stroke-width="1.5" stroke-dasharray="6,4"/>"#,
                path(&edge)
            );
        }
    }
    for smp in plot.samples {
        if smp.rho.len() != 2 {
            continue;
        }
        let fill = if smp.s == 1 { "#1e8c32" } else { "#c0271e" };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{fill}" stroke="white" stroke-width="0.6"/>"#,
            sx(smp.rho[0]),
            sy(smp.rho[1])
        );
    }
    if let Some(p) = plot.star {
        let (cx, cy) = (sx(p[0]), sy(p[1]));
        let mut pts = String::new();
        for k in 0..10 {
            let r = if k % 2 == 0 { 9.0 } else { 3.8 };
            let a = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
            let _ = write!(pts, "{:.2},{:.2} ", cx + r * a.cos(), cy + r * a.sin());
        }
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#1f4fd1" stroke="white" stroke-width="0.8"/>"##,
            pts.trim_end()
        );
    }

    let _ = writeln!(
        s,
        r#"<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let xv = plot.lo[0] + f * (plot.hi[0] - plot.lo[0]);
        let yv = plot.lo[1] + f * (plot.hi[1] - plot.lo[1]);
        let (x, y) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            MT + ph,
            MT + ph + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            MT + ph + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{ML}" y2="{y:.2}" stroke="black"/>"#,
            ML - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            ML - 8.0,
            y + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        ML + pw / 2.0,
        H - 14.0,
        escape(plot.names[0])
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        MT + ph / 2.0,
        MT + ph / 2.0,
        escape(plot.names[1])
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}
