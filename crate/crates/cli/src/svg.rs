//! Minimal SVG emission: per-video indicator curves with shaded ground-truth
//! intervals, and the mixture heat-map with density contour lines. Output is
//! plain XML built from trusted numeric data; the only escaping needed is
//! for video ids that end up in `<text>`.

use adsm_core::mixture::FieldPoint;
use adsm_core::{Error, Result};
use std::fmt::Write as _;

const CURVE_W: f64 = 720.0;
const CURVE_H: f64 = 220.0;
const MARGIN: f64 = 36.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt(v: f64) -> String {
    // enough digits for crisp geometry, no scientific notation in attributes
    format!("{v:.2}")
}

/// Shaded label intervals + indicator polyline for one video.
///
/// The y axis is the fixed indicator range [0,1]; x spans the frames.
pub fn score_curve(video_id: &str, indicators: &[f64], labels: &[u8]) -> Result<String> {
    if indicators.is_empty() || indicators.len() != labels.len() {
        return Err(Error::Data(format!(
            "{video_id}: {} indicators vs {} labels",
            indicators.len(),
            labels.len()
        )));
    }
    let n = indicators.len();
    let x_of = |f: f64| MARGIN + f / (n.max(2) - 1) as f64 * (CURVE_W - 2.0 * MARGIN);
    let y_of = |v: f64| CURVE_H - MARGIN - v * (CURVE_H - 2.0 * MARGIN);

    let mut body = String::new();
    // ground-truth intervals first so the curve draws on top
    let mut f = 0;
    while f < n {
        if labels[f] == 1 {
            let start = f;
            while f < n && labels[f] == 1 {
                f += 1;
            }
            let (x0, x1) = (x_of(start as f64), x_of((f - 1) as f64));
            writeln!(
                body,
                r##"  <rect x="{}" y="{}" width="{}" height="{}" fill="#f4b6b6"/>"##,
                fmt(x0),
                fmt(y_of(1.0)),
                fmt((x1 - x0).max(1.0)),
                fmt(y_of(0.0) - y_of(1.0)),
            )
            .expect("string write");
        } else {
            f += 1;
        }
    }
    // axes box and the two y ticks that matter
    writeln!(
        body,
        r##"  <rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        fmt(MARGIN),
        fmt(y_of(1.0)),
        fmt(CURVE_W - 2.0 * MARGIN),
        fmt(y_of(0.0) - y_of(1.0)),
    )
    .expect("string write");
    for (v, lab) in [(0.0, "0"), (1.0, "1")] {
        writeln!(
            body,
            r##"  <text x="{}" y="{}" font-size="11" text-anchor="end">{lab}</text>"##,
            fmt(MARGIN - 6.0),
            fmt(y_of(v) + 4.0),
        )
        .expect("string write");
    }
    let points: Vec<String> = indicators
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{},{}", fmt(x_of(i as f64)), fmt(y_of(v.clamp(0.0, 1.0)))))
        .collect();
    writeln!(
        body,
        r##"  <polyline points="{}" fill="none" stroke="#1f4e9c" stroke-width="1.5"/>"##,
        points.join(" ")
    )
    .expect("string write");
    writeln!(
        body,
        r##"  <text x="{}" y="{}" font-size="12">{}</text>"##,
        fmt(MARGIN),
        fmt(MARGIN - 12.0),
        esc(video_id)
    )
    .expect("string write");

    Ok(document(CURVE_W, CURVE_H, &body))
}

fn document(w: f64, h: f64, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{body}</svg>\n"
    )
}

/// Heat-map of the score norm over a square grid, with density contours.
///
/// `field` must be the row-major output of `mixture_score_field` over
/// `grid_points(extent, resolution)`.
pub fn mode_heat_map(field: &[FieldPoint], resolution: usize, extent: f64) -> Result<String> {
    if resolution < 2 || field.len() != resolution * resolution {
        return Err(Error::Data(format!(
            "field of {} points is not a {resolution}x{resolution} grid",
            field.len()
        )));
    }
    let side = 560.0;
    let cell = side / resolution as f64;
    let max_norm = field.iter().map(|p| p.norm).fold(0.0f64, f64::max).max(1e-300);

    let mut body = String::new();
    for (i, p) in field.iter().enumerate() {
        let (ix, iy) = (i % resolution, i / resolution);
        // dark blue (low) to warm yellow (high), linear in norm
        let t = p.norm / max_norm;
        let r = (18.0 + 237.0 * t) as u8;
        let g = (32.0 + 180.0 * t) as u8;
        let b = (96.0 - 40.0 * t).max(0.0) as u8;
        // SVG y grows downward; the grid's y grows upward
        writeln!(
            body,
            r##"  <rect x="{}" y="{}" width="{}" height="{}" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
            fmt(ix as f64 * cell),
            fmt(side - (iy + 1) as f64 * cell),
            fmt(cell + 0.5),
            fmt(cell + 0.5),
        )
        .expect("string write");
    }

    let max_density = field.iter().map(|p| p.density).fold(0.0f64, f64::max);
    for k in 1..=6 {
        let level = max_density * k as f64 / 7.0;
        for seg in contour_segments(field, resolution, level) {
            let to_px = |q: [f64; 2]| {
                [
                    (q[0] + extent) / (2.0 * extent) * side,
                    side - (q[1] + extent) / (2.0 * extent) * side,
                ]
            };
            let (a, b) = (to_px(seg.0), to_px(seg.1));
            writeln!(
                body,
                r##"  <line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#ffffff" stroke-width="0.8" opacity="0.75"/>"##,
                fmt(a[0]),
                fmt(a[1]),
                fmt(b[0]),
                fmt(b[1]),
            )
            .expect("string write");
        }
    }
    Ok(document(side, side, &body))
}

/// Marching squares over the density grid: line segments of one iso-level,
/// in data coordinates. Saddle cells use the center-average rule.
fn contour_segments(
    field: &[FieldPoint],
    resolution: usize,
    level: f64,
) -> Vec<([f64; 2], [f64; 2])> {
    let at = |ix: usize, iy: usize| &field[iy * resolution + ix];
    let mut segs = Vec::new();
    for iy in 0..resolution - 1 {
        for ix in 0..resolution - 1 {
            // corners counterclockwise from bottom-left
            let c = [at(ix, iy), at(ix + 1, iy), at(ix + 1, iy + 1), at(ix, iy + 1)];
            let inside: Vec<bool> = c.iter().map(|p| p.density >= level).collect();
            let mut code = 0u8;
            for (bit, &b) in inside.iter().enumerate() {
                if b {
                    code |= 1 << bit;
                }
            }
            if code == 0 || code == 15 {
                continue;
            }
            // interpolated crossing on edge (a, b)
            let cross = |a: usize, b: usize| -> [f64; 2] {
                let (pa, pb) = (c[a], c[b]);
                let da = pa.density - level;
                let db = pb.density - level;
                let t = if (da - db).abs() < 1e-300 { 0.5 } else { da / (da - db) };
                [
                    pa.point[0] + t * (pb.point[0] - pa.point[0]),
                    pa.point[1] + t * (pb.point[1] - pa.point[1]),
                ]
            };
            let e_bottom = || cross(0, 1);
            let e_right = || cross(1, 2);
            let e_top = || cross(3, 2);
            let e_left = || cross(0, 3);
            match code {
                1 | 14 => segs.push((e_left(), e_bottom())),
                2 | 13 => segs.push((e_bottom(), e_right())),
                3 | 12 => segs.push((e_left(), e_right())),
                4 | 11 => segs.push((e_right(), e_top())),
                6 | 9 => segs.push((e_bottom(), e_top())),
                7 | 8 => segs.push((e_left(), e_top())),
                5 | 10 => {
                    let center =
                        (c[0].density + c[1].density + c[2].density + c[3].density) / 4.0;
                    let flip = (center >= level) == (code == 5);
                    if flip {
                        segs.push((e_left(), e_bottom()));
                        segs.push((e_right(), e_top()));
                    } else {
                        segs.push((e_left(), e_top()));
                        segs.push((e_bottom(), e_right()));
                    }
                }
                _ => unreachable!("4-bit case"),
            }
        }
    }
    segs
}

#[cfg(test)]
mod tests {
    use super::*;
    use adsm_core::mixture::{grid_points, mixture_score_field, GaussianMixture2D};

    /// Tag-stack well-formedness scan: every open tag closes in order.
    pub fn assert_well_formed(xml: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = xml;
        while let Some(open) = rest.find('<') {
            rest = &rest[open + 1..];
            let close = rest.find('>').expect("unterminated tag");
            let tag = &rest[..close];
            rest = &rest[close + 1..];
            if tag.starts_with('?') || tag.starts_with('!') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched close");
            } else if !tag.ends_with('/') {
                let name = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
        assert!(!xml.contains("NaN"), "NaN leaked into SVG");
    }

    #[test]
    fn curve_is_well_formed_and_shades_each_interval_once() {
        let ind = vec![0.1, 0.2, 0.9, 0.8, 0.1, 0.3];
        let labels = vec![0, 0, 1, 1, 0, 1];
        let svg = score_curve("v<&>0", &ind, &labels).unwrap();
        assert_well_formed(&svg);
        // two label runs → two shaded rects (plus the axes box)
        assert_eq!(svg.matches("<rect").count(), 3);
        assert!(svg.contains("&lt;&amp;&gt;"));
    }

    #[test]
    fn all_normal_video_has_no_shading() {
        let svg = score_curve("v", &[0.5, 0.5, 0.5], &[0, 0, 0]).unwrap();
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<rect").count(), 1); // axes box only
    }

    #[test]
    fn heat_map_draws_every_cell_and_some_contours() {
        let m = GaussianMixture2D::local_mode_exhibit();
        let res = 21;
        let pts = grid_points(6.0, res).unwrap();
        let field = mixture_score_field(&m, &pts);
        let svg = mode_heat_map(&field, res, 6.0).unwrap();
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<rect").count(), res * res);
        assert!(svg.matches("<line").count() > 10, "expected contour lines");
    }

    #[test]
    fn contours_of_a_radial_field_stay_near_the_true_circle() {
        // single unit Gaussian: the iso-line of density exp(-r²/2)/2π at
        // level d is a circle of radius r = sqrt(-2 ln(2π d))
        let m = GaussianMixture2D::new(vec![adsm_core::mixture::MixtureComponent {
            weight: 1.0,
            mean: [0.0, 0.0],
            variance: 1.0,
        }])
        .unwrap();
        let res = 161;
        let pts = grid_points(4.0, res).unwrap();
        let field = mixture_score_field(&m, &pts);
        let level = 0.05;
        let r_true = (-2.0 * (level * std::f64::consts::TAU).ln()).sqrt();
        let segs = contour_segments(&field, res, level);
        assert!(!segs.is_empty());
        for (a, b) in segs {
            for q in [a, b] {
                let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
                assert!(
                    (r - r_true).abs() < 0.05,
                    "contour point radius {r} vs true {r_true}"
                );
            }
        }
    }
}
