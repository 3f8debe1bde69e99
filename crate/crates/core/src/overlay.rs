//! Debug drawings of intermediate detection results.

use std::f64::consts::PI;
use std::path::Path;

use crate::edges::EdgeMap;
use crate::ellipses::Ellipse;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::pipeline::Detection;
use crate::raster::Raster;

pub const RED: [f64; 3] = [1.0, 0.1, 0.1];
pub const GREEN: [f64; 3] = [0.1, 0.9, 0.1];
pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];
pub const YELLOW: [f64; 3] = [1.0, 0.9, 0.1];

/// A few distinct colors to tell neighboring curves apart.
const CYCLE: [[f64; 3]; 6] = [
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.3, 0.5, 1.0],
    [1.0, 1.0, 0.2],
    [1.0, 0.3, 1.0],
    [0.2, 1.0, 1.0],
];

fn put(img: &mut Raster, x: f64, y: f64, color: &[f64; 3]) {
    let (xi, yi) = (x.round(), y.round());
    if xi >= 0.0 && yi >= 0.0 && (xi as usize) < img.width() && (yi as usize) < img.height() {
        img.set_pixel(xi as usize, yi as usize, color);
    }
}

pub fn draw_points(img: &mut Raster, pts: &[Point], color: &[f64; 3]) {
    for p in pts {
        put(img, p.x, p.y, color);
    }
}

pub fn draw_segment(img: &mut Raster, a: Point, b: Point, color: &[f64; 3]) {
    let steps = (a.dist(b).ceil() as usize).max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        put(img, a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, color);
    }
}

pub fn draw_ellipse(img: &mut Raster, e: &Ellipse, color: &[f64; 3]) {
    let n = (e.perimeter().ceil() as usize).clamp(16, 20_000);
    let mut prev = e.point_at(0.0);
    for k in 1..=n {
        let next = e.point_at(2.0 * PI * k as f64 / n as f64);
        draw_segment(img, prev, next, color);
        prev = next;
    }
}

/// Edge pixels in white over black.
pub fn edge_image(edges: &EdgeMap) -> Raster {
    edges.to_raster().to_rgb()
}

/// Darkened copy of `img` as a drawing background.
fn backdrop(img: &Raster) -> Raster {
    let rgb = img.to_rgb();
    let data = rgb.data().iter().map(|v| v * 0.5).collect();
    Raster::from_vec(rgb.width(), rgb.height(), 3, data).expect("same geometry")
}

/// Named drawings of every stage, in working-image coordinates.
pub fn detection_overlays(det: &Detection) -> Vec<(&'static str, Raster)> {
    let mut out = Vec::new();
    out.push(("edges", edge_image(&det.edges)));

    let mut contours = Raster::new(det.edges.width(), det.edges.height(), 3);
    for (i, c) in det.contours.iter().enumerate() {
        draw_points(&mut contours, &c.to_points(), &CYCLE[i % CYCLE.len()]);
    }
    out.push(("contours", contours));

    let mut curves = Raster::new(det.edges.width(), det.edges.height(), 3);
    for (i, c) in det.curves.iter().enumerate() {
        draw_points(&mut curves, c, &CYCLE[i % CYCLE.len()]);
    }
    out.push(("curves", curves));

    let mut fits = backdrop(&det.working);
    for f in &det.fits {
        draw_ellipse(&mut fits, &f.ellipse, &RED);
    }
    out.push(("fits", fits));

    let mut stack = backdrop(&det.working);
    for f in &det.consensus {
        draw_ellipse(&mut stack, &f.ellipse, &YELLOW);
    }
    for f in &det.deduped {
        draw_ellipse(&mut stack, &f.ellipse, &RED);
    }
    out.push(("consensus", stack));

    let mut recon = backdrop(&det.working);
    if let Some(r) = &det.reconstruction {
        for c in &r.candidates {
            draw_ellipse(&mut recon, &c.prediction.ellipse, &WHITE);
            for frag in &c.prediction.gathered {
                draw_points(&mut recon, frag, &YELLOW);
            }
        }
    }
    for e in det.stack.rows() {
        draw_ellipse(&mut recon, e, &GREEN);
    }
    out.push(("stack", recon));
    out
}

/// Writes every overlay as `<prefix>_<stage>.png` under `dir`.
pub fn save_overlays(det: &Detection, dir: &Path, prefix: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, img) in detection_overlays(det) {
        img.save_png(dir.join(format!("{prefix}_{name}.png")))?;
    }
    Ok(())
}
