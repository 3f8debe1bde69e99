//! Synthetic dish-stack scenes with exact ground truth.
//!
//! Dishes are drawn bottom-up as filled ellipses in a palette color with a
//! bright rim, each partly covering the one below. Clutter (off-tower
//! ellipses and bundles of thick lines) goes beside the tower, then
//! illumination, a shadow ramp and pixel noise are applied.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dishfeat::{extract_patch, ClassLabel, DishPatch};
use crate::ellipses::Ellipse;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::Raster;
use crate::stack_recon::ParamMatrix;

/// Named dish colors, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub names: Vec<String>,
    pub colors: Vec<[f64; 3]>,
}

pub fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl Default for Palette {
    /// Eight hues 45 degrees apart at saturation 0.8, value 0.75.
    fn default() -> Self {
        let names = ["red", "orange", "lime", "green", "cyan", "blue", "purple", "magenta"];
        Palette {
            names: names.iter().map(|s| s.to_string()).collect(),
            colors: (0..8).map(|k| hsv_to_rgb(45.0 * k as f64, 0.8, 0.75)).collect(),
        }
    }
}

impl Palette {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.colors.len() || self.colors.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "palette has {} names for {} colors",
                self.names.len(),
                self.colors.len()
            )));
        }
        if self.colors.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("palette colors must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClutterKind {
    /// A filled ellipse such as a bowl or a bottle cap.
    Ellipse { shape: Ellipse, color: [f64; 3] },
    /// `count` parallel thick lines, like chopsticks.
    Lines {
        from: Point,
        to: Point,
        count: usize,
        spacing: f64,
        width: f64,
        color: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Class index per dish, bottom dish first.
    pub colors: Vec<usize>,
    pub center_x: f64,
    /// Bottom point of the lowest dish.
    pub base_bottom_y: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    /// Distance between consecutive bottom points.
    pub spacing: f64,
    /// Change of A per dish going up, in pixels.
    pub drift_a: f64,
    /// Change of the spacing per dish going up, in pixels.
    pub drift_spacing: f64,
    pub rim_width: f64,
    pub rim_color: [f64; 3],
    /// Background color at the top row; it ramps linearly to
    /// `background_bottom` at the last row.
    pub background: [f64; 3],
    pub background_bottom: [f64; 3],
    pub illumination: f64,
    /// Darkening at the far end of the shadow ramp, in `[0, 1)`.
    pub shadow: f64,
    pub shadow_angle: f64,
    pub clutter: Vec<ClutterKind>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn dish_count(&self) -> usize {
        self.colors.len()
    }

    pub fn validate(&self, palette: &Palette) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.colors.is_empty() {
            return bad("a scene needs at least one dish");
        }
        if !(self.spacing > 0.0) {
            return bad("spacing must be positive");
        }
        if !(self.a > 0.0 && self.b > 0.0 && self.rim_width >= 0.0) {
            return bad("dish radii must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("empty image");
        }
        if let Some(c) = self.colors.iter().find(|&&c| c >= palette.len()) {
            return bad(&format!("class {c} is not in the palette"));
        }
        if !(0.0..1.0).contains(&self.shadow) || !(self.noise_sigma >= 0.0) || !(self.illumination > 0.0) {
            return bad("illumination, shadow or noise out of range");
        }
        Ok(())
    }

    /// Ground-truth ellipses, bottom dish first.
    pub fn ellipses(&self) -> Vec<Ellipse> {
        let mut out = Vec::with_capacity(self.colors.len());
        let mut bottom = self.base_bottom_y;
        for i in 0..self.colors.len() {
            let a = self.a + self.drift_a * i as f64;
            let b = self.b * a / self.a;
            let probe = Ellipse::new(0.0, 0.0, a, b, self.alpha);
            out.push(Ellipse::new(self.center_x, bottom - probe.bottom_y(), a, b, self.alpha));
            bottom -= self.spacing + self.drift_spacing * i as f64;
        }
        out
    }
}

/// Ranges from which [`random_spec`] draws scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneRanges {
    pub width: usize,
    pub height: usize,
    pub dishes: (usize, usize),
    pub a: (f64, f64),
    /// B as a fraction of A.
    pub b_ratio: (f64, f64),
    pub alpha_deg: f64,
    /// Spacing as a fraction of B.
    pub spacing_ratio: (f64, f64),
    /// Relative change of A per dish.
    pub drift: f64,
    pub rim_width: (f64, f64),
    pub illumination: (f64, f64),
    pub shadow: (f64, f64),
    pub clutter: (usize, usize),
    pub noise_sigma: (f64, f64),
}

impl Default for SceneRanges {
    fn default() -> Self {
        SceneRanges {
            width: 800,
            height: 600,
            dishes: (3, 10),
            a: (80.0, 120.0),
            b_ratio: (0.3, 0.45),
            alpha_deg: 3.0,
            spacing_ratio: (0.6, 0.8),
            drift: 0.01,
            rim_width: (2.5, 4.0),
            illumination: (0.7, 1.1),
            shadow: (0.0, 0.3),
            clutter: (0, 5),
            noise_sigma: (0.0, 0.02),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

fn pick(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    rng.gen_range(range.0..=range.1.max(range.0))
}

/// Draws a scene with a tower that fits inside the image and clutter placed
/// clear of it.
pub fn random_spec(seed: u64, ranges: &SceneRanges, palette: &Palette) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (ranges.width as f64, ranges.height as f64);
    let n = pick(&mut rng, ranges.dishes).max(1);
    let mut a = uniform(&mut rng, ranges.a);
    let mut b = a * uniform(&mut rng, ranges.b_ratio);
    let mut spacing = b * uniform(&mut rng, ranges.spacing_ratio);
    let drift_a = a * uniform(&mut rng, (-ranges.drift, ranges.drift));
    // shrink the tower until it fits vertically with a margin
    let margin = 0.05 * h;
    let max_a = |a: f64| a + drift_a.abs() * n as f64;
    loop {
        let tower = 2.0 * b * (max_a(a) / a) + spacing * (n as f64 - 1.0) * 1.05;
        if tower <= h - 2.0 * margin && 2.0 * max_a(a) <= 0.6 * w {
            break;
        }
        a *= 0.95;
        b *= 0.95;
        spacing *= 0.95;
    }
    let drift_spacing = spacing * uniform(&mut rng, (-ranges.drift, ranges.drift));
    let tower_height = 2.0 * b * (max_a(a) / a) + spacing * (n as f64 - 1.0) * 1.05;
    let base_bottom_y = uniform(&mut rng, (margin + tower_height, h - margin));
    let half = max_a(a);
    let center_x = uniform(&mut rng, (w / 2.0 - 0.1 * w, w / 2.0 + 0.1 * w)).clamp(half + 2.0, w - half - 2.0);
    let alpha = uniform(&mut rng, (-ranges.alpha_deg, ranges.alpha_deg)).to_radians();
    let colors = (0..n).map(|_| rng.gen_range(0..palette.len().max(1))).collect();
    let rim_width = uniform(&mut rng, ranges.rim_width);
    let illumination = uniform(&mut rng, ranges.illumination);
    let shadow = uniform(&mut rng, ranges.shadow);
    let shadow_angle = rng.gen_range(0.0..2.0 * PI);
    let noise_sigma = uniform(&mut rng, ranges.noise_sigma);
    let tint = |v: f64| [v * 1.1, v, v * 0.85];
    let (top, bottom) = (rng.gen_range(0.08..0.2), rng.gen_range(0.35..0.45));
    let (background, background_bottom) = if rng.gen_bool(0.5) {
        (tint(top), tint(bottom))
    } else {
        (tint(bottom), tint(top))
    };

    let keep_out = (center_x - half - 0.05 * w, center_x + half + 0.05 * w);
    let clutter_count = pick(&mut rng, ranges.clutter);
    let mut clutter = Vec::new();
    for _ in 0..clutter_count {
        if let Some(c) = place_clutter(&mut rng, w, h, keep_out, a) {
            clutter.push(c);
        }
    }
    SceneSpec {
        width: ranges.width,
        height: ranges.height,
        colors,
        center_x,
        base_bottom_y,
        a,
        b,
        alpha,
        spacing,
        drift_a,
        drift_spacing,
        rim_width,
        rim_color: [0.95, 0.95, 0.92],
        background,
        background_bottom,
        illumination,
        shadow,
        shadow_angle,
        clutter,
        noise_sigma,
        seed: rng.gen(),
    }
}

/// A clutter shape fully inside one of the free side strips, or `None` when
/// neither strip is wide enough.
fn place_clutter(rng: &mut ChaCha8Rng, w: f64, h: f64, keep_out: (f64, f64), dish_a: f64) -> Option<ClutterKind> {
    let strips: Vec<(f64, f64)> = [(4.0, keep_out.0), (keep_out.1, w - 4.0)]
        .into_iter()
        .filter(|(lo, hi)| hi - lo > 40.0)
        .collect();
    if strips.is_empty() {
        return None;
    }
    let (lo, hi) = strips[rng.gen_range(0..strips.len())];
    let room = hi - lo;
    let color = hsv_to_rgb(rng.gen_range(0.0..360.0), rng.gen_range(0.0..0.6), rng.gen_range(0.3..0.95));
    if rng.gen_bool(0.5) {
        // keep clutter radii clearly away from the dish radius
        let a = rng.gen_range(12.0..(0.45 * dish_a).max(13.0)).min(room / 2.0 - 2.0);
        if a < 8.0 {
            return None;
        }
        let b = a * rng.gen_range(0.3..1.0);
        let p = rng.gen_range(lo + a..hi - a);
        let q = rng.gen_range(a + 4.0..h - a - 4.0);
        let alpha = rng.gen_range(-PI / 2.0..PI / 2.0);
        Some(ClutterKind::Ellipse {
            shape: Ellipse::new(p, q, a, b, alpha),
            color,
        })
    } else {
        let from = Point::new(rng.gen_range(lo + 4.0..hi - 4.0), rng.gen_range(10.0..h - 10.0));
        let len = rng.gen_range(60.0..200.0);
        let dir = rng.gen_range(0.0..2.0 * PI);
        let to = Point::new(
            (from.x + len * dir.cos()).clamp(lo + 4.0, hi - 4.0),
            (from.y + len * dir.sin()).clamp(10.0, h - 10.0),
        );
        Some(ClutterKind::Lines {
            from,
            to,
            count: rng.gen_range(1..=3),
            spacing: rng.gen_range(6.0..12.0),
            width: rng.gen_range(2.0..5.0),
            color,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDish {
    pub ellipse: Ellipse,
    pub label: usize,
    pub name: String,
    /// Rim mostly erased, so the dish can only be found by reconstruction.
    pub weak: bool,
}

/// A rendered scene and its dishes, bottom dish first.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image: Raster,
    pub dishes: Vec<TruthDish>,
}

/// The JSON sidecar written next to a rendered scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub dishes: Vec<TruthDish>,
}

impl GroundTruth {
    pub fn ellipses(&self) -> Vec<Ellipse> {
        self.dishes.iter().map(|d| d.ellipse).collect()
    }

    pub fn stack(&self) -> ParamMatrix {
        ParamMatrix::new(self.ellipses())
    }

    /// One labeled patch per dish, bottom dish first.
    pub fn patches(&self) -> Result<Vec<(DishPatch, usize)>> {
        let stack = self.stack();
        let n = stack.len();
        (0..n)
            .map(|i| {
                let patch = extract_patch(&self.image, &stack, n - 1 - i)?;
                Ok((patch, self.dishes[i].label))
            })
            .collect()
    }

    pub fn truth_file(&self, image_name: &str) -> TruthFile {
        TruthFile {
            image: image_name.to_string(),
            width: self.image.width(),
            height: self.image.height(),
            dishes: self.dishes.clone(),
        }
    }

    /// Writes `<stem>.png` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let png = format!("{stem}.png");
        self.image.save_png(dir.join(&png))?;
        save_truth(&dir.join(format!("{stem}.json")), &self.truth_file(&png))
    }
}

pub fn save_truth(path: &Path, truth: &TruthFile) -> Result<()> {
    let text = serde_json::to_string_pretty(truth).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: &Path) -> Result<TruthFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Subsample offsets for 4x supersampling.
const SUBSAMPLES: [(f64, f64); 4] = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];

/// Paints `shade(pt)` over every subsample it returns `Some` for, blending
/// by coverage.
fn paint<F>(img: &mut Raster, bbox: (f64, f64, f64, f64), shade: F)
where
    F: Fn(Point) -> Option<[f64; 3]>,
{
    let (x0, y0, x1, y1) = bbox;
    let xs = (x0.floor().max(0.0) as usize, (x1.ceil() as usize + 1).min(img.width()));
    let ys = (y0.floor().max(0.0) as usize, (y1.ceil() as usize + 1).min(img.height()));
    for y in ys.0..ys.1 {
        for x in xs.0..xs.1 {
            let mut acc = [0.0; 3];
            let mut hits = 0usize;
            for (dx, dy) in SUBSAMPLES {
                if let Some(c) = shade(Point::new(x as f64 + dx, y as f64 + dy)) {
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                    hits += 1;
                }
            }
            if hits == 0 {
                continue;
            }
            let f = hits as f64 / SUBSAMPLES.len() as f64;
            let old = img.pixel(x, y).to_vec();
            let new: Vec<f64> = (0..3).map(|k| old[k] * (1.0 - f) + acc[k] / SUBSAMPLES.len() as f64).collect();
            img.set_pixel(x, y, &new);
        }
    }
}

/// Darkens the ground just outside the lower half of `dish`: fully by
/// `factor` within `hard` pixels of the outline, then fading out over `fade`.
/// Only the part within `half_arc` of the bottom point is shaded.
fn contact_shadow(img: &mut Raster, dish: &Ellipse, factor: f64, hard: f64, fade: f64, half_arc: f64) {
    let reach = hard + fade;
    let grown = Ellipse::new(dish.p, dish.q, dish.a + reach, dish.b + reach, dish.alpha);
    let (x0, y0, x1, y1) = ellipse_bbox(&grown);
    let xs = (x0.floor().max(0.0) as usize, (x1.ceil().max(0.0) as usize + 1).min(img.width()));
    let ys = (y0.floor().max(0.0) as usize, (y1.ceil().max(0.0) as usize + 1).min(img.height()));
    for y in ys.0..ys.1 {
        for x in xs.0..xs.1 {
            let u = dish.to_unit_frame(Point::new(x as f64, y as f64));
            let r = u.x.hypot(u.y);
            // lower half only, easing in from the ends of the major axis
            let side = (3.0 * u.y / r.max(1e-9)).clamp(0.0, 1.0);
            // first-order distance to the outline in pixels
            let grad = (u.x * u.x / (dish.a * dish.a) + u.y * u.y / (dish.b * dish.b)).sqrt() / r.max(1e-9);
            let out = (r - 1.0) / grad.max(1e-12);
            if out <= 0.0 || side == 0.0 || from_bottom(dish, Point::new(x as f64, y as f64)).abs() > half_arc {
                continue;
            }
            let strength = if out <= hard { 1.0 } else { (1.0 - (out - hard) / fade).max(0.0) };
            let g = 1.0 - (1.0 - factor) * strength * side;
            let px: Vec<f64> = img.pixel(x, y).iter().map(|v| v * g).collect();
            img.set_pixel(x, y, &px);
        }
    }
}

/// Signed eccentric angle of `pt` measured from the bottom point.
fn from_bottom(e: &Ellipse, pt: Point) -> f64 {
    (e.angle_of(pt) - PI / 2.0 + PI).rem_euclid(2.0 * PI) - PI
}

fn ellipse_bbox(e: &Ellipse) -> (f64, f64, f64, f64) {
    let (s, c) = e.alpha.sin_cos();
    let hx = (e.a * e.a * c * c + e.b * e.b * s * s).sqrt();
    let hy = (e.a * e.a * s * s + e.b * e.b * c * c).sqrt();
    (e.p - hx - 1.0, e.q - hy - 1.0, e.p + hx + 1.0, e.q + hy + 1.0)
}

/// Rim test: inside `e` but outside the ellipse shrunk by `width` pixels.
fn on_rim(e: &Ellipse, inner: &Ellipse, pt: Point) -> bool {
    e.contains(pt) && !inner.contains(pt)
}

fn draw_clutter(img: &mut Raster, c: &ClutterKind) {
    match *c {
        ClutterKind::Ellipse { shape, color } => {
            let inner = Ellipse::new(shape.p, shape.q, (shape.a - 2.0).max(0.5), (shape.b - 2.0).max(0.5), shape.alpha);
            let edge = [color[0] * 0.6, color[1] * 0.6, color[2] * 0.6];
            paint(img, ellipse_bbox(&shape), |pt| {
                if inner.contains(pt) {
                    Some(color)
                } else if shape.contains(pt) {
                    Some(edge)
                } else {
                    None
                }
            });
        }
        ClutterKind::Lines {
            from,
            to,
            count,
            spacing,
            width,
            color,
        } => {
            let d = to.sub(from);
            let len = d.dot(d).sqrt().max(1e-9);
            let (ux, uy) = (d.x / len, d.y / len);
            for k in 0..count {
                let off = (k as f64 - (count as f64 - 1.0) / 2.0) * spacing;
                let a = Point::new(from.x - uy * off, from.y + ux * off);
                let bbox = (
                    a.x.min(a.x + d.x) - width,
                    a.y.min(a.y + d.y) - width,
                    a.x.max(a.x + d.x) + width,
                    a.y.max(a.y + d.y) + width,
                );
                paint(img, bbox, |pt| {
                    let r = pt.sub(a);
                    let along = r.x * ux + r.y * uy;
                    let across = (r.x * uy - r.y * ux).abs();
                    (along >= 0.0 && along <= len && across <= width / 2.0).then_some(color)
                });
            }
        }
    }
}

/// Renders the scene; dishes listed in `weak` keep only a rim arc of
/// `arc_fraction` of the ellipse (centered on the bottom point) and take the
/// color of the dish below so their outline carries no body contrast.
fn render_with(spec: &SceneSpec, palette: &Palette, weak: &[usize], arc_fraction: f64) -> Result<GroundTruth> {
    spec.validate(palette)?;
    palette.validate()?;
    let mut img = Raster::new(spec.width, spec.height, 3);
    for y in 0..spec.height {
        let t = y as f64 / (spec.height.max(2) - 1) as f64;
        let row: Vec<f64> = (0..3).map(|k| spec.background[k] * (1.0 - t) + spec.background_bottom[k] * t).collect();
        for x in 0..spec.width {
            img.set_pixel(x, y, &row);
        }
    }
    for c in &spec.clutter {
        draw_clutter(&mut img, c);
    }

    let ellipses = spec.ellipses();
    let mut labels = spec.colors.clone();
    for &i in weak {
        if i > 0 {
            labels[i] = labels[i - 1];
        }
    }
    let half_arc = arc_fraction * PI;
    let mut dishes = Vec::with_capacity(ellipses.len());
    for (i, e) in ellipses.iter().enumerate() {
        let is_weak = weak.contains(&i);
        let body = palette.colors[labels[i]];
        let w = spec.rim_width;
        let inner = Ellipse::new(e.p, e.q, (e.a - w).max(0.5), (e.b - w).max(0.5), e.alpha);
        let rim = spec.rim_color;
        // contact shadow cast on the dish below, a soft one on the table
        if i > 0 {
            contact_shadow(&mut img, e, 0.45, 2.5, 1.0, if is_weak { half_arc } else { PI });
        } else {
            contact_shadow(&mut img, e, 0.5, 0.0, 0.5 * e.b, PI);
        }
        paint(&mut img, ellipse_bbox(e), |pt| {
            if !e.contains(pt) {
                return None;
            }
            if !on_rim(e, &inner, pt) {
                return Some(body);
            }
            if is_weak {
                if from_bottom(e, pt).abs() > half_arc {
                    return Some(body);
                }
            }
            Some(rim)
        });
        dishes.push(TruthDish {
            ellipse: *e,
            label: labels[i],
            name: palette.names[labels[i]].clone(),
            weak: is_weak,
        });
    }

    // illumination, shadow ramp across the image, then noise
    let (sa, ca) = spec.shadow_angle.sin_cos();
    let (w, h) = (spec.width as f64, spec.height as f64);
    let extent = (w * ca.abs() + h * sa.abs()).max(1.0);
    let origin = (if ca >= 0.0 { 0.0 } else { w }) * ca + (if sa >= 0.0 { 0.0 } else { h }) * sa;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("finite sigma"));
    let mut data = img.into_data();
    for y in 0..spec.height {
        for x in 0..spec.width {
            let t = ((x as f64 * ca + y as f64 * sa) - origin) / extent;
            let gain = spec.illumination * (1.0 - spec.shadow * t.clamp(0.0, 1.0));
            for c in 0..3 {
                let k = (y * spec.width + x) * 3 + c;
                let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                data[k] = (data[k] * gain + n).clamp(0.0, 1.0);
            }
        }
    }
    Ok(GroundTruth {
        image: Raster::from_vec(spec.width, spec.height, 3, data)?,
        dishes,
    })
}

pub fn render(spec: &SceneSpec, palette: &Palette) -> Result<GroundTruth> {
    render_with(spec, palette, &[], 1.0)
}

/// Interior dishes chosen for weakening: about a quarter of them, at least
/// one when the stack has an interior.
pub fn weak_dishes(spec: &SceneSpec) -> Vec<usize> {
    let n = spec.dish_count();
    if n < 3 {
        return Vec::new();
    }
    let interior: Vec<usize> = (1..n - 1).collect();
    let count = ((interior.len() as f64) * 0.25).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7765_616b);
    let mut chosen = rand::seq::index::sample(&mut rng, interior.len(), count).into_vec();
    chosen.sort_unstable();
    // two adjacent weak dishes would leave no evidence of the spacing
    let mut picked: Vec<usize> = Vec::new();
    for c in chosen.into_iter().map(|k| interior[k]) {
        if picked.last().map_or(true, |&p| c > p + 1) {
            picked.push(c);
        }
    }
    picked
}

/// As [`render`], but chosen interior dishes keep only a contiguous rim arc
/// of `drop_fraction` of their outline. A fraction of zero weakens nothing.
pub fn render_occluded(spec: &SceneSpec, palette: &Palette, drop_fraction: f64) -> Result<GroundTruth> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::InvalidParameter(format!("drop fraction {drop_fraction} outside [0, 1)")));
    }
    if drop_fraction == 0.0 {
        return render(spec, palette);
    }
    render_with(spec, palette, &weak_dishes(spec), drop_fraction)
}

/// Renders scenes from consecutive seeds and cuts every dish into a labeled
/// patch until `count` patches exist.
/// A rendered dish patch and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPatch {
    pub patch: DishPatch,
    pub label: usize,
    /// Seed of the scene it was cut from.
    pub scene: u64,
    /// Dish position in that scene, bottom first.
    pub dish: usize,
}

/// At least `count` labeled patches cut from clean scenes with seeds
/// `seed, seed + 1, ...`; exactly `count` are returned.
pub fn synth_patch_set(count: usize, seed: u64, ranges: &SceneRanges, palette: &Palette) -> Result<Vec<SynthPatch>> {
    let mut out = Vec::with_capacity(count);
    let mut k = 0u64;
    while out.len() < count {
        let scene = seed.wrapping_add(k);
        let truth = render(&random_spec(scene, ranges, palette), palette)?;
        for (dish, (mut patch, label)) in truth.patches()?.into_iter().enumerate() {
            if out.len() == count {
                break;
            }
            patch.label = Some(ClassLabel {
                index: label,
                name: palette.names[label].clone(),
            });
            out.push(SynthPatch { patch, label, scene, dish });
        }
        k += 1;
    }
    Ok(out)
}

pub fn synth_patches(count: usize, seed: u64, ranges: &SceneRanges, palette: &Palette) -> Result<Vec<(DishPatch, usize)>> {
    Ok(synth_patch_set(count, seed, ranges, palette)?
        .into_iter()
        .map(|s| (s.patch, s.label))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_spec(n: usize) -> SceneSpec {
        SceneSpec {
            width: 400,
            height: 400,
            colors: (0..n).map(|i| i % 8).collect(),
            center_x: 200.0,
            base_bottom_y: 350.0,
            a: 80.0,
            b: 30.0,
            alpha: 0.0,
            spacing: 30.0,
            drift_a: 0.0,
            drift_spacing: 0.0,
            rim_width: 3.0,
            rim_color: [0.95, 0.95, 0.95],
            background: [0.2, 0.2, 0.2],
            background_bottom: [0.2, 0.2, 0.2],
            illumination: 1.0,
            shadow: 0.0,
            shadow_angle: 0.0,
            clutter: vec![],
            noise_sigma: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn identical_dishes_have_equal_gaps() {
        let e = plain_spec(5).ellipses();
        for w in e.windows(2) {
            assert!((w[0].bottom_y() - w[1].bottom_y() - 30.0).abs() < 1e-9);
        }
        assert!((e[0].bottom_y() - 350.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_image() {
        let pal = Palette::default();
        let spec = random_spec(11, &SceneRanges::default(), &pal);
        assert_eq!(render(&spec, &pal).unwrap(), render(&spec, &pal).unwrap());
    }

    #[test]
    fn truth_is_sorted_bottom_first() {
        let pal = Palette::default();
        for seed in 0..20 {
            let spec = random_spec(seed, &SceneRanges::default(), &pal);
            let truth = render(&spec, &pal).unwrap();
            let bottoms: Vec<f64> = truth.dishes.iter().map(|d| d.ellipse.bottom_y()).collect();
            assert!(bottoms.windows(2).all(|w| w[0] > w[1]));
            for d in &truth.dishes {
                let e = d.ellipse;
                assert!(e.a >= e.b && e.b > 0.0);
                assert!((-PI / 2.0..PI / 2.0).contains(&e.alpha));
                assert!(e.bottom_y() < 600.0 && e.q - e.b > 0.0);
            }
        }
    }

    #[test]
    fn top_dish_rim_is_bright_on_the_curve() {
        let pal = Palette::default();
        let spec = plain_spec(3);
        let truth = render(&spec, &pal).unwrap();
        let top = truth.dishes[2].ellipse;
        // halfway across the rim
        for k in 0..36 {
            let theta = k as f64 * PI / 18.0;
            let mid = Ellipse::new(top.p, top.q, top.a - 1.5, top.b - 1.5, top.alpha).point_at(theta);
            let px = truth.image.pixel(mid.x.round() as usize, mid.y.round() as usize);
            assert!(px[0] > 0.6, "theta {theta}: {px:?}");
        }
    }

    #[test]
    fn zero_drop_equals_render() {
        let pal = Palette::default();
        let spec = plain_spec(5);
        assert_eq!(render_occluded(&spec, &pal, 0.0).unwrap(), render(&spec, &pal).unwrap());
        assert!(render_occluded(&spec, &pal, 1.0).is_err());
    }

    #[test]
    fn weak_dish_takes_color_below_and_loses_rim() {
        let pal = Palette::default();
        let spec = plain_spec(5);
        let weak = weak_dishes(&spec);
        assert!(!weak.is_empty());
        let truth = render_occluded(&spec, &pal, 0.2).unwrap();
        for &i in &weak {
            assert!(truth.dishes[i].weak);
            assert_eq!(truth.dishes[i].label, truth.dishes[i - 1].label);
            let e = truth.dishes[i].ellipse;
            // bottom of the rim kept, a point 60 degrees off the bottom erased
            let rim_at = |theta: f64| {
                let p = Ellipse::new(e.p, e.q, e.a - 1.5, e.b - 1.5, e.alpha).point_at(theta);
                truth.image.pixel(p.x.round() as usize, p.y.round() as usize)[0]
            };
            assert!(rim_at(PI / 2.0) > 0.8);
            assert!(rim_at(PI / 2.0 + PI / 3.0) < 0.8);
        }
    }

    #[test]
    fn clutter_stays_off_tower() {
        let pal = Palette::default();
        for seed in 0..30 {
            let spec = random_spec(seed, &SceneRanges::default(), &pal);
            let half = spec.ellipses().iter().map(|e| e.a).fold(0.0, f64::max);
            for c in &spec.clutter {
                let (lo, hi) = match c {
                    ClutterKind::Ellipse { shape, .. } => {
                        let bb = ellipse_bbox(shape);
                        (bb.0, bb.2)
                    }
                    ClutterKind::Lines { from, to, .. } => (from.x.min(to.x), from.x.max(to.x)),
                };
                assert!(hi < spec.center_x - half || lo > spec.center_x + half, "seed {seed}");
            }
        }
    }

    #[test]
    fn patches_come_labeled() {
        let pal = Palette::default();
        let set = synth_patches(12, 3, &SceneRanges::default(), &pal).unwrap();
        assert_eq!(set.len(), 12);
        for (p, l) in &set {
            assert_eq!(p.pixels.width(), 100);
            assert_eq!(p.pixels.height(), 50);
            assert!(*l < 8);
        }
    }

    #[test]
    fn truth_file_round_trip() {
        let pal = Palette::default();
        let truth = render(&plain_spec(3), &pal).unwrap();
        let dir = std::env::temp_dir().join(format!("dishscan-synth-{}", std::process::id()));
        truth.save(&dir, "scene").unwrap();
        let back = load_truth(&dir.join("scene.json")).unwrap();
        assert_eq!(back.dishes, truth.dishes);
        assert_eq!(back.image, "scene.png");
        std::fs::remove_dir_all(&dir).ok();
    }
}
