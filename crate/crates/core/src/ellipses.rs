//! Ellipse geometry, least-squares fitting and tower selection.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;

/// Center `(p, q)`, major radius `a`, minor radius `b`, orientation `alpha`
/// of the major axis measured from the image x axis toward +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub p: f64,
    pub q: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

/// Relative axis difference below which orientation is reported as 0.
pub const CIRCLE_EPS: f64 = 1e-6;

/// Wraps an angle into `[-pi/2, pi/2)`.
pub fn normalize_orientation(alpha: f64) -> f64 {
    let r = (alpha + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if r >= FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

/// Smallest difference between two axis orientations (period pi).
pub fn orientation_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

impl Ellipse {
    /// Builds an ellipse with `a >= b` and normalized orientation; swaps the
    /// axes (rotating by 90 degrees) when given `b > a`.
    pub fn new(p: f64, q: f64, a: f64, b: f64, alpha: f64) -> Self {
        let (a, b, alpha) = if b > a { (b, a, alpha + FRAC_PI_2) } else { (a, b, alpha) };
        let alpha = if a > 0.0 && (a - b).abs() / a < CIRCLE_EPS {
            0.0
        } else {
            normalize_orientation(alpha)
        };
        Ellipse { p, q, a, b, alpha }
    }

    pub fn center(&self) -> Point {
        Point::new(self.p, self.q)
    }

    /// Point at parameter `theta`: center + R(alpha) (a cos theta, b sin theta).
    pub fn point_at(&self, theta: f64) -> Point {
        let (s, c) = self.alpha.sin_cos();
        let u = self.a * theta.cos();
        let v = self.b * theta.sin();
        Point::new(self.p + c * u - s * v, self.q + s * u + c * v)
    }

    /// Largest image y on the curve (y grows downward).
    pub fn bottom_y(&self) -> f64 {
        let (s, c) = self.alpha.sin_cos();
        self.q + (self.a * self.a * s * s + self.b * self.b * c * c).sqrt()
    }

    /// `pt` in the unit-circle frame of this ellipse.
    pub fn to_unit_frame(&self, pt: Point) -> Point {
        let (s, c) = self.alpha.sin_cos();
        let dx = pt.x - self.p;
        let dy = pt.y - self.q;
        Point::new((c * dx + s * dy) / self.a, (-s * dx + c * dy) / self.b)
    }

    /// Distance from the unit circle after mapping into the ellipse frame;
    /// zero on the curve, one at the center.
    pub fn radial_error(&self, pt: Point) -> f64 {
        let u = self.to_unit_frame(pt);
        (u.x.hypot(u.y) - 1.0).abs()
    }

    /// Parameter angle of `pt` in the ellipse frame, in `[0, 2 pi)`.
    pub fn angle_of(&self, pt: Point) -> f64 {
        let u = self.to_unit_frame(pt);
        u.y.atan2(u.x).rem_euclid(2.0 * PI)
    }

    pub fn contains(&self, pt: Point) -> bool {
        let u = self.to_unit_frame(pt);
        u.x * u.x + u.y * u.y <= 1.0
    }

    /// Ramanujan's perimeter approximation.
    pub fn perimeter(&self) -> f64 {
        let (a, b) = (self.a, self.b);
        let h = ((a - b) / (a + b)).powi(2);
        PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
    }

    pub fn scaled(&self, factor: f64) -> Ellipse {
        Ellipse {
            p: self.p * factor,
            q: self.q * factor,
            a: self.a * factor,
            b: self.b * factor,
            alpha: self.alpha,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.p, self.q, self.a, self.b, self.alpha].iter().all(|v| v.is_finite())
    }
}

/// An ellipse fitted to one or more smooth curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub ellipse: Ellipse,
    /// Indices of the smooth curves the fit came from.
    pub source: Vec<usize>,
    /// RMS of [`Ellipse::radial_error`] over the fitted points.
    pub residual: f64,
}

impl FitResult {
    pub fn bottom_y(&self) -> f64 {
        self.ellipse.bottom_y()
    }
}

pub const MIN_FIT_POINTS: usize = 6;

/// Direct least-squares fit of an ellipse-constrained conic (Halír–Flusser
/// formulation of the Fitzgibbon method) on centered, scaled coordinates.
pub fn fit_ellipse(points: &[Point]) -> Result<FitResult> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_FIT_POINTS,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let scale = (points
        .iter()
        .map(|p| (p.x - mx).powi(2) + (p.y - my).powi(2))
        .sum::<f64>()
        / (2.0 * n))
        .sqrt();
    if !(scale > 0.0) {
        return Err(Error::DegenerateConic);
    }

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let u = (p.x - mx) / scale;
        let v = (p.y - my) / scale;
        let quad = Vector3::new(u * u, u * v, v * v);
        let lin = Vector3::new(u, v, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }

    let svd = s3.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::DegenerateConic);
    }
    let s3_inv = s3.try_inverse().ok_or(Error::DegenerateConic)?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let eigenvalues = reduced.complex_eigenvalues();
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in eigenvalues.iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let Some(vec) = null_vector(&(reduced - Matrix3::identity() * lambda.re)) else {
            continue;
        };
        let cond = 4.0 * vec[0] * vec[2] - vec[1] * vec[1];
        if cond <= 0.0 {
            continue;
        }
        if best.as_ref().map_or(true, |(l, _)| lambda.re.abs() < l.abs()) {
            best = Some((lambda.re, vec));
        }
    }
    let (_, quad) = best.ok_or(Error::DegenerateConic)?;
    let lin = t * quad;
    let conic = [quad[0], quad[1], quad[2], lin[0], lin[1], lin[2]];

    let unit = conic_to_ellipse(&conic)?;
    let ellipse = Ellipse::new(
        mx + scale * unit.p,
        my + scale * unit.q,
        scale * unit.a,
        scale * unit.b,
        unit.alpha,
    );
    if !ellipse.is_finite() || !(ellipse.b > 0.0) {
        return Err(Error::DegenerateConic);
    }
    let residual = (points.iter().map(|&p| ellipse.radial_error(p).powi(2)).sum::<f64>() / n).sqrt();
    Ok(FitResult {
        ellipse,
        source: Vec::new(),
        residual,
    })
}

/// Unit vector spanning the (numerical) null space of a rank-2 matrix.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    let candidates = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let best = candidates
        .iter()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
    let norm = best.norm();
    (norm > 0.0 && norm.is_finite()).then(|| best / norm)
}

/// Geometric parameters of `a x^2 + b xy + c y^2 + d x + e y + f = 0`.
pub fn conic_to_ellipse(coef: &[f64; 6]) -> Result<Ellipse> {
    let [a, b, c, d, e, f] = *coef;
    let det = 4.0 * a * c - b * b;
    if !(det > 0.0) {
        return Err(Error::DegenerateConic);
    }
    let x0 = (b * e - 2.0 * c * d) / det;
    let y0 = (b * d - 2.0 * a * e) / det;
    let f0 = f + (d * x0 + e * y0) / 2.0;
    let h = b / 2.0;
    let mean = (a + c) / 2.0;
    let spread = (((a - c) / 2.0).powi(2) + h * h).sqrt();
    let (lo, hi) = (mean - spread, mean + spread);
    // the quadratic form is definite; make it positive
    let (lo, hi, f0) = if lo > 0.0 { (lo, hi, f0) } else { (-hi, -lo, -f0) };
    if !(f0 < 0.0) || !(lo > 0.0) {
        return Err(Error::DegenerateConic);
    }
    let major = (-f0 / lo).sqrt();
    let minor = (-f0 / hi).sqrt();
    // direction of the smaller eigenvalue of [[a, h], [h, c]] (sign-corrected)
    let (a_s, c_s, h_s) = if mean > 0.0 { (a, c, h) } else { (-a, -c, -h) };
    let v1 = Point::new(h_s, lo - a_s);
    let v2 = Point::new(lo - c_s, h_s);
    let dir = if v1.dot(v1) >= v2.dot(v2) { v1 } else { v2 };
    let alpha = if dir.dot(dir) == 0.0 { 0.0 } else { dir.y.atan2(dir.x) };
    Ok(Ellipse::new(x0, y0, major, minor, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusParams {
    /// Center-x tolerance as a fraction of the candidate's major radius.
    pub p_tol: f64,
    /// Major-radius tolerance, same units.
    pub a_tol: f64,
    pub alpha_tol_deg: f64,
    pub max_iterations: usize,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        ConsensusParams {
            p_tol: 0.15,
            a_tol: 0.15,
            alpha_tol_deg: 10.0,
            max_iterations: 50,
        }
    }
}

fn consistent(e: &Ellipse, model: &Ellipse, params: &ConsensusParams) -> bool {
    (e.p - model.p).abs() <= params.p_tol * model.a
        && (e.a - model.a).abs() <= params.a_tol * model.a
        && orientation_diff(e.alpha, model.alpha) <= params.alpha_tol_deg.to_radians()
}

/// RANSAC-style selection of the largest subset consistent in center x,
/// major radius and orientation. The result keeps input order.
pub fn consensus_filter(fits: &[FitResult], params: &ConsensusParams, seed: u64) -> Vec<FitResult> {
    if fits.len() <= 1 {
        return fits.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.shuffle(&mut rng);
    let iterations = fits.len().min(params.max_iterations.max(1));
    let mut best: Vec<usize> = Vec::new();
    for &candidate in order.iter().take(iterations) {
        let model = &fits[candidate].ellipse;
        let inliers: Vec<usize> = (0..fits.len())
            .filter(|&j| consistent(&fits[j].ellipse, model, params))
            .collect();
        if inliers.len() > best.len() {
            best = inliers;
        }
    }
    best.into_iter().map(|i| fits[i].clone()).collect()
}

/// Median minor radius scaled by `factor`; the default double-border gap.
pub fn default_min_gap(fits: &[FitResult], factor: f64) -> f64 {
    let mut bs: Vec<f64> = fits.iter().map(|f| f.ellipse.b).collect();
    if bs.is_empty() {
        return 0.0;
    }
    bs.sort_by(f64::total_cmp);
    let m = bs.len() / 2;
    let median = if bs.len() % 2 == 0 { (bs[m - 1] + bs[m]) / 2.0 } else { bs[m] };
    factor * median
}

/// Sorts by descending bottom point and drops any ellipse whose bottom lies
/// less than `min_gap` above the last one kept; of a double border the lower
/// ellipse survives.
pub fn dedup_double_borders(fits: &[FitResult], min_gap: f64) -> Vec<FitResult> {
    let mut sorted = fits.to_vec();
    sorted.sort_by(|a, b| b.bottom_y().total_cmp(&a.bottom_y()));
    let mut kept: Vec<FitResult> = Vec::with_capacity(sorted.len());
    for fit in sorted {
        match kept.last() {
            Some(last) if last.bottom_y() - fit.bottom_y() < min_gap => {}
            _ => kept.push(fit),
        }
    }
    kept
}
