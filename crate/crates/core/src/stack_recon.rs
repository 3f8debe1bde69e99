//! Recovering dishes the detector missed.
//!
//! Detected ellipses are ordered bottom to top. Gaps in the sequence of
//! bottom points reveal where dishes are missing; each missing dish is
//! predicted by extrapolating every ellipse parameter along the stack, then
//! refined against nearby edge fragments and kept only if the fragments
//! back it up.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ellipses::Ellipse;
use crate::error::{Error, Result};
use crate::geom::Point;

/// Ellipse parameters of the detected dishes, sorted by descending bottom
/// point: row 0 is the bottom dish.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamMatrix {
    rows: Vec<Ellipse>,
}

impl ParamMatrix {
    pub fn new(mut rows: Vec<Ellipse>) -> Self {
        rows.sort_by(|a, b| b.bottom_y().total_cmp(&a.bottom_y()));
        ParamMatrix { rows }
    }

    pub fn rows(&self) -> &[Ellipse] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row `i` as `[p, q, A, B, alpha]`.
    pub fn row_params(&self, i: usize) -> [f64; 5] {
        let e = &self.rows[i];
        [e.p, e.q, e.a, e.b, e.alpha]
    }

    /// Dishes ordered top to bottom.
    pub fn top_down(&self) -> impl Iterator<Item = &Ellipse> {
        self.rows.iter().rev()
    }

    pub fn bottoms(&self) -> Vec<f64> {
        self.rows.iter().map(Ellipse::bottom_y).collect()
    }
}

/// Zero on the ellipse, growing with distance from the unit circle in the
/// ellipse's own frame.
pub fn segment_error(e: &Ellipse, pt: Point) -> f64 {
    e.radial_error(pt)
}

/// Where each detected row sits in the completed stack, and which
/// positions are empty.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GapAnalysis {
    pub row_positions: Vec<usize>,
    pub missing: Vec<usize>,
}

/// Gaps between consecutive bottom points, measured in units of the median
/// gap. A gap of about `k` units hides `k - 1` dishes.
pub fn find_missing(stack: &ParamMatrix) -> GapAnalysis {
    let n = stack.len();
    if n < 2 {
        return GapAnalysis {
            row_positions: (0..n).collect(),
            missing: Vec::new(),
        };
    }
    let bottoms = stack.bottoms();
    let gaps: Vec<f64> = bottoms.windows(2).map(|w| w[0] - w[1]).collect();
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[m - 1] + sorted[m]) / 2.0
    } else {
        sorted[m]
    };
    let mut row_positions = vec![0];
    let mut missing = Vec::new();
    let mut pos = 0;
    for g in gaps {
        let k = if median > 0.0 { (g / median).round().max(1.0) as usize } else { 1 };
        for extra in 1..k {
            missing.push(pos + extra);
        }
        pos += k;
        row_positions.push(pos);
    }
    GapAnalysis { row_positions, missing }
}

/// A predicted ellipse for an empty stack position and the edge fragments
/// lying close to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub ellipse: Ellipse,
    pub insert_index: usize,
    pub gathered: Vec<Vec<Point>>,
}

/// Least-squares line through `(x, y)` evaluated at `at`. Falls back to the
/// mean when all x coincide.
fn line_fit_eval(xs: &[f64], ys: &[f64], at: f64) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return my;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    my + sxy / sxx * (at - mx)
}

/// Fits each parameter linearly against stack position and evaluates it at
/// `insert_index`, then gathers every fragment whose points all lie within
/// `gather_threshold` of the prediction. A fragment that some detected row
/// explains better than the prediction belongs to that dish and is skipped.
pub fn predict(
    stack: &ParamMatrix,
    row_positions: &[usize],
    insert_index: usize,
    fragments: &[Vec<Point>],
    gather_threshold: f64,
) -> Result<Prediction> {
    if stack.is_empty() || row_positions.len() != stack.len() {
        return Err(Error::InvalidParameter(format!(
            "{} row positions for a stack of {}",
            row_positions.len(),
            stack.len()
        )));
    }
    let xs: Vec<f64> = row_positions.iter().map(|&p| p as f64).collect();
    let mut params = [0.0; 5];
    for (k, slot) in params.iter_mut().enumerate() {
        let ys: Vec<f64> = (0..stack.len()).map(|i| stack.row_params(i)[k]).collect();
        *slot = line_fit_eval(&xs, &ys, insert_index as f64);
    }
    let ellipse = Ellipse::new(params[0], params[1], params[2], params[3], params[4]);
    let worst = |e: &Ellipse, f: &[Point]| f.iter().map(|&pt| segment_error(e, pt)).fold(0.0, f64::max);
    let rows = stack.rows();
    let gathered = fragments
        .iter()
        .filter(|f| {
            if f.is_empty() {
                return false;
            }
            let own = worst(&ellipse, f);
            own < gather_threshold && rows.iter().all(|r| worst(r, f) >= own)
        })
        .cloned()
        .collect();
    Ok(Prediction {
        ellipse,
        insert_index,
        gathered,
    })
}

/// How well a set of fragments supports an ellipse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// Fraction of angular bins around the ellipse hit by a fragment point.
    pub coverage: f64,
    pub rms_error: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineParams {
    /// Search half-width per parameter, as a fraction of the predicted A.
    pub search_range: f64,
    pub coverage_bins: usize,
    /// Step size at which coordinate descent stops, in pixels.
    pub min_step: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            search_range: 0.10,
            coverage_bins: 64,
            min_step: 0.01,
        }
    }
}

/// Thresholds of the evidence gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateParams {
    pub min_coverage: f64,
    pub max_rms: f64,
    pub max_point_error: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams {
            min_coverage: 0.10,
            max_rms: 0.1,
            max_point_error: 0.2,
        }
    }
}

fn rms_error(e: &Ellipse, points: &[Point]) -> f64 {
    let sum: f64 = points.iter().map(|&p| segment_error(e, p).powi(2)).sum();
    (sum / points.len() as f64).sqrt()
}

/// Measures coverage and errors of `points` against `e`.
pub fn evidence(e: &Ellipse, points: &[Point], bins: usize) -> Evidence {
    if points.is_empty() {
        return Evidence {
            coverage: 0.0,
            rms_error: 0.0,
            max_error: 0.0,
        };
    }
    let bins = bins.max(1);
    let mut hit = vec![false; bins];
    for &p in points {
        let k = ((e.angle_of(p) / (2.0 * PI)) * bins as f64) as usize;
        hit[k.min(bins - 1)] = true;
    }
    Evidence {
        coverage: hit.iter().filter(|&&h| h).count() as f64 / bins as f64,
        rms_error: rms_error(e, points),
        max_error: points.iter().map(|&p| segment_error(e, p)).fold(0.0, f64::max),
    }
}

/// Coordinate descent over center and radii with orientation held fixed,
/// minimizing the RMS error to the gathered points. Each parameter stays
/// within `search_range * A` of the prediction; the step halves whenever no
/// move improves.
pub fn refine(pred: &Prediction, params: &RefineParams) -> Result<(Ellipse, Evidence)> {
    let points: Vec<Point> = pred.gathered.iter().flatten().copied().collect();
    if points.is_empty() {
        return Err(Error::NoEvidence);
    }
    let start = pred.ellipse;
    let span = params.search_range * start.a;
    let lower = [start.p - span, start.q - span, start.a - span, (start.b - span).max(1e-3)];
    let upper = [start.p + span, start.q + span, start.a + span, start.b + span];
    let build = |x: &[f64; 4]| Ellipse {
        p: x[0],
        q: x[1],
        a: x[2],
        b: x[3],
        alpha: start.alpha,
    };
    let mut x = [start.p, start.q, start.a, start.b];
    let mut best = rms_error(&build(&x), &points);
    let mut step = span / 2.0;
    while step >= params.min_step {
        let mut improved = false;
        for k in 0..4 {
            for dir in [1.0, -1.0] {
                let mut trial = x;
                trial[k] = (trial[k] + dir * step).clamp(lower[k], upper[k]);
                if trial[k] == x[k] {
                    continue;
                }
                let err = rms_error(&build(&trial), &points);
                if err < best {
                    best = err;
                    x = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    let e = build(&x);
    let e = Ellipse::new(e.p, e.q, e.a, e.b, e.alpha);
    Ok((e, evidence(&e, &points, params.coverage_bins)))
}

pub fn accept(ev: &Evidence, gate: &GateParams) -> bool {
    ev.coverage > gate.min_coverage && ev.rms_error < gate.max_rms && ev.max_error < gate.max_point_error
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconParams {
    /// Fragments whose points all lie below this error are gathered.
    pub gather_threshold: f64,
    pub refine: RefineParams,
    pub gate: GateParams,
}

impl Default for ReconParams {
    fn default() -> Self {
        ReconParams {
            gather_threshold: 0.3,
            refine: RefineParams::default(),
            gate: GateParams::default(),
        }
    }
}

/// One reconstruction attempt, kept for reporting and overlays.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub prediction: Prediction,
    pub refined: Option<(Ellipse, Evidence)>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub stack: ParamMatrix,
    pub candidates: Vec<Candidate>,
}

/// Predicts, refines and gates every empty position between detected
/// dishes; accepted ellipses join the stack, existing rows are untouched.
/// Positions above the top-most detection are never candidates.
pub fn reconstruct(stack: &ParamMatrix, fragments: &[Vec<Point>], params: &ReconParams) -> Reconstruction {
    let gaps = find_missing(stack);
    let mut candidates = Vec::with_capacity(gaps.missing.len());
    for &slot in &gaps.missing {
        let Ok(prediction) = predict(stack, &gaps.row_positions, slot, fragments, params.gather_threshold) else {
            continue;
        };
        let refined = refine(&prediction, &params.refine).ok();
        let accepted = refined.as_ref().is_some_and(|(_, ev)| accept(ev, &params.gate));
        candidates.push(Candidate {
            prediction,
            refined,
            accepted,
        });
    }
    let mut rows = stack.rows().to_vec();
    rows.extend(
        candidates
            .iter()
            .filter(|c| c.accepted)
            .filter_map(|c| c.refined.map(|(e, _)| e)),
    );
    Reconstruction {
        stack: ParamMatrix::new(rows),
        candidates,
    }
}
