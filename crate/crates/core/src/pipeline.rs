//! Photograph to stack of ellipses, and stack to bill.

use serde::{Deserialize, Serialize};

use crate::billing::{Bill, PriceTable};
use crate::cnn::model::patch_tensor;
use crate::cnn::CnnModel;
use crate::dishfeat::{extract_patch, DishPatch};
use crate::edges::{canny, cleanup, trace_contours, CannyParams, EdgeContour, EdgeMap};
use crate::ellipses::{
    consensus_filter, dedup_double_borders, default_min_gap, fit_ellipse, ConsensusParams, Ellipse, FitResult,
    MIN_FIT_POINTS,
};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::polyline::{rdp_simplify, split_smooth};
use crate::raster::{equalize_histogram, resize_max_side, to_grayscale_weighted, Raster, LUMA_601, MAX_SIDE};
use crate::stack_recon::{evidence, reconstruct, ParamMatrix, ReconParams, Reconstruction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_side: usize,
    pub luma: [f64; 3],
    pub equalize: bool,
    pub canny: CannyParams,
    /// RDP deviation threshold in pixels.
    pub rdp_tolerance: f64,
    pub sharp_turn_deg: f64,
    /// Fewest contour points a smooth curve needs to be fitted.
    pub min_fit_points: usize,
    /// Fits with a larger RMS radial error are dropped.
    pub max_fit_residual: f64,
    /// Fraction of angular bins a fitted curve must cover.
    pub min_arc_coverage: f64,
    pub coverage_bins: usize,
    pub consensus: ConsensusParams,
    /// Double-border gap as a fraction of the median minor radius.
    pub dedup_gap_factor: f64,
    pub reconstruct: bool,
    pub recon: ReconParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_side: MAX_SIDE,
            luma: LUMA_601,
            equalize: true,
            canny: CannyParams::default(),
            rdp_tolerance: 2.0,
            sharp_turn_deg: 90.0,
            min_fit_points: MIN_FIT_POINTS,
            max_fit_residual: 0.05,
            min_arc_coverage: 0.3,
            coverage_bins: 64,
            consensus: ConsensusParams::default(),
            dedup_gap_factor: 0.35,
            reconstruct: true,
            recon: ReconParams::default(),
        }
    }
}

/// Every intermediate result of one detection run, in the coordinates of
/// the resized working image.
#[derive(Debug, Clone)]
pub struct Detection {
    /// Working size divided by original size.
    pub scale: f64,
    pub working: Raster,
    pub edges: EdgeMap,
    pub contours: Vec<EdgeContour>,
    /// Dense contour points of every smooth curve.
    pub curves: Vec<Vec<Point>>,
    pub fits: Vec<FitResult>,
    pub consensus: Vec<FitResult>,
    pub deduped: Vec<FitResult>,
    pub reconstruction: Option<Reconstruction>,
    /// The final stack, bottom dish first.
    pub stack: ParamMatrix,
}

impl Detection {
    /// Final ellipses mapped back to the input image, bottom dish first.
    pub fn ellipses(&self) -> Vec<Ellipse> {
        self.stack.rows().iter().map(|e| e.scaled(1.0 / self.scale)).collect()
    }

    /// Ellipses found without reconstruction, in input coordinates.
    pub fn direct_ellipses(&self) -> Vec<Ellipse> {
        self.deduped.iter().map(|f| f.ellipse.scaled(1.0 / self.scale)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.stack.is_empty()
    }
}

/// Grayscale, bounded-size, optionally equalized version of `img`, and the
/// scale that was applied.
pub fn preprocess(img: &Raster, cfg: &PipelineConfig) -> Result<(Raster, f64)> {
    let resized = resize_max_side(img, cfg.max_side);
    let scale = resized.width() as f64 / img.width() as f64;
    let gray = if resized.channels() == 3 {
        to_grayscale_weighted(&resized, cfg.luma)?
    } else {
        resized
    };
    let gray = if cfg.equalize { equalize_histogram(&gray)? } else { gray };
    Ok((gray, scale))
}

/// Splits every contour into smooth curves and returns their dense points.
pub fn smooth_curves(contours: &[EdgeContour], cfg: &PipelineConfig) -> Vec<Vec<Point>> {
    let mut out = Vec::new();
    for contour in contours {
        let pts = contour.to_points();
        if pts.len() < 2 {
            continue;
        }
        let Ok(poly) = rdp_simplify(&pts, cfg.rdp_tolerance) else {
            continue;
        };
        for piece in split_smooth(&poly, cfg.sharp_turn_deg) {
            let support = piece.support(&pts);
            if !support.is_empty() {
                out.push(support.to_vec());
            }
        }
    }
    out
}

/// Fits an ellipse to each curve long enough, keeping well-fitting fits
/// whose curve covers enough of the ellipse.
pub fn fit_curves(curves: &[Vec<Point>], bounds: (usize, usize), cfg: &PipelineConfig) -> Vec<FitResult> {
    let limit = bounds.0.max(bounds.1) as f64;
    curves
        .iter()
        .enumerate()
        .filter(|(_, c)| c.len() >= cfg.min_fit_points.max(MIN_FIT_POINTS))
        .filter_map(|(i, c)| {
            let mut fit = fit_ellipse(c).ok()?;
            let e = fit.ellipse;
            if fit.residual > cfg.max_fit_residual || e.a > limit || e.b < 1.0 {
                return None;
            }
            if evidence(&e, c, cfg.coverage_bins).coverage < cfg.min_arc_coverage {
                return None;
            }
            fit.source = vec![i];
            Some(fit)
        })
        .collect()
}

/// Runs edge processing, fitting, consensus, double-border removal and
/// (when enabled) reconstruction.
pub fn detect(img: &Raster, cfg: &PipelineConfig, seed: u64) -> Result<Detection> {
    let (gray, scale) = preprocess(img, cfg)?;
    let edges = cleanup(&canny(&gray, &cfg.canny)?);
    let contours = trace_contours(&edges);
    let curves = smooth_curves(&contours, cfg);
    let fits = fit_curves(&curves, (gray.width(), gray.height()), cfg);
    let consensus = consensus_filter(&fits, &cfg.consensus, seed);
    let gap = default_min_gap(&consensus, cfg.dedup_gap_factor);
    let deduped = dedup_double_borders(&consensus, gap);
    let direct = ParamMatrix::new(deduped.iter().map(|f| f.ellipse).collect());
    let (stack, reconstruction) = if cfg.reconstruct && direct.len() >= 2 {
        let r = reconstruct(&direct, &curves, &cfg.recon);
        (r.stack.clone(), Some(r))
    } else {
        (direct, None)
    };
    Ok(Detection {
        scale,
        working: gray,
        edges,
        contours,
        curves,
        fits,
        consensus,
        deduped,
        reconstruction,
        stack,
    })
}

/// Anything that can name the class of a dish patch.
pub trait DishClassifier {
    /// Class index and its confidence.
    fn classify(&self, patch: &DishPatch) -> Result<(usize, f64)>;
}

impl DishClassifier for CnnModel {
    fn classify(&self, patch: &DishPatch) -> Result<(usize, f64)> {
        self.predict(&patch_tensor(patch))
    }
}

/// Nearest palette color by chromaticity of the unmasked patch pixels; a
/// baseline that needs no training.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaClassifier {
    pub colors: Vec<[f64; 3]>,
}

fn chroma(c: [f64; 3]) -> [f64; 3] {
    let s = c[0] + c[1] + c[2];
    if s <= 0.0 {
        [1.0 / 3.0; 3]
    } else {
        [c[0] / s, c[1] / s, c[2] / s]
    }
}

impl DishClassifier for ChromaClassifier {
    fn classify(&self, patch: &DishPatch) -> Result<(usize, f64)> {
        if self.colors.is_empty() {
            return Err(Error::Empty("palette"));
        }
        let r = &patch.pixels;
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for y in 0..r.height() {
            for x in 0..r.width() {
                let px = r.pixel(x, y);
                // skip masked pixels and the bright rim
                let (lo, hi) = (px.iter().cloned().fold(1.0, f64::min), px.iter().cloned().fold(0.0, f64::max));
                if hi <= 0.0 || (lo > 0.6 && hi - lo < 0.15) {
                    continue;
                }
                for k in 0..3 {
                    sum[k] += px[k];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Ok((0, 0.0));
        }
        let mean = chroma(sum);
        let dists: Vec<f64> = self
            .colors
            .iter()
            .map(|&c| {
                let k = chroma(c);
                (0..3).map(|i| (k[i] - mean[i]).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        let best = (0..dists.len()).fold(0, |b, i| if dists[i] < dists[b] { i } else { b });
        let weights: Vec<f64> = dists.iter().map(|d| (-d * 20.0).exp()).collect();
        Ok((best, weights[best] / weights.iter().sum::<f64>()))
    }
}

/// Classifies each dish of `stack` (bottom first, in `img` coordinates) and
/// returns `(class, confidence)` from the top dish down.
pub fn classify_stack<C: DishClassifier + Sync + ?Sized>(
    img: &Raster,
    stack: &ParamMatrix,
    classifier: &C,
) -> Result<Vec<(usize, f64)>> {
    let rgb = img.to_rgb();
    (0..stack.len())
        .map(|i| classifier.classify(&extract_patch(&rgb, stack, i)?))
        .collect()
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Billed { bill: Bill, detection: Detection },
    NoTower { detection: Detection },
}

/// Full pipeline: detect, classify each dish, price the stack.
pub fn run_pipeline<C: DishClassifier + Sync + ?Sized>(
    img: &Raster,
    classifier: &C,
    names: &[String],
    prices: &PriceTable,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Outcome> {
    let detection = detect(img, cfg, seed)?;
    if detection.is_empty() {
        return Ok(Outcome::NoTower { detection });
    }
    let stack = ParamMatrix::new(detection.ellipses());
    let classes = classify_stack(img, &stack, classifier)?;
    let dishes: Vec<(usize, String, f64)> = classes
        .into_iter()
        .map(|(c, p)| {
            let name = names.get(c).cloned().ok_or_else(|| Error::UnknownLabel(c.to_string()))?;
            Ok((c, name, p))
        })
        .collect::<Result<_>>()?;
    let bill = Bill::new(prices, &dishes)?;
    Ok(Outcome::Billed { bill, detection })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render, Palette, SceneSpec};

    fn spec(colors: Vec<usize>) -> SceneSpec {
        SceneSpec {
            width: 640,
            height: 480,
            colors,
            center_x: 320.0,
            base_bottom_y: 430.0,
            a: 100.0,
            b: 40.0,
            alpha: 0.0,
            spacing: 28.0,
            drift_a: 0.0,
            drift_spacing: 0.0,
            rim_width: 3.0,
            rim_color: [0.95, 0.95, 0.92],
            background: [0.12, 0.11, 0.1],
            background_bottom: [0.35, 0.32, 0.3],
            illumination: 1.0,
            shadow: 0.0,
            shadow_angle: 0.0,
            clutter: vec![],
            noise_sigma: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn blank_image_has_no_tower() {
        let img = Raster::filled(200, 100, &[0.4, 0.4, 0.4]);
        let pal = Palette::default();
        let prices = PriceTable::uniform(&pal.names, 1, "");
        let chroma = ChromaClassifier { colors: pal.colors.clone() };
        let out = run_pipeline(&img, &chroma, &pal.names, &prices, &PipelineConfig::default(), 0).unwrap();
        assert!(matches!(out, Outcome::NoTower { .. }));
    }

    #[test]
    fn single_dish_found_near_truth() {
        let pal = Palette::default();
        let truth = render(&spec(vec![2]), &pal).unwrap();
        let det = detect(&truth.image, &PipelineConfig::default(), 0).unwrap();
        let found = det.ellipses();
        assert_eq!(found.len(), 1, "{found:?}");
        assert!(found[0].center().dist(truth.dishes[0].ellipse.center()) < 1.5, "{:?} {:?}", found[0], truth.dishes[0].ellipse);
    }

    #[test]
    fn five_dishes_unit_prices_total_five() {
        let pal = Palette::default();
        let truth = render(&spec(vec![0, 3, 5, 1, 6]), &pal).unwrap();
        let prices = PriceTable::uniform(&pal.names, 1, "");
        let chroma = ChromaClassifier { colors: pal.colors.clone() };
        let out = run_pipeline(&truth.image, &chroma, &pal.names, &prices, &PipelineConfig::default(), 0).unwrap();
        let Outcome::Billed { bill, .. } = out else {
            panic!("no tower");
        };
        assert_eq!(bill.total, 5);
    }

    #[test]
    fn known_classes_priced_end_to_end() {
        let pal = Palette::default();
        // red x2 and orange x3, bottom to top
        let truth = render(&spec(vec![1, 0, 1, 0, 1]), &pal).unwrap();
        let mut prices = PriceTable::uniform(&pal.names, 0, "KRW");
        prices.prices.insert("red".into(), 1500);
        prices.prices.insert("orange".into(), 2000);
        let chroma = ChromaClassifier { colors: pal.colors.clone() };
        let out = run_pipeline(&truth.image, &chroma, &pal.names, &prices, &PipelineConfig::default(), 0).unwrap();
        let Outcome::Billed { bill, .. } = out else {
            panic!("no tower");
        };
        let names: Vec<&str> = bill.lines.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, vec!["orange", "red", "orange", "red", "orange"]);
        assert_eq!(bill.total, 9000);
    }
}
