//! Detection precision/recall and classifier confusion matrices.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dishfeat::DishPatch;
use crate::ellipses::Ellipse;
use crate::error::{Error, Result};
use crate::pipeline::DishClassifier;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    /// Largest center distance of a match, as a fraction of the true A.
    pub center_tol: f64,
    /// Largest major-radius difference, same units.
    pub radius_tol: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            center_tol: 0.25,
            radius_tol: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truth: usize,
}

impl DetectionReport {
    /// TP / (TP + FP); 1 when nothing was detected.
    pub fn precision(&self) -> f64 {
        let detected = self.true_positives + self.false_positives;
        if detected == 0 {
            1.0
        } else {
            self.true_positives as f64 / detected as f64
        }
    }

    /// TP / GT; 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        if self.ground_truth == 0 {
            1.0
        } else {
            self.true_positives as f64 / self.ground_truth as f64
        }
    }

    pub fn false_negatives(&self) -> usize {
        self.ground_truth - self.true_positives
    }

    pub fn merge(&self, other: &DetectionReport) -> DetectionReport {
        DetectionReport {
            true_positives: self.true_positives + other.true_positives,
            false_positives: self.false_positives + other.false_positives,
            ground_truth: self.ground_truth + other.ground_truth,
        }
    }

    pub fn csv_header() -> &'static str {
        "true_positives,false_positives,ground_truth,precision,recall"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6}",
            self.true_positives,
            self.false_positives,
            self.ground_truth,
            self.precision(),
            self.recall()
        )
    }
}

/// Greedy one-to-one matching, closest centers first. A pair qualifies when
/// the centers are within `center_tol * A` and the major radii within
/// `radius_tol * A` of the true ellipse.
pub fn match_detections(detected: &[Ellipse], truth: &[Ellipse], params: &MatchParams) -> DetectionReport {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in detected.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let dist = d.center().dist(t.center());
            if dist < params.center_tol * t.a && (d.a - t.a).abs() < params.radius_tol * t.a {
                pairs.push((dist, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            tp += 1;
        }
    }
    DetectionReport {
        true_positives: tp,
        false_positives: detected.len() - tp,
        ground_truth: truth.len(),
    }
}

/// Counts with rows indexed by true class and columns by predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }

    pub fn to_csv(&self, names: &[String]) -> String {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut out = String::from("true\\predicted");
        for j in 0..self.classes {
            out.push(',');
            out.push_str(&name(j));
        }
        out.push('\n');
        for i in 0..self.classes {
            out.push_str(&name(i));
            for j in 0..self.classes {
                out.push_str(&format!(",{}", self.counts[i][j]));
            }
            out.push('\n');
        }
        out
    }

    /// Row-normalized heat map, `cell` pixels per entry; white is zero and
    /// dark red is a full row.
    pub fn heatmap(&self, cell: usize) -> Raster {
        let side = (self.classes * cell).max(1);
        let mut img = Raster::filled(side, side, &[1.0, 1.0, 1.0]);
        for i in 0..self.classes {
            let row: usize = self.counts[i].iter().sum();
            for j in 0..self.classes {
                let f = if row == 0 { 0.0 } else { self.counts[i][j] as f64 / row as f64 };
                let color = [1.0 - 0.4 * f, 1.0 - f, 1.0 - f];
                for y in i * cell..(i + 1) * cell {
                    for x in j * cell..(j + 1) * cell {
                        let border = x % cell == 0 || y % cell == 0;
                        img.set_pixel(x, y, if border { &[0.6, 0.6, 0.6] } else { &color });
                    }
                }
            }
        }
        img
    }

    pub fn save(&self, names: &[String], csv: &Path, heatmap: Option<&Path>) -> Result<()> {
        std::fs::write(csv, self.to_csv(names)).map_err(|e| Error::io(csv, e))?;
        if let Some(path) = heatmap {
            self.heatmap(24).save_png(path)?;
        }
        Ok(())
    }
}

/// Accuracy and confusion matrix of `classifier` on labeled patches.
pub fn evaluate_classifier<C: DishClassifier + Sync + ?Sized>(
    classifier: &C,
    patches: &[(DishPatch, usize)],
    classes: usize,
) -> Result<(f64, ConfusionMatrix)> {
    if patches.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let predicted: Vec<Result<usize>> = patches
        .par_iter()
        .map(|(p, _)| classifier.classify(p).map(|(c, _)| c))
        .collect();
    let mut cm = ConfusionMatrix::new(classes);
    for ((_, truth), pred) in patches.iter().zip(predicted) {
        let pred = pred?;
        if *truth >= classes || pred >= classes {
            return Err(Error::InvalidParameter(format!("class outside 0..{classes}")));
        }
        cm.record(*truth, pred);
    }
    Ok((cm.accuracy(), cm))
}
