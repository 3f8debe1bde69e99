//! Per-dish patches for the classifier.
//!
//! A dish ellipse is mapped onto a circle, the part covered by the dish
//! stacked directly above is masked to zero, and the lower half of the
//! circle becomes a 50x100 color patch.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ellipses::Ellipse;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::Raster;
use crate::stack_recon::ParamMatrix;

pub const CIRCLE_DIAMETER: usize = 100;
pub const PATCH_HEIGHT: usize = 50;
pub const PATCH_WIDTH: usize = 100;
pub const NUM_CLASSES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub index: usize,
    pub name: String,
}

/// An ordered set of exactly eight class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() != NUM_CLASSES {
            return Err(Error::InvalidParameter(format!(
                "label set needs {NUM_CLASSES} names, got {}",
                names.len()
            )));
        }
        Ok(LabelSet { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn label(&self, index: usize) -> Option<ClassLabel> {
        self.names.get(index).map(|name| ClassLabel {
            index,
            name: name.clone(),
        })
    }

    pub fn by_name(&self, name: &str) -> Result<ClassLabel> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|index| ClassLabel {
                index,
                name: name.to_string(),
            })
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }
}

/// A 50 (rows) x 100 (columns) x 3 patch.
#[derive(Debug, Clone, PartialEq)]
pub struct DishPatch {
    pub pixels: Raster,
    pub label: Option<ClassLabel>,
}

impl DishPatch {
    pub fn new(pixels: Raster, label: Option<ClassLabel>) -> Result<Self> {
        if pixels.width() != PATCH_WIDTH || pixels.height() != PATCH_HEIGHT || pixels.channels() != 3 {
            return Err(Error::ShapeMismatch {
                expected: vec![PATCH_HEIGHT, PATCH_WIDTH, 3],
                found: vec![pixels.height(), pixels.width(), pixels.channels()],
            });
        }
        Ok(DishPatch { pixels, label })
    }
}

/// Affine map from the unit disk onto `e`: the symmetric square root of the
/// ellipse shape, so patch "down" stays image "down".
fn shape_map(e: &Ellipse) -> [[f64; 2]; 2] {
    let (s, c) = e.alpha.sin_cos();
    let m00 = e.a * c * c + e.b * s * s;
    let m01 = (e.a - e.b) * c * s;
    let m11 = e.a * s * s + e.b * c * c;
    [[m00, m01], [m01, m11]]
}

/// Image position sampled for patch pixel `(u, v)` of a `diameter`-wide patch.
pub fn patch_to_image(e: &Ellipse, diameter: usize, u: f64, v: f64) -> Point {
    let m = shape_map(e);
    let half = diameter as f64 / 2.0;
    let c = (diameter as f64 - 1.0) / 2.0;
    let x = (u - c) / half;
    let y = (v - c) / half;
    Point::new(e.p + m[0][0] * x + m[0][1] * y, e.q + m[1][0] * x + m[1][1] * y)
}

/// Resamples `e` onto a centered circle of the given diameter.
pub fn warp_to_circle(img: &Raster, e: &Ellipse, diameter: usize) -> Result<Raster> {
    warp_masked(img, e, None, diameter)
}

fn warp_masked(img: &Raster, e: &Ellipse, mask: Option<&Ellipse>, diameter: usize) -> Result<Raster> {
    if img.channels() != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            found: img.channels(),
        });
    }
    if !(e.b > 0.0) || !(e.a > 0.0) {
        return Err(Error::DegenerateEllipse(e.b));
    }
    let mut out = Raster::new(diameter, diameter, 3);
    for v in 0..diameter {
        for u in 0..diameter {
            let src = patch_to_image(e, diameter, u as f64, v as f64);
            if mask.is_some_and(|upper| upper.contains(src)) {
                continue;
            }
            for ch in 0..3 {
                out.set(u, v, ch, img.sample_bilinear(src.x, src.y, ch));
            }
        }
    }
    Ok(out)
}

/// Patch for dish `index`, counted from the top of the stack (0 is the top
/// dish). Pixels inside the dish directly above are zeroed; the top dish is
/// unmasked.
pub fn extract_patch(img: &Raster, stack: &ParamMatrix, index: usize) -> Result<DishPatch> {
    let n = stack.len();
    if index >= n {
        return Err(Error::DishIndex { index, len: n });
    }
    let rows = stack.rows();
    let dish = &rows[n - 1 - index];
    let upper = (index > 0).then(|| &rows[n - index]);
    let circle = warp_masked(img, dish, upper, CIRCLE_DIAMETER)?;
    let lower = circle.crop_rows(CIRCLE_DIAMETER - PATCH_HEIGHT, CIRCLE_DIAMETER);
    DishPatch::new(lower, None)
}

/// One line of a patch manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub label_index: usize,
    pub label_name: String,
    pub source_image: String,
    pub dish_index: usize,
}

pub const MANIFEST_HEADER: &str = "file\tlabel_index\tlabel_name\tsource_image\tdish_index";

/// Writes patch PNGs into `dir` plus a tab-separated `manifest.tsv`.
pub fn export_dataset(dir: &Path, patches: &[(DishPatch, String, usize)]) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(patches.len());
    for (k, (patch, source, dish)) in patches.iter().enumerate() {
        let label = patch
            .label
            .clone()
            .ok_or_else(|| Error::InvalidParameter(format!("patch {k} has no label")))?;
        let file = format!("patch_{k:05}.png");
        patch.pixels.save_png(dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            label_index: label.index,
            label_name: label.name,
            source_image: source.clone(),
            dish_index: *dish,
        });
    }
    write_manifest(&dir.join("manifest.tsv"), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for e in entries {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.file, e.label_index, e.label_name, e.source_image, e.dish_index
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 && line.starts_with("file\t") || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || Error::InvalidParameter(format!("{}:{}: malformed manifest line", path.display(), n + 1));
        if cols.len() != 5 {
            return Err(bad());
        }
        entries.push(ManifestEntry {
            file: cols[0].to_string(),
            label_index: cols[1].parse().map_err(|_| bad())?,
            label_name: cols[2].to_string(),
            source_image: cols[3].to_string(),
            dish_index: cols[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(entries)
}

/// Loads every patch listed in a manifest; files resolve relative to the
/// manifest's directory.
pub fn load_dataset(manifest: &Path) -> Result<Vec<DishPatch>> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let pixels = Raster::load(dir.join(&e.file))?.to_rgb();
            DishPatch::new(
                pixels,
                Some(ClassLabel {
                    index: e.label_index,
                    name: e.label_name,
                }),
            )
        })
        .collect()
}
