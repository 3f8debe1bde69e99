use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::softmax_cross_entropy;
use super::model::{patch_tensor, Architecture, CnnModel};
use super::tensor::Tensor;
use crate::dishfeat::DishPatch;
use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Fraction of the epochs after which the learning rate is decayed.
    pub decay_at: f64,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub noise_variance: f64,
    pub flip: bool,
    pub validation_fraction: f64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            decay_at: 2.0 / 3.0,
            decay_factor: 0.1,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            noise_variance: 0.001,
            flip: true,
            validation_fraction: 0.1,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive");
        }
        if !(self.noise_variance >= 0.0) {
            return bad("noise variance must be non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (zero-based).
    pub fn rate_at(&self, epoch: usize) -> f64 {
        let decay_epoch = (self.decay_at * self.epochs as f64).round() as usize;
        if epoch >= decay_epoch {
            self.learning_rate * self.decay_factor
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CnnModel,
    pub log: Vec<EpochLog>,
    /// Number of examples seen per epoch after augmentation.
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainOutcome {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        write_log(path, &self.log)
    }
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for l in log {
        text.push_str(&format!("{},{},{},{}\n", l.epoch, l.train_loss, l.val_loss, l.val_accuracy));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn add_noise(img: &Raster, std: f64, rng: &mut ChaCha8Rng) -> Raster {
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = img
        .data()
        .iter()
        .map(|&v| (v + normal.sample(rng)).clamp(0.0, 1.0))
        .collect();
    Raster::from_vec(img.width(), img.height(), img.channels(), data).expect("same geometry")
}

/// Balances classes by duplication, then emits original, flipped, noisy and
/// noisy flipped variants of every image (flip and noise each optional).
pub fn augment(dataset: &[(DishPatch, usize)], cfg: &TrainConfig) -> Vec<(DishPatch, usize)> {
    let classes = dataset.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<&(DishPatch, usize)>> = vec![Vec::new(); classes];
    for item in dataset {
        by_class[item.1].push(item);
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut balanced = Vec::with_capacity(target * classes);
    for members in by_class.iter().filter(|m| !m.is_empty()) {
        balanced.extend((0..target).map(|i| members[i % members.len()].clone()));
    }

    let mut out = Vec::with_capacity(balanced.len() * 4);
    let mut clean = Vec::with_capacity(balanced.len() * 2);
    for (patch, label) in &balanced {
        clean.push((patch.clone(), *label));
        if cfg.flip {
            let flipped = DishPatch {
                pixels: patch.pixels.flip_horizontal(),
                label: patch.label.clone(),
            };
            clean.push((flipped, *label));
        }
    }
    out.extend(clean.iter().cloned());
    if cfg.noise_variance > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e6f_6973_65);
        let std = cfg.noise_variance.sqrt();
        for (patch, label) in &clean {
            let noisy = DishPatch {
                pixels: add_noise(&patch.pixels, std, &mut rng),
                label: patch.label.clone(),
            };
            out.push((noisy, *label));
        }
    }
    out
}

fn mean_tensor(items: &[(Tensor, usize)], shape: &[usize]) -> Tensor {
    let mut mean = Tensor::zeros(shape);
    if items.is_empty() {
        return mean;
    }
    for (x, _) in items {
        for (m, v) in mean.data_mut().iter_mut().zip(x.data()) {
            *m += v;
        }
    }
    let n = items.len() as f64;
    mean.data_mut().iter_mut().for_each(|m| *m /= n);
    mean
}

/// Mean loss and accuracy of `model` over `items`.
pub fn score(model: &CnnModel, items: &[(Tensor, usize)]) -> Result<(f64, f64)> {
    if items.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let per: Vec<Result<(f64, bool)>> = items
        .par_iter()
        .map(|(x, label)| {
            let logits = model.logits(x)?;
            let (loss, _) = softmax_cross_entropy(&logits, *label);
            let best = logits
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > logits[b] { i } else { b });
            Ok((loss, best == *label))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in per {
        let (l, ok) = r?;
        loss += l;
        correct += ok as usize;
    }
    let n = items.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch SGD on an augmented training split with a held-out
/// validation split.
pub fn train(dataset: &[(DishPatch, usize)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let classes = cfg.architecture.classes;
    if let Some((_, bad)) = dataset.iter().find(|(_, l)| *l >= classes) {
        return Err(Error::InvalidParameter(format!("label {bad} outside {classes} classes")));
    }
    let first = dataset[0].1;
    if dataset.iter().all(|(_, l)| *l == first) {
        return Err(Error::SingleClass(first));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (cfg.validation_fraction * dataset.len() as f64).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(dataset.len() - 1));
    let train_raw: Vec<(DishPatch, usize)> = train_idx.iter().map(|&i| dataset[i].clone()).collect();
    let val: Vec<(Tensor, usize)> = val_idx.iter().map(|&i| (patch_tensor(&dataset[i].0), dataset[i].1)).collect();
    let train_set: Vec<(Tensor, usize)> = augment(&train_raw, cfg)
        .iter()
        .map(|(p, l)| (patch_tensor(p), *l))
        .collect();

    let mut model = CnnModel::new(&cfg.architecture, cfg.seed)?;
    model.data_mean = mean_tensor(&train_set, &cfg.architecture.input);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut idx: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        let lr = cfg.rate_at(epoch);
        let mut loss_sum = 0.0;
        for chunk in idx.chunks(cfg.batch_size) {
            let batch: Vec<(&Tensor, usize)> = chunk.iter().map(|&i| (&train_set[i].0, train_set[i].1)).collect();
            loss_sum += model.backward_and_step(&batch, lr)? * batch.len() as f64;
        }
        let (val_loss, val_accuracy) = score(&model, &val)?;
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
    }
    Ok(TrainOutcome {
        model,
        log,
        train_size: train_set.len(),
        val_size: val.len(),
    })
}
