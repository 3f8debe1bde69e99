use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use dishscan::billing::Bill;
use dishscan::cnn::{train, CnnModel};
use dishscan::config::Config;
use dishscan::dishfeat::{export_dataset, load_dataset, DishPatch};
use dishscan::eval::{evaluate_classifier, match_detections, DetectionReport};
use dishscan::overlay::save_overlays;
use dishscan::pipeline::{detect, run_pipeline, ChromaClassifier, Detection, DishClassifier, Outcome, PipelineConfig};
use dishscan::synth::{load_truth, random_spec, render_occluded, synth_patch_set, synth_patches};
use dishscan::{Ellipse, ParamMatrix, Raster};

use crate::{exit, ClassifierArgs, Cli, Command, DataArgs};

/// Exit code for an error: I/O and file-format problems are 3, everything
/// else counts as bad input.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<dishscan::Error>() {
            use dishscan::Error::*;
            return match err {
                Io { .. } | Image { .. } | Json { .. } | ModelFormat(_) => exit::IO,
                _ => exit::USAGE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return exit::IO;
        }
    }
    exit::USAGE
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let ctx = Ctx {
        config,
        seed: cli.seed.unwrap_or(0),
        explicit_seed: cli.seed,
        overlays: cli.debug_overlays.clone(),
    };
    match &cli.command {
        Command::Detect {
            image,
            json,
            no_reconstruct,
        } => ctx.detect(image, *json, *no_reconstruct),
        Command::Classify { image, classifier, json } => ctx.bill(image, classifier, *json, false),
        Command::Bill { image, classifier, json } => ctx.bill(image, classifier, *json, true),
        Command::Train { data, out, log, epochs } => ctx.train(data, out, log.as_deref(), *epochs),
        Command::Synth {
            out,
            count,
            occluded,
            patches,
        } => ctx.synth(out, *count, *occluded, *patches),
        Command::EvalDetect {
            data,
            synth,
            occluded,
            no_reconstruct,
            out,
        } => ctx.eval_detect(data.as_deref(), *synth, *occluded, *no_reconstruct, out),
        Command::EvalClassify {
            data,
            classifier,
            out,
            heatmap,
        } => ctx.eval_classify(data, classifier, out, heatmap.as_deref()),
    }
}

struct Ctx {
    config: Config,
    seed: u64,
    explicit_seed: Option<u64>,
    overlays: Option<PathBuf>,
}

#[derive(Serialize)]
struct DishOut {
    /// 1 is the top dish.
    position: usize,
    p: f64,
    q: f64,
    a: f64,
    b: f64,
    alpha: f64,
    reconstructed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    class: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    price: Option<u64>,
}

#[derive(Serialize)]
struct ImageOut<'a> {
    image: String,
    tower: bool,
    dishes: Vec<DishOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    currency: Option<&'a str>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Detected dishes top-down, flagging the ones added by reconstruction.
fn dishes_of(det: &Detection) -> Vec<DishOut> {
    let direct = det.direct_ellipses();
    ParamMatrix::new(det.ellipses())
        .top_down()
        .enumerate()
        .map(|(i, e)| DishOut {
            position: i + 1,
            p: e.p,
            q: e.q,
            a: e.a,
            b: e.b,
            alpha: e.alpha,
            reconstructed: !direct.contains(e),
            class: None,
            confidence: None,
            price: None,
        })
        .collect()
}

fn print_dishes(dishes: &[DishOut]) {
    for d in dishes {
        let mut line = format!(
            "dish {:>2}  center ({:.1}, {:.1})  A {:.1}  B {:.1}  alpha {:.3}",
            d.position, d.p, d.q, d.a, d.b, d.alpha
        );
        if d.reconstructed {
            line.push_str("  [reconstructed]");
        }
        println!("{line}");
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

impl Ctx {
    fn pipeline(&self, no_reconstruct: bool) -> PipelineConfig {
        let mut cfg = self.config.pipeline.clone();
        if no_reconstruct {
            cfg.reconstruct = false;
        }
        cfg
    }

    fn save_overlays(&self, det: &Detection, prefix: &str) -> Result<()> {
        if let Some(dir) = &self.overlays {
            save_overlays(det, dir, prefix)?;
        }
        Ok(())
    }

    fn classifier(&self, args: &ClassifierArgs) -> Result<Box<dyn DishClassifier + Sync>> {
        if args.chroma {
            return Ok(Box::new(ChromaClassifier {
                colors: self.config.palette.colors.clone(),
            }));
        }
        let path = args.model.as_ref().expect("clap requires a classifier");
        let model = CnnModel::load(path)?;
        if model.classes() != self.config.palette.len() {
            bail!(
                "{} predicts {} classes but the palette has {}",
                path.display(),
                model.classes(),
                self.config.palette.len()
            );
        }
        Ok(Box::new(model))
    }

    fn patches(&self, args: &DataArgs) -> Result<Vec<(DishPatch, usize)>> {
        if let Some(count) = args.synth {
            return Ok(synth_patches(count, self.seed, &self.config.scenes, &self.config.palette)?);
        }
        let manifest = args.data.as_ref().expect("clap requires a data source");
        let labels = self.config.labels()?;
        load_dataset(manifest)?
            .into_iter()
            .map(|p| {
                let name = p.label.as_ref().map(|l| l.name.clone()).unwrap_or_default();
                let index = labels.by_name(&name)?.index;
                Ok((p, index))
            })
            .collect()
    }

    fn detect(&self, image: &Path, json: bool, no_reconstruct: bool) -> Result<ExitCode> {
        let img = Raster::load(image)?;
        let det = detect(&img, &self.pipeline(no_reconstruct), self.seed)?;
        self.save_overlays(&det, &stem(image))?;
        let dishes = dishes_of(&det);
        if json {
            print_json(&ImageOut {
                image: image.display().to_string(),
                tower: !dishes.is_empty(),
                dishes,
                total: None,
                currency: None,
            })?;
        } else {
            print_dishes(&dishes);
        }
        if det.is_empty() {
            eprintln!("no dish tower detected");
            return Ok(ExitCode::from(exit::NO_TOWER));
        }
        Ok(ExitCode::SUCCESS)
    }

    fn bill(&self, image: &Path, args: &ClassifierArgs, json: bool, priced: bool) -> Result<ExitCode> {
        let img = Raster::load(image)?;
        let classifier = self.classifier(args)?;
        let outcome = run_pipeline(
            &img,
            classifier.as_ref(),
            &self.config.palette.names,
            &self.config.prices,
            &self.config.pipeline,
            self.seed,
        )?;
        let (bill, det) = match &outcome {
            Outcome::Billed { bill, detection } => (Some(bill), detection),
            Outcome::NoTower { detection } => (None, detection),
        };
        self.save_overlays(det, &stem(image))?;
        let mut dishes = dishes_of(det);
        if let Some(bill) = bill {
            for (d, line) in dishes.iter_mut().zip(&bill.lines) {
                d.class = Some(line.name.clone());
                d.confidence = Some(line.confidence);
                d.price = priced.then_some(line.price);
            }
        }
        if json {
            print_json(&ImageOut {
                image: image.display().to_string(),
                tower: bill.is_some(),
                dishes,
                total: bill.filter(|_| priced).map(|b| b.total),
                currency: bill.filter(|_| priced).map(|b| b.currency.as_str()),
            })?;
        } else if let Some(bill) = bill {
            print_bill(bill, priced);
        }
        if bill.is_none() {
            eprintln!("no dish tower detected");
            return Ok(ExitCode::from(exit::NO_TOWER));
        }
        Ok(ExitCode::SUCCESS)
    }

    fn train(&self, data: &DataArgs, out: &Path, log: Option<&Path>, epochs: Option<usize>) -> Result<ExitCode> {
        let set = self.patches(data)?;
        let mut cfg = self.config.cnn.clone();
        if let Some(seed) = self.explicit_seed {
            cfg.seed = seed;
        }
        if let Some(epochs) = epochs {
            cfg.epochs = epochs;
        }
        let start = Instant::now();
        let outcome = train(&set, &cfg)?;
        outcome.model.save(out)?;
        if let Some(path) = log {
            outcome.write_log(path)?;
        }
        if let Some(last) = outcome.log.last() {
            println!(
                "trained {} epochs on {} samples ({} held out): validation accuracy {:.4}",
                last.epoch, outcome.train_size, outcome.val_size, last.val_accuracy
            );
        }
        eprintln!("training took {:.1}s", start.elapsed().as_secs_f64());
        Ok(ExitCode::SUCCESS)
    }

    fn synth(&self, out: &Path, count: usize, occluded: f64, patches: bool) -> Result<ExitCode> {
        let (ranges, palette) = (&self.config.scenes, &self.config.palette);
        if patches {
            let set = synth_patch_set(count, self.seed, ranges, palette)?;
            let items: Vec<(DishPatch, String, usize)> = set
                .into_iter()
                .map(|s| (s.patch, format!("scene_{}", s.scene), s.dish))
                .collect();
            export_dataset(out, &items)?;
            println!("wrote {} patches to {}", items.len(), out.join("manifest.tsv").display());
            return Ok(ExitCode::SUCCESS);
        }
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        (0..count).into_par_iter().try_for_each(|k| -> Result<()> {
            let spec = random_spec(self.seed.wrapping_add(k as u64), ranges, palette);
            render_occluded(&spec, palette, occluded)?.save(out, &format!("scene_{k:04}"))?;
            Ok(())
        })?;
        println!("wrote {count} scenes to {}", out.display());
        Ok(ExitCode::SUCCESS)
    }

    fn eval_detect(
        &self,
        data: Option<&Path>,
        synth: Option<usize>,
        occluded: f64,
        no_reconstruct: bool,
        out: &Path,
    ) -> Result<ExitCode> {
        let sources: Vec<Source> = match (data, synth) {
            (Some(dir), _) => truth_files(dir)?.into_iter().map(Source::File).collect(),
            (None, Some(n)) => (0..n).map(Source::Synth).collect(),
            (None, None) => bail!("either --data or --synth is required"),
        };
        let cfg = self.pipeline(no_reconstruct);
        let rows: Vec<(String, DetectionReport)> = sources
            .par_iter()
            .map(|src| -> Result<(String, DetectionReport)> {
                let (name, img, truth) = self.load_scene(src, occluded)?;
                let det = detect(&img, &cfg, self.seed)?;
                self.save_overlays(&det, &name)?;
                Ok((name, match_detections(&det.ellipses(), &truth, &self.config.matching)))
            })
            .collect::<Result<_>>()?;

        let total = rows.iter().fold(DetectionReport::default(), |acc, (_, r)| acc.merge(r));
        let mut csv = format!("image,{}\n", DetectionReport::csv_header());
        for (name, r) in &rows {
            csv.push_str(&format!("{name},{}\n", r.csv_row()));
        }
        csv.push_str(&format!("total,{}\n", total.csv_row()));
        std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
        println!(
            "{} images: TP {} FP {} GT {}  precision {:.4}  recall {:.4}",
            rows.len(),
            total.true_positives,
            total.false_positives,
            total.ground_truth,
            total.precision(),
            total.recall()
        );
        Ok(ExitCode::SUCCESS)
    }

    fn load_scene(&self, src: &Source, occluded: f64) -> Result<(String, Raster, Vec<Ellipse>)> {
        match src {
            Source::Synth(k) => {
                let spec = random_spec(self.seed.wrapping_add(*k as u64), &self.config.scenes, &self.config.palette);
                let truth = render_occluded(&spec, &self.config.palette, occluded)?;
                let ellipses = truth.ellipses();
                Ok((format!("scene_{k:04}"), truth.image, ellipses))
            }
            Source::File(path) => {
                let truth = load_truth(path)?;
                let dir = path.parent().unwrap_or(Path::new("."));
                let img = Raster::load(dir.join(&truth.image))?;
                let ellipses = truth.dishes.iter().map(|d| d.ellipse).collect();
                Ok((stem(path), img, ellipses))
            }
        }
    }

    fn eval_classify(
        &self,
        data: &DataArgs,
        args: &ClassifierArgs,
        out: &Path,
        heatmap: Option<&Path>,
    ) -> Result<ExitCode> {
        let set = self.patches(data)?;
        let classifier = self.classifier(args)?;
        let names = &self.config.palette.names;
        let (acc, cm) = evaluate_classifier(classifier.as_ref(), &set, names.len())?;
        cm.save(names, out, heatmap)?;
        println!("accuracy {:.4} ({} of {})", acc, cm.correct(), cm.total());
        Ok(ExitCode::SUCCESS)
    }
}

enum Source {
    Synth(usize),
    File(PathBuf),
}

/// Truth sidecars in `dir`, sorted by name.
fn truth_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no ground-truth files in {}", dir.display());
    }
    Ok(files)
}

fn print_bill(bill: &Bill, priced: bool) {
    if priced {
        println!("{bill}");
    } else {
        for l in &bill.lines {
            println!("dish {:>2}  {:<10} {:>5.1}%", l.dish + 1, l.name, 100.0 * l.confidence);
        }
    }
}
