//! Acceptance checks. Prints one PASS or FAIL line per criterion and exits
//! non-zero when any of them fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dishscan::cnn::layers::{
    maxpool_backward, maxpool_with_argmax, relu_backward, relu_forward, softmax, softmax_cross_entropy,
};
use dishscan::cnn::{Architecture, CnnModel, Conv2d, Dense, Layer, Tensor, TrainConfig};
use dishscan::ellipses::{fit_ellipse, orientation_diff};
use dishscan::eval::{evaluate_classifier, match_detections, DetectionReport, MatchParams};
use dishscan::pipeline::{detect, PipelineConfig};
use dishscan::polyline::rdp_simplify;
use dishscan::stack_recon::{accept, Evidence, GateParams};
use dishscan::synth::{random_spec, render_occluded, synth_patch_set, Palette, SceneRanges};
use dishscan::{Ellipse, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let checks: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 clean synthetic towers", clean_detection),
        ("2 reconstruction on occluded towers", occluded_detection),
        ("3 classifier accuracy on held-out patches", classifier_accuracy),
        ("4 finite-difference gradients", gradient_checks),
        ("5 layer shapes and softmax", shape_chain),
        ("6 geometry oracles", geometry_oracles),
        ("7 evidence gate boundaries", gate_boundaries),
        ("8 seeded runs are bit-identical", reproducibility),
        ("9 precision and recall from counts", counted_metrics),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Totals over `count` scenes and the slowest single detection.
fn detection_run(base: u64, count: u64, drop: f64, reconstruct: bool) -> Result<(DetectionReport, f64), String> {
    let palette = Palette::default();
    let ranges = SceneRanges::default();
    let cfg = PipelineConfig {
        reconstruct,
        ..PipelineConfig::default()
    };
    let mut total = DetectionReport::default();
    let mut slowest = 0.0f64;
    for k in 0..count {
        let spec = random_spec(base + k, &ranges, &palette);
        let truth = render_occluded(&spec, &palette, drop).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let det = detect(&truth.image, &cfg, base + k).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        total = total.merge(&match_detections(&det.ellipses(), &truth.ellipses(), &MatchParams::default()));
    }
    Ok((total, slowest))
}

fn clean_detection() -> Outcome {
    let (r, slowest) = detection_run(20_000, 100, 0.0, true)?;
    let (p, rec) = (r.precision(), r.recall());
    verdict(
        p >= 0.97 && rec >= 0.95 && slowest < 2.0,
        format!(
            "P {p:.4} (>= 0.97), R {rec:.4} (>= 0.95), slowest {slowest:.3}s (< 2s); {} TP {} FP of {}",
            r.true_positives, r.false_positives, r.ground_truth
        ),
    )
}

fn occluded_detection() -> Outcome {
    let (with, _) = detection_run(30_000, 100, 0.2, true)?;
    let (without, _) = detection_run(30_000, 100, 0.2, false)?;
    let gain = 100.0 * (with.recall() - without.recall());
    let drop = 100.0 * (without.precision() - with.precision());
    verdict(
        gain >= 5.0 && drop <= 3.0,
        format!(
            "recall {:.4} -> {:.4} (+{gain:.2}pp, >= 5), precision {:.4} -> {:.4} (drop {drop:.2}pp, <= 3)",
            without.recall(),
            with.recall(),
            without.precision(),
            with.precision()
        ),
    )
}

fn classifier_accuracy() -> Outcome {
    let palette = Palette::default();
    let ranges = SceneRanges::default();
    let train_set = synth_patch_set(900, 1, &ranges, &palette).map_err(|e| e.to_string())?;
    let test_set = synth_patch_set(200, 500_000, &ranges, &palette).map_err(|e| e.to_string())?;
    if train_set.iter().any(|t| test_set.iter().any(|s| s.scene == t.scene)) {
        return Err("training and test patches share a scene".into());
    }
    let cfg = TrainConfig {
        epochs: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    let raw_train = train_set.len() - (cfg.validation_fraction * train_set.len() as f64).round() as usize;
    let data: Vec<_> = train_set.into_iter().map(|s| (s.patch, s.label)).collect();
    let start = Instant::now();
    let outcome = dishscan::cnn::train(&data, &cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let test: Vec<_> = test_set.into_iter().map(|s| (s.patch, s.label)).collect();
    let (acc, _) = evaluate_classifier(&outcome.model, &test, outcome.model.classes()).map_err(|e| e.to_string())?;
    verdict(
        raw_train >= 800 && test.len() == 200 && acc >= 0.90 && secs < 600.0,
        format!(
            "{raw_train} training patches ({} after augmentation), accuracy {acc:.4} on {} disjoint (>= 0.90), trained in {secs:.1}s (< 600s)",
            outcome.train_size,
            test.len()
        ),
    )
}

const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 20;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` with respect to each entry of `params`.
fn compare<F: FnMut(&[f64]) -> f64>(params: &[f64], analytic: &[f64], mut loss: F) -> f64 {
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        work[i] = params[i] + STEP;
        let up = loss(&work);
        work[i] = params[i] - STEP;
        let down = loss(&work);
        work[i] = params[i];
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec()).expect("matching length")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check_conv(rng: &mut ChaCha8Rng) -> f64 {
    let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let (h, w) = (kh + rng.gen_range(0..5), kw + rng.gen_range(0..5));
    let mut conv = Conv2d::new(kh, kw, cin, cout, stride, rng);
    conv.bias = random_vec(rng, cout);
    let x_shape = [h, w, cin];
    let x = tensor(&x_shape, &random_vec(rng, h * w * cin));
    let y = conv.forward(&x).expect("valid geometry");
    let r = tensor(y.shape(), &random_vec(rng, y.len()));

    let mut dw = vec![0.0; conv.weight.len()];
    let mut db = vec![0.0; cout];
    let dx = conv.backward(&x, &r, &mut dw, &mut db, true).expect("backward").expect("dx");

    let base = conv.clone();
    let e_w = compare(&base.weight, &dw, |p| {
        let c = Conv2d { weight: p.to_vec(), ..base.clone() };
        dot(&c.forward(&x).unwrap(), &r)
    });
    let e_b = compare(&base.bias, &db, |p| {
        let c = Conv2d { bias: p.to_vec(), ..base.clone() };
        dot(&c.forward(&x).unwrap(), &r)
    });
    let e_x = compare(x.data(), dx.data(), |p| dot(&base.forward(&tensor(&x_shape, p)).unwrap(), &r));
    e_w.max(e_b).max(e_x)
}

fn check_dense(rng: &mut ChaCha8Rng) -> f64 {
    let x_shape = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=4)];
    let inputs: usize = x_shape.iter().product();
    let outputs = rng.gen_range(1..=6);
    let mut dense = Dense::new(inputs, outputs, rng);
    dense.bias = random_vec(rng, outputs);
    let x = tensor(&x_shape, &random_vec(rng, inputs));
    let y = dense.forward(&x).expect("matching input");
    let r = tensor(y.shape(), &random_vec(rng, y.len()));

    let mut dw = vec![0.0; dense.weight.len()];
    let mut db = vec![0.0; outputs];
    let dx = dense.backward(&x, &r, &mut dw, &mut db);

    let base = dense.clone();
    let e_w = compare(&base.weight, &dw, |p| {
        let d = Dense { weight: p.to_vec(), ..base.clone() };
        dot(&d.forward(&x).unwrap(), &r)
    });
    let e_b = compare(&base.bias, &db, |p| {
        let d = Dense { bias: p.to_vec(), ..base.clone() };
        dot(&d.forward(&x).unwrap(), &r)
    });
    let e_x = compare(x.data(), dx.data(), |p| dot(&base.forward(&tensor(&x_shape, p)).unwrap(), &r));
    e_w.max(e_b).max(e_x)
}

fn check_relu(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=3)];
    let n: usize = shape.iter().product();
    // keep clear of the kink at zero
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.01..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = tensor(&shape, &data);
    let r = tensor(&shape, &random_vec(rng, n));
    let dx = relu_backward(&x, &r);
    compare(x.data(), dx.data(), |p| dot(&relu_forward(&tensor(&shape, p)), &r))
}

fn check_maxpool(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [2 * rng.gen_range(1..=3), 2 * rng.gen_range(1..=3), rng.gen_range(1..=3)];
    let n: usize = shape.iter().product();
    // distinct values at least 0.05 apart so no perturbation changes a winner
    let mut levels: Vec<f64> = (0..n).map(|i| 0.1 * i as f64).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.gen_range(0..=i));
    }
    let data: Vec<f64> = levels.iter().map(|v| v + rng.gen_range(-0.025..0.025)).collect();
    let x = tensor(&shape, &data);
    let (y, argmax) = maxpool_with_argmax(&x).expect("even geometry");
    let r = tensor(y.shape(), &random_vec(rng, y.len()));
    let dx = maxpool_backward(&shape, &argmax, &r);
    compare(x.data(), dx.data(), |p| {
        dot(&maxpool_with_argmax(&tensor(&shape, p)).unwrap().0, &r)
    })
}

fn check_softmax_ce(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(2..=10);
    let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let label = rng.gen_range(0..n);
    let (_, grad) = softmax_cross_entropy(&logits, label);
    compare(&logits, &grad, |p| softmax_cross_entropy(p, label).0)
}

/// Every parameter of a small complete network through the batch loss.
fn check_network(rng: &mut ChaCha8Rng) -> f64 {
    let arch = Architecture {
        input: [12, 24, 2],
        conv1_kernel: (2, 4),
        conv1_stride: (2, 4),
        conv1_channels: 3,
        conv2_kernel: 2,
        conv2_channels: 4,
        conv3_kernel: 1,
        conv3_channels: 5,
        classes: 3,
    };
    let mut model = CnnModel::new(&arch, rng.gen()).expect("valid architecture");
    for buf in model.net.params_mut() {
        for v in buf.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let n: usize = arch.input.iter().product();
    let inputs: Vec<Tensor> = (0..3).map(|_| tensor(&arch.input, &random_vec(rng, n))).collect();
    let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..arch.classes)).collect();
    let batch: Vec<(&Tensor, usize)> = inputs.iter().zip(&labels).map(|(x, &l)| (x, l)).collect();
    let (_, grads) = model.loss_and_grad(&batch).expect("loss");

    let analytic: Vec<&Vec<f64>> = model
        .net
        .layers
        .iter()
        .zip(&grads.layers)
        .filter(|(l, _)| matches!(l, Layer::Conv(_) | Layer::Dense(_)))
        .flat_map(|(_, (w, b))| [w, b])
        .collect();
    let mut worst = 0.0f64;
    for (k, g) in analytic.iter().enumerate() {
        let params = model.net.params_mut()[k].clone();
        let mut probe = model.clone();
        worst = worst.max(compare(&params, g, |p| {
            *probe.net.params_mut()[k] = p.to_vec();
            probe.loss_and_grad(&batch).expect("loss").0
        }));
    }
    worst
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let checks: [(&str, fn(&mut ChaCha8Rng) -> f64); 6] = [
        ("conv", check_conv),
        ("relu", check_relu),
        ("maxpool", check_maxpool),
        ("dense", check_dense),
        ("softmax-ce", check_softmax_ce),
        ("network", check_network),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, check) in checks {
        let worst = (0..INSTANCES).map(|_| check(&mut rng)).fold(0.0f64, f64::max);
        ok &= worst < GRAD_TOL;
        parts.push(format!("{name} {worst:.1e}"));
    }
    verdict(
        ok,
        format!("max relative error over {INSTANCES} instances each (< 1e-4): {}", parts.join(", ")),
    )
}

fn shape_chain() -> Outcome {
    let model = CnnModel::new(&Architecture::default(), 11).map_err(|e| e.to_string())?;
    let input = Tensor::zeros(model.input_shape());
    let shapes = model.shape_trace(&input).map_err(|e| e.to_string())?;
    let last = model.net.layers.len() - 1;
    let chain: Vec<Vec<usize>> = model
        .net
        .layers
        .iter()
        .enumerate()
        .filter(|(i, l)| matches!(l, Layer::Conv(_) | Layer::MaxPool) || *i == last)
        .map(|(i, _)| shapes[i + 1].clone())
        .collect();
    let expected: Vec<Vec<usize>> = vec![
        vec![24, 24, 20],
        vec![12, 12, 20],
        vec![8, 8, 50],
        vec![4, 4, 50],
        vec![1, 1, 500],
        vec![8],
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n: usize = model.input_shape().iter().product();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = Tensor::from_vec(model.input_shape(), (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
            .map_err(|e| e.to_string())?;
        let probs = model.forward(&x).map_err(|e| e.to_string())?;
        worst = worst.max((probs.iter().sum::<f64>() - 1.0).abs());
    }
    let logits: Vec<f64> = (0..8).map(|i| 300.0 * i as f64).collect();
    worst = worst.max((softmax(&logits).iter().sum::<f64>() - 1.0).abs());
    verdict(
        chain == expected && worst <= 1e-9,
        format!("chain {chain:?}, largest |sum - 1| {worst:.1e} (<= 1e-9)"),
    )
}

fn fit_oracle(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let a = rng.gen_range(10.0..300.0);
    let b = a * rng.gen_range(0.1..0.9);
    let truth = Ellipse::new(
        rng.gen_range(0.0..800.0),
        rng.gen_range(0.0..800.0),
        a,
        b,
        rng.gen_range(0.0..PI),
    );
    let n = rng.gen_range(10..200);
    let span = rng.gen_range(PI / 2.0..2.0 * PI);
    let start = rng.gen_range(0.0..2.0 * PI);
    let pts: Vec<Point> = (0..n)
        .map(|i| truth.point_at(start + span * i as f64 / n as f64))
        .collect();
    let fit = fit_ellipse(&pts).map_err(|e| e.to_string())?.ellipse;
    let lengths = [fit.p - truth.p, fit.q - truth.q, fit.a - truth.a, fit.b - truth.b]
        .iter()
        .map(|d| d.abs() / truth.a)
        .fold(0.0, f64::max);
    Ok(lengths.max(orientation_diff(fit.alpha, truth.alpha) / PI))
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = b.sub(a);
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(d) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * d.x, a.y + t * d.y))
}

/// A pixel contour: an 8-connected random walk or a rasterized noisy arc.
fn random_contour(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let n = rng.gen_range(3..400);
    if rng.gen_bool(0.5) {
        let mut pts = vec![Point::new(0.0, 0.0)];
        let mut dir: i32 = rng.gen_range(0..8);
        for _ in 1..n {
            dir = (dir + rng.gen_range(-1..=1)).rem_euclid(8);
            let (dx, dy) = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)][dir as usize];
            let last = *pts.last().unwrap();
            pts.push(Point::new(last.x + dx as f64, last.y + dy as f64));
        }
        pts
    } else {
        let e = Ellipse::new(0.0, 0.0, rng.gen_range(5.0..200.0), rng.gen_range(5.0..100.0), rng.gen_range(0.0..PI));
        let span = rng.gen_range(0.5..2.0 * PI);
        let mut pts: Vec<Point> = (0..n)
            .map(|i| {
                let p = e.point_at(span * i as f64 / n as f64);
                Point::new((p.x + rng.gen_range(-1.0..1.0)).round(), (p.y + rng.gen_range(-1.0..1.0)).round())
            })
            .collect();
        if span > 6.0 {
            pts.push(pts[0]);
        }
        pts
    }
}

fn rdp_oracle(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let pts = random_contour(rng);
    let poly = rdp_simplify(&pts, 2.0).map_err(|e| e.to_string())?;
    let v = &poly.vertices;
    Ok(pts
        .iter()
        .map(|&p| {
            if v.len() == 1 {
                return p.dist(v[0]);
            }
            v.windows(2)
                .map(|s| segment_distance(p, s[0], s[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max))
}

/// Lowest point found by dense sampling, then golden-section refinement.
fn sampled_bottom(e: &Ellipse) -> f64 {
    let n = 100_000;
    let step = 2.0 * PI / n as f64;
    let best = (0..n)
        .map(|i| i as f64 * step)
        .fold((0.0, f64::NEG_INFINITY), |acc, t| {
            let y = e.point_at(t).y;
            if y > acc.1 {
                (t, y)
            } else {
                acc
            }
        });
    let (mut lo, mut hi) = (best.0 - step, best.0 + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if e.point_at(m1).y < e.point_at(m2).y {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    best.1.max(e.point_at(0.5 * (lo + hi)).y)
}

fn bottom_oracle(rng: &mut ChaCha8Rng) -> f64 {
    let e = Ellipse::new(
        rng.gen_range(0.0..800.0),
        rng.gen_range(0.0..800.0),
        rng.gen_range(1.0..300.0),
        rng.gen_range(1.0..300.0),
        rng.gen_range(-PI..PI),
    );
    (e.bottom_y() - sampled_bottom(&e)).abs()
}

fn geometry_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fit = 0.0f64;
    let mut rdp = 0.0f64;
    let mut bottom = 0.0f64;
    for _ in 0..1000 {
        fit = fit.max(fit_oracle(&mut rng)?);
        rdp = rdp.max(rdp_oracle(&mut rng)?);
        bottom = bottom.max(bottom_oracle(&mut rng));
    }
    verdict(
        fit <= 1e-6 && rdp <= 2.0 + 1e-9 && bottom <= 1e-6,
        format!(
            "fit relative error {fit:.1e} (<= 1e-6), farthest point from simplified polyline {rdp:.3}px (<= 2), bottom_y error {bottom:.1e} (<= 1e-6); 1000 cases each"
        ),
    )
}

fn gate_boundaries() -> Outcome {
    let gate = GateParams::default();
    let mut wrong = Vec::new();
    for combo in 0..8u8 {
        let (cov_ok, rms_ok, max_ok) = (combo & 1 != 0, combo & 2 != 0, combo & 4 != 0);
        let expected = cov_ok && rms_ok && max_ok;
        // failing sides sit exactly on the threshold; passing sides just inside
        for nudge in [1e-9, 1e-3] {
            let ev = Evidence {
                coverage: if cov_ok { gate.min_coverage + nudge } else { gate.min_coverage },
                rms_error: if rms_ok { gate.max_rms - nudge } else { gate.max_rms },
                max_error: if max_ok { gate.max_point_error - nudge } else { gate.max_point_error },
            };
            if accept(&ev, &gate) != expected {
                wrong.push(format!("{ev:?}"));
            }
            let beyond = Evidence {
                coverage: if cov_ok { ev.coverage } else { gate.min_coverage - nudge },
                rms_error: if rms_ok { ev.rms_error } else { gate.max_rms + nudge },
                max_error: if max_ok { ev.max_error } else { gate.max_point_error + nudge },
            };
            if accept(&beyond, &gate) != expected {
                wrong.push(format!("{beyond:?}"));
            }
        }
    }
    let params = (gate.min_coverage, gate.max_rms, gate.max_point_error);
    verdict(
        wrong.is_empty() && params == (0.10, 0.1, 0.2),
        if wrong.is_empty() {
            format!("all 8 combinations decided as expected at thresholds {params:?}")
        } else {
            format!("wrong decisions: {}", wrong.join("; "))
        },
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dishscan"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn reproducibility() -> Outcome {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().expect("temp dir")).collect();
    for dir in &runs {
        run_cli(dir.path(), &["eval-detect", "--synth", "10", "--seed", "7", "--out", "eval.csv"])?;
        run_cli(
            dir.path(),
            &["train", "--synth", "200", "--epochs", "1", "--seed", "7", "--out", "model.bin", "--log", "log.csv"],
        )?;
    }
    let mut differing = Vec::new();
    for file in ["eval.csv", "model.bin", "log.csv"] {
        let a = std::fs::read(runs[0].path().join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(runs[1].path().join(file)).map_err(|e| e.to_string())?;
        if a != b || a.is_empty() {
            differing.push(file);
        }
    }
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            "eval-detect metrics, trained model and training log identical across two runs".into()
        } else {
            format!("differing outputs: {differing:?}")
        },
    )
}

fn counted_metrics() -> Outcome {
    // isolated dishes on a grid; detections copy the first 391 and add 14 strays
    let truth: Vec<Ellipse> = (0..461)
        .map(|i| Ellipse::new(100.0 * (i % 25) as f64, 100.0 * (i / 25) as f64, 20.0, 8.0, 0.0))
        .collect();
    let mut detected: Vec<Ellipse> = truth[..391].to_vec();
    detected.extend((0..14).map(|i| Ellipse::new(50.0 + 100.0 * i as f64, -5000.0, 20.0, 8.0, 0.0)));
    let r = match_detections(&detected, &truth, &MatchParams::default());
    let (p, rec) = (100.0 * r.precision(), 100.0 * r.recall());
    verdict(
        (r.true_positives, r.false_positives, r.ground_truth) == (391, 14, 461)
            && (p - 96.54).abs() <= 0.01
            && (rec - 84.82).abs() <= 0.01,
        format!("TP {} FP {} GT {}: precision {p:.2}%, recall {rec:.2}%", r.true_positives, r.false_positives, r.ground_truth),
    )
}
