//! Acceptance criteria, run in sequence so the timed ones are not skewed by
//! sibling tests. Each criterion prints one PASS/FAIL line.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mriseg::cli::{parse_pairs, resolve};
use mriseg::data::{load_weights, save_weights, synth_dataset, LoadMode, SynthParams};
use mriseg::metrics::{classification_scores, dice_iou};
use mriseg::nn::{
    grad_check_layer, BatchNorm2d, BlockSpec, Bottleneck, CheckOptions, Conv2d, ConvBlock, ConvTranspose2d, Layer, Mode,
    ParamBuilder, PreactResidual, SeBlock,
};
use mriseg::pipeline::{route_predict, Classifier, Counting, Segmenter};
use mriseg::report::history_csv;
use mriseg::study::{OverfitStudy, TransferStudy};
use mriseg::tensor::{conv2d, conv2d_transpose, grad_check_input, sigmoid, ConvSpec, Padding, Tape, Var};
use mriseg::train::{train, AugmentPolicy, TrainConfig};
use mriseg::zoo::{build_resnet50_classifier, build_resunet_segmenter, ChannelSequence, ResNetConfig, ResUNetConfig};
use mriseg::{Error, Result, Tensor};

/// Writes past the test harness capture so every line reaches the log.
fn line(n: usize, pass: bool, detail: &str) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} {detail}");
    pass
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

// ---------------------------------------------------------------- 1

fn weighted(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let r = randn(tape.value(y).shape(), seed ^ 0x5eed);
    tape.weighted_sum(y, r)
}

fn check_layer(layer: &dyn Layer, store: &mriseg::nn::ParamStore, x: &Tensor, seed: u64, mode: Mode) -> Result<f64> {
    // Output weights must not share the input's seed: with r == x the input
    // gradient of train-mode batch norm is exactly zero.
    let opts = CheckOptions {
        eps: 1e-5,
        seed: seed + 1000,
        mode,
        ..CheckOptions::default()
    };
    Ok(grad_check_layer(layer, store, x, &opts)?.max_relative_error)
}

/// Largest relative error per component over one seed.
fn gradient_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    let x = randn(&[2, 3, 6, 6], seed);

    let mut b = ParamBuilder::new(seed);
    let conv = Conv2d::new(&mut b, "c", ConvSpec::same3x3(3, 4), true)?;
    let strided = Conv2d::new(&mut b, "s", ConvSpec::square(3, 2, 3, 2, Padding::Explicit(1)), true)?;
    let up = ConvTranspose2d::new(&mut b, "t", 3, 2)?;
    let bn = BatchNorm2d::new(&mut b, "bn", 3)?;
    let block = ConvBlock::new(&mut b, "cb", &BlockSpec::conv_block(3, 4))?;
    let res = PreactResidual::new(&mut b, "r", &BlockSpec::preact_residual(3, 4))?;
    let res_se = PreactResidual::new(&mut b, "rs", &BlockSpec::preact_residual(3, 4).with_se(2))?;
    let se = SeBlock::new(&mut b, "se", &BlockSpec::squeeze_excitation(4, 2))?;
    let bott = Bottleneck::new(&mut b, "b", &BlockSpec::bottleneck(3, 8, 2, true))?;
    let mut store = b.finish();
    // Non-trivial affine parameters and running statistics.
    for name in ["bn.gamma", "bn.beta", "bn.running_mean"] {
        let id = store.id(name).expect("bn param");
        *store.value_mut(id) = randn(&[3], seed + 7).map(|v| 0.5 + 0.3 * v);
    }
    let var = store.id("bn.running_var").expect("bn running var");
    *store.value_mut(var) = Tensor::full([3], 1.7);

    out.push(("conv2d", check_layer(&conv, &store, &x, seed, Mode::Train)?));
    out.push(("conv2d stride 2", check_layer(&strided, &store, &x, seed, Mode::Train)?));
    out.push(("conv2d_transpose", check_layer(&up, &store, &x, seed, Mode::Train)?));
    out.push(("batch-norm train", check_layer(&bn, &store, &x, seed, Mode::Train)?));
    out.push(("batch-norm eval", check_layer(&bn, &store, &x, seed, Mode::Eval)?));
    out.push(("conv block", check_layer(&block, &store, &x, seed, Mode::Train)?));
    out.push(("pre-act residual", check_layer(&res, &store, &x, seed, Mode::Train)?));
    out.push(("pre-act residual + SE", check_layer(&res_se, &store, &x, seed, Mode::Train)?));
    out.push(("squeeze-excitation", check_layer(&se, &store, &randn(&[2, 4, 5, 5], seed), seed, Mode::Train)?));
    out.push(("bottleneck", check_layer(&bott, &store, &x, seed, Mode::Train)?));

    // Keep inputs away from the relu kink and pooling ties.
    let away = x.map(|v| v + 0.1 * v.signum());
    let pool = grad_check_input(&away, 1e-5, |t, v| {
        let y = t.max_pool2d(v)?;
        weighted(t, y, seed)
    })?;
    out.push(("max-pool", pool.max_relative_error));
    let relu = grad_check_input(&away, 1e-5, |t, v| {
        let y = t.relu(v);
        weighted(t, y, seed)
    })?;
    out.push(("relu", relu.max_relative_error));
    let sig = grad_check_input(&x, 1e-5, |t, v| {
        let y = t.sigmoid(v);
        weighted(t, y, seed)
    })?;
    out.push(("sigmoid", sig.max_relative_error));
    let soft = grad_check_input(&randn(&[4, 2], seed), 1e-5, |t, v| {
        let y = t.softmax(v)?;
        weighted(t, y, seed)
    })?;
    out.push(("softmax", soft.max_relative_error));

    let p = randn(&[2, 1, 5, 5], seed).map(|v| 0.05 + 0.9 * sigmoid(v));
    let target = randn(&[2, 1, 5, 5], seed + 1).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let bce = grad_check_input(&p, 1e-5, |t, v| t.bce(v, &target))?;
    out.push(("bce loss", bce.max_relative_error));
    let dice = grad_check_input(&p, 1e-5, |t, v| t.dice(v, &target, 1.0))?;
    out.push(("dice loss", dice.max_relative_error));
    Ok(out)
}

fn criterion_1() -> bool {
    let start = Instant::now();
    let mut worst = ("", 0.0f64);
    let mut count = 0;
    for seed in [1, 2, 3] {
        match gradient_suite(seed) {
            Ok(rows) => {
                for (name, err) in rows {
                    count += 1;
                    if err > worst.1 || !err.is_finite() {
                        worst = (name, err);
                    }
                }
            }
            Err(e) => return line(1, false, &format!("gradient suite error: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    line(
        1,
        worst.1 < 1e-4 && secs < 120.0,
        &format!("{count} checks over 3 seeds, max relative error {:.2e} ({}), {secs:.1}s", worst.1, worst.0),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> bool {
    let model = match build_resnet50_classifier(&ResNetConfig::default()) {
        Ok(m) => m,
        Err(e) => return line(2, false, &format!("build failed: {e}")),
    };
    let audit = model.param_count();
    let s = model.structure;
    let pass = audit.non_trainable == 53_120 && audit.trainable > 23_000_000 && s.block_convs == 48 && audit.is_consistent();
    line(
        2,
        pass,
        &format!(
            "non-trainable {}, trainable {}, total {}, in-block convolutions {}",
            audit.non_trainable, audit.trainable, audit.total, s.block_convs
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> bool {
    let start = Instant::now();
    let study = OverfitStudy::default();
    let out = match study.run() {
        Ok(o) => o,
        Err(e) => return line(3, false, &format!("training error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let best = out.dice.iter().copied().fold(0.0, f64::max);
    line(
        3,
        out.reached.is_some() && secs < 900.0,
        &format!(
            "full-width ResU-Net, {}x{}, {} samples: train dice {best:.4} at epoch {}, {secs:.1}s",
            study.image_size.0,
            study.image_size.1,
            study.samples,
            out.reached.map_or("never (limit 300)".to_string(), |e| e.to_string())
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> bool {
    let start = Instant::now();
    // 32x32 keeps the 500-sample, 30-epoch pretraining to a few minutes on
    // one core; `cargo run --release --example transfer_study` runs 64x64.
    let study = TransferStudy {
        image_size: (32, 32),
        ..TransferStudy::default()
    };
    let out = match study.run() {
        Ok(o) => o,
        Err(e) => return line(4, false, &format!("study error: {e}")),
    };
    let show = |e: Option<usize>| e.map_or("never".to_string(), |e| e.to_string());
    line(
        4,
        out.frozen_identical && !out.frozen.is_empty() && out.transfer_helps(),
        &format!(
            "(a) {} frozen tensors bit-identical: {}; (b) epochs to val dice 0.80: fine-tuned {}, scratch {}; {:.0}s",
            out.frozen.len(),
            out.frozen_identical,
            show(out.fine_tuned_epochs),
            show(out.scratch_epochs),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 5

struct Counts {
    tp: f64,
    fp: f64,
    fn_: f64,
    tn: f64,
}

fn brute(a: &[bool], b: &[bool]) -> Counts {
    let mut c = Counts {
        tp: 0.0,
        fp: 0.0,
        fn_: 0.0,
        tn: 0.0,
    };
    for i in 0..a.len() {
        if a[i] && b[i] {
            c.tp += 1.0;
        } else if a[i] {
            c.fp += 1.0;
        } else if b[i] {
            c.fn_ += 1.0;
        } else {
            c.tn += 1.0;
        }
    }
    c
}

fn ratio(n: f64, d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        n / d
    }
}

fn criterion_5() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (da, db): (f64, f64) = (rng.gen(), rng.gen());
        let a: Vec<bool> = (0..256).map(|_| rng.gen::<f64>() < da * da).collect();
        let b: Vec<bool> = (0..256).map(|_| rng.gen::<f64>() < db * db).collect();
        let to_t = |m: &[bool]| Tensor::new([1, 16, 16], m.iter().map(|&v| f64::from(u8::from(v))).collect()).unwrap();
        let o = dice_iou(&to_t(&a), &to_t(&b)).unwrap();
        let s = classification_scores(&a, &b).unwrap();
        let c = brute(&a, &b);

        let union = c.tp + c.fp + c.fn_;
        let (dice, iou) = if union == 0.0 {
            (1.0, 1.0)
        } else {
            (2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn_), c.tp / union)
        };
        let acc = (c.tp + c.tn) / 256.0;
        let prec = ratio(c.tp, c.tp + c.fp);
        let rec = ratio(c.tp, c.tp + c.fn_);
        let f1 = ratio(2.0 * prec * rec, prec + rec);
        let mut errs = vec![
            (o.dice - dice).abs(),
            (o.iou - iou).abs(),
            (s.accuracy - acc).abs(),
            (s.precision - prec).abs(),
            (s.recall - rec).abs(),
            (s.f1 - f1).abs(),
            (o.dice - 2.0 * o.iou / (1.0 + o.iou)).abs(),
        ];
        if union > 0.0 {
            errs.push((s.f1 - o.dice).abs());
        }
        worst = errs.into_iter().fold(worst, f64::max);
    }
    line(5, worst < 1e-12, &format!("1000 random 16x16 pairs, max deviation from counting oracles {worst:.2e}"))
}

// ---------------------------------------------------------------- 6

struct Fixed(f64);

impl Classifier for Fixed {
    fn p_tumor(&self, _: &Tensor) -> Result<f64> {
        Ok(self.0)
    }
}

struct Threshold;

impl Segmenter for Threshold {
    fn probability_map(&self, image: &Tensor) -> Result<Tensor> {
        Ok(image.clone())
    }
}

fn criterion_6() -> bool {
    let image = Tensor::new([1, 4, 4], (0..16).map(|i| i as f64 / 15.0).collect()).unwrap();
    let seg = Counting::new(Threshold);
    let gates = [0.0, 0.5, 0.99, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut probs = vec![1e-9, 0.001, 0.005, 0.0099, 0.01, 0.0100001, 0.3, 0.5, 0.51, 0.99, 1.0 - 1e-12, 1.0];
    probs.extend((0..1000).map(|_| rng.gen::<f64>()));
    let mut ok = true;
    let mut problems = Vec::new();
    for &p in &probs {
        let mut prev = false;
        for &g in &gates {
            let before = seg.calls();
            let pred = match route_predict(&Fixed(p), &seg, "x", &image, g) {
                Ok(pred) => pred,
                Err(e) => {
                    problems.push(format!("p {p} gate {g}: {e}"));
                    ok = false;
                    continue;
                }
            };
            let calls = seg.calls() - before;
            if calls != usize::from(pred.routed) || pred.validate().is_err() {
                ok = false;
                problems.push(format!("p {p} gate {g}: {calls} calls, routed {}", pred.routed));
            }
            if prev && !pred.routed {
                ok = false;
                problems.push(format!("p {p}: routed below gate {g} but not at it"));
            }
            prev = pred.routed;
            if g == 0.99 && (p <= 0.01) == pred.routed {
                ok = false;
                problems.push(format!("p {p} at 0.99 routed {}", pred.routed));
            }
        }
    }
    line(
        6,
        ok,
        &format!(
            "{} probabilities x 4 gates, segmenter calls {}{}",
            probs.len(),
            seg.calls(),
            problems.first().map(|p| format!("; first problem: {p}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let params = SynthParams {
        image_size: (16, 16),
        ..SynthParams::default()
    };
    let data = synth_dataset(7, 12, &params).unwrap();
    let (tr, va) = (&data.samples[..8], &data.samples[8..]);
    let tr = mriseg::data::Dataset::new(tr.to_vec(), data.source.clone()).unwrap();
    let va = mriseg::data::Dataset::new(va.to_vec(), data.source.clone()).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        base_batch_size: 4,
        augment: AugmentPolicy::default(),
        seed: 7,
        ..TrainConfig::default()
    };
    let build = || {
        build_resunet_segmenter(&ResUNetConfig {
            input_size: (16, 16),
            channels: ChannelSequence::new(vec![4, 8, 16, 8, 4]).unwrap(),
            seed: 7,
            ..ResUNetConfig::default()
        })
        .unwrap()
    };
    let mut runs = Vec::new();
    let mut models = Vec::new();
    for _ in 0..2 {
        let mut m = build();
        runs.push(history_csv(&train(&mut m, &tr, &va, &cfg).unwrap()).unwrap());
        models.push(m);
    }
    let same_history = runs[0] == runs[1];

    let path = dir.path().join("w.gsw");
    save_weights(models[0].store(), &path).unwrap();
    let mut fresh = build();
    load_weights(fresh.store_mut(), &path, LoadMode::Strict).unwrap();
    let bits = |m: &mriseg::zoo::ModelGraph| {
        m.store().iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>()
    };
    let round_trip = bits(&fresh) == bits(&models[0]);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    let bad = dir.path().join("bad.gsw");
    std::fs::write(&bad, &bytes).unwrap();
    let mut target = build();
    let before = bits(&target);
    let err = load_weights(target.store_mut(), &bad, LoadMode::Strict);
    let checksum = matches!(err, Err(Error::Checksum { .. }));
    let untouched = bits(&target) == before;

    line(
        7,
        same_history && round_trip && checksum && untouched,
        &format!(
            "history.csv byte-identical {same_history}, archive round-trip bit-exact {round_trip}, corrupted byte -> checksum error {checksum}, model untouched {untouched}"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, c, f) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5));
        let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let x = Tensor::randn([n, c, h, w], 1.0, &mut rng);
        let k = Tensor::randn([c, f, 2, 2], 1.0, &mut rng);
        let y = Tensor::randn([n, f, 2 * h, 2 * w], 1.0, &mut rng);
        // <T x, y> = <x, T* y>, where T* is the stride-2 2x2 convolution with
        // the same kernel viewed as [C_out = c, C_in = f, 2, 2].
        let lhs = conv2d_transpose(&x, &k, None).unwrap().dot(&y).unwrap();
        let spec = ConvSpec::square(f, c, 2, 2, Padding::Explicit(0));
        let rhs = x.dot(&conv2d(&y, &k, None, &spec).unwrap()).unwrap();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    line(8, worst < 1e-10, &format!("100 random pairs, max inner-product mismatch {worst:.2e}"))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> bool {
    let expected = [("paper-resnet50", 15, 1e-4), ("paper-vgg16", 20, 1e-4), ("paper-resunet", 30, 1e-5)];
    let mut ok = true;
    let mut seen = Vec::new();
    for (preset, epochs, lr) in expected {
        let cfg = resolve(&[], &[("preset".to_string(), preset.to_string())]).unwrap();
        let text = cfg.to_text();
        let get = |key: &str| {
            parse_pairs(&text)
                .unwrap()
                .into_iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v)
                .unwrap_or_default()
        };
        let good = get("epochs") == epochs.to_string()
            && get("learning_rate").parse::<f64>().ok() == Some(lr)
            && get("image_size") == "256x256";
        ok &= good;
        seen.push(format!("{preset}: {} epochs, lr {}, {}", get("epochs"), get("learning_rate"), get("image_size")));
    }
    line(9, ok, &seen.join("; "))
}

#[test]
fn acceptance_criteria() {
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
