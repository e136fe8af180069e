//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line
//! to stderr (uncaptured) and then asserts.
//!
//! Criteria run one at a time behind a lock so their wall-clock budgets are
//! not distorted by each other; the expensive runs (oracle round trips,
//! segmenter training, detector training) are computed once and shared.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blessmark::codec::{embed, extract, CodecConfig, EmbedReport, LengthMode, Watermark};
use blessmark::metrics::{accuracy, bpp, dice, psnr, psnr_region, ssim, ConfusionCounts, SsimParams};
use blessmark::nn::{
    gradient_check, load_weights, save_weights, Conv2d, Dense, Layer, Network, Tensor,
};
use blessmark::nn::train::channel_loss;
use blessmark::pixel::{BlockGrid, BlockRef, Image};
use blessmark::restore::{
    build_detector_training_set, recover, train_detector, DenseDetector, DetectorConfig, OracleDetector,
};
use blessmark::segment::{
    roi_block_map, train_segmenter, CnnSegmenter, CnnSegmenterConfig, LabeledImage, SegTrainConfig, Segmenter,
    ThresholdSegmenter,
};
use blessmark::synthetic::{generate, SyntheticSpec};
use blessmark::transform::{dct2, embed_bit, idct2, read_bit, CoeffBlock, EmbedParams};

const M: usize = 6;

// Segmenter training corpus.
const SEG_SEED: u64 = 7;
const SEG_TRAIN_IMAGES: usize = 20;
const SEG_TRAIN_SIDE: usize = 64;
const SEG_HELD_OUT_IMAGES: usize = 10;
const SEG_HELD_OUT_SIDE: usize = 128;
const SEG_PAYLOAD_BITS: usize = 200;

// Detector corpus: half gray, half color.
const DET_SEED: u64 = 500;
const DET_TRAIN_IMAGES: usize = 10;
const DET_HELD_OUT_IMAGES: usize = 10;
const DET_SIDE: usize = 128;
const DET_PAYLOAD_BITS: usize = 300;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, title: &str, pass: bool, detail: &str) -> bool {
    let line = format!(
        "criterion {n:>2} {:<4} {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

/// Header mode: the receiver needs nothing but the watermarked image.
fn codec() -> CodecConfig {
    let mut config = CodecConfig::for_block_size(M).unwrap();
    config.length_mode = LengthMode::Header;
    config
}

/// One embed → blind extract round.
#[derive(Clone, PartialEq)]
struct Round {
    cover: Image,
    payload: Watermark,
    marked: Image,
    report: EmbedReport,
    extracted: Watermark,
    /// Block map recomputed from the watermarked image alone.
    receiver_map: blessmark::RoiBlockMap,
}

fn round<S: Segmenter + ?Sized>(cover: Image, payload: Watermark, seg: &S, config: &CodecConfig) -> Round {
    let (marked, report) = embed(&cover, &payload, seg, config).unwrap();
    let extracted = extract(&marked, seg, config, None).unwrap();
    let receiver_map = roi_block_map(&marked, seg, config.m()).unwrap();
    Round {
        cover,
        payload,
        marked,
        report,
        extracted,
        receiver_map,
    }
}

// ---------------------------------------------------------------- shared runs

struct OracleRuns {
    rounds: Vec<Round>,
    elapsed: Duration,
}

fn oracle_runs_fresh() -> OracleRuns {
    let start = Instant::now();
    let seg = ThresholdSegmenter::default();
    let config = codec();
    let mut rounds = Vec::new();
    for seed in 1..=100u64 {
        for spec in [SyntheticSpec::gray(seed, 256, 256), SyntheticSpec::color(seed, 128, 128)] {
            let cover = generate(&spec).image;
            rounds.push(round(cover, Watermark::random(seed, 500), &seg, &config));
        }
    }
    OracleRuns {
        rounds,
        elapsed: start.elapsed(),
    }
}

fn oracle_runs() -> &'static OracleRuns {
    static RUNS: OnceLock<OracleRuns> = OnceLock::new();
    RUNS.get_or_init(oracle_runs_fresh)
}

struct LearnedRun {
    weights: Vec<u8>,
    held_out_dice: f64,
    train_elapsed: Duration,
    rounds: Vec<Round>,
    elapsed: Duration,
}

fn labeled(seed: u64, side: usize) -> LabeledImage {
    let s = generate(&SyntheticSpec::gray(seed, side, side));
    LabeledImage::new(s.image, s.mask).unwrap()
}

fn learned_run_fresh() -> LearnedRun {
    let start = Instant::now();
    let train: Vec<_> = (0..SEG_TRAIN_IMAGES as u64).map(|k| labeled(SEG_SEED + k, SEG_TRAIN_SIDE)).collect();
    let held_out: Vec<_> = (0..SEG_HELD_OUT_IMAGES as u64)
        .map(|k| labeled(SEG_SEED + SEG_TRAIN_IMAGES as u64 + k, SEG_HELD_OUT_SIDE))
        .collect();
    let mut config = SegTrainConfig::new(M);
    config.seed = SEG_SEED;
    let outcome = train_segmenter(&train, &held_out, &config, |_, _| {}).unwrap();
    let train_elapsed = start.elapsed();
    let seg = outcome.segmenter;
    let codec = codec();
    let rounds = held_out
        .iter()
        .enumerate()
        .map(|(k, item)| round(item.image.clone(), Watermark::random(1000 + k as u64, SEG_PAYLOAD_BITS), &seg, &codec))
        .collect();
    LearnedRun {
        weights: save_weights(&outcome.weights),
        held_out_dice: outcome.held_out_dice,
        train_elapsed,
        rounds,
        elapsed: start.elapsed(),
    }
}

fn learned_run() -> &'static LearnedRun {
    static RUN: OnceLock<LearnedRun> = OnceLock::new();
    RUN.get_or_init(learned_run_fresh)
}

fn detector_corpus(offset: u64, count: usize) -> Vec<(Image, Image)> {
    (0..count as u64)
        .map(|k| {
            let seed = DET_SEED + offset + k;
            let spec = if k % 2 == 0 {
                SyntheticSpec::gray(seed, DET_SIDE, DET_SIDE)
            } else {
                SyntheticSpec::color(seed, DET_SIDE, DET_SIDE)
            };
            let s = generate(&spec);
            (s.image, s.mask)
        })
        .collect()
}

struct DetectorRun {
    weights: Vec<u8>,
    accuracy: f64,
    elapsed: Duration,
    detector: DenseDetector,
}

fn detector_run_fresh() -> DetectorRun {
    let start = Instant::now();
    let seg = ThresholdSegmenter::default();
    let config = codec();
    let covers = |offset, n| -> Vec<Image> { detector_corpus(offset, n).into_iter().map(|(i, _)| i).collect() };
    let train = build_detector_training_set(&covers(0, DET_TRAIN_IMAGES), &seg, &config).unwrap();
    let held = build_detector_training_set(&covers(100, DET_HELD_OUT_IMAGES), &seg, &config).unwrap();
    let outcome = train_detector(&train, &held, &DetectorConfig::new(M), DET_SEED, |_, _| {}).unwrap();
    DetectorRun {
        weights: save_weights(&outcome.weights),
        accuracy: outcome.held_out_accuracy,
        elapsed: start.elapsed(),
        detector: outcome.detector,
    }
}

fn detector_run() -> &'static DetectorRun {
    static RUN: OnceLock<DetectorRun> = OnceLock::new();
    RUN.get_or_init(detector_run_fresh)
}

// ------------------------------------------------------------------ criteria

#[test]
fn criterion_01_transform_correctness() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_roundtrip, mut worst_parseval) = (0.0f64, 0.0f64);
    for m in [6, 8, 10] {
        for _ in 0..1000 {
            let x: Vec<f64> = (0..m * m).map(|_| rng.random_range(0.0..255.0)).collect();
            let c = dct2(&x, m);
            let back = idct2(&c);
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_roundtrip = worst_roundtrip.max(err);
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ec: f64 = c.as_slice().iter().map(|v| v * v).sum();
            worst_parseval = worst_parseval.max((ex - ec).abs() / ex);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_roundtrip < 1e-9 && worst_parseval < 1e-6 && elapsed < Duration::from_secs(5);
    assert!(verdict(
        1,
        "transform correctness",
        pass,
        &format!("max roundtrip {worst_roundtrip:.2e}, max parseval {worst_parseval:.2e}, {}", secs(elapsed))
    ));
}

#[test]
fn criterion_02_codec_bit_contract() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0usize;
    let mut total = 0usize;
    for (m, i) in [(6, 5), (8, 7), (10, 9)] {
        let params = EmbedParams::new(m, i, 0.01).unwrap();
        assert_eq!(params, EmbedParams::for_block_size(m).unwrap());
        for _ in 0..100_000 {
            let mut coeffs: Vec<f64> = (0..m * m).map(|_| rng.random_range(-50.0..50.0)).collect();
            if rng.random_bool(0.05) {
                coeffs[(i - 1) * m + i] = coeffs[i * m + i - 1];
            }
            let mut block = CoeffBlock::from_coeffs(m, coeffs).unwrap();
            let bit: bool = rng.random();
            embed_bit(&mut block, &params, bit);
            failures += (read_bit(&block, &params) != bit) as usize;
            total += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && elapsed < Duration::from_secs(10);
    assert!(verdict(
        2,
        "codec bit contract",
        pass,
        &format!("{failures} failures in {total} pairs, {}", secs(elapsed))
    ));
}

#[test]
fn criterion_03_blind_round_trip_oracle_segmenter() {
    let _g = serial();
    let runs = oracle_runs();
    let bit_errors: usize = runs
        .rounds
        .iter()
        .map(|r| {
            let (a, b) = (r.payload.bits(), r.extracted.bits());
            a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
        })
        .sum();
    let pass = bit_errors == 0 && runs.elapsed < Duration::from_secs(120);
    assert!(verdict(
        3,
        "blind round trip, threshold segmenter",
        pass,
        &format!("{} embeds, {bit_errors} bit errors, {}", runs.rounds.len(), secs(runs.elapsed))
    ));
}

#[test]
fn criterion_04_blind_round_trip_learned_segmenter() {
    let _g = serial();
    let run = learned_run();
    let bit_errors: usize = run
        .rounds
        .iter()
        .map(|r| {
            let (a, b) = (r.payload.bits(), r.extracted.bits());
            a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
        })
        .sum();
    let pass = bit_errors == 0 && run.held_out_dice >= 0.90 && run.elapsed < Duration::from_secs(30 * 60);
    assert!(verdict(
        4,
        "blind round trip, trained CNN segmenter",
        pass,
        &format!(
            "held-out dice {:.4}, {} embeds, {bit_errors} bit errors, training {}, total {}",
            run.held_out_dice,
            run.rounds.len(),
            secs(run.train_elapsed),
            secs(run.elapsed)
        )
    ));
}

fn fixed_point_violations(rounds: &[Round]) -> Vec<String> {
    let mut problems = Vec::new();
    for (k, r) in rounds.iter().enumerate() {
        if &r.receiver_map != r.report.final_map() {
            problems.push(format!("run {k}: receiver map differs from final embedding map"));
        }
        if !r.report.maps.windows(2).all(|w| w[1].nroi_subset_of(&w[0])) {
            problems.push(format!("run {k}: NROI set grew between iterations"));
        }
        if r.report.iterations > r.report.initial_map().nroi_count() + 1 {
            problems.push(format!("run {k}: {} iterations", r.report.iterations));
        }
    }
    problems
}

#[test]
fn criterion_05_fixed_point_and_monotonicity() {
    let _g = serial();
    let all: Vec<Round> = oracle_runs().rounds.iter().chain(&learned_run().rounds).cloned().collect();
    let problems = fixed_point_violations(&all);
    let max_iter = all.iter().map(|r| r.report.iterations).max().unwrap_or(0);
    let switched: usize = all.iter().map(|r| r.report.switched_blocks).sum();
    let pass = problems.is_empty();
    assert!(
        verdict(
            5,
            "fixed point and monotonicity",
            pass,
            &format!(
                "{} runs, max {max_iter} iterations, {switched} switched blocks, {} violations",
                all.len(),
                problems.len()
            )
        ),
        "{problems:?}"
    );
}

fn roi_changes(r: &Round) -> usize {
    let map = r.report.initial_map();
    let grid = BlockGrid::new(&r.cover, M).unwrap();
    let mut changed = 0;
    for (row, col) in grid.positions() {
        if !map.is_roi(row, col) {
            continue;
        }
        for ch in 0..r.cover.channels() {
            let at = BlockRef::new(ch, row, col);
            if r.cover.extract_block(at, M).unwrap() != r.marked.extract_block(at, M).unwrap() {
                changed += 1;
            }
        }
    }
    changed
}

#[test]
fn criterion_06_roi_preservation() {
    let _g = serial();
    let all: Vec<&Round> = oracle_runs().rounds.iter().chain(&learned_run().rounds).collect();
    let changed: usize = all.iter().map(|r| roi_changes(r)).sum();
    let roi_blocks: usize = all
        .iter()
        .map(|r| {
            let map = r.report.initial_map();
            (map.rows() * map.cols() - map.nroi_count()) * r.cover.channels()
        })
        .sum();
    let pass = changed == 0;
    assert!(verdict(
        6,
        "ROI preservation",
        pass,
        &format!("{} embeds, {roi_blocks} ROI block-channels checked, {changed} changed", all.len())
    ));
}

#[test]
fn criterion_07_detector_quality() {
    let _g = serial();
    let run = detector_run();
    let pass = run.accuracy >= 0.85 && run.elapsed < Duration::from_secs(15 * 60);
    assert!(verdict(
        7,
        "distortion detector quality",
        pass,
        &format!("held-out accuracy {:.4}, {}", run.accuracy, secs(run.elapsed))
    ));
}

#[test]
fn criterion_08_recovery_improvement() {
    let _g = serial();
    let det = &detector_run().detector;
    let seg = ThresholdSegmenter::default();
    let config = codec();

    let mut improved = 0;
    let mut gains = Vec::new();
    for (k, (cover, mask)) in detector_corpus(100, DET_HELD_OUT_IMAGES).into_iter().enumerate() {
        let payload = Watermark::random(2000 + k as u64, DET_PAYLOAD_BITS);
        let (marked, _) = embed(&cover, &payload, &seg, &config).unwrap();
        let w = extract(&marked, &seg, &config, None).unwrap();
        let (recovered, _) = recover(&marked, &w, &seg, det, &config).unwrap();
        let nroi: Vec<bool> = mask.samples().iter().map(|&v| v != 255).collect();
        let before = psnr_region(&cover, &marked, &nroi).unwrap();
        let after = psnr_region(&cover, &recovered, &nroi).unwrap();
        improved += (after > before) as usize;
        gains.push(after - before);
    }
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;

    // Oracle detector on guard-free, single-increment embeds.
    let mut guard_free = codec();
    guard_free.guard_retries = 0;
    let mut worst = 0u8;
    let mut recovered_blocks = 0usize;
    for (k, (cover, _)) in detector_corpus(100, DET_HELD_OUT_IMAGES).into_iter().enumerate() {
        let payload = Watermark::random(3000 + k as u64, DET_PAYLOAD_BITS);
        let (marked, report) = embed(&cover, &payload, &seg, &guard_free).unwrap();
        assert!(report.slots.iter().all(|s| s.increments <= 1));
        let oracle = OracleDetector::from_report(&report);
        let (recovered, rep) = recover(&marked, &payload, &seg, &oracle, &guard_free).unwrap();
        recovered_blocks += rep.recovered;
        for s in report.modified_slots() {
            let a = cover.extract_block(s.slot, M).unwrap();
            let b = recovered.extract_block(s.slot, M).unwrap();
            worst = worst.max(a.iter().zip(&b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0));
        }
    }

    let pass = improved >= 9 && worst <= 2;
    assert!(verdict(
        8,
        "recovery improvement",
        pass,
        &format!(
            "trained detector improved NROI PSNR on {improved}/{} (mean {mean_gain:+.2} dB); \
             oracle stub: {recovered_blocks} blocks, max abs error {worst}",
            gains.len()
        )
    ));
}

#[test]
fn criterion_09_gradient_verification() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rand_tensor = |c: usize, b: usize, h: usize, w: usize, rng: &mut ChaCha8Rng| {
        Tensor::new(c, b, h, w, (0..c * b * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    };
    let mut results: Vec<(String, f64, f64)> = Vec::new();

    for trial in 0..5 {
        // Dense stacks: dense/relu/dense/sigmoid behind a flatten.
        let n = rng.random_range(2..6);
        let hidden = rng.random_range(2..8);
        let net = Network::new(vec![
            Layer::Flatten,
            Layer::Dense(Dense::glorot(n * n, hidden, &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::glorot(hidden, 1, &mut rng)),
            Layer::Sigmoid,
        ]);
        let x = rand_tensor(1, 3, n, n, &mut rng);
        let t: Vec<f64> = (0..3).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let r = gradient_check(&net, &x, |y| channel_loss(y, 0, &t).unwrap(), 1e-5, usize::MAX, trial).unwrap();
        results.push((format!("dense#{trial}"), r.relative_error, 1e-4));

        // Conv stacks: 3×3 conv/relu/1×1 conv/softmax.
        let (cin, mid) = (rng.random_range(1..3), rng.random_range(2..5));
        let side = rng.random_range(3..7);
        let net = Network::new(vec![
            Layer::Conv(Conv2d::glorot(cin, mid, 3, &mut rng)),
            Layer::Relu,
            Layer::Conv(Conv2d::glorot(mid, 2, 1, &mut rng)),
            Layer::Softmax,
        ]);
        let x = rand_tensor(cin, 2, side, side, &mut rng);
        let t: Vec<f64> = (0..2 * side * side).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let r = gradient_check(&net, &x, |y| channel_loss(y, 1, &t).unwrap(), 1e-5, usize::MAX, trial).unwrap();
        results.push((format!("conv#{trial}"), r.relative_error, 1e-3));
    }

    // The full segmentation CNN on one 6×6 block.
    let mut cnn = CnnSegmenter::new_random(&CnnSegmenterConfig::default(), 9).unwrap();
    // Zero biases put dead units exactly on the ReLU kink, where finite differences are one-sided.
    for (k, slice) in cnn.network_mut().param_slices_mut().into_iter().enumerate() {
        if k % 2 == 1 {
            slice.iter_mut().for_each(|b| *b = rng.random_range(0.05..0.25));
        }
    }
    let x = rand_tensor(1, 1, M, M, &mut rng);
    let t: Vec<f64> = (0..M * M).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
    let r = gradient_check(cnn.network(), &x, |y| channel_loss(y, 1, &t).unwrap(), 1e-5, 25, 9).unwrap();
    results.push(("segmentation cnn".into(), r.relative_error, 1e-3));

    // The detector.
    let det = DenseDetector::new_random(M, 9);
    let x = rand_tensor(1, 4, M, M, &mut rng);
    let t = [0.0, 1.0, 1.0, 0.0];
    let r = gradient_check(det.network(), &x, |y| channel_loss(y, 0, &t).unwrap(), 1e-5, 40, 9).unwrap();
    results.push(("detector".into(), r.relative_error, 1e-4));

    let elapsed = start.elapsed();
    let failing: Vec<_> = results.iter().filter(|(_, e, tol)| !(e < tol)).collect();
    let worst_conv = results.iter().filter(|r| r.2 == 1e-3).map(|r| r.1).fold(0.0, f64::max);
    let worst_dense = results.iter().filter(|r| r.2 == 1e-4).map(|r| r.1).fold(0.0, f64::max);
    let pass = failing.is_empty() && elapsed < Duration::from_secs(60);
    assert!(
        verdict(
            9,
            "gradient verification",
            pass,
            &format!(
                "{} checks, worst conv {worst_conv:.2e}, worst dense {worst_dense:.2e}, {}",
                results.len(),
                secs(elapsed)
            )
        ),
        "{failing:?}"
    );
}

#[test]
fn criterion_10_metrics_sanity() {
    let _g = serial();
    let img = generate(&SyntheticSpec::color(10, 40, 30)).image;
    let mut checks = Vec::new();
    checks.push(("psnr identity", psnr(&img, &img).unwrap() == f64::INFINITY));
    checks.push(("ssim identity", ssim(&img, &img, SsimParams::default()).unwrap() == 1.0));
    let flat = Image::filled(16, 16, 1, 128).unwrap();
    checks.push(("ssim constant", ssim(&flat, &flat, SsimParams::default()).unwrap() == 1.0));
    let perfect = ConfusionCounts {
        tp: 10,
        fp: 0,
        tn: 5,
        fn_: 0,
    };
    checks.push(("dice perfect", dice(perfect).unwrap() == 1.0));
    checks.push(("accuracy perfect", accuracy(perfect).unwrap() == 1.0));
    let c = ConfusionCounts {
        tp: 2,
        fp: 1,
        tn: 0,
        fn_: 1,
    };
    checks.push(("dice 4/6", (dice(c).unwrap() - 4.0 / 6.0).abs() < 1e-12));
    let quarter = ConfusionCounts {
        tp: 25,
        fp: 25,
        tn: 25,
        fn_: 25,
    };
    checks.push(("accuracy 0.5", accuracy(quarter).unwrap() == 0.5));
    checks.push(("bpp", bpp(7225, 512, 512) == 7225.0 / 262144.0));
    let failed: Vec<_> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    assert!(verdict(
        10,
        "metrics sanity",
        failed.is_empty(),
        &format!("{} checks, failed: {failed:?}", checks.len())
    ));
}

#[test]
fn criterion_11_no_side_information() {
    let _g = serial();
    let cmd = blessmark::cli::command();
    let mut offending = Vec::new();
    for name in ["extract", "recover"] {
        let sub = cmd.find_subcommand(name).expect("subcommand exists");
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str().to_string();
            if ["cover", "map", "report", "mask", "original"].iter().any(|b| id.contains(b)) {
                offending.push(format!("{name} --{id}"));
            }
        }
    }
    assert!(verdict(
        11,
        "no side information at extraction/recovery",
        offending.is_empty(),
        &format!("offending arguments: {offending:?}")
    ));
}

#[test]
fn criterion_12_determinism() {
    let _g = serial();
    let start = Instant::now();
    let mut mismatches = Vec::new();

    let first = oracle_runs();
    let second = oracle_runs_fresh();
    if first.rounds != second.rounds {
        mismatches.push("oracle round trips");
    }

    let first = learned_run();
    let second = learned_run_fresh();
    if first.weights != second.weights {
        mismatches.push("segmenter weights");
    }
    if first.rounds != second.rounds {
        mismatches.push("learned-segmenter round trips");
    }
    if first.held_out_dice.to_bits() != second.held_out_dice.to_bits() {
        mismatches.push("held-out dice");
    }
    let weights = load_weights(&second.weights).unwrap();
    if save_weights(&weights) != second.weights {
        mismatches.push("segmenter weight file re-encoding");
    }

    let first = detector_run();
    let second = detector_run_fresh();
    if first.weights != second.weights || first.accuracy.to_bits() != second.accuracy.to_bits() {
        mismatches.push("detector weights");
    }

    assert!(verdict(
        12,
        "determinism",
        mismatches.is_empty(),
        &format!("reran criteria 3, 4, 7 in {}, mismatches: {mismatches:?}", secs(start.elapsed()))
    ));
}
