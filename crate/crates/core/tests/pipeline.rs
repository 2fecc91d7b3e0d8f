mod common;

use common::{brute_force_scores, random_clip};
use lean::container::Container;
use lean::data_io::{label_matrix_of, LabeledClip};
use lean::dsp::{WaveClip, PATCH_SAMPLES};
use lean::extractor::ExtractorWeights;
use lean::inference::{bench_latency, mean_scores, predict_clip};
use lean::metrics::evaluate;
use lean::quantizer::{
    dequantized_model, eval_quantized, quantize_container, quantize_model, quantize_tensor, size_report,
};
use lean::tensor::{Tape, Tensor};
use lean::trainer::{self, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, CKPT_MAGIC};
use lean::{Error, FusionMode, LeanModel, ModelConfig, ModelInput};

fn tone(hz: f64, len: usize, phase: f64) -> WaveClip {
    let s = (0..len)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0 + phase).sin()) as f32)
        .collect();
    WaveClip::new(s, 16_000)
}

/// Two classes of one-second tones, a low and a high band.
fn toy_set(per_class: usize, offset: usize) -> Vec<LabeledClip> {
    (0..2 * per_class)
        .map(|i| {
            let k = i % 2;
            let hz = if k == 0 { 400.0 } else { 3_000.0 } + 37.0 * (i / 2 + offset) as f64;
            let mut labels = vec![0u8; 2];
            labels[k] = 1;
            LabeledClip {
                id: format!("toy_{}", i + offset),
                clip: tone(hz, PATCH_SAMPLES, i as f64 * 0.3),
                labels,
            }
        })
        .collect()
}

fn toy_config(mode: FusionMode, epochs: usize, lr: f64) -> TrainConfig {
    let mut cfg = TrainConfig::new(ModelConfig::desk(mode, 2), 3);
    cfg.epochs = epochs;
    cfg.batch_size = 12;
    cfg.learning_rate = lr;
    cfg
}

#[test]
fn clip_scores_match_chunk_enumeration() {
    let model = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Bahdanau, 3), 4).unwrap();
    for (len, seed) in [(4_800, 1), (40_000, 2), (27_001, 3), (16_000, 4)] {
        let clip = random_clip(len, seed);
        let got = predict_clip("c", &clip, &model, 0.5, false).unwrap();
        let (want, chunks) = brute_force_scores(&model, &clip, 8_000);
        assert_eq!(got.chunks, chunks, "len {len}");
        assert_eq!(got.scores, want, "len {len}");
    }
    let two_and_a_half = random_clip(40_000, 5);
    assert_eq!(
        predict_clip("c", &two_and_a_half, &model, 0.5, false).unwrap().chunks,
        4
    );
    let three = random_clip(48_000, 6);
    let p = predict_clip("c", &three, &model, 0.0, true).unwrap();
    assert_eq!(p.chunks, 3);
    assert_eq!(p.scores, brute_force_scores(&model, &three, 16_000).0);
    assert_eq!(p.scores, mean_scores(p.chunk_scores.as_ref().unwrap()).unwrap());
}

#[test]
fn one_second_clip_ignores_overlap() {
    let model = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Affinity, 3), 8).unwrap();
    let clip = random_clip(PATCH_SAMPLES, 9);
    let base = predict_clip("c", &clip, &model, 0.0, true).unwrap();
    assert_eq!(base.chunks, 1);
    assert_eq!(base.scores, base.chunk_scores.as_ref().unwrap()[0]);
    for overlap in [0.25, 0.5, 0.9] {
        assert_eq!(
            predict_clip("c", &clip, &model, overlap, false).unwrap().scores,
            base.scores
        );
    }
    let empty = WaveClip::new(vec![], 16_000);
    assert!(matches!(
        predict_clip("c", &empty, &model, 0.5, false),
        Err(Error::Domain(_))
    ));
}

#[test]
fn zero_head_scores_one_half() {
    let mut model = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Concat, 5), 2).unwrap();
    let head = *model.head();
    for id in [head.w, head.b] {
        let shape = model.store.value(id).shape().to_vec();
        model.store.get_mut(id).value = Tensor::zeros(&shape);
    }
    for (len, seed) in [(6_000, 1), (35_000, 2)] {
        let p = predict_clip("c", &random_clip(len, seed), &model, 0.5, false).unwrap();
        assert!(p.scores.iter().all(|&s| s == 0.5));
    }
}

#[test]
fn chunk_order_does_not_change_the_mean() {
    let a = vec![vec![0.1f32, 0.9], vec![0.4, 0.2], vec![0.7, 0.3]];
    let mut b = a.clone();
    b.reverse();
    assert_eq!(mean_scores(&a).unwrap(), mean_scores(&b).unwrap());
}

#[test]
fn latency_report_is_consistent() {
    let model = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Bahdanau, 4), 1).unwrap();
    let r = bench_latency(&model, 20, 0).unwrap();
    assert_eq!(r.runs, 20);
    let sum = r.stage_median_sum();
    let e2e = r.end_to_end.median_ms;
    assert!((sum - e2e).abs() <= 0.2 * e2e, "stages {sum} ms vs end to end {e2e} ms");
    assert!(bench_latency(&model, 5, 0).is_err());
}

#[test]
fn separable_toy_loss_decreases_every_epoch() {
    let train = toy_set(6, 0);
    let val = toy_set(2, 50);
    let out = trainer::train(&toy_config(FusionMode::Concat, 5, 1e-3), &train, &val, None).unwrap();
    let losses: Vec<f64> = out.reports.iter().map(|r| r.train_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "losses {losses:?}");
    }
}

#[test]
fn training_is_reproducible_and_respects_frozen_weights() {
    let train = toy_set(4, 0);
    let val = toy_set(2, 50);
    let cfg = toy_config(FusionMode::Bahdanau, 2, 1e-3);
    let fresh = LeanModel::<f32>::new(cfg.model.clone(), cfg.seed).unwrap();
    let a = trainer::train(&cfg, &train, &val, None).unwrap();
    let b = trainer::train(&cfg, &train, &val, None).unwrap();
    let strip = |v: &[trainer::EpochReport]| {
        v.iter()
            .map(|r| trainer::EpochReport {
                seconds: 0.0,
                ..r.clone()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a.reports), strip(&b.reports));
    assert!(a.model.store.values_bit_eq(&b.model.store));
    let bytes = |c: &Checkpoint| {
        let mut c = c.clone();
        c.best_report.seconds = 0.0;
        c.to_bytes().unwrap()
    };
    assert!(bytes(&a.checkpoint) == bytes(&b.checkpoint));
    for id in fresh.extractor_ids() {
        assert_eq!(
            fresh.store.value(id),
            a.model.store.value(id),
            "{}",
            fresh.store.get(id).name
        );
    }
    assert!(!fresh.store.values_bit_eq(&a.model.store));
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let train = toy_set(3, 0);
    let val = toy_set(1, 50);
    let cfg = toy_config(FusionMode::Affinity, 2, 0.0);
    let fresh = LeanModel::<f32>::new(cfg.model.clone(), cfg.seed).unwrap();
    let out = trainer::train(&cfg, &train, &val, None).unwrap();
    assert!(fresh.store.values_bit_eq(&out.model.store));
}

#[test]
fn training_patches_are_windows_of_their_clip() {
    let mut rng = common::rng(4);
    let clip = random_clip(37_000, 1);
    for _ in 0..20 {
        let p = trainer::training_patch(&clip, &mut rng).unwrap();
        let start = (p.offset_seconds * 16_000.0).round() as usize;
        assert_eq!(p.samples(), &clip.samples[start..start + PATCH_SAMPLES]);
    }
    let short = random_clip(5_000, 2);
    let p = trainer::training_patch(&short, &mut rng).unwrap();
    assert_eq!(p.samples()[5_000..10_000], short.samples[..]);
}

#[test]
fn checkpoint_round_trip_reproduces_validation() {
    let train = toy_set(3, 0);
    let val = toy_set(2, 50);
    let out = trainer::train(&toy_config(FusionMode::Bahdanau, 2, 1e-3), &train, &val, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    save_checkpoint(&out.checkpoint, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, out.checkpoint);
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());

    let model = back.load_model().unwrap();
    let report = trainer::validate(&model, &val, back.config.eval_overlap).unwrap();
    let best = &back.best_report;
    assert_eq!(report.map, best.val_map);
    assert_eq!(report.mean_auc_pr, best.val_auc_pr);
    assert_eq!(report.mean_auc_roc, best.val_auc_roc);
    assert_eq!(report.d_prime, best.val_d_prime);

    let mut bytes = back.to_bytes().unwrap();
    let at = bytes.windows(8).position(|w| w == CKPT_MAGIC).unwrap() + 8;
    bytes[at] = 2;
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    let good = back.to_bytes().unwrap();
    for cut in [10, good.len() / 2, good.len() - 1] {
        assert!(Checkpoint::from_bytes(&good[..cut]).is_err());
    }
}

#[test]
fn extractor_weights_round_trip() {
    let model = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Concat, 3), 12).unwrap();
    let w = model.extractor_weights().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bin");
    w.save(&path).unwrap();
    let back = ExtractorWeights::load(&path).unwrap();
    assert!(back.store.values_bit_eq(&w.store));
    let mut other = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Concat, 3), 13).unwrap();
    other.load_extractor(&back).unwrap();
    for id in model.extractor_ids() {
        assert_eq!(other.store.value(id), model.store.value(id));
    }
}

#[test]
fn quantized_container_is_idempotent_and_small() {
    let model = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Bahdanau, 8), 21).unwrap();
    let q = quantize_model(&model).unwrap();
    let again = quantize_model(&dequantized_model(&q).unwrap()).unwrap();
    assert_eq!(again.to_bytes(), q.to_bytes());
    let float = model.to_container().unwrap();
    let size = size_report(&float, &q).unwrap();
    assert!(size.ratio >= 3.5, "ratio {}", size.ratio);
    let module_float: usize = size.modules.values().map(|m| m.float_bytes).sum();
    let module_quant: usize = size.modules.values().map(|m| m.quantized_bytes).sum();
    assert_eq!(module_float + size.float_header_bytes, size.float_bytes);
    assert_eq!(module_quant + size.quantized_header_bytes, size.quantized_bytes);
    let reread = Container::from_bytes(&q.to_bytes()).unwrap();
    assert_eq!(reread, q);
}

#[test]
fn full_size_quantized_container_is_about_four_and_a_half_megabytes() {
    let model = LeanModel::<f32>::new(ModelConfig::full(FusionMode::Bahdanau), 0).unwrap();
    let params = model.store.count();
    assert!((4_570_000..4_590_000).contains(&params), "{params}");
    let bytes = quantize_model(&model).unwrap().encoded_len() as f64;
    assert!((bytes - 4.6e6).abs() <= 0.46e6, "{bytes} bytes");
}

#[test]
fn dequantized_layers_stay_within_the_rounding_bound() {
    let model = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Bahdanau, 8), 22).unwrap();
    for (_, p) in model.store.iter() {
        let shape = p.value.shape();
        if shape.len() < 2 {
            continue;
        }
        let cols = *shape.last().unwrap();
        let fan_in = p.value.len() / cols;
        let w = p.value.clone().reshape(&[fan_in, cols]).unwrap();
        let q = quantize_tensor(&w).unwrap();
        let wq = q.dequantize().unwrap();
        let x = common::random_tensor(&[1, fan_in], 7, 0.0).cast::<f32>();
        let max_in = x.max_abs();
        let yf = x.matmul(&w).unwrap();
        let yq = x.matmul(&wq).unwrap();
        let dev = yf
            .data()
            .iter()
            .zip(yq.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0f32, f32::max);
        assert!(dev <= q.scale * fan_in as f32 * max_in, "{}: {dev}", p.name);
    }
}

#[test]
fn identical_models_show_no_degradation() {
    let model = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Concat, 2), 30).unwrap();
    let clips = toy_set(2, 0);
    let labels = label_matrix_of(&clips, 2).unwrap();
    let r = eval_quantized(&model, &model, &clips, &labels, 0.5).unwrap();
    assert_eq!(r.map_drop, Some(0.0));
    assert_eq!(r.per_class_ap_delta, vec![Some(0.0); 2]);
    let q = dequantized_model(&quantize_container(&model.to_container().unwrap()).unwrap()).unwrap();
    let r = eval_quantized(&model, &q, &clips, &labels, 0.5).unwrap();
    assert_eq!(r.per_class_ap_delta.len(), 2);
    assert!(r.map_drop.unwrap().abs() <= 1.0);
}

#[test]
fn forward_shapes_per_mode() {
    let clip = random_clip(PATCH_SAMPLES, 3);
    let patch = lean::dsp::Patch1s::new(clip.samples, 0.0).unwrap();
    let input = ModelInput::from_patch(&patch);
    assert_eq!(input.log_mel.shape(), &[96, 64]);
    assert_eq!(input.wave.shape(), &[40, 400]);
    for mode in FusionMode::ALL {
        let cfg = ModelConfig::desk(mode, 6);
        let model = LeanModel::<f32>::new(cfg.clone(), 1).unwrap();
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &input).unwrap();
        assert_eq!(tape.shape(f.e_yam), &[1, cfg.projection_units]);
        assert_eq!(tape.shape(f.fused), &[1, cfg.head_inputs()]);
        assert_eq!(tape.shape(f.scores), &[1, 6]);
        assert!(tape.value(f.scores).data().iter().all(|&s| s > 0.0 && s < 1.0));
        assert_eq!(
            f.attention.is_some(),
            matches!(mode, FusionMode::Affinity | FusionMode::Bahdanau)
        );
        let scores = evaluate(
            &lean::metrics::ScoreMatrix::from_rows(&[tape.value(f.scores).data().iter().map(|&s| s as f64).collect()])
                .unwrap(),
            &lean::metrics::LabelMatrix::from_rows(&[vec![1, 0, 0, 0, 0, 0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(scores.per_class_ap[0], Some(1.0));
    }
}
