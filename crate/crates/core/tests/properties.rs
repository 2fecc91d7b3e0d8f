mod common;

use common::{random_tensor, rng};
use lean::data_io::{
    decode_labels, decode_wav, encode_wav, synth_in_memory, Manifest, ManifestRow, Split, SynthSpec, Vocabulary,
    WavEncoding,
};
use lean::dsp::{flatten, patchify, reshape_wave, Patch1s, WaveClip, WaveSeq, PATCH_SAMPLES};
use lean::fusion::{attend_affinity, attend_bahdanau, fuse_concat, BahdanauAttention};
use lean::quantizer::quantize_tensor;
use lean::tensor::{ParamStore, Tape, Tensor};
use lean::wave_encoder::{BiLstmLayer, WaveEncoder};
use lean::{FusionMode, LeanModel, ModelConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn softmax_of(x: &[f64]) -> Vec<f64> {
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::new(vec![x.len()], x.to_vec()).unwrap());
    let s = tape.softmax(v).unwrap();
    tape.value(s).data().to_vec()
}

/// Rows of `h` in the order given by `perm`.
fn permute_rows(h: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (_, c) = h.dims2().unwrap();
    let data = perm
        .iter()
        .flat_map(|&r| h.data()[r * c..(r + 1) * c].to_vec())
        .collect();
    Tensor::new(h.shape().to_vec(), data).unwrap()
}

struct AttentionRun {
    weights: Vec<f64>,
    context: Vec<f64>,
}

fn run_attention(mode: FusionMode, e: &Tensor<f64>, h: &Tensor<f64>, att_seed: u64) -> AttentionRun {
    let m = e.len();
    let mut store = ParamStore::<f64>::new();
    let att = BahdanauAttention::register(&mut store, &mut rng(att_seed), m, 5).unwrap();
    let mut tape = Tape::new();
    let ev = tape.constant(e.clone());
    let hv = tape.constant(h.clone());
    let a = match mode {
        FusionMode::Affinity => attend_affinity(&mut tape, ev, hv).unwrap(),
        _ => attend_bahdanau(&mut tape, &store, &att, ev, hv).unwrap(),
    };
    AttentionRun {
        weights: tape.value(a.weights).data().to_vec(),
        context: tape.value(a.context).data().to_vec(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one_and_follows_permutations(
        x in prop::collection::vec(-50.0f64..50.0, 1..30),
        seed in any::<u64>(),
    ) {
        let s = softmax_of(&x);
        prop_assert!(s.iter().all(|&v| v >= 0.0));
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        let mut perm: Vec<usize> = (0..x.len()).collect();
        perm.shuffle(&mut rng(seed));
        let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let ps = softmax_of(&px);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((ps[k] - s[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn bce_is_never_negative(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..20),
    ) {
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let y: Vec<f64> = pairs.iter().map(|x| x.1 as u8 as f64).collect();
        let mut tape = Tape::<f64>::new();
        let pv = tape.constant(Tensor::new(vec![p.len()], p).unwrap());
        let l = tape.bce(pv, &Tensor::new(vec![y.len()], y).unwrap()).unwrap();
        prop_assert!(tape.value(l).data()[0] >= 0.0);
    }

    #[test]
    fn attention_is_a_convex_pooling(steps in 1usize..9, seed in any::<u64>(), bahdanau in any::<bool>()) {
        let mode = if bahdanau { FusionMode::Bahdanau } else { FusionMode::Affinity };
        let m = 4;
        let e = random_tensor(&[1, m], seed, 0.0);
        let h = random_tensor(&[steps, m], seed ^ 0x55, 0.0);
        let run = run_attention(mode, &e, &h, seed);
        prop_assert!(run.weights.iter().all(|&a| a >= 0.0));
        prop_assert!((run.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        for j in 0..m {
            let col: Vec<f64> = (0..steps).map(|t| h.at2(t, j)).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(run.context[j] >= lo - 1e-12 && run.context[j] <= hi + 1e-12);
        }
        let mut perm: Vec<usize> = (0..steps).collect();
        perm.shuffle(&mut rng(seed.wrapping_add(1)));
        let moved = run_attention(mode, &e, &permute_rows(&h, &perm), seed);
        for (k, &t) in perm.iter().enumerate() {
            prop_assert!((moved.weights[k] - run.weights[t]).abs() <= 1e-12);
        }
        for j in 0..m {
            prop_assert!((moved.context[j] - run.context[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn wave_states_stay_inside_unit_interval(steps in 1usize..12, seed in any::<u64>(), gain in 0.5f64..3.0) {
        let mut store = ParamStore::<f64>::new();
        let enc = WaveEncoder::register(&mut store, &mut rng(seed), 16, 4).unwrap();
        for id in enc.param_ids() {
            let v = store.value(id).map(|x| x * gain);
            store.get_mut(id).value = v;
        }
        let x = random_tensor(&[steps, 16], seed ^ 0xabc, 0.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = enc.encode(&mut tape, &store, xv).unwrap();
        prop_assert!(tape.value(out.hidden_states).data().iter().all(|v| v.abs() < 1.0));
        prop_assert_eq!(tape.shape(out.hidden_states), &[steps, 8]);
        prop_assert_eq!(tape.shape(out.context), &[1, 8]);
    }

    #[test]
    fn int8_round_trip_error_is_half_a_step(
        x in prop::collection::vec(-100.0f32..100.0, 1..300),
    ) {
        let t = Tensor::new(vec![x.len(), 1], x.clone()).unwrap();
        let q = quantize_tensor(&t).unwrap();
        let d = q.dequantize().unwrap();
        for (a, b) in x.iter().zip(d.data()) {
            let bound = q.scale * 0.5 * (1.0 + 1e-5) + f32::EPSILON * a.abs();
            prop_assert!((a - b).abs() <= bound, "{a} vs {b}, scale {}", q.scale);
        }
        let again = quantize_tensor(&d).unwrap();
        prop_assert_eq!(again.scale.to_bits(), q.scale.to_bits());
        prop_assert_eq!(again.data, q.data);
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb(x in prop::collection::vec(-1.0f32..1.0, 1..2000)) {
        let back = decode_wav(&encode_wav(&x, 1, 16_000, WavEncoding::Pcm16)).unwrap();
        prop_assert_eq!(back.sample_rate, 16_000);
        prop_assert_eq!(back.samples.len(), x.len());
        for (a, b) in x.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        let exact = decode_wav(&encode_wav(&x, 1, 16_000, WavEncoding::Float32)).unwrap();
        prop_assert_eq!(exact.samples, x);
    }

    #[test]
    fn manifest_label_matrix_is_lossless(
        classes in 1usize..10,
        picks in prop::collection::vec((prop::collection::vec(any::<bool>(), 10), 0u8..3), 1..25),
    ) {
        let names: Vec<String> = (0..classes).map(|k| format!("class {k}\"q")).collect();
        let vocab = Vocabulary::new(names.clone()).unwrap();
        let rows: Vec<ManifestRow> = picks
            .iter()
            .enumerate()
            .filter_map(|(i, (mask, split))| {
                let labels: Vec<String> =
                    (0..classes).filter(|&k| mask[k]).map(|k| names[k].clone()).collect();
                (!labels.is_empty()).then(|| ManifestRow {
                    fname: format!("clip_{i}.wav"),
                    labels,
                    split: Split::ALL[*split as usize],
                })
            })
            .collect();
        let manifest = Manifest { rows };
        manifest.validate(&vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        manifest.write(&dir.path().join("m.csv")).unwrap();
        vocab.write(&dir.path().join("v.csv")).unwrap();
        prop_assert_eq!(&Manifest::read(&dir.path().join("m.csv")).unwrap(), &manifest);
        prop_assert_eq!(&Vocabulary::read(&dir.path().join("v.csv")).unwrap(), &vocab);
        for split in Split::ALL {
            let lm = manifest.label_matrix(&vocab, split).unwrap();
            let expected: Vec<&ManifestRow> = manifest.rows_in(split).collect();
            prop_assert_eq!(lm.rows(), expected.len());
            for (i, r) in expected.iter().enumerate() {
                prop_assert_eq!(&decode_labels(lm.row(i), &vocab), &r.labels);
            }
        }
    }

    #[test]
    fn wave_fold_inverts(seed in any::<u64>()) {
        let t = random_tensor(&[40, 400], seed, 0.0).cast::<f32>();
        let seq = WaveSeq(t.clone());
        let back = reshape_wave(&flatten(&seq).unwrap());
        prop_assert_eq!(back.0, t);
    }

    #[test]
    fn patches_reproduce_the_clip(len in 1usize..60_000, hop in prop::sample::select(vec![0.25, 0.5, 1.0])) {
        let samples: Vec<f32> = (0..len).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
        let clip = WaveClip::new(samples.clone(), 16_000);
        let patches = patchify(&clip, hop).unwrap();
        prop_assert!(!patches.is_empty());
        for p in &patches {
            let start = (p.offset_seconds * 16_000.0).round() as usize;
            let rest = &samples[start..];
            let expect: Vec<f32> = rest.iter().copied().cycle().take(PATCH_SAMPLES).collect();
            prop_assert_eq!(p.samples(), &expect[..]);
        }
        let last = patches.last().unwrap();
        let end = (last.offset_seconds * 16_000.0).round() as usize + PATCH_SAMPLES;
        prop_assert!(end >= len);
    }
}

#[test]
fn pooling_ignores_spatial_order() {
    let x = random_tensor(&[4, 3, 5], 77, 0.0);
    let mut cells: Vec<usize> = (0..12).collect();
    cells.shuffle(&mut rng(78));
    let data: Vec<f64> = cells
        .iter()
        .flat_map(|&p| x.data()[p * 5..(p + 1) * 5].to_vec())
        .collect();
    let y = Tensor::new(vec![4, 3, 5], data).unwrap();
    let pool = |t: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let p = tape.global_avg_pool(v).unwrap();
        tape.value(p).data().to_vec()
    };
    for (a, b) in pool(&x).iter().zip(pool(&y)) {
        assert!((a - b).abs() < 1e-14);
    }
}

fn swap_halves(row: &[f64]) -> Vec<f64> {
    let h = row.len() / 2;
    row[h..].iter().chain(&row[..h]).copied().collect()
}

#[test]
fn reversing_time_mirrors_the_encoder() {
    let (input, hidden, steps) = (20, 4, 7);
    let mut store = ParamStore::<f64>::new();
    let enc = WaveEncoder::register(&mut store, &mut rng(90), input, hidden).unwrap();
    for id in enc.param_ids() {
        let shape = store.value(id).shape().to_vec();
        if shape.len() == 1 {
            store.get_mut(id).value = random_tensor(&shape, 91 + id.index() as u64, 0.0);
        }
    }
    let x = random_tensor(&[steps, input], 92, 0.0);
    let rev: Vec<usize> = (0..steps).rev().collect();
    let xr = permute_rows(&x, &rev);

    // Run the reversed input through a mirror encoder: directions swapped,
    // and the second layer's kernels reading [bwd ‖ fwd] instead of [fwd ‖ bwd].
    let mut mirror_store = store.clone();
    let [l1, l2] = enc.layers;
    for cell in [l2.forward, l2.backward] {
        let k = mirror_store.value(cell.kernel).clone();
        let (r, c) = k.dims2().unwrap();
        let half = r / 2;
        let data: Vec<f64> = (0..r)
            .flat_map(|i| {
                let src = (i + half) % r;
                k.data()[src * c..(src + 1) * c].to_vec()
            })
            .collect();
        mirror_store.get_mut(cell.kernel).value = Tensor::new(vec![r, c], data).unwrap();
    }
    let flip = |l: BiLstmLayer| BiLstmLayer {
        forward: l.backward,
        backward: l.forward,
        input: l.input,
    };
    let mirror = WaveEncoder {
        layers: [flip(l1), flip(l2)],
        hidden,
    };

    let states = |e: &WaveEncoder, s: &ParamStore<f64>, x: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = e.encode(&mut tape, s, v).unwrap();
        (tape.value(out.hidden_states).clone(), tape.value(out.context).clone())
    };
    let (h, c) = states(&enc, &store, &x);
    let (hm, cm) = states(&mirror, &mirror_store, &xr);
    let w = 2 * hidden;
    for t in 0..steps {
        let want = swap_halves(&h.data()[(steps - 1 - t) * w..(steps - t) * w]);
        for (a, b) in hm.data()[t * w..(t + 1) * w].iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "t={t}: {a} vs {b}");
        }
    }
    for (a, b) in cm.data().iter().zip(swap_halves(c.data())) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn every_gate_block_receives_gradient() {
    let cfg = ModelConfig::desk(FusionMode::Concat, 4);
    let mut store = ParamStore::<f32>::new();
    let enc = WaveEncoder::register(&mut store, &mut rng(5), cfg.wave_frame, cfg.lstm_hidden).unwrap();
    let x = random_tensor(&[40, 400], 6, 0.0).cast::<f32>();
    let w = random_tensor(&[40, 2 * cfg.lstm_hidden], 7, 0.1).cast::<f32>();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let out = enc.encode(&mut tape, &store, xv).unwrap();
    let wv = tape.constant(w);
    let p = tape.mul(out.hidden_states, wv).unwrap();
    let loss = tape.sum(p).unwrap();
    let grads = tape.backward(loss).unwrap();
    let h = cfg.lstm_hidden;
    for id in enc.param_ids() {
        let g = grads
            .get(id)
            .unwrap_or_else(|| panic!("{} has no gradient", store.get(id).name));
        let cols = 4 * h;
        let rows = g.len() / cols;
        for block in 0..4 {
            let norm: f64 = (0..rows)
                .flat_map(|r| (block * h..(block + 1) * h).map(move |c| r * cols + c))
                .map(|i| (g.data()[i] as f64).powi(2))
                .sum();
            assert!(norm > 0.0, "{} gate block {block} is dead", store.get(id).name);
        }
    }
}

#[test]
fn encoding_is_bit_reproducible() {
    let cfg = ModelConfig::desk(FusionMode::Affinity, 4);
    let model = LeanModel::<f32>::new(cfg, 11).unwrap();
    let clip = common::random_clip(PATCH_SAMPLES, 12);
    let patch = Patch1s::new(clip.samples, 0.0).unwrap();
    let input = lean::ModelInput::from_patch(&patch);
    let run = || {
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &input).unwrap();
        (tape.value(f.context.unwrap()).clone(), tape.value(f.scores).clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn affinity_matches_concat_on_constant_states() {
    let m = 8;
    let e = random_tensor(&[1, m], 20, 0.0);
    let row = random_tensor(&[1, m], 21, 0.0);
    let h = Tensor::new(vec![6, m], row.data().repeat(6)).unwrap();
    let mut tape = Tape::new();
    let (ev, hv, rv) = (tape.constant(e), tape.constant(h), tape.constant(row));
    let a = attend_affinity(&mut tape, ev, hv).unwrap();
    let c = fuse_concat(&mut tape, ev, rv).unwrap();
    for (x, y) in tape.value(a.fused).data().iter().zip(tape.value(c).data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn affinity_adds_no_parameters() {
    for cfg in [
        ModelConfig::desk(FusionMode::Concat, 8),
        ModelConfig::full(FusionMode::Concat),
    ] {
        let mut aff = cfg.clone();
        aff.mode = FusionMode::Affinity;
        assert_eq!(aff.param_breakdown().total(), cfg.param_breakdown().total());
        assert_eq!(aff.param_breakdown().attention, 0);
    }
    let a = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Affinity, 8), 1).unwrap();
    let c = LeanModel::<f32>::new(ModelConfig::desk(FusionMode::Concat, 8), 1).unwrap();
    assert_eq!(a.store.count(), c.store.count());
}

#[test]
fn synthetic_corpus_depends_only_on_spec() {
    let spec = SynthSpec {
        train_clips: 6,
        val_clips: 2,
        eval_clips: 2,
        seed: 9,
        ..SynthSpec::default()
    };
    let a = synth_in_memory(&spec).unwrap();
    let b = synth_in_memory(&spec).unwrap();
    assert_eq!(a, b);
    let other = synth_in_memory(&SynthSpec { seed: 10, ..spec }).unwrap();
    assert_ne!(a[0][0].clip, other[0][0].clip);
}
