use mmfuse_core::datapipe::preprocess_us;
use mmfuse_core::gradcam::*;
use mmfuse_core::models::{Input, Model, ModelKind, ScaleProfile};
use mmfuse_core::ndcore::{Tape, Tensor};
use mmfuse_core::synthgen::{generate_dataset, generate_pair, signal_masks, SignalMode, SynthSpec};
use mmfuse_core::trainer::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// score = sum_c w_c * sum(A_c) through the tape, so dscore/dA_c = w_c everywhere.
fn toy(a: &Tensor<f32>, w: &[f32]) -> (Vec<f64>, Vec<f32>) {
    let mut tape: Tape<f32> = Tape::new();
    let av = tape.leaf(a.clone());
    let n: usize = a.shape()[2..].iter().product();
    let wt = Tensor::from_fn(a.shape().to_vec(), |i| w[i / n]);
    let wv = tape.constant(wt);
    let prod = tape.mul(av, wv).unwrap();
    let score = tape.sum(prod);
    gradcam_on_tape(&tape, score, av, &a.shape()[2..]).unwrap()
}

#[test]
fn linear_toy_model_is_relu_of_weighted_activation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Quarter-steps in [-2, 2] with the maximum present, so 0.5 * A peaks at exactly 1.
    let mut data: Vec<f32> = (0..4 * 6 * 3).map(|_| rng.random_range(-8..=8) as f32 / 4.0).collect();
    data[5] = 2.0;
    let a = Tensor::new(vec![1, 1, 4, 6, 3], data.clone()).unwrap();
    let (raw, heat) = toy(&a, &[0.5]);
    let expect: Vec<f32> = data.iter().map(|&x| (0.5 * x).max(0.0)).collect();
    assert_eq!(raw.iter().map(|&v| v as f32).collect::<Vec<_>>(), expect);
    assert_eq!(heat, expect);

    // General weights: raw map exact, heatmap is its min-max normalisation.
    let w = 0.37f32;
    let (raw, heat) = toy(&a, &[w]);
    let expect: Vec<f64> = data.iter().map(|&x| (w as f64 * x as f64).max(0.0)).collect();
    assert_eq!(raw, expect);
    let max = expect.iter().cloned().fold(0.0, f64::max);
    for (h, e) in heat.iter().zip(&expect) {
        assert_eq!(*h, (e / max) as f32);
    }

    // Two channels: weights combine linearly before the ReLU.
    let two: Vec<f32> = (0..2 * 12).map(|_| rng.random_range(-4..=4) as f32 / 2.0).collect();
    let a2 = Tensor::new(vec![1, 2, 3, 4], two.clone()).unwrap();
    let (raw, _) = toy(&a2, &[1.5, -0.5]);
    for i in 0..12 {
        assert_eq!(raw[i], (1.5 * two[i] as f64 - 0.5 * two[12 + i] as f64).max(0.0));
    }
}

#[test]
fn zero_and_negative_evidence_give_zero_maps() {
    let a = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let (_, heat) = toy(&a, &[-1.0]);
    assert_eq!(heat, vec![0.0; 4]);
    let (_, heat) = toy(&a, &[0.0]);
    assert_eq!(heat, vec![0.0; 4]);

    // Score that does not depend on the layer at all.
    let mut tape: Tape<f32> = Tape::new();
    let av = tape.leaf(a.clone());
    let b = tape.leaf(Tensor::ones(vec![3]));
    let score = tape.sum(b);
    let (raw, heat) = gradcam_on_tape(&tape, score, av, &[4, 4]).unwrap();
    assert!(raw.iter().all(|&v| v == 0.0));
    assert_eq!(heat, vec![0.0; 16]);
}

#[test]
fn resampling_and_normalisation() {
    assert_eq!(resample_linear(&[0.0, 1.0], &[2], &[4]).unwrap(), vec![0.0, 0.25, 0.75, 1.0]);
    let v: Vec<f64> = (0..24).map(|i| i as f64 * 0.1).collect();
    assert_eq!(resample_linear(&v, &[2, 3, 4], &[2, 3, 4]).unwrap(), v);
    let up = resample_linear(&[3.0; 8], &[2, 2, 2], &[5, 7, 3]).unwrap();
    assert!(up.len() == 105 && up.iter().all(|&x| (x - 3.0).abs() < 1e-12));
    // Separable: a ramp along one axis stays a ramp in that axis only.
    let ramp = resample_linear(&[0.0, 0.0, 1.0, 1.0], &[2, 2], &[4, 3]).unwrap();
    assert_eq!(&ramp[..3], &[0.0; 3]);
    assert_eq!(&ramp[9..], &[1.0; 3]);
    assert!(resample_linear(&[1.0], &[2], &[4]).is_err());

    assert_eq!(normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
    assert_eq!(normalize(&[2.0, 2.0]), vec![1.0, 1.0]);
    assert_eq!(normalize(&[1.0, 2.0, 3.0]), vec![0.0, 0.5, 1.0]);
}

#[test]
fn jet_ramp_and_blend_arithmetic() {
    for (p, c) in JET_STOPS {
        assert_eq!(jet(p), c);
    }
    assert_eq!(jet(-1.0), JET_STOPS[0].1);
    assert_eq!(jet(f32::NAN), JET_STOPS[0].1);
    assert_eq!(jet(2.0), JET_STOPS[5].1);

    // 2x2 case: hand-computed 0.6 * src + 0.4 * ramp(h).
    let src = [0.0f32, 0.5, 1.0, 0.25];
    let heat = [0.0f32, 0.5, 1.0, 0.25];
    let expect: [[f64; 3]; 4] = [[0.0, 0.0, 0.2], [0.5, 0.7, 0.5], [0.8, 0.6, 0.6], [0.15, 0.35, 0.55]];
    for i in 0..4 {
        let b = blend(src[i], heat[i]);
        for k in 0..3 {
            assert!((b[k] as f64 - expect[i][k]).abs() < 1e-6, "pixel {i} channel {k}: {b:?}");
        }
    }
    let rgb = overlay_rgb(&src, &heat).unwrap();
    // Bytes agree with the exact values up to f32 rounding at .5 boundaries.
    for (got, want) in rgb.iter().zip(expect.iter().flatten()) {
        assert!((*got as f64 - want * 255.0).abs() <= 0.5 + 1e-4, "{got} vs {}", want * 255.0);
    }
    assert!(overlay_rgb(&src, &heat[..3]).is_err());
}

fn heatmap(extents: Vec<usize>, values: Vec<f32>) -> Heatmap {
    Heatmap { values, extents, layer: "us.last_conv".into(), class_index: 1, sample_id: "p1".into() }
}

#[test]
fn overlays_and_index_files() {
    let dir = tempfile::tempdir().unwrap();
    let (rows, cols) = (3, 4);
    let src: Vec<f32> = (0..12).map(|i| i as f32 / 11.0).collect();
    let zero = heatmap(vec![rows, cols], vec![0.0; 12]);
    let entries = render_overlay(&zero, &src, dir.path(), &[]).unwrap();
    let kinds: Vec<&str> = entries.iter().map(|e| e.kind.as_str()).collect();
    assert_eq!(kinds, ["source", "overlay", "side_by_side"]);
    let grey = read_pnm(&dir.path().join(&entries[0].path)).unwrap();
    assert_eq!((grey.width, grey.height, grey.channels), (cols, rows, 1));
    let over = read_pnm(&dir.path().join(&entries[1].path)).unwrap();
    let tint = jet(0.0);
    for (i, &s) in src.iter().enumerate() {
        for k in 0..3 {
            let want = ((0.6 * s + 0.4 * tint[k]).clamp(0.0, 1.0) * 255.0).round() as u8;
            assert_eq!(over.data[i * 3 + k], want);
        }
    }
    let side = read_pnm(&dir.path().join(&entries[2].path)).unwrap();
    assert_eq!((side.width, side.height, side.channels), (2 * cols, rows, 3));
    for r in 0..rows {
        let row = &side.data[r * 2 * cols * 3..(r + 1) * 2 * cols * 3];
        for c in 0..cols {
            assert_eq!(row[c * 3..c * 3 + 3], [grey.data[r * cols + c]; 3]);
        }
        assert_eq!(&row[cols * 3..], &over.data[r * cols * 3..(r + 1) * cols * 3]);
    }

    // 3-D maps export the requested depths.
    let vol = Heatmap { extents: vec![2, 3, 4], values: (0..24).map(|i| i as f32 / 23.0).collect(), ..zero.clone() };
    let src3: Vec<f32> = vec![0.5; 24];
    let e3 = render_overlay(&vol, &src3, dir.path(), &representative_depths(4, 2)).unwrap();
    assert_eq!(e3.iter().map(|e| e.depth).collect::<Vec<_>>(), [Some(1), Some(1), Some(3), Some(3)]);
    let slice = read_pnm(&dir.path().join(&e3[1].path)).unwrap();
    assert_eq!((slice.width, slice.height), (3, 2));
    // Pixel (1, 2) at depth 1 is voxel 1*12 + 2*4 + 1 = 21.
    let expect = overlay_rgb(&[0.5], &[21.0 / 23.0]).unwrap();
    assert_eq!(&slice.data[15..18], &expect[..]);
    assert!(render_overlay(&vol, &src3, dir.path(), &[4]).is_err());
    assert_eq!(representative_depths(16, 3), vec![2, 8, 13]);

    write_index(dir.path(), &entries).unwrap();
    let back: Vec<IndexEntry> = serde_json::from_str(&std::fs::read_to_string(dir.path().join("index.json")).unwrap()).unwrap();
    assert_eq!(back, entries);
}

fn sample_input(kind: ModelKind, p: &ScaleProfile, seed: u64) -> Input {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
    };
    let [h, w, d] = p.mri_input;
    let [uh, uw] = p.us_input;
    Input {
        mri: kind.needs_mri().then(|| t(vec![1, 1, h, w, d])),
        us: kind.needs_us().then(|| t(vec![1, 3, uh, uw])),
    }
}

#[test]
fn model_heatmaps_are_bounded_and_shaped() {
    let p = ScaleProfile::micro();
    for kind in ModelKind::ALL {
        let model = Model::new(kind, p.clone(), 3).unwrap();
        let input = sample_input(kind, &p, 4);
        for class in [0, 1] {
            let maps = gradcam(&model, &input, class).unwrap();
            assert_eq!(maps.len(), default_layers(kind).len());
            for m in &maps {
                let want: Vec<usize> = if m.layer.starts_with("mri") { p.mri_input.to_vec() } else { p.us_input.to_vec() };
                assert_eq!(m.extents, want);
                assert_eq!(m.values.len(), want.iter().product::<usize>());
                assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)), "{kind} {}", m.layer);
                let max = m.values.iter().cloned().fold(0.0f32, f32::max);
                assert!(max == 1.0 || m.is_zero());
            }
        }
        assert!(gradcam(&model, &input, 2).is_err());
        assert!(gradcam_layers(&model, &input, 0, &["nope"]).is_err());
    }
    let model = Model::new(ModelKind::Us, p.clone(), 3).unwrap();
    let mut two = sample_input(ModelKind::Us, &p, 5);
    let one = two.us.clone().unwrap();
    two.us = Some(Tensor::concat(&[&one, &one], 0).unwrap());
    assert!(gradcam(&model, &two, 1).is_err());
}

/// Soft check: heat concentrates on planted blobs after a short training
/// run. Reported, not asserted.
#[test]
fn planted_signal_mass_ratio_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(80, 0.5, ScaleProfile::micro(), SignalMode::Redundant, 21);
    let (manifest, _) = generate_dataset(&spec, dir.path()).unwrap();
    let mut cfg = TrainConfig::defaults(ModelKind::Us, ScaleProfile::micro());
    cfg.epochs = 4;
    cfg.lr = 1e-3;
    let model = train(&cfg, &manifest, None).unwrap().model;
    let mut ratios = Vec::new();
    for i in (0..spec.n_pairs).filter(|&i| spec.label(i) == 1).take(20) {
        let pair = generate_pair(&spec, i).unwrap();
        let img = preprocess_us(&pair.image, spec.profile.us_input).unwrap();
        let input = Input { mri: None, us: Some(img.to_tensor().reshape(vec![1, 3, 56, 56]).unwrap()) };
        let map = gradcam(&model, &input, 1).unwrap().remove(0);
        let mask = signal_masks(&spec, i).unwrap().1.unwrap();
        if let Some(r) = map.mass_ratio(&mask) {
            ratios.push(r);
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    println!("gradcam planted-signal mass ratio: mean {mean:.3} over {} positives (target >= 1.5)", ratios.len());
}
