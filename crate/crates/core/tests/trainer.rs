use std::path::Path;

use mmfuse_core::datapipe::SampleManifest;
use mmfuse_core::models::{load_checkpoint, ModelKind, ScaleProfile};
use mmfuse_core::ndcore::{ParamStore, Tape, Tensor};
use mmfuse_core::reference;
use mmfuse_core::synthgen::{generate_dataset, SignalMode, SynthSpec};
use mmfuse_core::trainer::data::{batch_ranges, ensure_split};
use mmfuse_core::trainer::train::{accuracy, build_model, Criterion};
use mmfuse_core::trainer::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn synth(dir: &Path, n: usize, seed: u64) -> SampleManifest {
    let spec = SynthSpec::new(n, 0.5, ScaleProfile::micro(), SignalMode::Redundant, seed);
    generate_dataset(&spec, dir).unwrap().0
}

fn quick(kind: ModelKind, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::defaults(kind, ScaleProfile::micro());
    c.lr = 1e-3;
    c.epochs = epochs;
    c.scheduler = None;
    c.augment = false;
    c.split_ratios = [0.6, 0.2, 0.2];
    c
}

fn load(m: &SampleManifest, c: &TrainConfig) -> Datasets {
    let m = ensure_split(m, c.split_ratios, c.split_seed).unwrap();
    Datasets::load(&m, c.model, &c.effective_profile()).unwrap()
}

#[test]
fn adam_matches_scalar_reference() {
    let cfg = AdamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (w, g) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
        let (m, v) = (rng.random_range(-0.5..0.5), rng.random_range(0.0..0.5));
        let t = rng.random_range(1..200u32);
        let lr = rng.random_range(1e-5..1e-2);
        let (w1, m1, v1) = reference::adam_scalar(w, g, m, v, t, lr, cfg.beta1, cfg.beta2, cfg.eps);
        let (mut ws, mut ms, mut vs) = ([w], [m], [v]);
        adam_update(&mut ws, &[g], &mut ms, &mut vs, t as u64, lr, &cfg).unwrap();
        assert!((ws[0] - w1).abs() <= 1e-9, "w {} vs {}", ws[0], w1);
        assert!((ms[0] - m1).abs() <= 1e-9 && (vs[0] - v1).abs() <= 1e-9);
    }
}

#[test]
fn adam_small_cases() {
    let cfg = AdamConfig::default();
    let (mut w, mut m, mut v) = ([0.0f64], [0.0], [0.0]);
    adam_update(&mut w, &[1.0], &mut m, &mut v, 1, 1e-3, &cfg).unwrap();
    // Bias correction makes the first step lr * g / (|g| + eps).
    assert!((w[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    assert!((m[0] - 0.1).abs() < 1e-15 && (v[0] - 0.001).abs() < 1e-15);

    let (mut w, mut m, mut v) = ([0.7f64], [0.0], [0.0]);
    adam_update(&mut w, &[0.0], &mut m, &mut v, 1, 1e-3, &cfg).unwrap();
    assert_eq!((w[0], m[0], v[0]), (0.7, 0.0, 0.0));
    assert!(adam_update(&mut w, &[0.0, 1.0], &mut m, &mut v, 1, 1e-3, &cfg).is_err());
}

#[test]
fn adam_skips_unreached_parameters() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let a = store.insert("a", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()).unwrap();
    let b = store.insert("b", Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()).unwrap();
    let mut adam: Adam<f64> = Adam::new(AdamConfig::default());
    for _ in 0..3 {
        let grads = {
            let mut tape = Tape::with_params(&store);
            let pa = tape.param(a);
            let loss = tape.sum(pa);
            tape.backward(loss).unwrap()
        };
        adam.step(&mut store, &grads, 0.1).unwrap();
    }
    assert_eq!(store.get(b).data(), &[3.0, 4.0]);
    assert!(adam.moments(b).is_none());
    assert_eq!(adam.moments(a).unwrap().2, 3);
    // Constant unit gradient: every bias-corrected step is lr / (1 + eps).
    let expect = 1.0 - 3.0 * 0.1 / (1.0 + 1e-8);
    assert!((store.get(a).data()[0] - expect).abs() < 1e-12);
}

#[test]
fn plateau_scheduler_trace() {
    let mut s = PlateauScheduler::new(SchedulerConfig::default(), 1e-4);
    let mut lrs = vec![s.step(1.0)];
    for _ in 0..10 {
        lrs.push(s.step(1.0));
    }
    assert!(lrs[..10].iter().all(|&l| l == 1e-4), "{lrs:?}");
    assert!((lrs[10] - 1e-5).abs() < 1e-18);
    // Progress smaller than the threshold still counts as a bad epoch.
    let mut s = PlateauScheduler::new(SchedulerConfig { patience: 2, ..Default::default() }, 1e-3);
    s.step(1.0);
    s.step(1.0 - 5e-5);
    assert!((s.step(1.0 - 9e-5) - 1e-4).abs() < 1e-15);
    // Improvements reset the count.
    let mut s = PlateauScheduler::new(SchedulerConfig { patience: 2, ..Default::default() }, 1e-3);
    for loss in [1.0, 1.0, 0.5, 0.5, 0.2] {
        assert_eq!(s.step(loss), 1e-3);
    }
    // Floored at min_lr.
    let cfg = SchedulerConfig { patience: 1, min_lr: 1e-6, ..Default::default() };
    let mut s = PlateauScheduler::new(cfg, 1e-4);
    let last = (0..20).map(|_| s.step(1.0)).last().unwrap();
    assert_eq!(last, 1e-6);
}

proptest! {
    #[test]
    fn best_index_is_earliest_max(v in prop::collection::vec(0u8..5, 0..30)) {
        let f: Vec<f64> = v.iter().map(|&x| x as f64 / 4.0).collect();
        match best_index(&f) {
            None => prop_assert!(f.is_empty()),
            Some(i) => {
                prop_assert!(f.iter().all(|&x| x <= f[i]));
                prop_assert!(f[..i].iter().all(|&x| x < f[i]));
            }
        }
    }

    #[test]
    fn batches_cover_without_singletons(n in 1usize..200, size in 2usize..20) {
        let r = batch_ranges(n, size);
        prop_assert_eq!(r.first().unwrap().start, 0);
        prop_assert_eq!(r.last().unwrap().end, n);
        for w in r.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        if n > 1 {
            prop_assert!(r.iter().all(|b| b.len() >= 2));
        }
        prop_assert!(r.iter().all(|b| b.len() <= size + 1));
    }
}

#[test]
fn config_defaults_and_overrides() {
    let c = TrainConfig::from_value(&json!({"model": "us", "lr": 5e-4, "scheduler": {"factor": 0.5, "patience": 3, "min_lr": 1e-8}})).unwrap();
    assert_eq!(c.lr, 5e-4);
    assert_eq!(c.epochs, 200);
    assert_eq!(c.label_smoothing, Some(0.1));
    assert!(c.class_weights && !c.oversample);
    assert_eq!(c.scheduler.unwrap().patience, 3);
    assert_eq!(c.profile, ScaleProfile::micro());

    let f = TrainConfig::from_value(&json!({"model": "fusion", "profile": "micro"})).unwrap();
    assert!(f.scheduler.is_none() && !f.augment && f.label_smoothing.is_none());
    assert_eq!(f.split_ratios, [0.6, 0.15, 0.25]);
    let m = TrainConfig::defaults(ModelKind::Mri, ScaleProfile::micro());
    assert!(m.oversample && !m.class_weights && m.augment);
    assert_eq!((m.lr, m.batch_size, m.epochs), (1e-4, 8, 100));

    for bad in [
        json!({"lr": 1e-3}),
        json!({"model": "us", "learning_rate": 1e-3}),
        json!({"model": "us", "lr": -1.0}),
        json!({"model": "us", "batch_size": 0}),
        json!({"model": "mri", "warm_start": {"mri": "a.ndc"}}),
        json!({"model": "us", "profile": "huge"}),
    ] {
        assert!(TrainConfig::from_value(&bad).is_err(), "{bad}");
    }

    let p = ProtocolConfig::from_value(&json!({"runs": 3, "seed": 9, "us": {"epochs": 4}, "fusion": {"seed": 2}})).unwrap();
    assert_eq!(p.runs, 3);
    assert!(p.warm_start);
    assert_eq!((p.mri.seed, p.us.seed, p.fusion.seed), (9, 9, 2));
    assert_eq!((p.us.epochs, p.mri.epochs), (4, 100));
    assert!(ProtocolConfig::from_value(&json!({"us": {"model": "mri"}})).is_err());
    assert!(ProtocolConfig::from_value(&json!({"runs": 0})).is_err());
    assert!(ProtocolConfig::from_value(&json!({"extra": 1})).is_err());
}

#[test]
fn training_progress_checkpoint_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 40, 3);
    let cfg = quick(ModelKind::Us, 5);
    let data = load(&manifest, &cfg);
    let out = tmp.path().join("run");
    let a = train_on(&cfg, &data, Some(&out), &[]).unwrap();
    let r = &a.record;
    assert_eq!(r.epochs.len(), 5);
    assert!(r.epochs[4].train_loss < r.epochs[0].train_loss, "{:?}", r.epochs);
    assert!(r.epochs.iter().all(|e| e.lr == cfg.lr));
    assert_eq!(r.best_epoch, best_index(&r.val_accuracy()).unwrap() + 1);
    assert_eq!(r.test_patients.len(), data.test.len());
    assert!(r.test.is_some());
    assert!(out.join("epochs.csv").exists() && out.join("run_record.json").exists());

    // The checkpoint holds the best epoch and reproduces its validation accuracy.
    let (restored, meta) = load_checkpoint(&out.join(r.checkpoint.as_ref().unwrap())).unwrap();
    assert_eq!(meta.epoch, r.best_epoch);
    assert_eq!(meta.validation_accuracy, r.val_accuracy()[..r.best_epoch].to_vec());
    let criterion = Criterion::new(&cfg, &data.train).unwrap();
    let (scores, _) = evaluate(&restored, &data.val, &criterion, cfg.batch_size).unwrap();
    assert_eq!(accuracy(&data.val, &scores), r.best_val_accuracy);
    let (returned, _) = evaluate(&a.model, &data.val, &criterion, cfg.batch_size).unwrap();
    assert_eq!(scores, returned);

    let b = train_on(&cfg, &data, None, &[]).unwrap();
    assert_eq!(a.record.epochs, b.record.epochs);
    assert_eq!(a.record.test_scores, b.record.test_scores);
    let c = train_on(&TrainConfig { seed: cfg.seed + 1, ..cfg.clone() }, &data, None, &[]).unwrap();
    assert_ne!(a.record.epochs, c.record.epochs);
}

#[test]
fn scheduler_and_oversampling_in_the_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(30, 0.3, ScaleProfile::micro(), SignalMode::Redundant, 4);
    let manifest = generate_dataset(&spec, tmp.path()).unwrap().0;
    let mut cfg = quick(ModelKind::Us, 4);
    cfg.lr = 1e-2;
    cfg.scheduler = Some(SchedulerConfig { patience: 1, threshold: 1e9, ..Default::default() });
    cfg.oversample = true;
    cfg.augment = true;
    let data = load(&manifest, &cfg);
    let r = train_on(&cfg, &data, None, &[]).unwrap().record;
    let lrs: Vec<f64> = r.epochs.iter().map(|e| e.lr).collect();
    // The first epoch always improves on the initial infinite best.
    assert_eq!(lrs[..2], [1e-2, 1e-2]);
    assert!((lrs[2] - 1e-3).abs() < 1e-15 && (lrs[3] - 1e-4).abs() < 1e-15, "{lrs:?}");
}

#[test]
fn training_rejects_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), 20, 5);
    let cfg = quick(ModelKind::Us, 1);
    let data = load(&manifest, &cfg);
    let wrong = TrainConfig { model: ModelKind::Mri, ..quick(ModelKind::Mri, 1) };
    assert!(train_on(&wrong, &data, None, &[]).is_err());
    let empty = Datasets { val: vec![], ..data.clone() };
    assert!(train_on(&cfg, &empty, None, &[]).is_err());
    let diverge = TrainConfig { lr: 1e30, epochs: 3, ..cfg.clone() };
    match train_on(&diverge, &data, None, &[]) {
        Err(mmfuse_core::error::Error::NonFinite { .. }) | Ok(_) => {}
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn fusion_warm_start_then_all_weights_train() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), 24, 6);
    let mri_cfg = quick(ModelKind::Mri, 1);
    let us_cfg = quick(ModelKind::Us, 1);
    let fusion_cfg = quick(ModelKind::Fusion, 2);
    let mri = train_on(&mri_cfg, &load(&manifest, &mri_cfg), Some(&tmp.path().join("mri")), &[]).unwrap();
    let us = train_on(&us_cfg, &load(&manifest, &us_cfg), Some(&tmp.path().join("us")), &[]).unwrap();
    assert_eq!(us.record.checkpoint.as_deref(), Some(Path::new("best.ndc")));

    let fresh = build_model(&fusion_cfg, &[]).unwrap();
    let warm = build_model(&fusion_cfg, &[&mri.model, &us.model]).unwrap();
    let by_path = build_model(
        &TrainConfig {
            warm_start: WarmStart { mri: Some(tmp.path().join("mri/best.ndc")), us: Some(tmp.path().join("us/best.ndc")) },
            ..fusion_cfg.clone()
        },
        &[],
    )
    .unwrap();
    let shared = ["mri.dense.stem.conv.weight", "mri.vit.pos_embed", "us.resnet.stem.conv.weight"];
    for name in shared {
        let src = if name.starts_with("us") { &us.model } else { &mri.model };
        assert_eq!(warm.params.by_name(name), src.params.by_name(name), "{name}");
        assert_eq!(by_path.params.by_name(name), src.params.by_name(name), "{name}");
        assert_ne!(fresh.params.by_name(name), src.params.by_name(name), "{name}");
    }
    assert_eq!(warm.params.by_name("fusion.head.fc1.weight"), fresh.params.by_name("fusion.head.fc1.weight"));

    let fusion_data = load(&manifest, &fusion_cfg);
    let trained = train_on(&fusion_cfg, &fusion_data, None, &[&mri.model, &us.model]).unwrap();
    for name in shared.iter().chain(&["fusion.head.fc1.weight"]) {
        assert_ne!(trained.model.params.by_name(name), warm.params.by_name(name), "{name} did not train");
    }
    assert_eq!(trained.record.epochs.len(), 2);
}

#[test]
fn multi_run_seeds_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 30, 7);
    let cfg = quick(ModelKind::Us, 2);
    let data = load(&manifest, &cfg);
    let one = multi_run(&cfg, &data, 1, None).unwrap();
    assert!(one.summary.metrics.iter().all(|m| m.std == 0.0 && m.best == m.mean));
    let out = tmp.path().join("multi");
    let three = multi_run(&cfg, &data, 3, Some(&out)).unwrap();
    let seeds: Vec<u64> = three.records.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![cfg.seed, cfg.seed + 1, cfg.seed + 2]);
    assert_eq!(three.records[0].epochs, one.records[0].epochs);
    let acc: Vec<f64> = three.records.iter().map(|r| r.test.as_ref().unwrap().accuracy).collect();
    let s = three.summary.metric("accuracy").unwrap();
    let mean = acc.iter().sum::<f64>() / 3.0;
    let sd = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((s.mean - mean).abs() < 1e-12 && (s.std - sd).abs() < 1e-12);
    assert_eq!(s.best, acc.iter().cloned().fold(f64::MIN, f64::max));
    assert!(out.join("summary.csv").exists() && out.join("run2").join("best.ndc").exists());
    assert!(multi_run(&cfg, &data, 0, None).is_err());
}

#[test]
fn comparative_protocol_uses_one_paired_test_set() {
    let tmp = tempfile::tempdir().unwrap();
    let uni = synth(&tmp.path().join("uni"), 30, 8);
    let paired = synth(&tmp.path().join("paired"), 24, 9);
    let mut cfg = ProtocolConfig::defaults(ScaleProfile::micro());
    cfg.runs = 2;
    cfg.mri = quick(ModelKind::Mri, 1);
    cfg.us = quick(ModelKind::Us, 1);
    cfg.fusion = quick(ModelKind::Fusion, 1);
    let manifests = ProtocolManifests { mri: &uni, us: &uni, paired: &paired };
    let out = tmp.path().join("cmp");
    let r = comparative_protocol(&cfg, &manifests, Some(&out)).unwrap();
    let n_test = r.test_patients.len();
    assert!(n_test > 0);
    for kind in ModelKind::ALL {
        assert_eq!(r.shared_test[&kind].len(), 2);
        assert!(r.shared_test[&kind].iter().all(|m| m.n == n_test));
        assert_eq!(r.records[&kind].len(), 2);
    }
    assert_eq!(r.shared_test[&ModelKind::Fusion][0], *r.records[&ModelKind::Fusion][0].test.as_ref().unwrap());
    assert_eq!(r.comparison.metrics.len(), 5);
    assert_eq!(r.comparison.models, vec!["fusion", "mri", "us"]);
    for f in ["comparison.json", "comparison.csv", "summary.csv", "roc_run0.svg", "run1/fusion/best.ndc"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let unpaired = SampleManifest { pairing: vec![], ..paired.clone() };
    let bad = ProtocolManifests { mri: &uni, us: &uni, paired: &unpaired };
    assert!(comparative_protocol(&cfg, &bad, None).is_err());
}
