use shapejig::autodiff::ParamGroup;
use shapejig::diversify::DiversifierConfig;
use shapejig::jigsaw::{decompose, recompose, shuffle_tiles, PermutationSet};
use shapejig::synth::{build_dataset, build_pool, SampleRecord, SynthConfig};
use shapejig::train::{
    compose_batch, metrics_csv, ordered_count, parse_metrics_csv, train, BatchKey, Checkpoint, TrainConfig, TrainData,
    Trainer, CHECKPOINT_FILE, METRICS_FILE, TIMING_FILE,
};
use shapejig::Error;

fn tiny_data(seed: u64, n_per_class: usize, perms: usize) -> TrainData {
    let scfg = SynthConfig {
        image_size: 24,
        n_per_class,
        cue_conflict: 30,
        pool_size: 12,
        ..SynthConfig::default()
    };
    let ds = build_dataset(&scfg, seed).unwrap();
    TrainData {
        classes: scfg.classes,
        train: ds.train,
        val: ds.val,
        target: ds.target,
        cue_conflict: ds.cue_conflict,
        pool: build_pool(&scfg, seed).unwrap(),
        permset: PermutationSet::generate(3, perms, 0).unwrap(),
        coder: None,
    }
}

fn tiny_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::with_paths("unused", "unused");
    cfg.conv_widths = vec![4, 8];
    cfg.batch_size = 16;
    cfg.epochs = 3;
    cfg.lr = 0.01;
    cfg
}

fn refs(records: &[SampleRecord]) -> Vec<&SampleRecord> {
    records.iter().collect()
}

const KEY: BatchKey = BatchKey {
    seed: 3,
    epoch: 0,
    first_index: 0,
};

#[test]
fn batch_split_follows_beta() {
    let data = tiny_data(0, 25, 30);
    let recs = refs(&data.train[..128]);
    let d = DiversifierConfig::default();
    let b = compose_batch(&recs, &data.permset, 0.5, &d, &data.pool, None, KEY).unwrap();
    assert_eq!((b.items.ordered_count(), b.items.shuffled_count()), (64, 64));
    assert_eq!(b.decisions.len(), 64);
    assert!(b.items.perm_labels[..64].iter().all(|&p| p == 0));
    assert!(b.items.perm_labels[64..].iter().all(|&p| (1..30).contains(&p)));
    // ordered images pass through untouched
    for (i, r) in recs[..64].iter().enumerate() {
        assert_eq!(b.items.images.index0(i).unwrap(), r.image);
        assert_eq!(b.items.class_labels[i], r.shape_label);
    }
    let b = compose_batch(&recs[..64], &data.permset, 0.6, &d, &data.pool, None, KEY).unwrap();
    assert_eq!(b.items.ordered_count(), ordered_count(0.6, 64));
}

#[test]
fn beta_one_means_no_shuffling_or_diversification() {
    let data = tiny_data(0, 5, 30);
    let recs = refs(&data.train[..20]);
    let d = DiversifierConfig {
        rho: 1.0,
        ..DiversifierConfig::default()
    };
    let b = compose_batch(&recs, &data.permset, 1.0, &d, &data.pool, None, KEY).unwrap();
    assert_eq!(b.items.shuffled_count(), 0);
    assert!(b.decisions.is_empty());
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(b.items.images.index0(i).unwrap(), r.image);
    }
}

#[test]
fn beta_rounding_to_zero_is_an_error() {
    let data = tiny_data(0, 5, 30);
    let recs = refs(&data.train[..4]);
    let d = DiversifierConfig::default();
    assert!(compose_batch(&recs, &data.permset, 0.1, &d, &data.pool, None, KEY).is_err());
    assert!(compose_batch(&[], &data.permset, 0.5, &d, &data.pool, None, KEY).is_err());
}

#[test]
fn rho_zero_matches_undiversified_pipeline() {
    let data = tiny_data(1, 5, 30);
    let recs = refs(&data.train[..20]);
    let d = DiversifierConfig {
        rho: 0.0,
        ..DiversifierConfig::default()
    };
    let b = compose_batch(&recs, &data.permset, 0.5, &d, &data.pool, None, KEY).unwrap();
    assert!(b.decisions.iter().all(|x| !x.hit));
    for i in 10..20 {
        let perm = data.permset.get(b.items.perm_labels[i]);
        let plain = recompose(&shuffle_tiles(&decompose(&recs[i].image, 3).unwrap(), perm).unwrap()).unwrap();
        let got = b.items.images.index0(i).unwrap();
        assert!(got
            .data()
            .iter()
            .zip(plain.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn diversification_frequency_over_an_epoch() {
    let data = tiny_data(2, 50, 30);
    let recs = refs(&data.train);
    let rho = 0.5;
    let d = DiversifierConfig {
        rho,
        ..DiversifierConfig::default()
    };
    let (mut hits, mut total) = (0usize, 0usize);
    for (b, chunk) in recs.chunks(32).enumerate() {
        let key = BatchKey {
            seed: 9,
            epoch: 0,
            first_index: b * 32,
        };
        let c = compose_batch(chunk, &data.permset, 0.25, &d, &data.pool, None, key).unwrap();
        hits += c.diversified();
        total += c.decisions.len();
        for dec in c.decisions.iter().filter(|d| d.hit) {
            assert_eq!(dec.tiles.len(), 9);
            assert!(dec.tiles.iter().all(|t| (0.75..=1.0).contains(&t.gamma)));
        }
    }
    let n = total as f64;
    let sigma = (rho * (1.0 - rho) / n).sqrt();
    let frac = hits as f64 / n;
    assert!((frac - rho).abs() <= 3.0 * sigma, "{frac} over {total}");
}

#[test]
fn alpha_zero_leaves_jigsaw_head_untouched() {
    let data = tiny_data(3, 8, 30);
    let mut cfg = tiny_cfg();
    cfg.alpha = 0.0;
    cfg.diversifier.rho = 0.0;
    cfg.epochs = 2;
    let mut t = Trainer::new(&cfg, &data).unwrap();
    let before = t.params().value("j.w").unwrap().clone();
    let mut steps = 0;
    while !t.is_done() {
        t.run_epoch(&mut |v| {
            steps += 1;
            for p in v.params.iter().filter(|p| p.group == ParamGroup::Jigsaw) {
                assert!(p.grad.data().iter().all(|&g| g == 0.0), "{} at step {steps}", p.name);
            }
        })
        .unwrap();
    }
    assert!(steps > 0);
    // only weight decay moves the head
    let after = t.params().value("j.w").unwrap();
    for (a, b) in before.data().iter().zip(after.data()) {
        assert!(b.abs() <= a.abs());
    }
}

#[test]
fn identical_runs_give_identical_metrics() {
    let data = tiny_data(4, 6, 30);
    let cfg = tiny_cfg();
    let a = train(&cfg, &data, None, None, &mut |_, _| {}).unwrap();
    let b = train(&cfg, &data, None, None, &mut |_, _| {}).unwrap();
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.params, b.params);
    assert_eq!(parse_metrics_csv(&metrics_csv(&a.metrics)).unwrap(), a.metrics);
    assert!(a.metrics.iter().all(|r| r.shuffled > 0));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = tiny_data(5, 6, 30);
    let mut cfg = tiny_cfg();
    cfg.epochs = 4;
    let dir = tempfile::tempdir().unwrap();
    let full = train(&cfg, &data, Some(dir.path()), None, &mut |_, _| {}).unwrap();
    let full_csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(full_csv.lines().count(), 5);
    assert_eq!(
        std::fs::read_to_string(dir.path().join(TIMING_FILE))
            .unwrap()
            .lines()
            .count(),
        5
    );

    let mut t = Trainer::new(&cfg, &data).unwrap();
    t.run_epoch(&mut |_| {}).unwrap();
    t.run_epoch(&mut |_| {}).unwrap();
    let path = dir.path().join("mid.bin");
    t.checkpoint().save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap();
    assert_eq!(restored, t.checkpoint());
    for (a, b) in restored.params.iter().zip(t.params().iter()) {
        assert!(a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let dir2 = tempfile::tempdir().unwrap();
    let resumed = train(&cfg, &data, Some(dir2.path()), Some(restored), &mut |_, _| {}).unwrap();
    assert_eq!(resumed.params, full.params);
    assert_eq!(
        std::fs::read_to_string(dir2.path().join(METRICS_FILE)).unwrap(),
        full_csv
    );
    let last = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(last.epoch, 4);
    assert_eq!(last.params, full.params);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let data = tiny_data(5, 6, 30);
    let t = Trainer::new(&tiny_cfg(), &data).unwrap();
    let bytes = t.checkpoint().to_bytes().unwrap();
    for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes("t", &bytes[..cut]), Err(Error::Checksum(_))),
            "cut {cut}"
        );
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 3] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes("t", &flipped), Err(Error::Checksum(_))));
    assert!(Checkpoint::from_bytes("t", &bytes).is_ok());
}

#[test]
fn resume_with_other_seed_is_rejected() {
    let data = tiny_data(5, 6, 30);
    let cfg = tiny_cfg();
    let ck = Trainer::new(&cfg, &data).unwrap().checkpoint();
    let mut other = cfg.clone();
    other.seed = 99;
    assert!(Trainer::resume(&other, &data, ck).is_err());
}

#[test]
fn exploding_learning_rate_reports_position() {
    let data = tiny_data(6, 6, 30);
    let mut cfg = tiny_cfg();
    cfg.lr = 1e300;
    cfg.weight_decay = 0.0;
    match train(&cfg, &data, None, None, &mut |_, _| {}) {
        Err(Error::Diverged { epoch, batch }) => assert!(epoch < cfg.epochs && batch < 5, "{epoch} {batch}"),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.metrics)),
    }
}

#[test]
fn loss_decreases_on_a_sanity_set() {
    // 200 images, five epochs.
    let mut data = tiny_data(7, 19, 30);
    data.train.truncate(200);
    let mut cfg = tiny_cfg();
    cfg.epochs = 5;
    cfg.batch_size = 20;
    let out = train(&cfg, &data, None, None, &mut |_, _| {}).unwrap();
    let total = |r: &shapejig::train::MetricsRow| r.class_loss + cfg.alpha * r.jigsaw_loss;
    let first = total(&out.metrics[0]);
    let last = total(out.metrics.last().unwrap());
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn pretext_task_is_learned() {
    let data = tiny_data(8, 40, 10);
    let mut cfg = tiny_cfg();
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.beta = 0.4;
    let out = train(&cfg, &data, None, None, &mut |_, _| {}).unwrap();
    let acc = out.metrics.last().unwrap().jigsaw_accuracy;
    assert!(acc > 1.0 / 10.0, "jigsaw accuracy {acc}");
}
