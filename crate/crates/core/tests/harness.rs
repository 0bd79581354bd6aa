use std::path::Path;

use pas_core::harness::train::{read_loss_log, Trainer};
use pas_core::harness::{evaluate, initial_checkpoint, synthesize_to_dir, train, Checkpoint, RunConfig};
use pas_core::metrics::PSNR_CAP;
use pas_core::world::{generate_dataset, Split};
use pas_core::Error;

fn small(root: &Path) -> RunConfig {
    let cfg = RunConfig {
        dataset: root.join("data"),
        num_samples: 12,
        yaws_deg: vec![-40.0, 0.0, 40.0],
        test_every: 3,
        frames: 4,
        batch_size: 2,
        pose_warmup_steps: 2,
        pose_batch_size: 3,
        pretrain_steps: 4,
        gan_steps: 6,
        output_dir: root.join("run"),
        checkpoint_every: 3,
        log_every: 3,
        ..Default::default()
    };
    cfg.validate().unwrap();
    cfg
}

fn with_data(root: &Path) -> RunConfig {
    let cfg = small(root);
    generate_dataset(&cfg.data_config(), false).unwrap();
    cfg
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path());
    let mut t = Trainer::new(initial_checkpoint(&cfg)).unwrap();
    t.step().unwrap();
    let bytes = t.state.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, t.state);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let path = dir.path().join("c.bin");
    back.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"garbage!").is_err());
}

#[test]
fn resume_reproduces_the_remaining_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path());
    let full = train(&cfg, None).unwrap();
    let full_log = read_loss_log(&cfg.output_dir.join("losses.csv")).unwrap();
    assert_eq!(full_log.len(), 12);
    assert_eq!(full_log[1].1, "pose_warmup");
    assert_eq!(full_log[2].1, "pretrain");
    assert_eq!(full_log[6].1, "adversarial");

    let cfg2 = RunConfig { output_dir: dir.path().join("run2"), pretrain_steps: 1, gan_steps: 0, ..cfg.clone() };
    train(&cfg2, None).unwrap();
    let cfg3 = RunConfig { output_dir: cfg2.output_dir.clone(), ..cfg.clone() };
    let resumed = train(&cfg3, Some(&cfg2.output_dir.join("checkpoint.bin"))).unwrap();
    let log = read_loss_log(&cfg3.output_dir.join("losses.csv")).unwrap();
    assert_eq!(log.len(), 12);
    for (a, b) in full_log.iter().zip(&log) {
        assert_eq!(a, b);
    }
    assert_eq!(resumed.generator, full.generator);
    assert_eq!(resumed.discriminator, full.discriminator);
}

#[test]
fn discriminator_is_frozen_during_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path());
    let init = initial_checkpoint(&cfg);
    let mut t = Trainer::new(init.clone()).unwrap();
    for _ in 0..cfg.gan_start() {
        let b = t.step().unwrap();
        assert_eq!(b.lambdas.adv, 0.0);
        assert_eq!(b.l_total, b.recompose());
    }
    assert_eq!(t.state.discriminator, init.discriminator);
    assert_ne!(t.state.generator, init.generator);
    let b = t.step().unwrap();
    assert_eq!(b.per_item.len(), 16);
    assert_eq!(b.l_total, b.recompose());
    assert_ne!(t.state.discriminator, init.discriminator);
}

#[test]
fn non_finite_loss_aborts_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path());
    let mut state = initial_checkpoint(&cfg);
    let b = state.generator.get("pose_head.1.b").unwrap().clone();
    state.generator.insert("pose_head.1.b", b.map(|_| f64::NAN));
    let before = state.generator.clone();
    let mut t = Trainer::new(state).unwrap();
    let err = t.step().unwrap_err();
    assert!(matches!(err, Error::NonFinite { step: 0, .. }));
    assert_eq!(err.exit_code(), 2);
    assert_eq!(t.state.step, 0);
    assert_eq!(t.state.generator.iter().count(), before.iter().count());
}

#[test]
fn invalid_dataset_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let err = train(&cfg, None).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(!cfg.output_dir.join("losses.csv").exists());

    let cfg = with_data(dir.path());
    let other = RunConfig { frames: 6, ..cfg };
    assert!(train(&other, None).is_err());
}

#[test]
fn evaluation_and_synthesis_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path());
    let ckpt = initial_checkpoint(&cfg);
    let eval = evaluate(&ckpt, &cfg.dataset, Split::Test).unwrap();
    assert!(eval.model.is_consistent() && eval.baseline.is_consistent());
    assert_eq!(eval.baseline.psnr_curve[0], PSNR_CAP);
    assert!(eval.model.transform_pose_mse.is_some());

    let sample = cfg.dataset.join(&eval.model.videos[0].id);
    let out = dir.path().join("synth");
    let (v, p) = synthesize_to_dir(&ckpt, &sample, &out).unwrap();
    assert_eq!(v.tensor().shape(), &[4, 3, 32, 32]);
    assert_eq!((p.len(), p.num_joints()), (4, 15));
    let bytes: Vec<Vec<u8>> = (0..4).map(|t| std::fs::read(out.join(format!("{t:04}.png"))).unwrap()).collect();
    let poses = std::fs::read(out.join("poses.json")).unwrap();
    synthesize_to_dir(&ckpt, &sample, &out).unwrap();
    for (t, b) in bytes.iter().enumerate() {
        assert_eq!(&std::fs::read(out.join(format!("{t:04}.png"))).unwrap(), b);
    }
    assert_eq!(std::fs::read(out.join("poses.json")).unwrap(), poses);
}
