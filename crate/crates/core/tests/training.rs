use attriforge::data::{proxy_samples, AugmentationConfig, Dataset, PROXY_ATTRIBUTE};
use attriforge::metrics::{evaluate_dataset, evaluate_with};
use attriforge::nn::{state_dict, Module};
use attriforge::trainer::{load_checkpoint, save_checkpoint, train, RunDir, TrainState, TrainingConfig};

fn config(total_steps: u64) -> TrainingConfig {
    TrainingConfig {
        network: "tiny".into(),
        batch_size: 4,
        d_steps_per_g_step: 2,
        total_steps,
        checkpoint_every: 2,
        keep_checkpoints: 2,
        seed: 17,
        ..TrainingConfig::default()
    }
}

fn state(total_steps: u64) -> TrainState {
    TrainState::new(config(total_steps), AugmentationConfig::for_size(64), PROXY_ATTRIBUTE).unwrap()
}

fn dataset() -> Dataset {
    Dataset { attribute: PROXY_ATTRIBUTE.into(), samples: proxy_samples(10, 64, 3) }
}

fn same_weights(a: &dyn Module, b: &dyn Module) -> bool {
    let (x, y) = (state_dict(a), state_dict(b));
    x.len() == y.len() && x.iter().zip(&y).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.bit_eq(t2))
}

#[test]
fn zero_steps_leaves_the_state_unchanged() {
    let mut s = state(0);
    let before = state(0);
    let reports = train(&mut s, &dataset(), None, |_| {}).unwrap();
    assert!(reports.is_empty());
    assert_eq!(s.step, 0);
    assert!(same_weights(&s.generator, &before.generator));
    assert!(same_weights(&s.discriminator, &before.discriminator));
}

#[test]
fn resumed_runs_match_uninterrupted_runs() {
    let ds = dataset();
    let dir = tempfile::tempdir().unwrap();

    let straight_dir = RunDir(dir.path().join("straight"));
    let mut straight = state(5);
    train(&mut straight, &ds, Some(&straight_dir), |_| {}).unwrap();

    let split_dir = RunDir(dir.path().join("split"));
    let mut first = state(3);
    train(&mut first, &ds, Some(&split_dir), |_| {}).unwrap();
    let mut resumed = load_checkpoint(&split_dir.final_checkpoint()).unwrap();
    resumed.config.total_steps = 5;
    train(&mut resumed, &ds, Some(&split_dir), |_| {}).unwrap();

    assert!(same_weights(&straight.generator, &resumed.generator));
    assert!(same_weights(&straight.discriminator, &resumed.discriminator));
    let a = std::fs::read_to_string(straight_dir.loss_log()).unwrap();
    let b = std::fs::read_to_string(split_dir.loss_log()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 6);
    // Cadence 2, keep 2: steps 2 and 4 survive in the straight run.
    let kept = straight_dir.periodic_checkpoints().unwrap();
    assert_eq!(kept, vec![straight_dir.checkpoint(2), straight_dir.checkpoint(4)]);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut s = state(2);
    train(&mut s, &dataset(), None, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&s, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert!(same_weights(&s.generator, &back.generator));
    assert!(same_weights(&s.discriminator, &back.discriminator));
    assert_eq!(back.step, 2);
    assert_eq!(back.counters, s.counters);
    assert_eq!(back.config, s.config);
}

#[test]
fn single_sample_report_equals_its_aggregate() {
    let s = state(0);
    let samples = proxy_samples(1, 64, 8);
    let r = evaluate_dataset(&s.generator, &samples, &["only".into()]).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert_eq!(r.rows[0].1, r.mean);
}

#[test]
fn identity_editor_scores_infinite_psnr() {
    let samples = proxy_samples(3, 64, 8);
    let r = evaluate_with(&samples, &[], |x, _| Ok(x.clone())).unwrap();
    assert!(r.mean.psnr.is_infinite());
    assert_eq!(r.mean.mse, 0.0);
    assert_eq!(r.mean.ssim, 1.0);
    assert!(r.to_csv().contains("inf"));
}
