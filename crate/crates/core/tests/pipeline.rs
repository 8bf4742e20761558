use signseq::data::{load_dataset, split_train_val, synth_generate, write_dataset, SynthConfig};
use signseq::eval::evaluate;
use signseq::models::{build, tiny_config, Arch, Model};
use signseq::nn::Mode;
use signseq::training::{fit, load_checkpoint, EarlyStopPolicy, TrainConfig};

fn toy() -> SynthConfig {
    SynthConfig {
        num_classes: 3,
        samples_per_class: 8,
        frames: 6,
        features: 8,
        seed: 5,
        ..SynthConfig::default()
    }
}

fn quick(arch: Arch, dir: &std::path::Path) -> TrainConfig {
    let mut tc = TrainConfig::for_arch(arch);
    tc.epochs = 4;
    tc.batch_size = 8;
    tc.lr_start = 1e-3;
    tc.early_stop = EarlyStopPolicy::Off;
    tc.checkpoint_path = Some(dir.join(format!("{arch}-best.ckpt")));
    tc.log_path = Some(dir.join(format!("{arch}-log.csv")));
    tc
}

#[test]
fn disk_dataset_trains_and_checkpoint_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(&toy()).unwrap();
    let manifest = write_dataset(&ds, &dir.path().join("data")).unwrap();
    let ds = load_dataset(&manifest).unwrap();
    let (train, val) = split_train_val(&ds, 0.25, 1).unwrap();
    for arch in [Arch::Lstm, Arch::CnnTrans] {
        let model: Model<f32> = build(&tiny_config(arch), 3).unwrap();
        let tc = quick(arch, dir.path());
        let out = fit(model, &train, &val, &tc).unwrap();
        assert_eq!(out.history.len(), 4);
        assert_eq!(out.best.mode(), Mode::Infer);

        let log = std::fs::read_to_string(tc.log_path.as_ref().unwrap()).unwrap();
        assert_eq!(log.lines().count(), 5);

        let saved = load_checkpoint(tc.checkpoint_path.as_ref().unwrap()).unwrap();
        assert_eq!(saved.class_names, ds.class_names);
        assert_eq!(saved.model.params(), out.best.params());
        let a = evaluate(&saved.model, &val, 4).unwrap();
        let b = evaluate(&out.best, &val, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total(), val.len());
    }
}

#[test]
fn seeds_decide_everything() {
    let ds = synth_generate(&toy()).unwrap();
    let (train, val) = split_train_val(&ds, 0.25, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: u64| {
        let mut tc = quick(Arch::CnnTrans, dir.path());
        tc.seed = seed;
        tc.checkpoint_path = None;
        tc.log_path = None;
        let model: Model<f32> = build(&tiny_config(Arch::CnnTrans), seed).unwrap();
        fit(model, &train, &val, &tc).unwrap().last
    };
    assert_eq!(run(7).params(), run(7).params());
    assert_ne!(run(7).params(), run(8).params());
}
