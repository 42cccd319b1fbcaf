use std::path::Path;

use hvm_core::numcore::read_checkpoint;
use hvm_core::par::Exec;
use hvm_core::stmae::{ModelConfig, PatchGeometry, TransformerDims};
use hvm_core::synth::{synthgen, Split, SynthSpec, SynthTask};
use hvm_core::trainloop::{
    finetune, pretrain, resume_pretrain, FinetuneData, FinetuneInit, FinetuneOptions, LoopOptions, PretrainData,
    PretrainOptions, RunRecord, Schedule, TrainError,
};

fn tiny() -> ModelConfig {
    ModelConfig {
        geometry: PatchGeometry::new((4, 12, 12, 3), (2, 4, 4)).unwrap(),
        encoder: TransformerDims { dim: 16, depth: 1, heads: 2 },
        decoder: TransformerDims { dim: 8, depth: 1, heads: 2 },
        mlp_ratio: 2,
        mask_ratio: 0.5,
        norm_pix: true,
        n_classes: None,
    }
}

fn data(dir: &Path, n: usize, task: SynthTask) -> hvm_core::synth::SynthOutput {
    let spec = SynthSpec {
        frames: 4,
        size: 12,
        ..SynthSpec::new(task, n, 3)
    };
    synthgen(&spec, dir).unwrap()
}

fn opts(schedule: &str, exec: Exec) -> PretrainOptions {
    let mut looping = LoopOptions::new(schedule.parse().unwrap(), 11);
    looping.exec = exec;
    let mut o = PretrainOptions::new(tiny(), looping);
    o.batch_size = 4;
    o
}

fn bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = data(&dir.path().join("data"), 8, SynthTask::MovingShapeDirection);
    let d = PretrainData::from_manifest(&out.manifest).unwrap();

    let straight = opts("2@1e-3,2@1e-4", Exec::Sequential);
    let (rec_a, _) = pretrain(&straight, &d, &dir.path().join("a")).unwrap();

    let mut first = straight.clone();
    first.looping.stop_after = Some(1);
    pretrain(&first, &d, &dir.path().join("b")).unwrap();
    let partial = dir.path().join("b/partial-e1.ckpt");
    assert!(partial.exists());
    let (rec_b, _) = resume_pretrain(&partial, &straight, &d, &dir.path().join("b")).unwrap();

    assert_eq!(rec_a.losses(), rec_b.losses());
    assert_eq!(bytes(&dir.path().join("a/final.ckpt")), bytes(&dir.path().join("b/final.ckpt")));
    assert!(dir.path().join("a/stage0.ckpt").exists());
}

#[test]
fn resume_rejects_changed_options() {
    let dir = tempfile::tempdir().unwrap();
    let out = data(&dir.path().join("data"), 4, SynthTask::MovingShapeDirection);
    let d = PretrainData::from_manifest(&out.manifest).unwrap();
    let o = opts("1@1e-3", Exec::Sequential);
    pretrain(&o, &d, &dir.path().join("a")).unwrap();
    let other = opts("1@2e-3", Exec::Sequential);
    let err = resume_pretrain(&dir.path().join("a/final.ckpt"), &other, &d, &dir.path().join("b")).unwrap_err();
    assert!(matches!(err, TrainError::HashMismatch { .. }));
}

#[test]
fn sequential_and_parallel_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = data(&dir.path().join("data"), 8, SynthTask::MovingShapeDirection);
    let d = PretrainData::from_manifest(&out.manifest).unwrap();
    let (ra, _) = pretrain(&opts("2@1e-3", Exec::Sequential), &d, &dir.path().join("s")).unwrap();
    let (rb, _) = pretrain(&opts("2@1e-3", Exec::Parallel), &d, &dir.path().join("p")).unwrap();
    assert_eq!(ra.losses(), rb.losses());
    assert_eq!(bytes(&dir.path().join("s/final.ckpt")), bytes(&dir.path().join("p/final.ckpt")));
}

#[test]
fn record_round_trips_through_text() {
    let dir = tempfile::tempdir().unwrap();
    let out = data(&dir.path().join("data"), 4, SynthTask::MovingShapeDirection);
    let d = PretrainData::from_manifest(&out.manifest).unwrap();
    let (rec, _) = pretrain(&opts("2@1e-3", Exec::Sequential), &d, &dir.path().join("r")).unwrap();
    let back = RunRecord::parse(&rec.to_text()).unwrap();
    assert_eq!(back, rec);
    assert_eq!(rec.epochs.len(), 2);
}

#[test]
fn zero_epoch_schedule_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = data(&dir.path().join("data"), 4, SynthTask::MovingShapeDirection);
    let d = PretrainData::from_manifest(&out.manifest).unwrap();
    let mut o = opts("1@1e-3", Exec::Sequential);
    o.looping.schedule = Schedule::constant(0, 1e-3).unwrap();
    let (rec, _) = pretrain(&o, &d, &dir.path().join("z")).unwrap();
    assert!(rec.epochs.is_empty());
    assert!(dir.path().join("z/init.ckpt").exists());
}

#[test]
fn finetune_from_pretrained_loads_encoder_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = data(&dir.path().join("data"), 16, SynthTask::MovingShapeDirection);
    let d = PretrainData::from_manifest(&out.manifest).unwrap();
    pretrain(&opts("1@1e-3", Exec::Sequential), &d, &dir.path().join("pre")).unwrap();
    let ckpt = read_checkpoint(&dir.path().join("pre/final.ckpt")).unwrap();

    let train = FinetuneData::from_entries(out.labels.split(Split::Train), 4).unwrap();
    let test = FinetuneData::from_entries(out.labels.split(Split::Test), 4).unwrap();
    let mut fo = FinetuneOptions::new(tiny().with_classes(4), LoopOptions::new(Schedule::constant(0, 1e-3).unwrap(), 2));
    fo.batch_size = 4;
    let (rec, state) = finetune(FinetuneInit::Pretrained(&ckpt), &train, Some(&test), &fo, &dir.path().join("ft")).unwrap();
    assert!(state.model.has_head() && !state.model.has_decoder());
    for name in state.model.params.names().iter().filter(|n| n.starts_with("enc.")) {
        assert_eq!(state.model.params.get(name), ckpt.get(&format!("model/{name}")), "{name}");
    }
    // Zero head: every prediction is class 0, a quarter of a balanced test set.
    let top1 = rec.evals.iter().find(|e| e.metric == "top1").unwrap().value;
    assert!((top1 - 0.25).abs() < 1e-12);
}

#[test]
fn class_count_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = data(&dir.path().join("data"), 8, SynthTask::MovingShapeDirection);
    let train = FinetuneData::from_entries(out.labels.split(Split::Train), 4).unwrap();
    let fo = FinetuneOptions::new(tiny().with_classes(3), LoopOptions::new("1@1e-3".parse().unwrap(), 0));
    let err = finetune(FinetuneInit::Scratch, &train, None, &fo, &dir.path().join("x")).unwrap_err();
    assert!(matches!(err, TrainError::ClassMismatch(_)));
}
