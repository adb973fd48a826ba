mod common;

use engage_core::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use engage_core::dataset::build_dataset;
use engage_core::train::{resume, train, Precision, TrainConfig};

fn small_data() -> (Vec<engage_core::dataset::WindowSample>, Vec<engage_core::dataset::WindowSample>) {
    let c = common::synthetic_corpus(12, 6, (30, 50), 21);
    let (_, data) = build_dataset(&c.videos, &c.tracks, common::RATE_HZ, 5, 3).unwrap();
    (data.train, data.validation)
}

fn cfg() -> TrainConfig {
    TrainConfig { hidden_dim: 6, w: 5, max_epochs: 5, lr: 0.02, patience: 100, seed: 7, ..Default::default() }
}

#[test]
fn same_seed_gives_identical_checkpoint_bytes() {
    let (tr, va) = small_data();
    let a = encode_checkpoint(&train(&tr, &va, &cfg()).unwrap());
    let b = encode_checkpoint(&train(&tr, &va, &cfg()).unwrap());
    assert_eq!(a, b);
    let c = encode_checkpoint(&train(&tr, &va, &TrainConfig { seed: 8, ..cfg() }).unwrap());
    assert_ne!(a, c);
}

#[test]
fn resume_through_a_file_equals_straight_run() {
    let (tr, va) = small_data();
    for precision in [Precision::F64, Precision::F32] {
        let straight = train(&tr, &va, &TrainConfig { precision, ..cfg() }).unwrap();
        let first = train(&tr, &va, &TrainConfig { max_epochs: 3, precision, ..cfg() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mid.egck");
        save_checkpoint(&first, &p).unwrap();
        let resumed = resume(load_checkpoint(&p).unwrap(), &tr, &va, 5).unwrap();
        assert_eq!(resumed.params, straight.params, "{precision:?}");
        assert_eq!(resumed.best_params, straight.best_params);
        assert_eq!(resumed.history, straight.history);
        assert_eq!(encode_checkpoint(&resumed), encode_checkpoint(&straight));
    }
}

#[test]
fn training_reduces_validation_loss() {
    let (tr, va) = small_data();
    let ck = train(&tr, &va, &TrainConfig { max_epochs: 12, lr: 0.05, ..cfg() }).unwrap();
    let first = ck.history[0].val_mse;
    let best = ck.best_val_mse().unwrap();
    assert!(best < first, "{best} !< {first}");
    let restored = decode_checkpoint(&encode_checkpoint(&ck)).unwrap();
    assert_eq!(restored.model(), ck.model());
}

#[test]
fn early_stopping_follows_patience() {
    let (tr, va) = small_data();
    let ck = train(&tr, &va, &TrainConfig { max_epochs: 60, lr: 3.0, patience: 2, ..cfg() }).unwrap();
    if ck.stopped_early {
        let best = ck.best_epoch().unwrap();
        assert_eq!(ck.history.len() - 1 - best, 2);
    } else {
        assert_eq!(ck.history.len(), 60);
    }
}
