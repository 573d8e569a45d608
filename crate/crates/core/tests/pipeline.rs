//! Files on disk through split, load, train, save, reload and evaluate.

use std::path::Path;

use fundus_core::data::{encode_png, fixture_pixel, label_map, load_labels, load_records, split_dataset, INPUT_SIZE};
use fundus_core::eval::{dataset_stats, evaluate_model};
use fundus_core::train::{load_checkpoint, save_checkpoint, train, Seeds, Trainer};
use fundus_core::{load_weights, read_weights, save_weights, DataError, ModelConfig, Part, TrainConfig};

fn write_dataset(dir: &Path, n: usize) {
    let size = INPUT_SIZE as u32;
    let mut csv = String::from("ID,Disease_Risk,DR,ARMD\n");
    for i in 0..n {
        let diseased = i % 2 == 0;
        let png = encode_png(size, size, |x, y| fixture_pixel(i, diseased, size, x, y));
        std::fs::write(dir.join(format!("{}.png", i + 1)), png).unwrap();
        let (risk, dr, armd) = match i % 4 {
            0 => (1, 1, 0),
            2 => (1, 0, 1),
            _ => (0, 0, 0),
        };
        csv.push_str(&format!("{},{risk},{dr},{armd}\n", i + 1));
    }
    std::fs::write(dir.join("labels.csv"), csv).unwrap();
}

fn small_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            input: [INPUT_SIZE, INPUT_SIZE, 3],
            conv_filters: vec![4, 4, 4, 4, 4],
            hidden_units: vec![8],
        },
        epochs: 3,
        steps_per_epoch: 3,
        validation_steps: 2,
        batch_size: 4,
        seeds: Seeds::from_base(9),
        ..TrainConfig::default()
    }
}

#[test]
fn files_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, 20);

    let labels = load_labels(&d.join("labels.csv")).unwrap();
    let (map, warnings) = label_map(&labels);
    assert!(warnings.is_empty());
    let stats = dataset_stats(&labels);
    assert_eq!((stats[0].code.as_str(), stats[0].count), ("DR", 5));
    assert_eq!((stats[1].code.as_str(), stats[1].count), ("ARMD", 5));

    let split = split_dataset(&labels.ids(), [0.6, 0.2, 0.2], 3).unwrap();
    split.write_manifest(&d.join("m.tsv")).unwrap();
    let split = fundus_core::DatasetSplit::read_manifest(&d.join("m.tsv")).unwrap();
    let train_set = load_records(d, split.part(Part::Train), &map).unwrap();
    let val_set = load_records(d, split.part(Part::Validation), &map).unwrap();
    assert_eq!((train_set.len(), val_set.len()), (12, 4));
    assert_eq!(train_set.iter().map(|r| &r.id).collect::<Vec<_>>(), split.train.iter().collect::<Vec<_>>());

    let config = small_config();
    let (weights, history) = train(config.clone(), &train_set, &val_set).unwrap();
    assert_eq!(history.len(), 3);

    let path = d.join("w.fw");
    save_weights(&weights, &path).unwrap();
    let reloaded = load_weights(&path, &config.model).unwrap();
    assert_eq!(reloaded, weights);
    assert!(load_weights(&path, &ModelConfig::standard()).is_err());

    let (report, scores) = evaluate_model(&weights, &val_set, 0.5).unwrap();
    let (again, scores_again) = evaluate_model(&read_weights(&path).unwrap(), &val_set, 0.5).unwrap();
    assert_eq!(scores, scores_again);
    assert_eq!(report, again);
    assert_eq!(report.n, 4);
    assert_eq!(report.confusion.total(), 4);
}

#[test]
fn checkpoint_on_disk_resumes_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, 8);
    let labels = load_labels(&d.join("labels.csv")).unwrap();
    let (map, _) = label_map(&labels);
    let ids = labels.ids();
    let records = load_records(d, &ids, &map).unwrap();
    let (tr, va) = records.split_at(6);

    let config = small_config();
    let (uninterrupted, _) = train(config.clone(), tr, va).unwrap();

    let mut trainer = Trainer::new(config, tr, va).unwrap();
    trainer.run_epoch().unwrap();
    let ck = d.join("ck.bin");
    save_checkpoint(trainer.state(), &ck).unwrap();
    drop(trainer);

    let state = load_checkpoint(&ck).unwrap();
    assert_eq!(state.epochs_done(), 1);
    let resumed = Trainer::resume(state, tr, va).unwrap().run(|_| Ok(())).unwrap();
    assert_eq!(resumed.weights, uninterrupted);

    let bytes = std::fs::read(&ck).unwrap();
    std::fs::write(&ck, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint(&ck).is_err());
}

#[test]
fn missing_image_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 4);
    std::fs::remove_file(dir.path().join("3.png")).unwrap();
    let labels = load_labels(&dir.path().join("labels.csv")).unwrap();
    let (map, _) = label_map(&labels);
    match load_records(dir.path(), &labels.ids(), &map) {
        Err(DataError::MissingImage { id, .. }) => assert_eq!(id, "3"),
        other => panic!("expected a missing image error, got {:?}", other.map(|r| r.len())),
    }
}
