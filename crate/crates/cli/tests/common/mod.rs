#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fundus_core::data::{encode_png, fixture_pixel, INPUT_SIZE};

pub fn fundus(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fundus"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("FUNDUS_THRESHOLD")
        .output()
        .expect("run fundus binary")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[track_caller]
pub fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", out.status.code(), stdout(out), stderr(out));
}

/// Writes `per_class` diseased and healthy fixture images plus a label
/// file into `dir`; returns `(images dir, labels path)`.
pub fn write_fixture(dir: &Path, per_class: usize) -> (PathBuf, PathBuf) {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let size = INPUT_SIZE as u32;
    let mut csv = String::from("ID,Disease_Risk,DR,MH\n");
    for i in 0..2 * per_class {
        let diseased = i % 2 == 0;
        let id = format!("fixture{i:03}");
        let png = encode_png(size, size, |x, y| fixture_pixel(i, diseased, size, x, y));
        std::fs::write(images.join(format!("{id}.png")), png).unwrap();
        let d = u8::from(diseased);
        csv.push_str(&format!("{id},{d},{d},0\n"));
    }
    let labels = dir.join("labels.csv");
    std::fs::write(&labels, csv).unwrap();
    (images, labels)
}

/// Label file of `n` ids `1..=n`, every fifth one diseased.
pub fn write_synthetic_labels(path: &Path, n: usize) {
    let mut csv = String::from("ID,Disease_Risk,DR\n");
    for i in 1..=n {
        let d = u8::from(i % 5 == 0);
        csv.push_str(&format!("{i},{d},{d}\n"));
    }
    std::fs::write(path, csv).unwrap();
}

/// Score file reproducing tn=7, fp=83, fn=45, tp=505 at threshold 0.5.
pub fn operating_point_scores() -> String {
    let mut s = String::from("score,label\n");
    for (count, score, label) in [(7, 0.1, 0), (83, 0.9, 0), (45, 0.1, 1), (505, 0.9, 1)] {
        for _ in 0..count {
            s.push_str(&format!("{score},{label}\n"));
        }
    }
    s
}
