#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use devae::data::{write_idx, IdxFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn devae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devae")).args(args).output().expect("spawn devae")
}

pub fn ok(args: &[&str]) -> Output {
    let out = devae(args);
    assert!(
        out.status.success(),
        "devae {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Blob data, PCA projection and a full-head model with the small-dataset
/// weights. Returns the wall time of the `train` step in seconds.
pub fn blob_pipeline(dir: &Path) -> f64 {
    ok(&["synth", "--out", &p(dir, "blobs.csv"), "--n", "600", "--dims", "50", "--blobs", "3", "--spread", "0.5", "--seed", "7"]);
    ok(&["pca", "--data", &p(dir, "blobs.csv"), "--out", &p(dir, "proj.csv")]);
    let t = std::time::Instant::now();
    ok(&[
        "train", "--data", &p(dir, "blobs.csv"), "--proj", &p(dir, "proj.csv"), "--head", "full",
        "--lambda-proj", "5", "--lambda-ent", "0.001", "--seed", "7",
        "--out", &p(dir, "full.ckpt"), "--report", &p(dir, "report.json"),
    ]);
    t.elapsed().as_secs_f64()
}

/// `n` images of `side × side` pixels: one bright Gaussian spot per class at
/// a class-specific position, jittered per sample.
pub fn write_spot_images(dir: &Path, n: usize, side: usize, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [(4.0, 4.0), (11.0, 5.0), (7.5, 11.0)];
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % centers.len();
        let (cx, cy) = (centers[c].0 + rng.random_range(-1.0..1.0), centers[c].1 + rng.random_range(-1.0..1.0));
        for r in 0..side {
            for col in 0..side {
                let d2 = (r as f64 - cy).powi(2) + (col as f64 - cx).powi(2);
                data.push((255.0 * (-d2 / 6.0).exp()).round() as u8);
            }
        }
        labels.push(c as u8);
    }
    let images = dir.join("images.idx");
    let label_path = dir.join("labels.idx");
    write_idx(&images, &IdxFile { dims: vec![n, side, side], data }).unwrap();
    write_idx(&label_path, &IdxFile { dims: vec![n], data: labels }).unwrap();
    (images, label_path)
}

/// Spot images → PCA → small bce full-head model → 5×5 sheet.
pub fn image_pipeline(dir: &Path) {
    let (images, labels) = write_spot_images(dir, 300, 16, 3);
    let (images, labels) = (images.display().to_string(), labels.display().to_string());
    ok(&["pca", "--data", &images, "--labels", &labels, "--out", &p(dir, "img_proj.csv")]);
    ok(&[
        "train", "--data", &images, "--labels", &labels, "--proj", &p(dir, "img_proj.csv"), "--head", "full",
        "--encoder-widths", "64,32", "--decoder-widths", "32,64", "--max-epochs", "15", "--seed", "1",
        "--out", &p(dir, "img.ckpt"),
    ]);
    ok(&["reconstruct", "--model", &p(dir, "img.ckpt"), "--proj", &p(dir, "img_proj.csv"), "--grid", "5", "--out", &p(dir, "sheet.pgm")]);
}
