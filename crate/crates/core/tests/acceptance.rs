//! Acceptance suite. Runs every criterion at its fixed tolerance, prints one
//! PASS/FAIL line each, and exits non-zero if any fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{blob_pipeline, image_pipeline, ok, p};
use devae::data::{self, DatasetBundle, Split};
use devae::eval::{self, MetricsTable};
use devae::latent::{entropy_diagonal, entropy_full, entropy_isotropic};
use devae::trainer::{self, train_with_validation};
use devae::{gradcheck, GaussianLatent, Head, LossBreakdown, LossWeights, Model, ModelConfig, ReconKind, Tensor, TrainReport, TrainSettings};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

struct Shared {
    blob: TempDir,
    blob_train_secs: f64,
    matrix: Option<(String, MetricsTable)>,
}

impl Shared {
    fn dir(&self) -> &Path {
        self.blob.path()
    }

    /// One `matrix --runs 3 --heads all` invocation at the large-dataset
    /// weights, shared by the table-structure and baseline-ordering checks.
    fn matrix(&mut self) -> &(String, MetricsTable) {
        if self.matrix.is_none() {
            let d = self.blob.path();
            let out = ok(&[
                "matrix", "--data", &p(d, "blobs.csv"), "--proj", &p(d, "proj.csv"), "--runs", "3", "--heads", "all",
                "--lambda-proj", "20", "--lambda-ent", "5", "--json-out", &p(d, "matrix.json"),
            ]);
            let text = String::from_utf8(out.stdout).unwrap();
            let table: MetricsTable = serde_json::from_slice(&fs::read(d.join("matrix.json")).unwrap()).unwrap();
            self.matrix = Some((text, table));
        }
        self.matrix.as_ref().unwrap()
    }
}

/// Σ assembled from raw head parameters with nalgebra, independent of the crate.
fn oracle_cov(l: &GaussianLatent) -> DMatrix<f64> {
    use devae::latent::CovParams;
    match &l.cov {
        CovParams::Isotropic { log_var } => DMatrix::identity(2, 2) * log_var.exp(),
        CovParams::Diagonal { log_vars } => DMatrix::from_row_slice(2, 2, &[log_vars[0].exp(), 0.0, 0.0, log_vars[1].exp()]),
        CovParams::Full { chol_raw } => {
            let lo = DMatrix::from_row_slice(2, 2, &[chol_raw[1].exp(), 0.0, chol_raw[0], chol_raw[2].exp()]);
            &lo * lo.transpose()
        }
        CovParams::None => unreachable!(),
    }
}

fn c1_entropy_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 1_000_000;
    let mut worst = 0.0f64;
    for head in [Head::Isotropic, Head::Diagonal, Head::Full] {
        for _ in 0..10 {
            let lv = [rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0)];
            let mu = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let l = match head {
                Head::Isotropic => GaussianLatent::isotropic(mu, lv[0]),
                Head::Diagonal => GaussianLatent::diagonal(mu, lv.to_vec()).unwrap(),
                _ => GaussianLatent::full(mu, vec![rng.random_range(-1.0..1.0), lv[0] / 2.0, lv[1] / 2.0]).unwrap(),
            };
            let cov = oracle_cov(&l);
            let inv = cov.clone().try_inverse().ok_or("singular oracle covariance")?;
            let norm = -0.5 * (2.0 * (2.0 * PI).ln() + cov.determinant().ln());
            let mut acc = 0.0;
            for _ in 0..n {
                let eps = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let z = l.sample(&eps).map_err(|e| e.to_string())?;
                let (a, b) = (z[0] - l.mu[0], z[1] - l.mu[1]);
                let quad = inv[(0, 0)] * a * a + 2.0 * inv[(0, 1)] * a * b + inv[(1, 1)] * b * b;
                acc -= norm - 0.5 * quad;
            }
            let mc = acc / n as f64;
            let h = l.entropy().ok_or("missing entropy")?;
            let rel = (h - mc).abs() / h.abs();
            worst = worst.max(rel);
            ensure!(rel < 0.01, "{head}: closed form {h:.6} vs Monte-Carlo {mc:.6} (rel {rel:.2e})");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1} s (limit 30 s)");
    Ok(format!("30 latents, max rel error {worst:.2e}, {secs:.1} s"))
}

fn c2_family_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s: f64 = rng.random_range(0.01..10.0);
        let t: f64 = rng.random_range(0.01..10.0);
        let full = entropy_full(&[s, t]).map_err(|e| e.to_string())?;
        let diag = entropy_diagonal(&[2.0 * s.ln(), 2.0 * t.ln()]);
        worst = worst.max((full - diag).abs());
        let full_eq = entropy_full(&[s, s]).map_err(|e| e.to_string())?;
        let diag_eq = entropy_diagonal(&[2.0 * s.ln(), 2.0 * s.ln()]);
        let iso = entropy_isotropic(2, 2.0 * s.ln());
        worst = worst.max((full_eq - diag_eq).abs()).max((diag_eq - iso).abs());
    }
    ensure!(worst <= 1e-9, "max abs difference {worst:.2e}");
    Ok(format!("100 draws, max abs difference {worst:.2e}"))
}

fn c3_gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = gradcheck::run_suite(0).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let heads: std::collections::BTreeSet<&str> = reports.iter().map(|r| r.head.name()).collect();
    ensure!(heads.len() == 4, "heads covered: {heads:?}");
    if let Some(r) = reports.iter().find(|r| !r.passed()) {
        return Err(format!("{} {} {}: rel error {:.2e}", r.head, r.recon, r.component, r.max_rel_error));
    }
    ensure!(secs < 120.0, "took {secs:.1} s (limit 120 s)");
    Ok(format!("{} checks, max rel error {worst:.2e}, {secs:.1} s", reports.len()))
}

fn c4_sampling_moments() -> Outcome {
    let l = GaussianLatent::full_from_cholesky(vec![0.0, 0.0], &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]))
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 1_000_000;
    let mut s = [0.0; 5];
    for _ in 0..n {
        let z = l.sample(&[rng.sample(StandardNormal), rng.sample(StandardNormal)]).map_err(|e| e.to_string())?;
        s[0] += z[0];
        s[1] += z[1];
        s[2] += z[0] * z[0];
        s[3] += z[0] * z[1];
        s[4] += z[1] * z[1];
    }
    let nf = n as f64;
    let (m0, m1) = (s[0] / nf, s[1] / nf);
    let emp = [s[2] / nf - m0 * m0, s[3] / nf - m0 * m1, s[4] / nf - m1 * m1];
    let want = [4.0, 2.0, 2.0];
    let mut worst = 0.0f64;
    for (e, w) in emp.iter().zip(want) {
        worst = worst.max((e - w).abs() / w);
    }
    ensure!(worst < 0.01, "empirical [[{:.4}, {:.4}], [., {:.4}]], max rel error {worst:.2e}", emp[0], emp[1], emp[2]);
    Ok(format!("empirical [[{:.4}, {:.4}], [{:.4}, {:.4}]], max rel error {worst:.2e}", emp[0], emp[1], emp[1], emp[2]))
}

fn blob_bundle(d: &Path) -> DatasetBundle {
    let (x, labels) = data::load_vectors(&d.join("blobs.csv"), None).unwrap();
    let y = data::read_projection_csv(d.join("proj.csv")).unwrap();
    let split = trainer::split_dataset(x.rows(), 0).unwrap();
    DatasetBundle::new("blobs", x, labels, y, split).unwrap()
}

fn c5_end_to_end(sh: &Shared) -> Outcome {
    let d = sh.dir();
    let report: TrainReport = serde_json::from_slice(&fs::read(d.join("report.json")).unwrap()).unwrap();
    let model = Model::load_checkpoint(d.join("full.ckpt")).map_err(|e| e.to_string())?;
    let bundle = blob_bundle(d);
    let last = eval::evaluate(&model, &bundle, Split::Test).map_err(|e| e.to_string())?;

    // replay epoch 1 of the same run to measure its test losses
    let settings = TrainSettings { max_epochs: 1, patience: 1, ..report.settings.clone() };
    let (first, first_report) = trainer::train(Model::new(report.config.clone()).unwrap(), &bundle, &settings).map_err(|e| e.to_string())?;
    ensure!(
        first_report.val_history[0] == report.val_history[0],
        "epoch-1 replay diverged from the CLI run"
    );
    let e1 = eval::evaluate(&first, &bundle, Split::Test).map_err(|e| e.to_string())?;

    ensure!(report.epochs_run <= 100, "{} epochs", report.epochs_run);
    ensure!(sh.blob_train_secs < 300.0, "training took {:.1} s", sh.blob_train_secs);
    ensure!(last.proj <= 0.1 * e1.proj, "test proj {:.4} > 0.1 × epoch-1 {:.4}", last.proj, e1.proj);
    ensure!(last.recon <= 0.5 * e1.recon, "test recon {:.4} > 0.5 × epoch-1 {:.4}", last.recon, e1.recon);
    Ok(format!(
        "{} epochs in {:.1} s; test proj {:.4} vs epoch-1 {:.4}; test recon {:.3} vs epoch-1 {:.3}",
        report.epochs_run, sh.blob_train_secs, last.proj, e1.proj, last.recon, e1.recon
    ))
}

fn c6_early_stopping() -> Outcome {
    let b = data::make_blobs(60, 4, 3, 0.5, 1).unwrap();
    let y = data::pca_project(&b.x).unwrap();
    let bundle = DatasetBundle::new("tiny", b.x, Some(b.labels), y, trainer::split_dataset(60, 0).unwrap()).unwrap();
    let config = ModelConfig {
        encoder_widths: vec![8],
        decoder_widths: vec![8],
        weights: LossWeights::new(1.0, 0.1).unwrap(),
        ..ModelConfig::new(4, Head::Full, ReconKind::Mse)
    };
    let scripted = |seq: Vec<f64>| {
        let mut i = 0;
        move |_: &Model| {
            let t = seq[i.min(seq.len() - 1)];
            i += 1;
            Ok(LossBreakdown { recon: t, proj: 0.0, ent: 0.0, total: t })
        }
    };
    let settings = TrainSettings::default();
    let (_, r) = train_with_validation(Model::new(config.clone()).unwrap(), &bundle, &settings, scripted(vec![5.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0]))
        .map_err(|e| e.to_string())?;
    ensure!(r.epochs_run == 7 && r.best_epoch == 2, "stopped after {} epochs, best {}", r.epochs_run, r.best_epoch);

    let falling: Vec<f64> = (0..200).map(|i| 1000.0 - i as f64).collect();
    let (_, long) = train_with_validation(Model::new(config).unwrap(), &bundle, &settings, scripted(falling)).map_err(|e| e.to_string())?;
    ensure!(long.epochs_run == 100, "ever-improving run stopped at {}", long.epochs_run);
    Ok(format!("scripted run stopped after epoch {} with best epoch {}; ever-improving run capped at {}", r.epochs_run, r.best_epoch, long.epochs_run))
}

fn c7_table_structure(sh: &mut Shared) -> Outcome {
    let (text, _) = sh.matrix();
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    ensure!(header == ["none", "isotropic", "diagonal", "full"], "header {header:?}");
    let titles = ["average projection loss", "average reconstruction loss", "Training epochs"];
    let mut blocks = 0;
    for (i, l) in lines.iter().enumerate() {
        if let Some(t) = titles.iter().position(|t| l.contains(t)) {
            ensure!(t == blocks, "block order: found `{l}` as block {blocks}");
            blocks += 1;
            let row = lines.get(i + 2).ok_or("missing data row")?;
            let cells: Vec<&str> = row.split_whitespace().skip(1).collect();
            ensure!(cells.len() == 12, "row `{row}` does not hold 4 `mean ± std` cells");
            for c in cells.chunks(3) {
                ensure!(c[1] == "±", "cell {c:?}");
                let (m, s): (f64, f64) = (c[0].parse().map_err(|_| format!("mean {}", c[0]))?, c[2].parse().map_err(|_| format!("std {}", c[2]))?);
                ensure!(m.is_finite() && s.is_finite() && s >= 0.0, "cell {c:?}");
            }
        }
    }
    ensure!(blocks == 3, "{blocks} blocks");
    Ok("4 heads × 3 blocks of finite `mean ± std` cells".into())
}

fn parse_svg_ellipses(svg: &str) -> Result<Vec<(i64, u32, [f64; 5])>, String> {
    let doc = roxmltree::Document::parse(svg).map_err(|e| format!("invalid XML: {e}"))?;
    let mut out = Vec::new();
    for n in doc.descendants().filter(|n| n.has_tag_name("ellipse")) {
        let class = n.attribute("class").ok_or("ellipse without class")?;
        let mut label = None;
        let mut k = None;
        for c in class.split_whitespace() {
            if let Some(v) = c.strip_prefix("class-") {
                label = v.parse().ok();
            } else if let Some(v) = c.strip_prefix("k-") {
                k = v.parse().ok();
            }
        }
        let num = |a: &str| n.attribute(a).and_then(|v| v.parse::<f64>().ok()).ok_or(format!("attribute {a}"));
        let rot: f64 = n
            .attribute("transform")
            .and_then(|t| t.strip_prefix("rotate("))
            .and_then(|t| t.split(' ').next())
            .and_then(|v| v.parse().ok())
            .ok_or("rotation")?;
        out.push((
            label.ok_or("label")?,
            k.ok_or("k")?,
            [num("cx")?, num("cy")?, num("rx")?, num("ry")?, rot],
        ));
    }
    Ok(out)
}

fn c8_latent_plot(sh: &Shared) -> Outcome {
    let d = sh.dir();
    ok(&["latent-plot", "--model", &p(d, "full.ckpt"), "--data", &p(d, "blobs.csv"), "--proj", &p(d, "proj.csv"), "--out", &p(d, "full.svg")]);
    let ell = parse_svg_ellipses(&fs::read_to_string(d.join("full.svg")).unwrap())?;
    for label in 0..3 {
        let mut mine: Vec<_> = ell.iter().filter(|e| e.0 == label).collect();
        mine.sort_by_key(|e| e.1);
        ensure!(mine.iter().map(|e| e.1).collect::<Vec<_>>() == [1, 2, 3], "class {label}: {} ellipses", mine.len());
        for w in mine.windows(2) {
            let (a, b) = (w[0].2, w[1].2);
            ensure!(a[0] == b[0] && a[1] == b[1] && a[4] == b[4], "class {label}: rings not concentric");
            ensure!(b[2] > a[2] && b[3] > a[3], "class {label}: rings not nested");
        }
    }
    ensure!(ell.len() == 9, "{} ellipses in total", ell.len());

    ok(&[
        "train", "--data", &p(d, "blobs.csv"), "--proj", &p(d, "proj.csv"), "--head", "isotropic",
        "--lambda-proj", "5", "--lambda-ent", "0.001", "--seed", "7", "--out", &p(d, "iso.ckpt"),
    ]);
    ok(&["latent-plot", "--model", &p(d, "iso.ckpt"), "--data", &p(d, "blobs.csv"), "--out", &p(d, "iso.svg")]);
    let iso = parse_svg_ellipses(&fs::read_to_string(d.join("iso.svg")).unwrap())?;
    ensure!(iso.len() == 9, "{} isotropic ellipses", iso.len());
    let worst = iso.iter().map(|e| (e.2[2] - e.2[3]).abs()).fold(0.0, f64::max);
    ensure!(worst <= 1e-9, "isotropic ellipse axes differ by {worst:.2e}");
    Ok("3 nested rings for each of 3 classes; isotropic rings are circles".into())
}

fn c9_grid_sheet() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    image_pipeline(d);
    let bytes = fs::read(d.join("sheet.pgm")).unwrap();
    let header = b"P5\n80 80\n255\n";
    ensure!(bytes.starts_with(header), "header {:?}", String::from_utf8_lossy(&bytes[..header.len().min(bytes.len())]));
    let pix = &bytes[header.len()..];
    ensure!(pix.len() == 6400, "payload {} bytes", pix.len());

    let model = Model::load_checkpoint(d.join("img.ckpt")).map_err(|e| e.to_string())?;
    let coords = data::read_projection_csv(d.join("img_proj.csv")).map_err(|e| e.to_string())?;
    let coords = &coords;
    let col = |j: usize| (0..coords.rows()).map(move |i| coords.get(i, j));
    let (xmin, xmax) = (col(0).fold(f64::INFINITY, f64::min), col(0).fold(f64::NEG_INFINITY, f64::max));
    let (ymin, ymax) = (col(1).fold(f64::INFINITY, f64::min), col(1).fold(f64::NEG_INFINITY, f64::max));
    for r in 0..5 {
        for c in 0..5 {
            let x = if c == 4 { xmax } else { xmin + (xmax - xmin) * c as f64 / 4.0 };
            let y = if r == 4 { ymin } else { ymax + (ymin - ymax) * r as f64 / 4.0 };
            let img = model.decode(&Tensor::matrix(1, 2, vec![x, y]).unwrap()).map_err(|e| e.to_string())?;
            for (k, v) in img.data().iter().enumerate() {
                let want = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                let got = pix[(r * 16 + k / 16) * 80 + c * 16 + k % 16];
                ensure!(got == want, "tile ({r},{c}) pixel {k}: {got} vs {want}");
            }
        }
    }
    Ok("80×80 P5 sheet; all 25 tiles equal individually decoded grid points".into())
}

fn c10_determinism(sh: &Shared) -> Outcome {
    let other = tempfile::tempdir().unwrap();
    let (a, b) = (sh.dir(), other.path());
    blob_pipeline(b);
    for d in [a, b] {
        ok(&["latent-plot", "--model", &p(d, "full.ckpt"), "--data", &p(d, "blobs.csv"), "--out", &p(d, "det.svg")]);
    }
    let img_a = tempfile::tempdir().unwrap();
    let img_b = tempfile::tempdir().unwrap();
    image_pipeline(img_a.path());
    image_pipeline(img_b.path());
    let pairs = [
        (a.join("full.ckpt"), b.join("full.ckpt")),
        (a.join("report.json"), b.join("report.json")),
        (a.join("det.svg"), b.join("det.svg")),
        (img_a.path().join("img.ckpt"), img_b.path().join("img.ckpt")),
        (img_a.path().join("sheet.pgm"), img_b.path().join("sheet.pgm")),
    ];
    for (x, y) in &pairs {
        ensure!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs between runs", x.file_name().unwrap().to_string_lossy());
    }
    Ok("checkpoints, report, SVG and PGM byte-identical across reruns".into())
}

fn c11_baseline_ordering(sh: &mut Shared) -> Outcome {
    let (_, table) = sh.matrix();
    let none = table.row(Head::None).ok_or("no none row")?;
    ensure!(none.n_runs == 3, "{} none runs", none.n_runs);
    let mut parts = vec![format!("none {:.3}", none.recon_mean)];
    for h in [Head::Isotropic, Head::Diagonal, Head::Full] {
        let r = table.row(h).ok_or(format!("no {h} row"))?;
        ensure!(none.recon_mean <= r.recon_mean, "none {:.4} > {h} {:.4}", none.recon_mean, r.recon_mean);
        parts.push(format!("{h} {:.3}", r.recon_mean));
    }
    Ok(format!("mean test recon over 3 seeds: {}", parts.join(", ")))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &res {
        Ok(msg) => println!("PASS  criterion {id:>2}  {name}: {msg} [{secs:.1} s]"),
        Err(msg) => println!("FAIL  criterion {id:>2}  {name}: {msg} [{secs:.1} s]"),
    }
    res.is_ok()
}

fn main() {
    panic::set_hook(Box::new(|_| {}));
    let blob = tempfile::tempdir().unwrap();
    let secs = blob_pipeline(blob.path());
    let mut sh = Shared { blob, blob_train_secs: secs, matrix: None };

    let results = [
        run(1, "entropy oracle equivalence", c1_entropy_oracle),
        run(2, "entropy family consistency", c2_family_consistency),
        run(3, "gradient suite", c3_gradient_suite),
        run(4, "sampling moments", c4_sampling_moments),
        run(5, "desk-scale end-to-end", || c5_end_to_end(&sh)),
        run(6, "early-stopping contract", c6_early_stopping),
        run(7, "metrics table structure", || c7_table_structure(&mut sh)),
        run(8, "latent plot ellipses", || c8_latent_plot(&sh)),
        run(9, "grid sheet tiles", c9_grid_sheet),
        run(10, "determinism", || c10_determinism(&sh)),
        run(11, "baseline ordering", || c11_baseline_ordering(&mut sh)),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
