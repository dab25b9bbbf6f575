//! Split metrics, run summaries, class medoids and per-class ellipses.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::latent::{ellipse_from_cov, EllipseSpec, GaussianLatent, Head};
use crate::losses::{self, LossBreakdown};
use crate::model::Model;
use crate::tensor::{Graph, Tensor};

pub const EVAL_BATCH: usize = 256;

/// Mean-over-samples breakdown on `split`, decoding from μ (zero noise).
pub fn evaluate(model: &Model, data: &DatasetBundle, split: Split) -> Result<LossBreakdown> {
    evaluate_batched(model, data, split, EVAL_BATCH)
}

pub fn evaluate_batched(
    model: &Model,
    data: &DatasetBundle,
    split: Split,
    batch_size: usize,
) -> Result<LossBreakdown> {
    let idx = data.indices(split);
    evaluate_rows(model, &data.x, &data.y, &idx, batch_size)
}

/// Mean breakdown over the given rows of `x`/`y`.
pub fn evaluate_rows(
    model: &Model,
    x: &Tensor,
    y: &Tensor,
    rows: &[usize],
    batch_size: usize,
) -> Result<LossBreakdown> {
    if rows.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut sums = [0.0; 3];
    for chunk in rows.chunks(batch_size) {
        let xb = x.select_rows(chunk)?;
        let yb = y.select_rows(chunk)?;
        let mut g = Graph::new();
        let out = model.forward_train(&mut g, &xb, &yb, None)?;
        let w = chunk.len() as f64;
        sums[0] += w * out.breakdown.recon;
        sums[1] += w * out.breakdown.proj;
        sums[2] += w * out.breakdown.ent;
    }
    let n = rows.len() as f64;
    losses::total_loss(sums[0] / n, sums[1] / n, sums[2] / n, &model.config().weights)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n−1 denominator); 0 for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// One trained run inside a [`MetricsTable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub head: Head,
    pub seed: u64,
    pub test: LossBreakdown,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub head: Head,
    pub proj_mean: f64,
    pub proj_std: f64,
    pub recon_mean: f64,
    pub recon_std: f64,
    pub epochs_mean: f64,
    pub epochs_std: f64,
    pub n_runs: usize,
}

impl MetricsRow {
    pub fn from_runs(head: Head, runs: &[&RunRecord]) -> Self {
        let proj: Vec<f64> = runs.iter().map(|r| r.test.proj).collect();
        let recon: Vec<f64> = runs.iter().map(|r| r.test.recon).collect();
        let epochs: Vec<f64> = runs.iter().map(|r| r.epochs_run as f64).collect();
        Self {
            head,
            proj_mean: mean(&proj),
            proj_std: sample_std(&proj),
            recon_mean: mean(&recon),
            recon_std: sample_std(&recon),
            epochs_mean: mean(&epochs),
            epochs_std: sample_std(&epochs),
            n_runs: runs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub dataset: String,
    pub rows: Vec<MetricsRow>,
    pub runs: Vec<RunRecord>,
}

impl MetricsTable {
    pub fn row(&self, head: Head) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.head == head)
    }

    /// Plain-text table: one column per head, three blocks (projection loss,
    /// reconstruction loss, epochs), each cell `mean ± std`.
    pub fn to_text(&self) -> String {
        let label_w = self.dataset.len().max(8);
        let cell_w = 22;
        let mut out = String::new();
        let _ = write!(out, "{:label_w$}", "");
        for r in &self.rows {
            let _ = write!(out, " {:>cell_w$}", r.head.name());
        }
        out.push('\n');
        let width = label_w + self.rows.len() * (cell_w + 1);
        let blocks: [(&str, fn(&MetricsRow) -> (f64, f64)); 3] = [
            ("Parametric projection: average projection loss (lower is better)", |r| {
                (r.proj_mean, r.proj_std)
            }),
            ("Inverse projection: average reconstruction loss (lower is better)", |r| {
                (r.recon_mean, r.recon_std)
            }),
            ("Training epochs until validation loss convergence (lower is better)", |r| {
                (r.epochs_mean, r.epochs_std)
            }),
        ];
        for (title, get) in blocks {
            out.push_str(&"=".repeat(width));
            out.push('\n');
            out.push_str(title);
            out.push('\n');
            out.push_str(&"-".repeat(width));
            out.push('\n');
            let _ = write!(out, "{:label_w$}", self.dataset);
            for r in &self.rows {
                let (m, s) = get(r);
                let _ = write!(out, " {:>cell_w$}", format!("{m:.4} ± {s:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Index of the member minimizing the summed Euclidean distance to all
/// members; ties go to the lowest index.
pub fn medoid_index(points: &[[f64; 2]]) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::Empty("class".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, p) in points.iter().enumerate() {
        let cost: f64 = points
            .iter()
            .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .sum();
        if cost < best.0 {
            best = (cost, i);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMedoid {
    pub label: i64,
    /// Row index into the point set.
    pub index: usize,
    pub point: [f64; 2],
}

/// Medoid of each class, ordered by label.
pub fn class_medoid(points: &Tensor, labels: &[i64]) -> Result<Vec<ClassMedoid>> {
    if points.rows() != labels.len() || points.cols() != 2 {
        return Err(Error::shape("class_medoid", points.shape(), &[labels.len(), 2]));
    }
    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    members
        .into_iter()
        .map(|(label, rows)| {
            let pts: Vec<[f64; 2]> = rows.iter().map(|&r| [points.get(r, 0), points.get(r, 1)]).collect();
            let m = medoid_index(&pts)?;
            Ok(ClassMedoid {
                label,
                index: rows[m],
                point: pts[m],
            })
        })
        .collect()
}

/// Which covariance is drawn around each class medoid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceSource {
    /// The covariance the encoder predicts for the medoid sample.
    #[default]
    Medoid,
    /// Mean of the predicted covariances over the class.
    ClassMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEllipses {
    pub label: i64,
    pub medoid_index: usize,
    pub center: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub ellipses: Vec<EllipseSpec>,
}

/// Encodes `x` in chunks of [`EVAL_BATCH`] rows.
pub fn encode_all(model: &Model, x: &Tensor) -> Result<Vec<GaussianLatent>> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    let mut out = Vec::with_capacity(x.rows());
    for chunk in rows.chunks(EVAL_BATCH) {
        out.extend(model.encode(&x.select_rows(chunk)?)?);
    }
    Ok(out)
}

/// Per-class k-sigma ellipses around the medoid of the encoded means.
pub fn class_ellipses(
    model: &Model,
    x: &Tensor,
    labels: &[i64],
    k_list: &[u32],
    source: CovarianceSource,
) -> Result<Vec<ClassEllipses>> {
    if model.head() == Head::None {
        return Err(Error::UnsupportedHead("none"));
    }
    let latents = encode_all(model, x)?;
    class_ellipses_from_latents(&latents, labels, k_list, source)
}

pub fn class_ellipses_from_latents(
    latents: &[GaussianLatent],
    labels: &[i64],
    k_list: &[u32],
    source: CovarianceSource,
) -> Result<Vec<ClassEllipses>> {
    if latents.len() != labels.len() {
        return Err(Error::shape("class_ellipses", &[latents.len()], &[labels.len()]));
    }
    if latents.iter().any(|l| l.dim() != 2) {
        return Err(Error::Geometry("ellipses need a 2-D latent space".into()));
    }
    if latents.is_empty() {
        return Err(Error::Empty("latent set".into()));
    }
    let mu = Tensor::matrix(latents.len(), 2, latents.iter().flat_map(|l| l.mu.clone()).collect())?;
    let medoids = class_medoid(&mu, labels)?;
    medoids
        .into_iter()
        .map(|m| {
            let cov = match source {
                CovarianceSource::Medoid => latents[m.index].covariance_matrix()?,
                CovarianceSource::ClassMean => {
                    let mut acc = DMatrix::zeros(2, 2);
                    let mut n = 0.0;
                    for (l, &lab) in latents.iter().zip(labels) {
                        if lab == m.label {
                            acc += l.covariance_matrix()?;
                            n += 1.0;
                        }
                    }
                    acc / n
                }
            };
            let ellipses = k_list
                .iter()
                .map(|&k| ellipse_from_cov(m.point, &cov, k))
                .collect::<Result<_>>()?;
            Ok(ClassEllipses {
                label: m.label,
                medoid_index: m.index,
                center: m.point,
                covariance: [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
                ellipses,
            })
        })
        .collect()
}
