//! Adam, seeded splits, mini-batch training with early stopping, and the
//! multi-seed run matrix.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsRow, MetricsTable, RunRecord};
use crate::latent::Head;
use crate::losses::LossBreakdown;
use crate::model::{Model, ModelConfig};
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// An epoch improves only if its validation total is below `best - min_delta`.
    pub min_delta: f64,
    pub seed: u64,
    /// Record wall-clock time in the report (makes reports non-reproducible).
    pub record_wall_time: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            min_delta: 0.0,
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "batch size, max epochs and patience must be positive".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(Error::InvalidArgument("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_history: Vec<LossBreakdown>,
    pub val_history: Vec<LossBreakdown>,
    pub epochs_run: usize,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_val_total: f64,
    pub wall_seconds: Option<f64>,
    pub seed: u64,
    pub config: ModelConfig,
    pub settings: TrainSettings,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments for a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .unzip();
        Self {
            m,
            v,
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from each parameter's accumulated gradient (absent
    /// gradients count as zero). Nothing is modified if any check fails.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>, lr: f64) -> Result<()> {
        let mut params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != self.m.len() {
            return Err(Error::shape("adam_step params", &[self.m.len()], &[params.len()]));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.m[i].len() {
                return Err(Error::shape("adam_step", &[self.m[i].len()], p.shape()));
            }
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence {
                        component: format!("gradient of parameter {i}"),
                        location: String::new(),
                    });
                }
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let g = p
                .grad()
                .map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((theta, g), m), v) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *theta -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Seeded 80/10/10 assignment; the floor-division remainder joins train.
pub fn split_dataset(n: usize, seed: u64) -> Result<Vec<Split>> {
    if n < 10 {
        return Err(Error::DatasetTooSmall(format!("need at least 10 samples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tenth = n / 10;
    let n_train = n - 2 * tenth;
    let mut split = vec![Split::Train; n];
    for &i in &order[n_train..n_train + tenth] {
        split[i] = Split::Val;
    }
    for &i in &order[n_train + tenth..] {
        split[i] = Split::Test;
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on the validation total.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, val_total: f64) -> StopDecision {
        self.epoch += 1;
        if val_total < self.best - self.min_delta {
            self.best = val_total;
            self.best_epoch = self.epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs_seen(&self) -> usize {
        self.epoch
    }
}

/// Trains with the standard deterministic validation pass.
pub fn train(model: Model, data: &DatasetBundle, settings: &TrainSettings) -> Result<(Model, TrainReport)> {
    train_with_validation(model, data, settings, |m| eval::evaluate(m, data, Split::Val))
}

/// Training loop with a caller-supplied validation measure.
pub fn train_with_validation<F>(
    mut model: Model,
    data: &DatasetBundle,
    settings: &TrainSettings,
    mut validate: F,
) -> Result<(Model, TrainReport)>
where
    F: FnMut(&Model) -> Result<LossBreakdown>,
{
    settings.validate()?;
    if data.dim() != model.config().input_dim {
        return Err(Error::shape("train data", &[data.dim()], &[model.config().input_dim]));
    }
    let train_idx = data.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let start = Instant::now();
    let q = model.config().latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut adam = AdamState::new(model.params());
    let mut stopper = EarlyStopping::new(settings.patience, settings.min_delta);
    let mut best_model = model.clone();
    let mut train_history = Vec::new();
    let mut val_history = Vec::new();

    for epoch in 1..=settings.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for (b, rows) in order.chunks(settings.batch_size).enumerate() {
            let at = |e: Error| match e {
                Error::Divergence { component, .. } => Error::Divergence {
                    component,
                    location: format!(" at epoch {epoch}, batch {}", b + 1),
                },
                other => other,
            };
            let x = data.x.select_rows(rows)?;
            let y = data.y.select_rows(rows)?;
            let eps: Vec<f64> = (0..rows.len() * q).map(|_| rng.sample(StandardNormal)).collect();
            let eps = Tensor::matrix(rows.len(), q, eps)?;

            let mut g = Graph::new();
            let out = model.forward_train(&mut g, &x, &y, Some(&eps)).map_err(at)?;
            let grads = g.backward(out.loss)?;
            model.accumulate_grads(&grads, &out.params);
            adam.step(model.params_mut(), settings.learning_rate).map_err(at)?;
            model.zero_grad();

            let w = rows.len() as f64;
            let bd = out.breakdown;
            for (s, v) in sums.iter_mut().zip([bd.recon, bd.proj, bd.ent, bd.total]) {
                *s += w * v;
            }
        }
        let n = order.len() as f64;
        train_history.push(LossBreakdown {
            recon: sums[0] / n,
            proj: sums[1] / n,
            ent: sums[2] / n,
            total: sums[3] / n,
        });

        let val = validate(&model)?;
        if !val.total.is_finite() {
            return Err(Error::Divergence {
                component: "validation total".into(),
                location: format!(" at epoch {epoch}"),
            });
        }
        val_history.push(val);
        match stopper.observe(val.total) {
            StopDecision::Improved => best_model = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let report = TrainReport {
        epochs_run: train_history.len(),
        train_history,
        val_history,
        best_epoch: stopper.best_epoch(),
        best_val_total: stopper.best(),
        wall_seconds: settings.record_wall_time.then(|| start.elapsed().as_secs_f64()),
        seed: settings.seed,
        config: model.config().clone(),
        settings: settings.clone(),
    };
    Ok((best_model, report))
}

/// Trains every head `n_seeds` times (seeds `base, base+1, …` for both
/// initialization and batching) and summarizes test metrics per head.
/// Runs execute in parallel on the current rayon pool; results are merged in
/// (head, seed) order.
pub fn run_matrix(
    data: &DatasetBundle,
    base: &ModelConfig,
    heads: &[Head],
    n_seeds: usize,
    settings: &TrainSettings,
) -> Result<MetricsTable> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("run matrix needs at least one seed".into()));
    }
    if heads.is_empty() {
        return Err(Error::InvalidArgument("run matrix needs at least one head".into()));
    }
    let jobs: Vec<(Head, u64)> = heads
        .iter()
        .flat_map(|&h| (0..n_seeds as u64).map(move |s| (h, settings.seed.wrapping_add(s))))
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(head, seed)| {
            let tag = |e: Error| e.tagged(format!("head {head}, seed {seed}"));
            let config = ModelConfig {
                head,
                seed,
                ..base.clone()
            };
            let run_settings = TrainSettings {
                seed,
                ..settings.clone()
            };
            let model = Model::new(config).map_err(tag)?;
            let (model, report) = train(model, data, &run_settings).map_err(tag)?;
            let test = eval::evaluate(&model, data, Split::Test).map_err(tag)?;
            Ok(RunRecord {
                head,
                seed,
                test,
                epochs_run: report.epochs_run,
                best_epoch: report.best_epoch,
            })
        })
        .collect::<Result<_>>()?;

    let rows = heads
        .iter()
        .map(|&h| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.head == h).collect();
            MetricsRow::from_runs(h, &mine)
        })
        .collect();
    Ok(MetricsTable {
        dataset: data.name.clone(),
        rows,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step() {
        let mut p = Tensor::scalar(1.0).trainable();
        let mut adam = AdamState::new([&p]);
        let grads = {
            let mut g = Graph::new();
            let v = g.param(&p);
            let l = g.sum(v);
            (g.backward(l).unwrap(), v)
        };
        grads.0.accumulate_into(grads.1, &mut p);
        adam.step([&mut p], 0.001).unwrap();
        assert!((p.data()[0] - 0.999).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Tensor::vector(vec![0.5, -2.0]).unwrap().trainable();
        let mut adam = AdamState::new([&p]);
        for _ in 0..3 {
            adam.step([&mut p], 0.01).unwrap();
        }
        assert_eq!(p.data(), [0.5, -2.0]);
        assert_eq!(adam.steps(), 3);
    }

    #[test]
    fn adam_step_bounded_by_lr() {
        let mut p = Tensor::scalar(0.0).trainable();
        let mut adam = AdamState::new([&p]);
        let lr = 0.01;
        let mut prev = 0.0;
        for _ in 0..500 {
            p.zero_grad();
            let mut g = Graph::new();
            let v = g.param(&p);
            let s = g.scale(v, 3.7);
            let l = g.sum(s);
            g.backward(l).unwrap().accumulate_into(v, &mut p);
            adam.step([&mut p], lr).unwrap();
            let now = p.data()[0];
            assert!((now - prev).abs() <= lr * (1.0 + 1e-8));
            prev = now;
        }
    }

    #[test]
    fn adam_rejects_bad_grads() {
        let mut p = Tensor::scalar(1.0).trainable();
        let mut adam = AdamState::new([&p]);
        let mut g = Graph::new();
        let v = g.param(&p);
        let s = g.scale(v, f64::NAN);
        let l = g.sum(s);
        g.backward(l).unwrap().accumulate_into(v, &mut p);
        assert!(matches!(adam.step([&mut p], 0.1), Err(Error::Divergence { .. })));
        assert_eq!(p.data(), [1.0]);
        let mut q = Tensor::vector(vec![1.0, 2.0]).unwrap().trainable();
        assert!(matches!(adam.step([&mut q], 0.1), Err(Error::Shape { .. })));
    }

    #[test]
    fn split_sizes() {
        let count = |s: &[Split], k| s.iter().filter(|v| **v == k).count();
        let s = split_dataset(100, 1).unwrap();
        assert_eq!((count(&s, Split::Train), count(&s, Split::Val), count(&s, Split::Test)), (80, 10, 10));
        let s = split_dataset(105, 1).unwrap();
        assert_eq!((count(&s, Split::Train), count(&s, Split::Val), count(&s, Split::Test)), (85, 10, 10));
        assert_eq!(split_dataset(105, 9).unwrap(), split_dataset(105, 9).unwrap());
        assert_ne!(split_dataset(105, 9).unwrap(), split_dataset(105, 10).unwrap());
        assert!(matches!(split_dataset(9, 0), Err(Error::DatasetTooSmall(_))));
    }

    #[test]
    fn early_stopping_rule() {
        let mut es = EarlyStopping::new(5, 0.0);
        let seq = [5.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0];
        let decisions: Vec<_> = seq.iter().map(|v| es.observe(*v)).collect();
        assert_eq!(decisions[6], StopDecision::Stop);
        assert!(decisions[..6].iter().all(|d| *d != StopDecision::Stop));
        assert_eq!(es.best_epoch(), 2);
        assert_eq!(es.epochs_seen(), 7);

        let mut es = EarlyStopping::new(5, 0.0);
        for i in 0..100 {
            assert_eq!(es.observe(100.0 - i as f64), StopDecision::Improved);
        }
    }

    #[test]
    fn settings_validation() {
        assert!(TrainSettings::default().validate().is_ok());
        let bad = TrainSettings {
            patience: 200,
            ..TrainSettings::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainSettings {
            learning_rate: 0.0,
            ..TrainSettings::default()
        };
        assert!(bad.validate().is_err());
    }
}
