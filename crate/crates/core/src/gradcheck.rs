//! Finite-difference check of the analytic gradients of every loss term,
//! for all heads, on a small two-hidden-layer model.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::Serialize;

use crate::error::Result;
use crate::latent::Head;
use crate::losses::{self, LossWeights, ReconKind};
use crate::model::{Model, ModelConfig};
use crate::tensor::{finite_diff_grad, grad_rel_error, Graph, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const BATCH: usize = 4;
const INPUT_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Recon,
    Proj,
    Ent,
    Total,
}

impl Component {
    pub const ALL: [Component; 4] = [Self::Recon, Self::Proj, Self::Ent, Self::Total];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Recon => "recon",
            Self::Proj => "proj",
            Self::Ent => "ent",
            Self::Total => "total",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub head: Head,
    pub recon: ReconKind,
    pub component: Component,
    pub n_params: usize,
    pub max_rel_error: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Records one loss term on `g`. `None` for the entropy of the none head.
fn component_var(
    model: &Model,
    g: &mut Graph,
    x: &Tensor,
    y: &Tensor,
    eps: &Tensor,
    comp: Component,
) -> Result<(Option<Var>, Vec<Var>)> {
    if comp == Component::Total {
        let out = model.forward_train(g, x, y, Some(eps))?;
        return Ok((Some(out.loss), out.params));
    }
    let bm = model.bind(g);
    let xv = g.constant(x);
    let lat = bm.encode(g, xv)?;
    let v = match comp {
        Component::Recon => {
            let z = lat.sample(g, eps)?;
            let xh = bm.decode(g, z)?;
            Some(losses::recon(g, model.config().recon_kind, xv, xh)?)
        }
        Component::Proj => {
            let yv = g.constant(y);
            Some(losses::proj_loss(g, yv, lat.mu)?)
        }
        Component::Ent => losses::ent_loss(g, &lat)?,
        Component::Total => unreachable!(),
    };
    Ok((v, bm.param_vars()))
}

fn with_params(model: &Model, params: &[Tensor]) -> Model {
    let mut m = model.clone();
    for (dst, src) in m.params_mut().zip(params) {
        dst.data_mut().copy_from_slice(src.data());
    }
    m
}

/// Checks one term of one model; `None` when the term does not exist.
pub fn check_component(
    model: &Model,
    x: &Tensor,
    y: &Tensor,
    eps: &Tensor,
    comp: Component,
) -> Result<Option<CheckReport>> {
    let mut g = Graph::new();
    let (loss, vars) = component_var(model, &mut g, x, y, eps, comp)?;
    let Some(loss) = loss else { return Ok(None) };
    let grads = g.backward(loss)?;

    let params: Vec<Tensor> = model.params().cloned().collect();
    let numeric = finite_diff_grad(
        |ps| {
            let m = with_params(model, ps);
            let mut g = Graph::new();
            let (v, _) = component_var(&m, &mut g, x, y, eps, comp)?;
            g.scalar(v.expect("term present for the analytic pass"))
        },
        &params,
        STEP,
    )?;

    let mut max_err = 0.0f64;
    for (v, num) in vars.iter().zip(&numeric) {
        let zeros;
        let ana = match grads.wrt(*v) {
            Some(a) => a,
            None => {
                zeros = vec![0.0; num.len()];
                &zeros
            }
        };
        for (a, n) in ana.iter().zip(num) {
            max_err = max_err.max(grad_rel_error(*a, *n));
        }
    }
    Ok(Some(CheckReport {
        head: model.head(),
        recon: model.config().recon_kind,
        component: comp,
        n_params: params.iter().map(Tensor::len).sum(),
        max_rel_error: max_err,
    }))
}

/// Full suite: every head × {mse, bce} × every term, on a seeded 4-sample batch.
pub fn run_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.05, 0.95).expect("valid range");
    let x = Tensor::matrix(BATCH, INPUT_DIM, (0..BATCH * INPUT_DIM).map(|_| unit.sample(&mut rng)).collect())?;
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let y = Tensor::matrix(BATCH, 2, normal(BATCH * 2))?;
    let eps = Tensor::matrix(BATCH, 2, normal(BATCH * 2))?;
    drop(normal);

    let mut reports = Vec::new();
    for head in Head::ALL {
        for recon in [ReconKind::Mse, ReconKind::Bce] {
            let config = ModelConfig {
                input_dim: INPUT_DIM,
                latent_dim: 2,
                encoder_widths: vec![6, 4],
                decoder_widths: vec![4, 6],
                head,
                recon_kind: recon,
                weights: LossWeights::new(20.0, 5.0)?,
                seed,
            };
            let mut model = Model::new(config)?;
            // zero-initialized biases can put pre-activations exactly on a ReLU kink
            let jitter = Uniform::new(-0.1, 0.1).expect("valid range");
            for (i, p) in model.params_mut().enumerate() {
                if i % 2 == 1 {
                    p.data_mut().iter_mut().for_each(|b| *b = jitter.sample(&mut rng));
                }
            }
            for comp in Component::ALL {
                if let Some(r) = check_component(&model, &x, &y, &eps, comp)? {
                    reports.push(r);
                }
            }
        }
    }
    Ok(reports)
}
