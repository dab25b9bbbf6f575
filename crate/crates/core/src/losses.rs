//! Reconstruction, projection and entropy terms and their weighted sum.
//!
//! Every per-sample term is summed over features and averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{GaussianLatent, LatentVars};
use crate::tensor::{Graph, Tensor, Var};

/// Clamp applied to decoder outputs before taking logs in the BCE term.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_proj: f64,
    pub lambda_ent: f64,
}

impl LossWeights {
    pub fn new(lambda_proj: f64, lambda_ent: f64) -> Result<Self> {
        let w = Self {
            lambda_proj,
            lambda_ent,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_proj", self.lambda_proj), ("lambda_ent", self.lambda_ent)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_proj: 20.0,
            lambda_ent: 5.0,
        }
    }
}

/// The three loss components and their weighted total. `ent` is `-H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub proj: f64,
    pub ent: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconKind {
    Mse,
    Bce,
}

impl std::fmt::Display for ReconKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReconKind::Mse => "mse",
            ReconKind::Bce => "bce",
        })
    }
}

impl std::str::FromStr for ReconKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(ReconKind::Mse),
            "bce" => Ok(ReconKind::Bce),
            other => Err(Error::InvalidArgument(format!("unknown reconstruction loss `{other}`"))),
        }
    }
}

fn check_same(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<usize> {
    if g.shape(a) != g.shape(b) || g.shape(a).len() != 2 {
        return Err(Error::shape(op, g.shape(a), g.shape(b)));
    }
    Ok(g.shape(a)[0])
}

/// Batch mean of `Σ_features (x - x̂)²`.
pub fn recon_mse(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    let batch = check_same(g, x, x_hat, "recon_mse")?;
    let d = g.sub(x, x_hat)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / batch as f64))
}

/// Batch mean of `-Σ_features [x ln x̂ + (1-x) ln(1-x̂)]`, with `x̂` clamped
/// into `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub fn recon_bce(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    let batch = check_same(g, x, x_hat, "recon_bce")?;
    if let Some(bad) = g.value(x).iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("BCE target {bad} outside [0, 1]")));
    }
    let shape = g.shape(x).to_vec();
    let one_minus_x: Vec<f64> = g.value(x).iter().map(|v| 1.0 - v).collect();
    let one_minus_x = g.constant(&Tensor::new(shape, one_minus_x)?);

    let p = g.clamp(x_hat, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let log_p = g.log(p)?;
    let neg = g.scale(p, -1.0);
    let q = g.add_scalar(neg, 1.0);
    let log_q = g.log(q)?;
    let a = g.mul(x, log_p)?;
    let b = g.mul(one_minus_x, log_q)?;
    let ll = g.add(a, b)?;
    let s = g.sum(ll);
    Ok(g.scale(s, -1.0 / batch as f64))
}

pub fn recon(g: &mut Graph, kind: ReconKind, x: Var, x_hat: Var) -> Result<Var> {
    match kind {
        ReconKind::Mse => recon_mse(g, x, x_hat),
        ReconKind::Bce => recon_bce(g, x, x_hat),
    }
}

/// Batch mean of `‖y - μ‖²`.
pub fn proj_loss(g: &mut Graph, y: Var, mu: Var) -> Result<Var> {
    let batch = check_same(g, y, mu, "proj_loss")?;
    let d = g.sub(y, mu)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / batch as f64))
}

/// Batch mean of `-H[N(0, Σ)]`; `None` (zero contribution) for the μ-only head.
pub fn ent_loss(g: &mut Graph, latents: &LatentVars) -> Result<Option<Var>> {
    Ok(latents.mean_entropy(g)?.map(|h| g.scale(h, -1.0)))
}

/// Value-level entropy loss for a batch that must share one head.
pub fn ent_loss_values(batch: &[GaussianLatent]) -> Result<f64> {
    let Some(first) = batch.first() else {
        return Err(Error::Empty("latent batch".into()));
    };
    let head = first.head();
    if let Some(other) = batch.iter().find(|l| l.head() != head) {
        return Err(Error::Contract(format!(
            "mixed heads in one batch: {head} and {}",
            other.head()
        )));
    }
    let total: f64 = batch.iter().map(|l| -l.entropy().unwrap_or(0.0)).sum();
    Ok(total / batch.len() as f64)
}

/// Combines the components: `recon + λ_proj·proj + λ_ent·ent`.
pub fn total_loss(recon: f64, proj: f64, ent: f64, w: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [("recon", recon), ("proj", proj), ("ent", ent)] {
        if !v.is_finite() {
            return Err(Error::Divergence {
                component: format!("{name} loss ({v})"),
                location: String::new(),
            });
        }
    }
    let total = recon + w.lambda_proj * proj + w.lambda_ent * ent;
    if !total.is_finite() {
        return Err(Error::Divergence {
            component: format!("total loss ({total})"),
            location: String::new(),
        });
    }
    Ok(LossBreakdown {
        recon,
        proj,
        ent,
        total,
    })
}

/// Records the weighted objective on the graph.
pub fn weighted_total(
    g: &mut Graph,
    recon: Var,
    proj: Var,
    ent: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    let p = g.scale(proj, w.lambda_proj);
    let mut total = g.add(recon, p)?;
    if let Some(e) = ent {
        let e = g.scale(e, w.lambda_ent);
        total = g.add(total, e)?;
    }
    Ok(total)
}
