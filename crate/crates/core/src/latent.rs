//! Gaussian latent heads: parameterization, differential entropy,
//! reparameterized sampling and covariance ellipses.
//!
//! Variances are carried in log space. The full head carries a raw vector of
//! `q(q+1)/2` values: the strict lower triangle of `L` in row-major order,
//! followed by the raw diagonal, which is mapped through `exp`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// `½(1 + ln 2π)`: entropy contribution of one unit-variance dimension.
pub const HALF_LOG_2PI_E: f64 = 0.5 * (1.0 + 1.837_877_066_409_345_3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    None,
    Isotropic,
    Diagonal,
    Full,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::None, Head::Isotropic, Head::Diagonal, Head::Full];

    pub fn name(self) -> &'static str {
        match self {
            Head::None => "none",
            Head::Isotropic => "isotropic",
            Head::Diagonal => "diagonal",
            Head::Full => "full",
        }
    }

    /// Number of covariance outputs the encoder emits for latent dimension `q`.
    pub fn cov_params(self, q: usize) -> usize {
        match self {
            Head::None => 0,
            Head::Isotropic => 1,
            Head::Diagonal => q,
            Head::Full => q * (q + 1) / 2,
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Head::None),
            "isotropic" => Ok(Head::Isotropic),
            "diagonal" => Ok(Head::Diagonal),
            "full" => Ok(Head::Full),
            other => Err(Error::InvalidArgument(format!("unknown head `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "head", rename_all = "lowercase")]
pub enum CovParams {
    None,
    Isotropic { log_var: f64 },
    Diagonal { log_vars: Vec<f64> },
    Full { chol_raw: Vec<f64> },
}

/// One sample's latent distribution `N(μ, Σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLatent {
    pub mu: Vec<f64>,
    pub cov: CovParams,
}

/// Row-major indices `(i, j)` of the strict lower triangle.
pub fn strict_lower_indices(q: usize) -> Vec<(usize, usize)> {
    (1..q).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
}

impl GaussianLatent {
    pub fn none(mu: Vec<f64>) -> Self {
        Self {
            mu,
            cov: CovParams::None,
        }
    }

    pub fn isotropic(mu: Vec<f64>, log_var: f64) -> Self {
        Self {
            mu,
            cov: CovParams::Isotropic { log_var },
        }
    }

    pub fn diagonal(mu: Vec<f64>, log_vars: Vec<f64>) -> Result<Self> {
        if log_vars.len() != mu.len() {
            return Err(Error::shape("diagonal latent", &[mu.len()], &[log_vars.len()]));
        }
        Ok(Self {
            mu,
            cov: CovParams::Diagonal { log_vars },
        })
    }

    pub fn full(mu: Vec<f64>, chol_raw: Vec<f64>) -> Result<Self> {
        let q = mu.len();
        if chol_raw.len() != Head::Full.cov_params(q) {
            return Err(Error::shape("full latent", &[q * (q + 1) / 2], &[chol_raw.len()]));
        }
        Ok(Self {
            mu,
            cov: CovParams::Full { chol_raw },
        })
    }

    /// Builds a full-head latent from an explicit lower-triangular `L`.
    pub fn full_from_cholesky(mu: Vec<f64>, l: &DMatrix<f64>) -> Result<Self> {
        let q = mu.len();
        if l.shape() != (q, q) {
            return Err(Error::shape("full latent", &[q, q], &[l.nrows(), l.ncols()]));
        }
        let mut raw: Vec<f64> = strict_lower_indices(q).iter().map(|&(i, j)| l[(i, j)]).collect();
        for i in 0..q {
            if l[(i, i)] <= 0.0 {
                return Err(Error::Domain(format!(
                    "Cholesky diagonal must be positive, L[{i},{i}] = {}",
                    l[(i, i)]
                )));
            }
            raw.push(l[(i, i)].ln());
        }
        Self::full(mu, raw)
    }

    pub fn head(&self) -> Head {
        match self.cov {
            CovParams::None => Head::None,
            CovParams::Isotropic { .. } => Head::Isotropic,
            CovParams::Diagonal { .. } => Head::Diagonal,
            CovParams::Full { .. } => Head::Full,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Lower-triangular factor `L` with `Σ = LLᵀ` (full head only).
    pub fn cholesky_factor(&self) -> Result<DMatrix<f64>> {
        let q = self.dim();
        match &self.cov {
            CovParams::Full { chol_raw } => {
                let mut l = DMatrix::zeros(q, q);
                let lower = strict_lower_indices(q);
                for (k, &(i, j)) in lower.iter().enumerate() {
                    l[(i, j)] = chol_raw[k];
                }
                for i in 0..q {
                    l[(i, i)] = chol_raw[lower.len() + i].exp();
                }
                Ok(l)
            }
            _ => Err(Error::Contract(format!(
                "Cholesky factor requested for {} head",
                self.head()
            ))),
        }
    }

    /// Differential entropy of `N(0, Σ)`; `None` for the μ-only head.
    pub fn entropy(&self) -> Option<f64> {
        let q = self.dim();
        match &self.cov {
            CovParams::None => None,
            CovParams::Isotropic { log_var } => Some(entropy_isotropic(q, *log_var)),
            CovParams::Diagonal { log_vars } => Some(entropy_diagonal(log_vars)),
            CovParams::Full { chol_raw } => {
                let diag = &chol_raw[chol_raw.len() - q..];
                Some(q as f64 * HALF_LOG_2PI_E + diag.iter().sum::<f64>())
            }
        }
    }

    /// Reparameterized draw `z = μ + scale · eps`. The μ-only head ignores `eps`.
    pub fn sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        let q = self.dim();
        if self.head() == Head::None {
            return Ok(self.mu.clone());
        }
        if eps.len() != q {
            return Err(Error::shape("sample", &[q], &[eps.len()]));
        }
        let z = match &self.cov {
            CovParams::None => unreachable!(),
            CovParams::Isotropic { log_var } => {
                let s = (0.5 * log_var).exp();
                self.mu.iter().zip(eps).map(|(m, e)| m + s * e).collect()
            }
            CovParams::Diagonal { log_vars } => self
                .mu
                .iter()
                .zip(log_vars)
                .zip(eps)
                .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
                .collect(),
            CovParams::Full { .. } => {
                let l = self.cholesky_factor()?;
                (0..q)
                    .map(|i| self.mu[i] + (0..=i).map(|j| l[(i, j)] * eps[j]).sum::<f64>())
                    .collect()
            }
        };
        Ok(z)
    }

    pub fn covariance_matrix(&self) -> Result<DMatrix<f64>> {
        let q = self.dim();
        match &self.cov {
            CovParams::None => Err(Error::UnsupportedHead("none")),
            CovParams::Isotropic { log_var } => {
                Ok(DMatrix::identity(q, q) * log_var.exp())
            }
            CovParams::Diagonal { log_vars } => Ok(DMatrix::from_diagonal(
                &nalgebra::DVector::from_iterator(q, log_vars.iter().map(|v| v.exp())),
            )),
            CovParams::Full { .. } => {
                let l = self.cholesky_factor()?;
                let sigma = &l * l.transpose();
                // exact symmetry for downstream geometry
                Ok((&sigma + sigma.transpose()) * 0.5)
            }
        }
    }
}

/// `(q/2)(1 + ln 2π + ln σ²)`.
pub fn entropy_isotropic(q: usize, log_var: f64) -> f64 {
    q as f64 * (HALF_LOG_2PI_E + 0.5 * log_var)
}

/// `½ Σᵢ (1 + ln 2π + ln σᵢ²)`.
pub fn entropy_diagonal(log_vars: &[f64]) -> f64 {
    log_vars.iter().map(|lv| HALF_LOG_2PI_E + 0.5 * lv).sum()
}

/// `(q/2)(1 + ln 2π) + Σᵢ ln Lᵢᵢ`, taking the diagonal of `L`.
pub fn entropy_full(chol_diag: &[f64]) -> Result<f64> {
    if let Some(bad) = chol_diag.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("Cholesky diagonal entry {bad} is not positive")));
    }
    Ok(chol_diag.len() as f64 * HALF_LOG_2PI_E + chol_diag.iter().map(|v| v.ln()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub center: [f64; 2],
    /// Major then minor semi-axis length.
    pub semi_axes: [f64; 2],
    /// Angle of the major axis from +x, in `(-π/2, π/2]`.
    pub rotation: f64,
    pub k: u32,
}

impl EllipseSpec {
    /// Point on the boundary at parameter `t`.
    pub fn boundary_point(&self, t: f64) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let (a, b) = (self.semi_axes[0] * t.cos(), self.semi_axes[1] * t.sin());
        [self.center[0] + c * a - s * b, self.center[1] + s * a + c * b]
    }
}

/// k-sigma ellipse of a 2×2 SPD covariance via closed-form eigen-decomposition.
pub fn ellipse_from_cov(center: [f64; 2], cov: &DMatrix<f64>, k: u32) -> Result<EllipseSpec> {
    if cov.shape() != (2, 2) {
        return Err(Error::Geometry(format!(
            "ellipse needs a 2x2 covariance, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidArgument(format!("k must be 1, 2 or 3, got {k}")));
    }
    let (a, b, b2, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]);
    let scale = a.abs().max(c.abs()).max(b.abs());
    if !(a.is_finite() && b.is_finite() && c.is_finite()) || (b - b2).abs() > 1e-12 * scale {
        return Err(Error::Geometry(format!("covariance is not symmetric: {b} vs {b2}")));
    }
    let half_trace = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (major, minor) = (half_trace + radius, half_trace - radius);
    if !(minor > 0.0) {
        return Err(Error::Geometry(format!(
            "covariance is not positive definite (eigenvalues {major}, {minor})"
        )));
    }
    let rotation = if radius <= 1e-12 * half_trace {
        0.0
    } else {
        let theta = 0.5 * (2.0 * b).atan2(a - c);
        // atan2 ∈ (-π, π] puts theta in (-π/2, π/2]; fold the open end explicitly
        if theta <= -FRAC_PI_2 {
            theta + PI
        } else {
            theta
        }
    };
    let kf = f64::from(k);
    Ok(EllipseSpec {
        center,
        semi_axes: [kf * major.sqrt(), kf * minor.sqrt()],
        rotation,
        k,
    })
}

/// A batch of latents recorded on a graph. `cov` holds the raw head outputs
/// (`[batch, head.cov_params(q)]`), absent for the μ-only head.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub head: Head,
    pub q: usize,
    pub mu: Var,
    pub cov: Option<Var>,
}

impl LatentVars {
    pub fn new(g: &Graph, head: Head, mu: Var, cov: Option<Var>) -> Result<Self> {
        let (batch, q) = match g.shape(mu) {
            [b, q] => (*b, *q),
            other => return Err(Error::shape("latent mu", other, &[0, 0])),
        };
        match (head, cov) {
            (Head::None, None) => {}
            (Head::None, Some(_)) => {
                return Err(Error::Contract("none head carries no covariance".into()))
            }
            (_, None) => return Err(Error::Contract(format!("{head} head needs covariance"))),
            (_, Some(c)) => {
                let want = [batch, head.cov_params(q)];
                if g.shape(c) != want {
                    return Err(Error::shape("latent covariance", &want, g.shape(c)));
                }
            }
        }
        Ok(Self { head, q, mu, cov })
    }

    pub fn batch(&self, g: &Graph) -> usize {
        g.shape(self.mu)[0]
    }

    /// Reparameterized `z` for the batch. `eps` is `[batch, q]`; ignored for
    /// the μ-only head, which returns μ itself.
    pub fn sample(&self, g: &mut Graph, eps: &Tensor) -> Result<Var> {
        let Some(cov) = self.cov else {
            return Ok(self.mu);
        };
        let batch = self.batch(g);
        if eps.shape() != [batch, self.q] {
            return Err(Error::shape("sample eps", &[batch, self.q], eps.shape()));
        }
        let q = self.q;
        let e = g.constant(eps);
        let noise = match self.head {
            Head::None => unreachable!(),
            Head::Isotropic => {
                let half = g.scale(cov, 0.5);
                let std = g.exp(half);
                let ones = g.constant(&Tensor::matrix(1, q, vec![1.0; q])?);
                let std = g.matmul(std, ones)?;
                g.mul(std, e)?
            }
            Head::Diagonal => {
                let half = g.scale(cov, 0.5);
                let std = g.exp(half);
                g.mul(std, e)?
            }
            Head::Full => {
                let lower = strict_lower_indices(q);
                let m = lower.len();
                let diag_raw = g.select_cols(cov, &(m..m + q).collect::<Vec<_>>())?;
                let diag = g.exp(diag_raw);
                let mut noise = g.mul(diag, e)?;
                if m > 0 {
                    let lraw = g.select_cols(cov, &(0..m).collect::<Vec<_>>())?;
                    // eps picked per lower entry (i, j) → eps[:, j], scattered back to column i
                    let mut pick = vec![0.0; batch * m];
                    let mut scatter = vec![0.0; m * q];
                    for (k, &(i, j)) in lower.iter().enumerate() {
                        for r in 0..batch {
                            pick[r * m + k] = eps.get(r, j);
                        }
                        scatter[k * q + i] = 1.0;
                    }
                    let pick = g.constant(&Tensor::matrix(batch, m, pick)?);
                    let scatter = g.constant(&Tensor::matrix(m, q, scatter)?);
                    let prod = g.mul(lraw, pick)?;
                    let off = g.matmul(prod, scatter)?;
                    noise = g.add(noise, off)?;
                }
                noise
            }
        };
        g.add(self.mu, noise)
    }

    /// Batch-mean differential entropy of `N(0, Σ)`; `None` for the μ-only head.
    pub fn mean_entropy(&self, g: &mut Graph) -> Result<Option<Var>> {
        let Some(cov) = self.cov else {
            return Ok(None);
        };
        let batch = self.batch(g) as f64;
        let q = self.q as f64;
        let log_term = match self.head {
            Head::None => unreachable!(),
            Head::Isotropic => {
                let s = g.sum(cov);
                g.scale(s, 0.5 * q / batch)
            }
            Head::Diagonal => {
                let s = g.sum(cov);
                g.scale(s, 0.5 / batch)
            }
            Head::Full => {
                let m = strict_lower_indices(self.q).len();
                let diag_raw = g.select_cols(cov, &(m..m + self.q).collect::<Vec<_>>())?;
                let s = g.sum(diag_raw);
                g.scale(s, 1.0 / batch)
            }
        };
        Ok(Some(g.add_scalar(log_term, q * HALF_LOG_2PI_E)))
    }

    /// Materializes the batch as value-level latents.
    pub fn to_values(&self, g: &Graph) -> Vec<GaussianLatent> {
        let mu = g.tensor(self.mu);
        let cov = self.cov.map(|c| g.tensor(c));
        (0..mu.rows())
            .map(|r| {
                let m = mu.row(r).to_vec();
                let cov = match (self.head, &cov) {
                    (Head::None, _) | (_, None) => CovParams::None,
                    (Head::Isotropic, Some(c)) => CovParams::Isotropic { log_var: c.get(r, 0) },
                    (Head::Diagonal, Some(c)) => CovParams::Diagonal {
                        log_vars: c.row(r).to_vec(),
                    },
                    (Head::Full, Some(c)) => CovParams::Full {
                        chol_raw: c.row(r).to_vec(),
                    },
                };
                GaussianLatent { mu: m, cov }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: f64 = 2.837_877_066_409_345_3; // 1 + ln 2π

    fn mat(rows: &[[f64; 2]; 2]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
    }

    #[test]
    fn isotropic_entropy_examples() {
        assert!((entropy_isotropic(2, 0.0) - UNIT).abs() < 1e-12);
        assert!((entropy_isotropic(2, 1.0) - (UNIT + 1.0)).abs() < 1e-12);
        assert!((entropy_isotropic(1, 0.0) - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn diagonal_entropy_examples() {
        assert!((entropy_diagonal(&[0.0, 0.0]) - entropy_isotropic(2, 0.0)).abs() < 1e-12);
        assert!((entropy_diagonal(&[0.0, 4f64.ln()]) - 3.531_024_246_969_290_5).abs() < 1e-7);
        for c in [0.1, 1.0, 7.5] {
            let lc = f64::ln(c);
            assert!((entropy_diagonal(&[lc, lc]) - entropy_isotropic(2, lc)).abs() < 1e-12);
        }
    }

    #[test]
    fn full_entropy_examples() {
        assert!((entropy_full(&[1.0, 1.0]).unwrap() - UNIT).abs() < 1e-12);
        let l = mat(&[[2.0, 0.0], [1.0, 1.0]]);
        let lat = GaussianLatent::full_from_cholesky(vec![0.0, 0.0], &l).unwrap();
        assert!((lat.entropy().unwrap() - (UNIT + 2f64.ln())).abs() < 1e-12);
        let shear = GaussianLatent::full_from_cholesky(vec![3.0, -1.0], &mat(&[[1.0, 0.0], [5.0, 1.0]]))
            .unwrap();
        assert!((shear.entropy().unwrap() - UNIT).abs() < 1e-12);
        assert!(entropy_full(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn sample_examples() {
        let l = mat(&[[2.0, 0.0], [1.0, 1.0]]);
        let full = GaussianLatent::full_from_cholesky(vec![0.0, 0.0], &l).unwrap();
        let z = full.sample(&[1.0, 1.0]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-12 && (z[1] - 2.0).abs() < 1e-12);

        let iso = GaussianLatent::isotropic(vec![1.0, 1.0], 9f64.ln());
        let z = iso.sample(&[1.0, -1.0]).unwrap();
        assert!((z[0] - 4.0).abs() < 1e-12 && (z[1] + 2.0).abs() < 1e-12);

        for lat in [
            full,
            iso,
            GaussianLatent::diagonal(vec![0.5, 2.0], vec![0.3, -1.0]).unwrap(),
            GaussianLatent::none(vec![7.0, 8.0]),
        ] {
            assert_eq!(lat.sample(&[0.0, 0.0]).unwrap(), lat.mu);
        }
        assert_eq!(
            GaussianLatent::none(vec![7.0, 8.0]).sample(&[]).unwrap(),
            vec![7.0, 8.0]
        );
    }

    #[test]
    fn covariance_examples() {
        let iso = GaussianLatent::isotropic(vec![0.0, 0.0], 4f64.ln());
        assert!((iso.covariance_matrix().unwrap() - mat(&[[4.0, 0.0], [0.0, 4.0]])).amax() < 1e-12);
        let full =
            GaussianLatent::full_from_cholesky(vec![0.0, 0.0], &mat(&[[2.0, 0.0], [1.0, 1.0]])).unwrap();
        assert!((full.covariance_matrix().unwrap() - mat(&[[4.0, 2.0], [2.0, 2.0]])).amax() < 1e-12);
        let diag = GaussianLatent::diagonal(vec![0.0, 0.0], vec![0.0, 9f64.ln()]).unwrap();
        assert!((diag.covariance_matrix().unwrap() - mat(&[[1.0, 0.0], [0.0, 9.0]])).amax() < 1e-12);
        assert!(matches!(
            GaussianLatent::none(vec![0.0, 0.0]).covariance_matrix(),
            Err(Error::UnsupportedHead(_))
        ));
    }

    #[test]
    fn ellipse_examples() {
        let e = ellipse_from_cov([0.0, 0.0], &mat(&[[4.0, 0.0], [0.0, 1.0]]), 2).unwrap();
        assert_eq!(e.semi_axes, [4.0, 2.0]);
        assert_eq!(e.rotation, 0.0);

        let e = ellipse_from_cov([1.0, 1.0], &mat(&[[1.0, 0.0], [0.0, 1.0]]), 3).unwrap();
        assert_eq!(e.semi_axes, [3.0, 3.0]);
        assert_eq!(e.rotation, 0.0);

        let e = ellipse_from_cov([0.0, 0.0], &mat(&[[4.0, 2.0], [2.0, 2.0]]), 1).unwrap();
        let s5 = 5f64.sqrt();
        assert!((e.semi_axes[0] - (3.0 + s5).sqrt()).abs() < 1e-12);
        assert!((e.semi_axes[1] - (3.0 - s5).sqrt()).abs() < 1e-12);
        assert!((e.semi_axes[0] - 2.288).abs() < 1e-3 && (e.semi_axes[1] - 0.874).abs() < 1e-3);
        assert!((e.rotation - 0.5536).abs() < 1e-4);

        let vertical = ellipse_from_cov([0.0, 0.0], &mat(&[[1.0, 0.0], [0.0, 4.0]]), 1).unwrap();
        assert!((vertical.rotation - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn ellipse_rejects_bad_input() {
        assert!(matches!(
            ellipse_from_cov([0.0, 0.0], &mat(&[[1.0, 2.0], [2.0, 1.0]]), 1),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            ellipse_from_cov([0.0, 0.0], &mat(&[[1.0, 0.5], [0.0, 1.0]]), 1),
            Err(Error::Geometry(_))
        ));
        assert!(ellipse_from_cov([0.0, 0.0], &mat(&[[1.0, 0.0], [0.0, 1.0]]), 4).is_err());
    }

    #[test]
    fn ellipse_boundary_is_k_mahalanobis() {
        let cov = mat(&[[4.0, 2.0], [2.0, 2.0]]);
        let inv = cov.clone().try_inverse().unwrap();
        for k in 1..=3 {
            let e = ellipse_from_cov([0.5, -1.5], &cov, k).unwrap();
            for step in 0..64 {
                let p = e.boundary_point(step as f64 * 0.1);
                let d = nalgebra::DVector::from_vec(vec![p[0] - 0.5, p[1] + 1.5]);
                let m = (d.transpose() * &inv * &d)[(0, 0)];
                assert!((m - f64::from(k * k)).abs() < 1e-6, "{m}");
            }
        }
    }

    #[test]
    fn tape_sampling_matches_values() {
        let batch = 3;
        let eps = Tensor::matrix(batch, 2, vec![0.3, -1.2, 1.0, 1.0, -0.7, 0.4]).unwrap();
        let mu = Tensor::matrix(batch, 2, vec![1.0, 2.0, -1.0, 0.0, 0.5, 0.5]).unwrap();
        for head in [Head::Isotropic, Head::Diagonal, Head::Full] {
            let p = head.cov_params(2);
            let raw: Vec<f64> = (0..batch * p).map(|i| 0.2 * i as f64 - 0.5).collect();
            let mut g = Graph::new();
            let m = g.constant(&mu);
            let c = g.constant(&Tensor::matrix(batch, p, raw).unwrap());
            let lv = LatentVars::new(&g, head, m, Some(c)).unwrap();
            let z = lv.sample(&mut g, &eps).unwrap();
            let values = lv.to_values(&g);
            for (r, lat) in values.iter().enumerate() {
                let want = lat.sample(eps.row(r)).unwrap();
                for j in 0..2 {
                    assert!((g.value(z)[r * 2 + j] - want[j]).abs() < 1e-12);
                }
            }
            let h = lv.mean_entropy(&mut g).unwrap().unwrap();
            let want: f64 =
                values.iter().map(|l| l.entropy().unwrap()).sum::<f64>() / batch as f64;
            assert!((g.value(h)[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn strict_lower_order_is_row_major() {
        assert_eq!(strict_lower_indices(3), vec![(1, 0), (2, 0), (2, 1)]);
        assert!(strict_lower_indices(1).is_empty());
    }
}
