//! Encoder/decoder networks and checkpoint I/O.
//!
//! The encoder is a ReLU trunk feeding a linear μ layer and, for variational
//! heads, a parallel linear layer emitting the raw covariance parameters. The
//! decoder maps a latent point back to data space through a ReLU stack and a
//! final identity (MSE) or sigmoid (BCE) layer.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{GaussianLatent, Head, LatentVars};
use crate::losses::{self, LossBreakdown, LossWeights, ReconKind};
use crate::tensor::{Activation, BoundLayer, DenseLayer, Gradients, Graph, Tensor, Var};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"DEVAE";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub head: Head,
    pub recon_kind: ReconKind,
    pub weights: LossWeights,
    pub seed: u64,
}

impl ModelConfig {
    /// Default topology `d → 512 → 128 → heads`, decoder `2 → 128 → 512 → d`.
    pub fn new(input_dim: usize, head: Head, recon_kind: ReconKind) -> Self {
        Self {
            input_dim,
            latent_dim: 2,
            encoder_widths: vec![512, 128],
            decoder_widths: vec![128, 512],
            head,
            recon_kind,
            weights: LossWeights::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidArgument(
                "input and latent dimensions must be positive".into(),
            ));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        self.weights.validate()
    }

    pub fn output_activation(&self) -> Activation {
        match self.recon_kind {
            ReconKind::Mse => Activation::Identity,
            ReconKind::Bce => Activation::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    encoder: Vec<DenseLayer>,
    mu_head: DenseLayer,
    cov_head: Option<DenseLayer>,
    decoder: Vec<DenseLayer>,
}

fn init_layer(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    activation: Activation,
) -> DenseLayer {
    let bound = gain * (1.0 / fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    DenseLayer::new(
        Tensor::matrix(fan_out, fan_in, w).expect("positive dims"),
        Tensor::zeros(vec![fan_out]),
        activation,
    )
    .expect("consistent layer shapes")
}

// uniform bounds: √6 (Kaiming, ReLU), √3 (unit-variance linear outputs)
const RELU_GAIN: f64 = 2.449_489_742_783_178;
const LINEAR_GAIN: f64 = 1.732_050_807_568_877_2;
// covariance raws start near zero so initial variances are close to one
const COV_GAIN: f64 = 0.1 * LINEAR_GAIN;

impl Model {
    /// Seeded initialization from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let q = config.latent_dim;

        let mut encoder = Vec::new();
        let mut width = config.input_dim;
        for &w in &config.encoder_widths {
            encoder.push(init_layer(&mut rng, width, w, RELU_GAIN, Activation::Relu));
            width = w;
        }
        let mu_head = init_layer(&mut rng, width, q, LINEAR_GAIN, Activation::Identity);
        let cov_head = match config.head.cov_params(q) {
            0 => None,
            p => Some(init_layer(&mut rng, width, p, COV_GAIN, Activation::Identity)),
        };

        let mut decoder = Vec::new();
        let mut width = q;
        for &w in &config.decoder_widths {
            decoder.push(init_layer(&mut rng, width, w, RELU_GAIN, Activation::Relu));
            width = w;
        }
        decoder.push(init_layer(
            &mut rng,
            width,
            config.input_dim,
            LINEAR_GAIN,
            config.output_activation(),
        ));

        Ok(Self {
            config,
            encoder,
            mu_head,
            cov_head,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> Head {
        self.config.head
    }

    /// Layers in declared topology order: trunk, μ head, covariance head, decoder.
    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.mu_head))
            .chain(self.cov_head.iter())
            .chain(self.decoder.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.encoder
            .iter_mut()
            .chain(std::iter::once(&mut self.mu_head))
            .chain(self.cov_head.iter_mut())
            .chain(self.decoder.iter_mut())
    }

    /// Parameter tensors in checkpoint order (weight then bias per layer).
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Tensor::zero_grad);
    }

    /// Folds one backward pass into the parameter gradients.
    pub fn accumulate_grads(&mut self, grads: &Gradients, vars: &[Var]) {
        for (p, v) in self.params_mut().zip(vars) {
            grads.accumulate_into(*v, p);
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let bind_all = |g: &mut Graph, ls: &[DenseLayer]| ls.iter().map(|l| l.bind(g)).collect();
        let encoder = bind_all(g, &self.encoder);
        let mu_head = self.mu_head.bind(g);
        let cov_head = self.cov_head.as_ref().map(|l| l.bind(g));
        let decoder = bind_all(g, &self.decoder);
        BoundModel {
            head: self.config.head,
            input_dim: self.config.input_dim,
            latent_dim: self.config.latent_dim,
            encoder,
            mu_head,
            cov_head,
            decoder,
        }
    }

    fn check_cols(t: &Tensor, want: usize, op: &'static str) -> Result<()> {
        if t.shape().len() != 2 || t.cols() != want {
            return Err(Error::shape(op, &[t.rows(), want], t.shape()));
        }
        Ok(())
    }

    /// Parametric projection: per-sample latent distribution for `x: [batch, d]`.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<GaussianLatent>> {
        Self::check_cols(x, self.config.input_dim, "encode")?;
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let xv = g.constant(x);
        let lat = bm.encode(&mut g, xv)?;
        Ok(lat.to_values(&g))
    }

    /// Latent means only, `[batch, q]`.
    pub fn encode_mu(&self, x: &Tensor) -> Result<Tensor> {
        Self::check_cols(x, self.config.input_dim, "encode")?;
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let xv = g.constant(x);
        let lat = bm.encode(&mut g, xv)?;
        Ok(g.tensor(lat.mu))
    }

    /// Inverse projection of arbitrary latent points `z: [batch, q]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        Self::check_cols(z, self.config.latent_dim, "decode")?;
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let zv = g.constant(z);
        let out = bm.decode(&mut g, zv)?;
        Ok(g.tensor(out))
    }

    /// Records the full objective for one batch. `eps: [batch, q]` drives the
    /// reparameterization; `None` decodes from μ (equivalent to zero noise).
    pub fn forward_train(
        &self,
        g: &mut Graph,
        x: &Tensor,
        y: &Tensor,
        eps: Option<&Tensor>,
    ) -> Result<ForwardOutput> {
        Self::check_cols(x, self.config.input_dim, "forward_train x")?;
        Self::check_cols(y, self.config.latent_dim, "forward_train y")?;
        if x.rows() != y.rows() {
            return Err(Error::shape("forward_train rows", x.shape(), y.shape()));
        }
        let bm = self.bind(g);
        let xv = g.constant(x);
        let yv = g.constant(y);
        let latents = bm.encode(g, xv)?;
        let z = match eps {
            Some(e) => latents.sample(g, e)?,
            None => latents.mu,
        };
        let x_hat = bm.decode(g, z)?;

        let recon = losses::recon(g, self.config.recon_kind, xv, x_hat)?;
        let proj = losses::proj_loss(g, yv, latents.mu)?;
        let ent = losses::ent_loss(g, &latents)?;
        let loss = losses::weighted_total(g, recon, proj, ent, &self.config.weights)?;
        let ent_value = match ent {
            Some(e) => g.scalar(e)?,
            None => 0.0,
        };
        let breakdown =
            losses::total_loss(g.scalar(recon)?, g.scalar(proj)?, ent_value, &self.config.weights)?;
        Ok(ForwardOutput {
            loss,
            breakdown,
            x_hat,
            latents,
            params: bm.param_vars(),
        })
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| e.tagged(path.display().to_string()))
    }

    /// Magic, version byte, little-endian `u32` config length, JSON config,
    /// then every parameter as little-endian `f64` in topology order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(&self.config)?;
        let len = u32::try_from(config.len())
            .map_err(|_| Error::InvalidArgument("config too large".into()))?;
        let mut out = Vec::with_capacity(10 + config.len() + 8 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&config);
        for p in self.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = CHECKPOINT_MAGIC.len() + 1 + 4;
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic("checkpoint".into()));
        }
        if bytes.len() < header {
            return Err(Error::Truncated {
                expected: header,
                actual: bytes.len(),
            });
        }
        let version = bytes[CHECKPOINT_MAGIC.len()];
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len_bytes: [u8; 4] = bytes[header - 4..header].try_into().expect("4 bytes");
        let config_len = u32::from_le_bytes(len_bytes) as usize;
        let config_end = header + config_len;
        if bytes.len() < config_end {
            return Err(Error::Truncated {
                expected: config_end,
                actual: bytes.len(),
            });
        }
        let config: ModelConfig = serde_json::from_slice(&bytes[header..config_end])?;
        let mut model = Model::new(config)?;
        let expected = config_end + 8 * model.param_count();
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        let mut chunks = bytes[config_end..].chunks_exact(8);
        for p in model.params_mut() {
            for v in p.data_mut() {
                let c: [u8; 8] = chunks.next().expect("length checked").try_into().expect("8 bytes");
                *v = f64::from_le_bytes(c);
            }
        }
        Ok(model)
    }
}

/// Result of [`Model::forward_train`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    pub x_hat: Var,
    pub latents: LatentVars,
    /// Parameter handles in [`Model::params`] order.
    pub params: Vec<Var>,
}

/// A model whose parameters are registered on a graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    head: Head,
    input_dim: usize,
    latent_dim: usize,
    encoder: Vec<BoundLayer>,
    mu_head: BoundLayer,
    cov_head: Option<BoundLayer>,
    decoder: Vec<BoundLayer>,
}

impl BoundModel {
    pub fn param_vars(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.mu_head))
            .chain(self.cov_head.iter())
            .chain(self.decoder.iter())
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<LatentVars> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.input_dim {
            let s = g.shape(x).to_vec();
            return Err(Error::shape("encode", &s, &[s[0], self.input_dim]));
        }
        let mut h = x;
        for l in &self.encoder {
            h = l.forward(g, h)?;
        }
        let mu = self.mu_head.forward(g, h)?;
        let cov = match &self.cov_head {
            Some(l) => Some(l.forward(g, h)?),
            None => None,
        };
        LatentVars::new(g, self.head, mu, cov)
    }

    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<Var> {
        if g.shape(z).len() != 2 || g.shape(z)[1] != self.latent_dim {
            let s = g.shape(z).to_vec();
            return Err(Error::shape("decode", &s, &[s[0], self.latent_dim]));
        }
        let mut h = z;
        for l in &self.decoder {
            h = l.forward(g, h)?;
        }
        Ok(h)
    }
}
