//! Fully connected VAE with a Bernoulli likelihood, hand-written reverse-mode
//! gradients and an Adam optimizer.
//!
//! Architecture: encoder `d → h → h` (ReLU), two linear heads `h → n_z` for
//! the posterior mean and log-variance, decoder `n_z → h → h → d` with ReLU
//! hidden layers and a sigmoid output.

mod adam;
mod checkpoint;
mod layer;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use layer::{Activation, DenseLayer};
pub(crate) use layer::{sigmoid, softplus};

use std::sync::atomic::{AtomicU64, Ordering};

use layer::LayerTrace;

use crate::numerics::{standard_normal_matrix, Matrix, RngState};
use crate::{Error, Result};

/// Smallest latent width a model may have.
pub const LATENT_FLOOR: usize = 2;

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn fresh_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// All learnable tensors of the VAE.
///
/// The widths of `mu_head`, `logvar_head` (rows) and `decoder_input`
/// (columns) are the current latent dimensionality.
#[derive(Clone, Debug)]
pub struct VaeParams {
    encoder_hidden: Vec<DenseLayer>,
    mu_head: DenseLayer,
    logvar_head: DenseLayer,
    decoder_input: DenseLayer,
    decoder_hidden: Vec<DenseLayer>,
    output_layer: DenseLayer,
    // Changes on every mutation so a forward cache can detect it is stale.
    revision: u64,
}

impl PartialEq for VaeParams {
    fn eq(&self, other: &Self) -> bool {
        self.encoder_hidden == other.encoder_hidden
            && self.mu_head == other.mu_head
            && self.logvar_head == other.logvar_head
            && self.decoder_input == other.decoder_input
            && self.decoder_hidden == other.decoder_hidden
            && self.output_layer == other.output_layer
    }
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub fn init_model(d: usize, hidden: usize, n_z: usize, rng: &mut RngState) -> Result<VaeParams> {
    if n_z < LATENT_FLOOR {
        return Err(Error::LatentFloor {
            floor: LATENT_FLOOR,
            detail: format!("requested n_z = {n_z}"),
        });
    }
    if d == 0 || hidden == 0 {
        return Err(Error::InvalidArgument(format!(
            "data dim and hidden width must be positive (d={d}, hidden={hidden})"
        )));
    }
    let encoder_hidden = vec![
        DenseLayer::init(d, hidden, Activation::Relu, rng),
        DenseLayer::init(hidden, hidden, Activation::Relu, rng),
    ];
    let mu_head = DenseLayer::init(hidden, n_z, Activation::Identity, rng);
    let logvar_head = DenseLayer::init(hidden, n_z, Activation::Identity, rng);
    let decoder_input = DenseLayer::init(n_z, hidden, Activation::Relu, rng);
    let decoder_hidden = vec![DenseLayer::init(hidden, hidden, Activation::Relu, rng)];
    let output_layer = DenseLayer::init(hidden, d, Activation::Sigmoid, rng);
    VaeParams::from_layers(encoder_hidden, mu_head, logvar_head, decoder_input, decoder_hidden, output_layer)
}

impl VaeParams {
    /// Assembles a model from explicit layers, checking that they chain.
    pub fn from_layers(
        encoder_hidden: Vec<DenseLayer>,
        mu_head: DenseLayer,
        logvar_head: DenseLayer,
        decoder_input: DenseLayer,
        decoder_hidden: Vec<DenseLayer>,
        output_layer: DenseLayer,
    ) -> Result<Self> {
        let params = Self {
            encoder_hidden,
            mu_head,
            logvar_head,
            decoder_input,
            decoder_hidden,
            output_layer,
            revision: fresh_revision(),
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        let shape_err = |what: &str| Err(Error::Shape(what.to_string()));
        let mut width = self.data_dim();
        for l in &self.encoder_hidden {
            if l.in_dim() != width {
                return shape_err("encoder layers do not chain");
            }
            width = l.out_dim();
        }
        if self.mu_head.in_dim() != width || self.logvar_head.in_dim() != width {
            return shape_err("heads do not match the encoder output width");
        }
        let n_z = self.mu_head.out_dim();
        if self.logvar_head.out_dim() != n_z || self.decoder_input.in_dim() != n_z {
            return shape_err("mu head, logvar head and decoder input disagree on n_z");
        }
        if n_z < LATENT_FLOOR {
            return Err(Error::LatentFloor {
                floor: LATENT_FLOOR,
                detail: format!("model has n_z = {n_z}"),
            });
        }
        let mut width = self.decoder_input.out_dim();
        for l in &self.decoder_hidden {
            if l.in_dim() != width {
                return shape_err("decoder layers do not chain");
            }
            width = l.out_dim();
        }
        if self.output_layer.in_dim() != width {
            return shape_err("output layer does not match the decoder width");
        }
        if self.output_layer.out_dim() != self.data_dim() {
            return shape_err("output width differs from the data dimensionality");
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.out_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.encoder_hidden
            .first()
            .map_or(self.mu_head.in_dim(), |l| l.in_dim())
    }

    pub fn hidden_dim(&self) -> usize {
        self.mu_head.in_dim()
    }

    pub fn encoder_hidden(&self) -> &[DenseLayer] {
        &self.encoder_hidden
    }

    pub fn mu_head(&self) -> &DenseLayer {
        &self.mu_head
    }

    pub fn logvar_head(&self) -> &DenseLayer {
        &self.logvar_head
    }

    pub fn decoder_input(&self) -> &DenseLayer {
        &self.decoder_input
    }

    pub fn decoder_hidden(&self) -> &[DenseLayer] {
        &self.decoder_hidden
    }

    pub fn output_layer(&self) -> &DenseLayer {
        &self.output_layer
    }

    fn named_layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder_hidden.iter().enumerate() {
            out.push((format!("encoder_hidden.{i}"), l));
        }
        out.push(("mu_head".into(), &self.mu_head));
        out.push(("logvar_head".into(), &self.logvar_head));
        out.push(("decoder_input".into(), &self.decoder_input));
        for (i, l) in self.decoder_hidden.iter().enumerate() {
            out.push((format!("decoder_hidden.{i}"), l));
        }
        out.push(("output_layer".into(), &self.output_layer));
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        self.revision = fresh_revision();
        let mut out: Vec<&mut DenseLayer> = self.encoder_hidden.iter_mut().collect();
        out.push(&mut self.mu_head);
        out.push(&mut self.logvar_head);
        out.push(&mut self.decoder_input);
        out.extend(self.decoder_hidden.iter_mut());
        out.push(&mut self.output_layer);
        out
    }

    /// Every weight and bias tensor in a fixed order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (name, l) in self.named_layers() {
            out.push(TensorView {
                name: format!("{name}.weight"),
                shape: vec![l.weight.rows(), l.weight.cols()],
                data: l.weight.data(),
            });
            out.push(TensorView {
                name: format!("{name}.bias"),
                shape: vec![l.bias.len()],
                data: &l.bias,
            });
        }
        out
    }

    /// Mutable slices in the same order as [`VaeParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.layers_mut() {
            out.push(l.weight.data_mut());
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::Shape(format!(
                "{} values for a model with {} parameters",
                flat.len(),
                self.num_parameters()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> VaeParams {
        VaeParams {
            encoder_hidden: self.encoder_hidden.iter().map(DenseLayer::zeros_like).collect(),
            mu_head: self.mu_head.zeros_like(),
            logvar_head: self.logvar_head.zeros_like(),
            decoder_input: self.decoder_input.zeros_like(),
            decoder_hidden: self.decoder_hidden.iter().map(DenseLayer::zeros_like).collect(),
            output_layer: self.output_layer.zeros_like(),
            revision: fresh_revision(),
        }
    }

    pub(crate) fn same_shapes(&self, other: &VaeParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape == y.shape)
    }

    /// Copy with latent coordinates `drop` (sorted, unique, in range) removed
    /// from both heads and the decoder input.
    pub(crate) fn without_latent(&self, drop: &[usize]) -> VaeParams {
        let head = |l: &DenseLayer| DenseLayer {
            weight: l.weight.without_rows(drop),
            bias: l
                .bias
                .iter()
                .enumerate()
                .filter(|(i, _)| drop.binary_search(i).is_err())
                .map(|(_, &b)| b)
                .collect(),
            activation: l.activation,
        };
        VaeParams {
            encoder_hidden: self.encoder_hidden.clone(),
            mu_head: head(&self.mu_head),
            logvar_head: head(&self.logvar_head),
            decoder_input: DenseLayer {
                weight: self.decoder_input.weight.without_cols(drop),
                bias: self.decoder_input.bias.clone(),
                activation: self.decoder_input.activation,
            },
            decoder_hidden: self.decoder_hidden.clone(),
            output_layer: self.output_layer.clone(),
            revision: fresh_revision(),
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.data_dim() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.data_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "decoder expects latent width {}, got {}",
                self.latent_dim(),
                z.cols()
            )));
        }
        Ok(())
    }

    fn encoder_features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.encoder_hidden {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    /// Posterior means and log-variances, each `batch × n_z`.
    pub fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let h = self.encoder_features(x)?;
        Ok((self.mu_head.forward(&h)?, self.logvar_head.forward(&h)?))
    }

    /// Pre-sigmoid decoder outputs.
    pub fn decode_logits(&self, z: &Matrix) -> Result<Matrix> {
        self.check_latent(z)?;
        let mut h = self.decoder_input.forward(z)?;
        for l in &self.decoder_hidden {
            h = l.forward(&h)?;
        }
        self.output_layer.pre_activation(&h)
    }

    /// Bernoulli means in `(0, 1)`.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        Ok(self.decode_logits(z)?.map(|v| self.output_layer.activation.apply(v)))
    }

    /// Decodes `n` draws from the standard-normal prior.
    pub fn generate(&self, n: usize, rng: &mut RngState) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::InvalidArgument("generate needs n >= 1".into()));
        }
        let z = standard_normal_matrix(rng, n, self.latent_dim());
        self.decode(&z)
    }
}

/// Posterior parameters together with the sample drawn from them.
#[derive(Clone, Debug)]
pub struct LatentBatch {
    pub mu: Matrix,
    pub logvar: Matrix,
    pub z: Matrix,
    pub eps: Matrix,
}

/// `z = μ + exp(½·logvar) ⊙ ε`, `ε ~ N(0, 1)`.
pub fn reparameterize(mu: &Matrix, logvar: &Matrix, rng: &mut RngState) -> Result<LatentBatch> {
    let eps = standard_normal_matrix(rng, mu.rows(), mu.cols());
    reparameterize_with_noise(mu, logvar, eps)
}

pub fn reparameterize_with_noise(mu: &Matrix, logvar: &Matrix, eps: Matrix) -> Result<LatentBatch> {
    if mu.shape() != logvar.shape() || mu.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "mu {:?}, logvar {:?} and noise {:?} must share a shape",
            mu.shape(),
            logvar.shape(),
            eps.shape()
        )));
    }
    let z = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Ok(LatentBatch {
        z: Matrix::from_vec_unchecked(mu.rows(), mu.cols(), z),
        mu: mu.clone(),
        logvar: logvar.clone(),
        eps,
    })
}

/// `½ Σⱼ (μⱼ² + σⱼ² − 1 − ln σⱼ²)` for one row.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Batch-averaged KL of each latent coordinate separately.
pub fn per_dimension_kl(mu: &Matrix, logvar: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; mu.cols()];
    for (mr, lr) in mu.row_iter().zip(logvar.row_iter()) {
        for ((o, m), lv) in out.iter_mut().zip(mr).zip(lr) {
            *o += 0.5 * (m * m + lv.exp() - 1.0 - lv);
        }
    }
    let n = mu.rows().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    revision: u64,
    x: Matrix,
    encoder: Vec<LayerTrace>,
    mu: LayerTrace,
    logvar: LayerTrace,
    latent: LatentBatch,
    decoder: Vec<LayerTrace>,
    logits: Matrix,
}

impl ForwardCache {
    pub fn latent(&self) -> &LatentBatch {
        &self.latent
    }
}

pub struct ElboOutput {
    /// Negated ELBO, averaged over the batch.
    pub loss: f64,
    pub recon_nll: f64,
    pub kl: f64,
    pub cache: ForwardCache,
}

fn check_unit_interval(x: &Matrix) -> Result<()> {
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "data must lie in [0, 1], found {v}"
        )));
    }
    Ok(())
}

/// Single-sample estimate of the negated ELBO with fresh noise from `rng`.
pub fn elbo_loss(params: &VaeParams, x: &Matrix, rng: &mut RngState) -> Result<ElboOutput> {
    let eps = standard_normal_matrix(rng, x.rows(), params.latent_dim());
    elbo_loss_with_noise(params, x, eps)
}

/// Negated ELBO for externally supplied reparameterization noise.
pub fn elbo_loss_with_noise(params: &VaeParams, x: &Matrix, eps: Matrix) -> Result<ElboOutput> {
    params.check_input(x)?;
    check_unit_interval(x)?;
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut encoder = Vec::with_capacity(params.encoder_hidden.len());
    for l in &params.encoder_hidden {
        let input = encoder.last().map_or(x, |t: &LayerTrace| &t.out);
        let t = l.trace(input)?;
        encoder.push(t);
    }
    let h = encoder.last().map_or(x, |t| &t.out);
    let mu = params.mu_head.trace(h)?;
    let logvar = params.logvar_head.trace(h)?;
    let latent = reparameterize_with_noise(&mu.out, &logvar.out, eps)?;

    let mut decoder = Vec::with_capacity(1 + params.decoder_hidden.len());
    decoder.push(params.decoder_input.trace(&latent.z)?);
    for l in &params.decoder_hidden {
        let t = l.trace(&decoder.last().unwrap().out)?;
        decoder.push(t);
    }
    let logits = params.output_layer.pre_activation(&decoder.last().unwrap().out)?;

    let batch = x.rows() as f64;
    let recon_nll = logits
        .data()
        .iter()
        .zip(x.data())
        .map(|(&l, &t)| softplus(l) - t * l)
        .sum::<f64>()
        / batch;
    let kl = latent
        .mu
        .row_iter()
        .zip(latent.logvar.row_iter())
        .map(|(m, lv)| gaussian_kl(m, lv))
        .sum::<f64>()
        / batch;
    let loss = recon_nll + kl;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "ELBO loss (recon {recon_nll}, kl {kl})"
        )));
    }
    Ok(ElboOutput {
        loss,
        recon_nll,
        kl,
        cache: ForwardCache {
            revision: params.revision,
            x: x.clone(),
            encoder,
            mu,
            logvar,
            latent,
            decoder,
            logits,
        },
    })
}

/// Analytic gradient of the cached loss, shaped like the parameters.
pub fn gradients(params: &VaeParams, cache: &ForwardCache) -> Result<VaeParams> {
    if cache.revision != params.revision {
        return Err(Error::StaleCache(
            "parameters changed after the forward pass".into(),
        ));
    }
    let batch = cache.x.rows() as f64;
    let mut grad = params.zeros_like();

    // d(softplus(l) - x·l)/dl = σ(l) - x
    let mut dlogits = cache.logits.clone();
    for (g, &t) in dlogits.data_mut().iter_mut().zip(cache.x.data()) {
        *g = (sigmoid(*g) - t) / batch;
    }
    let last_dec = &cache.decoder.last().unwrap().out;
    let (g_out, dh) = params.output_layer.backward_from_pre(last_dec, &dlogits, true);
    grad.output_layer = g_out;
    let mut dh = dh.unwrap();

    for (i, l) in params.decoder_hidden.iter().enumerate().rev() {
        let (g, d) = l.backward(&cache.decoder[i].out, &cache.decoder[i + 1], &dh, true);
        grad.decoder_hidden[i] = g;
        dh = d.unwrap();
    }
    let (g_in, dz) = params
        .decoder_input
        .backward(&cache.latent.z, &cache.decoder[0], &dh, true);
    grad.decoder_input = g_in;
    let dz = dz.unwrap();

    let lat = &cache.latent;
    let mut dmu = dz.clone();
    let mut dlogvar = dz;
    for i in 0..dmu.data().len() {
        let m = lat.mu.data()[i];
        let lv = lat.logvar.data()[i];
        let e = lat.eps.data()[i];
        dmu.data_mut()[i] += m / batch;
        let dzi = dlogvar.data()[i];
        dlogvar.data_mut()[i] = dzi * e * 0.5 * (0.5 * lv).exp() + 0.5 * (lv.exp() - 1.0) / batch;
    }

    let h = cache.encoder.last().map_or(&cache.x, |t| &t.out);
    let (g_mu, dh_mu) = params.mu_head.backward(h, &cache.mu, &dmu, true);
    let (g_lv, dh_lv) = params.logvar_head.backward(h, &cache.logvar, &dlogvar, true);
    grad.mu_head = g_mu;
    grad.logvar_head = g_lv;
    let mut dh = dh_mu.unwrap();
    for (a, b) in dh.data_mut().iter_mut().zip(dh_lv.unwrap().data()) {
        *a += b;
    }

    for (i, l) in params.encoder_hidden.iter().enumerate().rev() {
        let input = if i == 0 { &cache.x } else { &cache.encoder[i - 1].out };
        let (g, d) = l.backward(input, &cache.encoder[i], &dh, i > 0);
        grad.encoder_hidden[i] = g;
        if let Some(d) = d {
            dh = d;
        }
    }
    Ok(grad)
}

/// Backpropagates the cached loss and applies one optimizer step.
pub fn backward_and_step(params: &mut VaeParams, cache: &ForwardCache, optimizer: &mut OptimizerState) -> Result<()> {
    let grad = gradients(params, cache)?;
    optimizer.step(params, &grad)
}
