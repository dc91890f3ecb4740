//! Rotation-invariant spectral features, the 256-d linear embedding and its
//! triplet-loss trainer, and triplet mining from trajectories.

use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{checked_u32, PutLe, Reader};
use crate::error::{Error, Result};
use crate::projection::{FeatureSphere, Modality};
use crate::sht::ShtPlan;
use crate::spectra::power_spectrum;

pub const DESCRIPTOR_DIM: usize = 256;
pub const DEFAULT_FEATURE_DEGREES: usize = 64;
pub const TAU1: f64 = 2.0;
pub const TAU2: f64 = 0.2;

pub const DESC_MAGIC: &[u8; 4] = b"DESC";
pub const MODEL_MAGIC: &[u8; 4] = b"EMBD";
pub const MODEL_VERSION: u16 = 1;

/// `[log1p S_mod(l)]` for each modality in fixed order and `l < l_feat`,
/// computed on standardized channels.
pub fn spectral_features(sphere: &FeatureSphere, plan: &ShtPlan, l_feat: usize) -> Result<Vec<f64>> {
    if sphere.bandwidth() != plan.grid().bandwidth() {
        return Err(Error::shape("feature sphere sampled on a different grid"));
    }
    let mut out = Vec::with_capacity(3 * l_feat);
    for m in Modality::ALL {
        let channel = sphere.channel(m).standardized();
        let spec = plan.forward(&channel, l_feat)?;
        out.extend(power_spectrum(&spec, l_feat).into_iter().map(f64::ln_1p));
    }
    Ok(out)
}

/// `ψ(x) = W x + b` with `W` of shape `256 × d_in`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    input_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    /// Epochs run by the trainer; 0 for a fresh or loaded model.
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

impl EmbeddingModel {
    pub fn zeros(input_dim: usize) -> Self {
        Self {
            input_dim,
            weights: vec![0.0; DESCRIPTOR_DIM * input_dim],
            bias: vec![0.0; DESCRIPTOR_DIM],
            epochs: 0,
            final_loss: None,
        }
    }

    /// Weights uniform in `[−1/√d_in, 1/√d_in]`, zero bias.
    pub fn random(input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("embedding input dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 1.0 / (input_dim as f64).sqrt();
        let weights = (0..DESCRIPTOR_DIM * input_dim).map(|_| rng.gen_range(-a..=a)).collect();
        Ok(Self {
            weights,
            ..Self::zeros(input_dim)
        })
    }

    pub fn from_parts(input_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != DESCRIPTOR_DIM * input_dim || bias.len() != DESCRIPTOR_DIM {
            return Err(Error::shape(format!(
                "embedding parts {}+{} do not match {DESCRIPTOR_DIM}×{input_dim}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            input_dim,
            weights,
            bias,
            epochs: 0,
            final_loss: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::shape(format!(
                "feature length {} does not match model input {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(self.apply_linear(x).into_iter().zip(&self.bias).map(|(v, b)| v + b).collect())
    }

    /// `W x` without the bias.
    fn apply_linear(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.input_dim)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `EMBD` binary: magic, u16 version, u32 rows, u32 cols, f64 weights
    /// row-major, f64 bias.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(14 + 8 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(MODEL_MAGIC);
        out.put_u16(MODEL_VERSION);
        out.put_u32(checked_u32(DESCRIPTOR_DIM, "rows")?);
        out.put_u32(checked_u32(self.input_dim, "cols")?);
        for w in self.weights.iter().chain(&self.bias) {
            out.put_f64(*w);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MODEL_MAGIC)?;
        let version = r.u16("version")?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "embedding model",
                found: version.into(),
                expected: MODEL_VERSION.into(),
            });
        }
        let at = r.offset();
        let rows = r.u32("rows")? as usize;
        if rows != DESCRIPTOR_DIM {
            return Err(Error::format(at, format!("model has {rows} rows, expected {DESCRIPTOR_DIM}")));
        }
        let cols = r.u32("cols")? as usize;
        let weights = r.f64_vec(rows * cols, "weights")?;
        let bias = r.f64_vec(rows, "bias")?;
        r.finish()?;
        Self::from_parts(cols, weights, bias)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Per-sample loss `[d_ap − d_an + τ1]_+ + [d_ap − τ2]_+`.
pub fn triplet_loss(d_ap: f64, d_an: f64, tau1: f64, tau2: f64) -> Result<f64> {
    if !(d_ap >= 0.0 && d_an >= 0.0) {
        return Err(Error::invalid(format!("distances must be non-negative, got {d_ap}, {d_an}")));
    }
    Ok((d_ap - d_an + tau1).max(0.0) + (d_ap - tau2).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Triplets per SGD step; 0 means full batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0046,
            batch_size: 13,
            epochs: 50,
            seed: 0,
            tau1: TAU1,
            tau2: TAU2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    /// Mean loss over all triplets before training and after each epoch.
    pub loss_trace: Vec<f64>,
}

fn check_triplets(samples: &[Vec<f64>], triplets: &[Triplet], dim: usize) -> Result<()> {
    for t in triplets {
        for id in [t.anchor, t.positive, t.negative] {
            let s = samples
                .get(id)
                .ok_or_else(|| Error::invalid(format!("triplet references sample {id} of {}", samples.len())))?;
            if s.len() != dim {
                return Err(Error::shape(format!("sample {id} has length {}, expected {dim}", s.len())));
            }
        }
    }
    Ok(())
}

fn difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean batch loss over `triplets`.
pub fn batch_loss(model: &EmbeddingModel, samples: &[Vec<f64>], triplets: &[Triplet], tau1: f64, tau2: f64) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::invalid("no triplets"));
    }
    check_triplets(samples, triplets, model.input_dim)?;
    let mut total = 0.0;
    for t in triplets {
        let a = &samples[t.anchor];
        let d_ap = norm(&model.apply_linear(&difference(a, &samples[t.positive])));
        let d_an = norm(&model.apply_linear(&difference(a, &samples[t.negative])));
        total += triplet_loss(d_ap, d_an, tau1, tau2)?;
    }
    Ok(total / triplets.len() as f64)
}

/// Mean loss of `triplets` and its gradient with respect to the weights
/// (row-major) and bias. The bias cancels inside every distance, so its
/// gradient is identically zero.
pub fn loss_gradient(
    model: &EmbeddingModel,
    samples: &[Vec<f64>],
    triplets: &[Triplet],
    tau1: f64,
    tau2: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if triplets.is_empty() {
        return Err(Error::invalid("no triplets"));
    }
    check_triplets(samples, triplets, model.input_dim)?;
    let dim = model.input_dim;
    let mut grad = vec![0.0; model.weights.len()];
    let mut total = 0.0;
    let scale = 1.0 / triplets.len() as f64;
    for t in triplets {
        let a = &samples[t.anchor];
        let xp = difference(a, &samples[t.positive]);
        let xn = difference(a, &samples[t.negative]);
        let u = model.apply_linear(&xp);
        let v = model.apply_linear(&xn);
        let d_ap = norm(&u);
        let d_an = norm(&v);
        total += triplet_loss(d_ap, d_an, tau1, tau2)?;
        let h1 = d_ap - d_an + tau1 > 0.0;
        let h2 = d_ap - tau2 > 0.0;
        // d‖Wx‖/dW = (Wx/‖Wx‖) xᵀ, and 0 at ‖Wx‖ = 0.
        let cp = if d_ap > 0.0 { (h1 as u8 + h2 as u8) as f64 * scale / d_ap } else { 0.0 };
        let cn = if h1 && d_an > 0.0 { -scale / d_an } else { 0.0 };
        if cp == 0.0 && cn == 0.0 {
            continue;
        }
        for (r, row) in grad.chunks_exact_mut(dim).enumerate() {
            let gp = cp * u[r];
            let gn = cn * v[r];
            for ((g, p), n) in row.iter_mut().zip(&xp).zip(&xn) {
                *g += gp * p + gn * n;
            }
        }
    }
    Ok((total * scale, grad, vec![0.0; DESCRIPTOR_DIM]))
}

/// Mini-batch SGD on the triplet loss starting from `initial`. Batches are
/// drawn from a seeded shuffle of the triplets each epoch.
pub fn train_embedding(
    initial: EmbeddingModel,
    samples: &[Vec<f64>],
    triplets: &[Triplet],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if triplets.is_empty() {
        return Err(Error::invalid("training needs at least one triplet"));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let mut model = initial;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch = if config.batch_size == 0 { triplets.len() } else { config.batch_size };
    let mut order: Vec<Triplet> = triplets.to_vec();
    let mut trace = Vec::with_capacity(config.epochs + 1);
    trace.push(batch_loss(&model, samples, triplets, config.tau1, config.tau2)?);
    for epoch in 0..config.epochs {
        if batch < triplets.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (_, gw, gb) = loss_gradient(&model, samples, chunk, config.tau1, config.tau2)?;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= config.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= config.learning_rate * g;
            }
        }
        let loss = batch_loss(&model, samples, triplets, config.tau1, config.tau2)?;
        tracing::debug!(epoch, loss, "training epoch");
        trace.push(loss);
    }
    model.epochs += config.epochs;
    model.final_loss = trace.last().copied();
    Ok(TrainOutcome { model, loss_trace: trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub min_spacing: f64,
    pub positive_radius: f64,
    pub negative_min: f64,
    pub negative_max: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            min_spacing: 0.10,
            positive_radius: 5.0,
            negative_min: 6.0,
            negative_max: 20.0,
        }
    }
}

/// Indices of poses kept by the spacing rule: each pose is kept unless it
/// lies closer than `min_spacing` to an already kept one (input order).
pub fn spacing_subsample(positions: &[Vector3<f64>], min_spacing: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        if kept.iter().all(|&k| (positions[k] - p).norm() >= min_spacing) {
            kept.push(i);
        }
    }
    kept
}

/// One triplet per (anchor, positive) pair among the spacing-subsampled
/// poses, with a uniformly drawn negative. Ids index into `positions`.
pub fn mine_triplets(positions: &[Vector3<f64>], config: &MiningConfig, seed: u64) -> Result<Vec<Triplet>> {
    if positions.len() < 3 {
        return Err(Error::invalid(format!("mining needs at least 3 poses, got {}", positions.len())));
    }
    let kept = spacing_subsample(positions, config.min_spacing);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &a in &kept {
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for &o in &kept {
            if o == a {
                continue;
            }
            let d = (positions[o] - positions[a]).norm();
            if d < config.positive_radius {
                positives.push(o);
            } else if d >= config.negative_min && d <= config.negative_max {
                negatives.push(o);
            }
        }
        if negatives.is_empty() {
            continue;
        }
        for p in positives {
            let n = negatives[rng.gen_range(0..negatives.len())];
            out.push(Triplet {
                anchor: a,
                positive: p,
                negative: n,
            });
        }
    }
    Ok(out)
}

/// `DESC` binary: magic, u32 count, u32 dim (256), `count × dim` f32.
pub fn descriptors_to_bytes(descriptors: &[Vec<f32>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + descriptors.len() * DESCRIPTOR_DIM * 4);
    out.extend_from_slice(DESC_MAGIC);
    out.put_u32(checked_u32(descriptors.len(), "descriptor count")?);
    out.put_u32(DESCRIPTOR_DIM as u32);
    for (i, d) in descriptors.iter().enumerate() {
        if d.len() != DESCRIPTOR_DIM {
            return Err(Error::shape(format!("descriptor {i} has length {}", d.len())));
        }
        d.iter().for_each(|v| out.put_f32(*v));
    }
    Ok(out)
}

pub fn descriptors_from_bytes(bytes: &[u8]) -> Result<Vec<Vec<f32>>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(DESC_MAGIC)?;
    let count = r.u32("count")? as usize;
    let at = r.offset();
    let dim = r.u32("dim")? as usize;
    if dim != DESCRIPTOR_DIM {
        return Err(Error::format(at, format!("descriptor dim {dim}, expected {DESCRIPTOR_DIM}")));
    }
    let out = (0..count)
        .map(|i| r.f32_vec(dim, &format!("descriptor {i}")))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(out)
}

pub fn save_descriptors(path: impl AsRef<Path>, descriptors: &[Vec<f32>]) -> Result<()> {
    std::fs::write(path, descriptors_to_bytes(descriptors)?)?;
    Ok(())
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    descriptors_from_bytes(&std::fs::read(path)?)
}
