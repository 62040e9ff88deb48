//! Context-subcarrier correlation map.
//!
//! Context channel groups and sampled subcarrier channels are embedded
//! into a shared unit-norm feature space by fixed seeded linear
//! projections; each map row is the temperature softmax of the cosine
//! similarities against all subcarrier groups, so rows are strictly
//! positive and sum to 1.

use crate::error::{Error, Result};
use crate::num::{softmax_in_place, split_seed, streams};
use crate::sampling::SampledCsi;
use crate::tensor::Tensor3;
use crate::CMatrix;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy)]
pub struct MapConfig {
    /// Feature channel count L.
    pub feature_channels: usize,
    /// Channels per context group (m_c), must divide L.
    pub context_group: usize,
    /// Subcarriers per sampling group (m_h).
    pub subcarrier_group: usize,
    /// Softmax temperature, > 0. Default 0.07.
    pub temperature: f64,
    /// Embedding dimension. Default 32.
    pub embed_dim: usize,
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_group == 0
            || self.feature_channels == 0
            || self.feature_channels % self.context_group != 0
        {
            return Err(Error::InvalidConfig(format!(
                "context group {} must divide feature channels {}",
                self.context_group, self.feature_channels
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidConfig("embed_dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_context_groups(&self) -> usize {
        self.feature_channels / self.context_group
    }
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            feature_channels: 64,
            context_group: 8,
            subcarrier_group: 8,
            temperature: 0.07,
            embed_dim: 32,
        }
    }
}

/// Fixed seeded linear projection followed by L2 normalization.
///
/// Stands in for a trained feature encoder; any transform with the same
/// signature can be plugged in via [`Embed`].
#[derive(Debug, Clone)]
pub struct FeatureEmbedder {
    weights: DMatrix<f64>,
}

/// Pluggable embedding interface (trained weights could be loaded behind
/// it later).
pub trait Embed {
    fn embed_dim(&self) -> usize;
    /// Map a raw real vector to a unit-norm embedding. The zero vector
    /// maps to the first canonical basis vector.
    fn embed(&self, input: &[f64]) -> Vec<f64>;
}

impl FeatureEmbedder {
    pub fn seeded(input_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let weights = DMatrix::from_fn(embed_dim, input_dim, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v / (input_dim as f64).sqrt()
        });
        Self { weights }
    }

    /// Context-side embedder (V_theta1 role).
    pub fn for_context(cfg: &MapConfig, root_seed: u64) -> Self {
        Self::seeded(
            cfg.context_group,
            cfg.embed_dim,
            split_seed(root_seed, streams::EMBED_CONTEXT),
        )
    }

    /// CSI-side embedder (V_theta2 role); input is the interleaved re/im
    /// flattening of an N_r x N_t matrix.
    pub fn for_csi(n_rx: usize, n_tx: usize, cfg: &MapConfig, root_seed: u64) -> Self {
        Self::seeded(
            2 * n_rx * n_tx,
            cfg.embed_dim,
            split_seed(root_seed, streams::EMBED_CSI),
        )
    }
}

impl Embed for FeatureEmbedder {
    fn embed_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn embed(&self, input: &[f64]) -> Vec<f64> {
        let d = self.embed_dim();
        let mut out = vec![0.0; d];
        if input.iter().all(|&v| v == 0.0) {
            out[0] = 1.0;
            return out;
        }
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, &v) in input.iter().enumerate() {
                acc += self.weights[(r, c)] * v;
            }
            *o = acc;
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            out.fill(0.0);
            out[0] = 1.0;
        } else {
            for v in out.iter_mut() {
                *v /= norm;
            }
        }
        out
    }
}

/// Mean-pool a context group's m_c channel planes spatially, then embed.
pub fn embed_context(
    context: &Tensor3,
    group: usize,
    group_size: usize,
    embedder: &dyn Embed,
) -> Result<Vec<f64>> {
    let n_groups = context.channels / group_size;
    if group >= n_groups {
        return Err(Error::InvalidInput(format!(
            "context group {group} out of range ({n_groups} groups)"
        )));
    }
    let plane = (context.h * context.w) as f64;
    let pooled: Vec<f64> = (0..group_size)
        .map(|k| {
            let c = group * group_size + k;
            context.channel(c).iter().sum::<f64>() / plane
        })
        .collect();
    Ok(embedder.embed(&pooled))
}

/// Flatten a complex channel matrix to interleaved re/im reals, then embed.
pub fn embed_csi(h: &CMatrix, embedder: &dyn Embed) -> Result<Vec<f64>> {
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite CSI entries".into()));
    }
    let mut flat = Vec::with_capacity(2 * h.len());
    for r in 0..h.nrows() {
        for c in 0..h.ncols() {
            flat.push(h[(r, c)].re);
            flat.push(h[(r, c)].im);
        }
    }
    Ok(embedder.embed(&flat))
}

/// Row-stochastic (L/m_c) x (N_s/m_h) correlation map.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values; each row sums to 1.
    pub values: Vec<f64>,
    pub t: u64,
}

impl CorrelationMap {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_max(&self, i: usize) -> f64 {
        self.row(i).iter().cloned().fold(0.0, f64::max)
    }
}

/// Build the map: entry (i, j) is the temperature softmax (over j) of the
/// cosine similarity between context-group and subcarrier-group embeddings.
pub fn build_map(
    context: &Tensor3,
    sampled_csi: &SampledCsi,
    config: &MapConfig,
    context_embedder: &dyn Embed,
    csi_embedder: &dyn Embed,
) -> Result<CorrelationMap> {
    config.validate()?;
    if context.channels != config.feature_channels {
        return Err(Error::InvalidInput(format!(
            "context has {} channels, config expects {}",
            context.channels, config.feature_channels
        )));
    }
    let rows = config.n_context_groups();
    let cols = sampled_csi.entries.len();
    if cols == 0 {
        return Err(Error::InvalidInput("no sampled subcarrier groups".into()));
    }
    let csi_emb: Vec<Vec<f64>> = sampled_csi
        .entries
        .iter()
        .map(|h| embed_csi(h, csi_embedder))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let ctx = embed_context(context, i, config.context_group, context_embedder)?;
        let mut logits: Vec<f64> = csi_emb
            .iter()
            .map(|e| ctx.iter().zip(e).map(|(a, b)| a * b).sum())
            .collect();
        softmax_in_place(&mut logits, config.temperature);
        values.extend_from_slice(&logits);
    }
    Ok(CorrelationMap {
        rows,
        cols,
        values,
        t: sampled_csi.t,
    })
}
