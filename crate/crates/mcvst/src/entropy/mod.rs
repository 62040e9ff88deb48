//! Time-correlated multi-reference entropy coding.
//!
//! Latent tensors are quantized to integers, split spatially into a
//! checkerboard of anchors ((h + w) even) and non-anchors, and coded group
//! by group in two passes. Laplace parameters for each pass come from a
//! pluggable predictor fed with references drawn from the correlation-map
//! window, the causally decoded context, the hyper-latent, and (for
//! non-anchors) the decoded anchors of the same group. Every quantity the
//! predictor sees is available to the decoder at the same point in the
//! stream, so decoding is exact. Rate accounting mirrors the coded
//! probabilities in bits (log base 2).

pub mod hyper;
pub mod laplace;
pub mod range;

use crate::corrmap::CorrelationMap;
use crate::error::{Error, Result};
use crate::num::softplus;
use crate::tensor::{IntGrid, Tensor3};
use hyper::HyperDensity;
use laplace::{laplace_box_prob, SCALE_FLOOR};
use range::{
    parse_container, write_container, Container, RangeDecoder, RangeEncoder, StreamKind,
    SymbolTable,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use std::collections::VecDeque;

/// Round-half-away-from-zero quantization of a real grid.
pub fn quantize(x: &Tensor3) -> Result<IntGrid> {
    let mut data = Vec::with_capacity(x.data.len());
    for &v in &x.data {
        if !v.is_finite() {
            return Err(Error::InvalidInput("non-finite value in quantize".into()));
        }
        // f64::round already ties away from zero.
        data.push(v.round() as i32);
    }
    Ok(IntGrid {
        channels: x.channels,
        h: x.h,
        w: x.w,
        data,
    })
}

/// Split a grid into anchor ((h + w) even) and non-anchor values, each in
/// channel-major raster order over its own positions.
pub fn checkerboard_split(x: &IntGrid) -> (Vec<i32>, Vec<i32>) {
    let mut anchors = Vec::new();
    let mut non_anchors = Vec::new();
    for c in 0..x.channels {
        for y in 0..x.h {
            for xx in 0..x.w {
                if (y + xx) % 2 == 0 {
                    anchors.push(x.at(c, y, xx));
                } else {
                    non_anchors.push(x.at(c, y, xx));
                }
            }
        }
    }
    (anchors, non_anchors)
}

/// Inverse of [`checkerboard_split`].
pub fn checkerboard_merge(
    channels: usize,
    h: usize,
    w: usize,
    anchors: &[i32],
    non_anchors: &[i32],
) -> Result<IntGrid> {
    if anchors.len() + non_anchors.len() != channels * h * w {
        return Err(Error::InvalidInput(format!(
            "checkerboard parts ({} + {}) do not fill {}x{}x{}",
            anchors.len(),
            non_anchors.len(),
            channels,
            h,
            w
        )));
    }
    let mut out = IntGrid::zeros(channels, h, w);
    let (mut a, mut n) = (0usize, 0usize);
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let v = if (y + x) % 2 == 0 {
                    let v = anchors[a];
                    a += 1;
                    v
                } else {
                    let v = non_anchors[n];
                    n += 1;
                    v
                };
                *out_at(&mut out, c, y, x) = v;
            }
        }
    }
    Ok(out)
}

#[inline]
fn out_at(g: &mut IntGrid, c: usize, y: usize, x: usize) -> &mut i32 {
    &mut g.data[(c * g.h + y) * g.w + x]
}

/// Laplace parameters for one coding pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParams {
    pub mu: Vec<f64>,
    pub scale: Vec<f64>,
}

/// References feeding the parameter predictor for one group pass.
///
/// `snr_db` and `q` are opaque side information; the default predictor
/// ignores them but trained replacements may condition on them.
#[derive(Debug, Clone)]
pub struct ReferenceBundle {
    pub phi_m: Vec<f64>,
    pub phi_ch: Vec<f64>,
    pub phi_z: Vec<f64>,
    pub phi_lc: Option<Vec<f64>>,
    pub snr_db: f64,
    pub q: Vec<f64>,
}

/// Pooled summary of a value collection: [mean, mean |x|, rms].
pub fn stats3<I: IntoIterator<Item = f64>>(values: I) -> [f64; 3] {
    let mut n = 0usize;
    let (mut s, mut sa, mut sq) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1;
        s += v;
        sa += v.abs();
        sq += v * v;
    }
    if n == 0 {
        return [0.0; 3];
    }
    let nf = n as f64;
    [s / nf, sa / nf, (sq / nf).sqrt()]
}

const REF_DIM: usize = 3;

/// Pluggable generator g_ep producing Laplace parameters from references.
pub trait ParamPredictor {
    /// Anchor pass: references must not carry the anchor-conditioned term.
    fn predict_params_anchor(&self, refs: &ReferenceBundle, n: usize) -> Result<EntropyParams>;
    /// Non-anchor pass: the anchor-conditioned reference must be present.
    fn predict_params_nonanchor(&self, refs: &ReferenceBundle, n: usize) -> Result<EntropyParams>;
}

/// Default g_ep: fixed seeded affine maps (no bias), scale through softplus
/// clamped to the scale floor. All-zero references therefore give
/// mu = 0 and scale = softplus(0) = ln 2.
#[derive(Debug, Clone)]
pub struct DefaultPredictor {
    w_mu: Vec<f64>,
    w_scale: Vec<f64>,
    scale_floor: f64,
}

impl DefaultPredictor {
    /// Replace the default scale floor (clamped below at [`SCALE_FLOOR`]).
    pub fn with_scale_floor(mut self, floor: f64) -> Self {
        self.scale_floor = floor.max(SCALE_FLOOR);
        self
    }

    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 0.1).expect("valid normal");
        // 4 references x 3 stats; the anchor pass uses the first 9 weights.
        let w_mu = (0..4 * REF_DIM).map(|_| dist.sample(&mut rng)).collect();
        let mut w_scale: Vec<f64> = (0..4 * REF_DIM).map(|_| dist.sample(&mut rng)).collect();
        // Unit prior weight on the rms statistic of the causal-context,
        // hyper, and anchor references, so predicted scales track the
        // magnitude of what has already been decoded.
        for idx in [5, 8, 11] {
            w_scale[idx] += 1.0;
        }
        Self {
            w_mu,
            w_scale,
            scale_floor: SCALE_FLOOR,
        }
    }

    fn fuse(&self, parts: &[&[f64]], n: usize) -> Result<EntropyParams> {
        let mut mu = 0.0;
        let mut raw = 0.0;
        let mut k = 0usize;
        for part in parts {
            if part.len() != REF_DIM {
                return Err(Error::InvalidRefs(format!(
                    "reference has {} stats, expected {REF_DIM}",
                    part.len()
                )));
            }
            for &v in *part {
                mu += self.w_mu[k] * v;
                raw += self.w_scale[k] * v;
                k += 1;
            }
        }
        let scale = softplus(raw).max(self.scale_floor);
        Ok(EntropyParams {
            mu: vec![mu; n],
            scale: vec![scale; n],
        })
    }
}

impl ParamPredictor for DefaultPredictor {
    fn predict_params_anchor(&self, refs: &ReferenceBundle, n: usize) -> Result<EntropyParams> {
        if refs.phi_lc.is_some() {
            return Err(Error::InvalidRefs(
                "anchor pass must not carry an anchor-conditioned reference".into(),
            ));
        }
        self.fuse(&[&refs.phi_m, &refs.phi_ch, &refs.phi_z], n)
    }

    fn predict_params_nonanchor(&self, refs: &ReferenceBundle, n: usize) -> Result<EntropyParams> {
        let lc = refs.phi_lc.as_ref().ok_or_else(|| {
            Error::InvalidRefs("non-anchor pass requires the anchor-conditioned reference".into())
        })?;
        self.fuse(&[&refs.phi_m, &refs.phi_ch, &refs.phi_z, lc], n)
    }
}

/// Rolling store of the most recent correlation maps, one per symbol time.
#[derive(Debug, Default)]
pub struct MapHistory {
    maps: VecDeque<CorrelationMap>,
    last_t: Option<u64>,
    capacity: usize,
}

impl MapHistory {
    /// `period` is the reference-window period N_s / m_h; the history never
    /// needs to look back further than one full period.
    pub fn new(period: usize) -> Self {
        Self {
            maps: VecDeque::new(),
            last_t: None,
            capacity: period.max(1),
        }
    }

    pub fn push(&mut self, map: CorrelationMap) -> Result<()> {
        if let Some(last) = self.last_t {
            if map.t <= last {
                return Err(Error::OrderingError { t: map.t, last });
            }
        }
        self.last_t = Some(map.t);
        self.maps.push_back(map);
        while self.maps.len() > self.capacity {
            self.maps.pop_front();
        }
        Ok(())
    }

    pub fn get(&self, t: u64) -> Option<&CorrelationMap> {
        self.maps.iter().find(|m| m.t == t)
    }
}

/// The window m_s: maps at t_p = [t − (t mod period), …, t−1] plus m_t.
#[derive(Debug, Clone)]
pub struct ReferenceWindow {
    pub maps: Vec<CorrelationMap>,
    pub t: u64,
    /// Count of t_p indices absent from history (warm-up truncation).
    pub missing: usize,
}

impl ReferenceWindow {
    pub fn indices(&self) -> Vec<u64> {
        self.maps.iter().map(|m| m.t).collect()
    }

    pub fn n_groups(&self) -> usize {
        self.maps.last().map(|m| m.rows).unwrap_or(0)
    }
}

/// Assemble the reference window for the current map given the history of
/// earlier maps. Missing warm-up entries are skipped and counted.
pub fn build_reference_window(
    history: &MapHistory,
    current: &CorrelationMap,
    period: usize,
) -> ReferenceWindow {
    let t = current.t;
    let start = t - (t % period.max(1) as u64);
    let mut maps = Vec::new();
    let mut missing = 0usize;
    for tt in start..t {
        match history.get(tt) {
            Some(m) => maps.push(m.clone()),
            None => missing += 1,
        }
    }
    maps.push(current.clone());
    ReferenceWindow { maps, t, missing }
}

fn phi_m_for_group(window: &ReferenceWindow, group: usize) -> Vec<f64> {
    // Causal in the group index: rows 0..=group of every map in m_s.
    let vals = window
        .maps
        .iter()
        .flat_map(|m| (0..=group.min(m.rows - 1)).flat_map(|i| m.row(i).iter().copied()));
    stats3(vals).to_vec()
}

fn phi_from_ints(vals: &[i32]) -> Vec<f64> {
    stats3(vals.iter().map(|&v| v as f64)).to_vec()
}

/// Per-pass coding state shared by encoder and decoder so both derive
/// bit-identical probability tables.
struct PassModel {
    lo: i32,
    table: Option<(u64, u64, SymbolTable)>,
    hi: i32,
}

impl PassModel {
    fn new(lo: i32, hi: i32) -> Self {
        Self {
            lo,
            hi,
            table: None,
        }
    }

    fn table_for(&mut self, mu: f64, scale: f64) -> Result<&SymbolTable> {
        let key = (mu.to_bits(), scale.to_bits());
        let stale = match &self.table {
            Some((m, s, _)) => (*m, *s) != key,
            None => true,
        };
        if stale {
            let probs: Vec<f64> = (self.lo..=self.hi)
                .map(|n| laplace_box_prob(n, mu, scale))
                .collect::<Result<_>>()?;
            let table = SymbolTable::from_probs(self.lo, &probs)?;
            self.table = Some((key.0, key.1, table));
        }
        Ok(&self.table.as_ref().expect("just set").2)
    }
}

/// Output of coding one latent tensor.
#[derive(Debug, Clone)]
pub struct CodedLatent {
    /// Framed bitstream (container + payload).
    pub bytes: Vec<u8>,
    /// Information content −Σ log₂ P per group, before η weighting.
    pub group_info_bits: Vec<f64>,
}

impl CodedLatent {
    pub fn info_bits(&self) -> f64 {
        self.group_info_bits.iter().sum()
    }
}

/// Widest integer support a single probability table may cover.
const MAX_SYMBOL_SPAN: i64 = 1 << 16;
/// Largest decoded grid accepted from a (possibly corrupted) container.
const MAX_DECODE_ELEMS: usize = 1 << 26;

fn check_span(lo: i32, hi: i32) -> Result<()> {
    if hi < lo || (hi as i64 - lo as i64) >= MAX_SYMBOL_SPAN {
        return Err(Error::Decoding(format!(
            "symbol bounds [{lo}, {hi}] out of range"
        )));
    }
    Ok(())
}

fn check_dims(channels: usize, h: usize, w: usize) -> Result<()> {
    let elems = channels
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .unwrap_or(usize::MAX);
    if elems > MAX_DECODE_ELEMS {
        return Err(Error::Decoding(format!(
            "grid {channels}x{h}x{w} exceeds the decode size limit"
        )));
    }
    Ok(())
}

fn group_span(latent: &IntGrid, n_groups: usize) -> Result<usize> {
    if n_groups == 0 || latent.channels % n_groups != 0 {
        return Err(Error::InvalidInput(format!(
            "latent channels {} not divisible into {} groups",
            latent.channels, n_groups
        )));
    }
    Ok(latent.channels / n_groups)
}

fn pass_positions(h: usize, w: usize, anchors: bool) -> impl Iterator<Item = (usize, usize)> {
    (0..h).flat_map(move |y| {
        (0..w).filter_map(move |x| {
            if ((y + x) % 2 == 0) == anchors {
                Some((y, x))
            } else {
                None
            }
        })
    })
}

/// Two-pass causal encoding of an integer latent against its references.
pub fn encode_tensor(
    latent: &IntGrid,
    window: &ReferenceWindow,
    z: &IntGrid,
    predictor: &dyn ParamPredictor,
    kind: StreamKind,
    snr_db: f64,
) -> Result<CodedLatent> {
    let n_groups = window.n_groups();
    let group_size = group_span(latent, n_groups)?;
    let plane = latent.h * latent.w;
    let (lo, hi) = match (latent.data.iter().min(), latent.data.iter().max()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => (0, 0),
    };
    check_span(lo, hi).map_err(|_| {
        Error::Encoding(format!("latent symbol range [{lo}, {hi}] too wide"))
    })?;
    let phi_z = phi_from_ints(&z.data);
    let mut enc = RangeEncoder::new();
    let mut model = PassModel::new(lo, hi);
    let mut group_bits = Vec::with_capacity(n_groups);
    for i in 0..n_groups {
        let phi_m = phi_m_for_group(window, i);
        let phi_ch = phi_from_ints(&latent.data[..i * group_size * plane]);
        let mut bits = 0.0;
        let mut anchors_seen: Vec<i32> = Vec::with_capacity(group_size * plane.div_ceil(2));
        for anchors in [true, false] {
            let refs = ReferenceBundle {
                phi_m: phi_m.clone(),
                phi_ch: phi_ch.clone(),
                phi_z: phi_z.clone(),
                phi_lc: (!anchors).then(|| phi_from_ints(&anchors_seen)),
                snr_db,
                q: Vec::new(),
            };
            let n_elems = group_size * plane;
            let params = if anchors {
                predictor.predict_params_anchor(&refs, n_elems)?
            } else {
                predictor.predict_params_nonanchor(&refs, n_elems)?
            };
            let mut k = 0usize;
            for c in i * group_size..(i + 1) * group_size {
                for (y, x) in pass_positions(latent.h, latent.w, anchors) {
                    let v = latent.at(c, y, x);
                    let (mu, b) = (params.mu[k], params.scale[k]);
                    k += 1;
                    enc.encode_symbol(model.table_for(mu, b)?, v)?;
                    bits -= laplace_box_prob(v, mu, b)?.log2();
                    if anchors {
                        anchors_seen.push(v);
                    }
                }
            }
        }
        group_bits.push(bits);
    }
    let bytes = write_container(&Container {
        kind,
        channels: latent.channels as u32,
        h: latent.h as u32,
        w: latent.w as u32,
        lo,
        hi,
        payload: enc.finish(),
    });
    Ok(CodedLatent {
        bytes,
        group_info_bits: group_bits,
    })
}

/// Exact inverse of [`encode_tensor`] given the same references.
pub fn decode_tensor(
    bytes: &[u8],
    window: &ReferenceWindow,
    z: &IntGrid,
    predictor: &dyn ParamPredictor,
    snr_db: f64,
) -> Result<IntGrid> {
    let (container, _) = parse_container(bytes)?;
    let (channels, h, w) = (
        container.channels as usize,
        container.h as usize,
        container.w as usize,
    );
    check_dims(channels, h, w)?;
    check_span(container.lo, container.hi)?;
    let n_groups = window.n_groups();
    let mut out = IntGrid::zeros(channels, h, w);
    let group_size = group_span(&out, n_groups)?;
    let plane = h * w;
    let phi_z = phi_from_ints(&z.data);
    let mut dec = RangeDecoder::new(&container.payload);
    let mut model = PassModel::new(container.lo, container.hi);
    for i in 0..n_groups {
        let phi_m = phi_m_for_group(window, i);
        let phi_ch = phi_from_ints(&out.data[..i * group_size * plane]);
        let mut anchors_seen: Vec<i32> = Vec::new();
        for anchors in [true, false] {
            let refs = ReferenceBundle {
                phi_m: phi_m.clone(),
                phi_ch: phi_ch.clone(),
                phi_z: phi_z.clone(),
                phi_lc: (!anchors).then(|| phi_from_ints(&anchors_seen)),
                snr_db,
                q: Vec::new(),
            };
            let n_elems = group_size * plane;
            let params = if anchors {
                predictor.predict_params_anchor(&refs, n_elems)?
            } else {
                predictor.predict_params_nonanchor(&refs, n_elems)?
            };
            let mut k = 0usize;
            for c in i * group_size..(i + 1) * group_size {
                for (y, x) in pass_positions(h, w, anchors) {
                    let table = model.table_for(params.mu[k], params.scale[k])?;
                    k += 1;
                    let v = dec.decode_symbol(table);
                    *out_at(&mut out, c, y, x) = v;
                    if anchors {
                        anchors_seen.push(v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Code a hyper-latent under its factorized density.
pub fn encode_hyper(z: &IntGrid, density: &HyperDensity, kind: StreamKind) -> Result<CodedLatent> {
    density.validate()?;
    if z.channels != density.channels.len() {
        return Err(Error::InvalidParams(format!(
            "hyper grid has {} channels, density has {}",
            z.channels,
            density.channels.len()
        )));
    }
    let (lo, hi) = match (z.data.iter().min(), z.data.iter().max()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => (0, 0),
    };
    check_span(lo, hi).map_err(|_| {
        Error::Encoding(format!("hyper symbol range [{lo}, {hi}] too wide"))
    })?;
    let mut enc = RangeEncoder::new();
    let mut bits = 0.0;
    for (c, psi) in density.channels.iter().enumerate() {
        let probs: Vec<f64> = (lo..=hi).map(|n| psi.box_prob(n)).collect();
        let table = SymbolTable::from_probs(lo, &probs)?;
        for &v in z.channel(c) {
            enc.encode_symbol(&table, v)?;
            bits -= psi.box_prob(v).log2();
        }
    }
    let bytes = write_container(&Container {
        kind,
        channels: z.channels as u32,
        h: z.h as u32,
        w: z.w as u32,
        lo,
        hi,
        payload: enc.finish(),
    });
    Ok(CodedLatent {
        bytes,
        group_info_bits: vec![bits],
    })
}

/// Exact inverse of [`encode_hyper`].
pub fn decode_hyper(bytes: &[u8], density: &HyperDensity) -> Result<IntGrid> {
    let (container, _) = parse_container(bytes)?;
    let (channels, h, w) = (
        container.channels as usize,
        container.h as usize,
        container.w as usize,
    );
    if channels != density.channels.len() {
        return Err(Error::Decoding(format!(
            "hyper stream has {} channels, density has {}",
            channels,
            density.channels.len()
        )));
    }
    check_dims(channels, h, w)?;
    check_span(container.lo, container.hi)?;
    let mut dec = RangeDecoder::new(&container.payload);
    let mut out = IntGrid::zeros(channels, h, w);
    for (c, psi) in density.channels.iter().enumerate() {
        let probs: Vec<f64> = (container.lo..=container.hi)
            .map(|n| psi.box_prob(n))
            .collect();
        let table = SymbolTable::from_probs(container.lo, &probs)?;
        let plane = h * w;
        for k in 0..plane {
            out.data[c * plane + k] = dec.decode_symbol(&table);
        }
    }
    Ok(out)
}

/// Per-frame bandwidth accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub k_c: f64,
    pub k_v: f64,
    pub k_cz: f64,
    pub k_vz: f64,
    pub k_t: f64,
    pub eta: Vec<f64>,
    pub cbr: f64,
}

/// Bandwidth cost of one group: −η · Σ log₂ P over its coded elements.
pub fn group_rate(probs: &[f64], eta: f64) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidInput(format!("eta must be >= 0, got {eta}")));
    }
    let mut bits = 0.0;
    for &p in probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Internal(format!("probability {p} outside (0, 1]")));
        }
        bits -= p.log2();
    }
    Ok(eta * bits)
}

/// Sum of per-group costs.
pub fn total_rate(group_rates: &[f64]) -> Result<f64> {
    if group_rates.iter().any(|&k| k < 0.0) {
        return Err(Error::InvalidInput("negative group rate".into()));
    }
    Ok(group_rates.iter().sum())
}

/// k_t = k_c + k_v + k_cz + k_vz.
pub fn transmission_cost(k_c: f64, k_v: f64, k_cz: f64, k_vz: f64) -> Result<f64> {
    let parts = [k_c, k_v, k_cz, k_vz];
    if parts.iter().any(|&k| k < 0.0) {
        return Err(Error::InvalidInput("negative cost component".into()));
    }
    Ok(parts.iter().sum())
}

/// Apply η weights to per-group information content.
pub fn weighted_cost(group_info_bits: &[f64], eta: &[f64]) -> Result<f64> {
    if group_info_bits.len() != eta.len() {
        return Err(Error::InvalidInput(format!(
            "{} group rates vs {} eta weights",
            group_info_bits.len(),
            eta.len()
        )));
    }
    let rates: Vec<f64> = group_info_bits
        .iter()
        .zip(eta)
        .map(|(&b, &e)| e * b)
        .collect();
    total_rate(&rates)
}

/// Default rate-adjustment weights: η_i = 1 + row-max of map row i.
pub fn eta_from_map(map: &CorrelationMap) -> Vec<f64> {
    (0..map.rows).map(|i| 1.0 + map.row_max(i)).collect()
}

/// Channel bandwidth ratio: (Σ_t k_t) / (T · H · W · 3).
pub fn cbr(per_frame_costs: &[f64], h: usize, w: usize) -> Result<f64> {
    let t = per_frame_costs.len();
    if t == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidInput("CBR denominator is zero".into()));
    }
    Ok(per_frame_costs.iter().sum::<f64>() / (t * h * w * 3) as f64)
}

/// Diagnostic loss value k_t + λ·(D(x, x̂) + D(x, x̄)) with MSE distortions.
pub fn diagnostic_loss(k_t: f64, lambda: f64, mse_hat: f64, mse_bar: f64) -> f64 {
    k_t + lambda * (mse_hat + mse_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_map(rows: usize, cols: usize, t: u64) -> CorrelationMap {
        CorrelationMap {
            rows,
            cols,
            values: vec![1.0 / cols as f64; rows * cols],
            t,
        }
    }

    fn random_map(rng: &mut ChaCha12Rng, rows: usize, cols: usize, t: u64) -> CorrelationMap {
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let mut row: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            values.extend(row);
        }
        CorrelationMap {
            rows,
            cols,
            values,
            t,
        }
    }

    fn laplace_grid(rng: &mut ChaCha12Rng, channels: usize, h: usize, w: usize) -> IntGrid {
        let mut g = IntGrid::zeros(channels, h, w);
        for v in g.data.iter_mut() {
            // Inverse-CDF sample of a Laplace with scale ~1.5, quantized.
            let u: f64 = rng.gen_range(-0.5..0.5);
            *v = (-1.5 * u.signum() * (1.0 - 2.0 * u.abs()).ln()).round() as i32;
        }
        g
    }

    #[test]
    fn quantize_ties_away_from_zero() {
        let x = Tensor3::from_data(1, 1, 4, vec![0.5, -0.5, 2.4, -2.5]).unwrap();
        let q = quantize(&x).unwrap();
        assert_eq!(q.data, vec![1, -1, 2, -3]);
        let bad = Tensor3::from_data(1, 1, 1, vec![f64::INFINITY]).unwrap();
        assert!(quantize(&bad).is_err());
    }

    #[test]
    fn checkerboard_2x2_and_1x1() {
        let g = IntGrid {
            channels: 1,
            h: 2,
            w: 2,
            data: vec![1, 2, 3, 4],
        };
        let (a, n) = checkerboard_split(&g);
        assert_eq!(a, vec![1, 4]); // (0,0) and (1,1)
        assert_eq!(n, vec![2, 3]); // (0,1) and (1,0)
        let single = IntGrid {
            channels: 1,
            h: 1,
            w: 1,
            data: vec![7],
        };
        let (a, n) = checkerboard_split(&single);
        assert_eq!((a, n), (vec![7], vec![]));
    }

    #[test]
    fn checkerboard_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut g = IntGrid::zeros(3, 4, 4);
        g.data.iter_mut().for_each(|v| *v = rng.gen_range(-9..9));
        let (a, n) = checkerboard_split(&g);
        assert_eq!(a.len(), n.len());
        let back = checkerboard_merge(3, 4, 4, &a, &n).unwrap();
        assert_eq!(back, g);
        assert!(checkerboard_merge(3, 4, 4, &a, &n[1..]).is_err());
    }

    #[test]
    fn default_predictor_zero_refs() {
        let p = DefaultPredictor::seeded(0);
        let refs = ReferenceBundle {
            phi_m: vec![0.0; 3],
            phi_ch: vec![0.0; 3],
            phi_z: vec![0.0; 3],
            phi_lc: None,
            snr_db: 10.0,
            q: Vec::new(),
        };
        let params = p.predict_params_anchor(&refs, 4).unwrap();
        assert_eq!(params.mu, vec![0.0; 4]);
        let ln2 = std::f64::consts::LN_2;
        assert!(params.scale.iter().all(|&s| (s - ln2).abs() < 1e-15));
        let mut refs_na = refs.clone();
        refs_na.phi_lc = Some(vec![0.0; 3]);
        let params = p.predict_params_nonanchor(&refs_na, 2).unwrap();
        assert_eq!(params.mu, vec![0.0; 2]);
        assert!((params.scale[0] - ln2).abs() < 1e-15);
    }

    #[test]
    fn predictor_reference_sensitivity_and_determinism() {
        let p = DefaultPredictor::seeded(3);
        let refs = ReferenceBundle {
            phi_m: vec![0.4, 0.4, 0.5],
            phi_ch: vec![0.1, 0.8, 1.1],
            phi_z: vec![-0.2, 0.3, 0.4],
            phi_lc: None,
            snr_db: 10.0,
            q: Vec::new(),
        };
        let a = p.predict_params_anchor(&refs, 1).unwrap();
        let b = p.predict_params_anchor(&refs, 1).unwrap();
        assert_eq!(a, b);
        let mut shifted = refs.clone();
        shifted.phi_m = vec![0.9, 0.1, 0.7];
        let c = p.predict_params_anchor(&shifted, 1).unwrap();
        assert_ne!(a.mu[0], c.mu[0]);
    }

    #[test]
    fn predictor_rejects_wrong_reference_set() {
        let p = DefaultPredictor::seeded(3);
        let mut refs = ReferenceBundle {
            phi_m: vec![0.0; 3],
            phi_ch: vec![0.0; 3],
            phi_z: vec![0.0; 3],
            phi_lc: Some(vec![0.0; 3]),
            snr_db: 0.0,
            q: Vec::new(),
        };
        assert!(matches!(
            p.predict_params_anchor(&refs, 1),
            Err(Error::InvalidRefs(_))
        ));
        refs.phi_lc = None;
        assert!(matches!(
            p.predict_params_nonanchor(&refs, 1),
            Err(Error::InvalidRefs(_))
        ));
    }

    #[test]
    fn reference_window_formula() {
        // Period 8: maps pushed at t = 8, 9, 10, then current t = 11.
        let mut hist = MapHistory::new(8);
        for t in 8..11 {
            hist.push(uniform_map(4, 8, t)).unwrap();
        }
        let w = build_reference_window(&hist, &uniform_map(4, 8, 11), 8);
        assert_eq!(w.indices(), vec![8, 9, 10, 11]);
        assert_eq!(w.missing, 0);
        // At a period boundary the window is the current map alone.
        let w = build_reference_window(&MapHistory::new(8), &uniform_map(4, 8, 8), 8);
        assert_eq!(w.indices(), vec![8]);
        let w = build_reference_window(&MapHistory::new(8), &uniform_map(4, 8, 0), 8);
        assert_eq!(w.indices(), vec![0]);
        // Warm-up truncation: t = 3 with empty history skips 3 entries.
        let w = build_reference_window(&MapHistory::new(8), &uniform_map(4, 8, 3), 8);
        assert_eq!(w.indices(), vec![3]);
        assert_eq!(w.missing, 3);
    }

    #[test]
    fn history_rejects_non_monotone_pushes() {
        let mut hist = MapHistory::new(8);
        hist.push(uniform_map(2, 4, 5)).unwrap();
        assert!(matches!(
            hist.push(uniform_map(2, 4, 5)),
            Err(Error::OrderingError { t: 5, last: 5 })
        ));
    }

    #[test]
    fn tensor_codec_round_trip_multi_frame() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let predictor = DefaultPredictor::seeded(9);
        let z = laplace_grid(&mut rng, 4, 1, 1);
        let mut hist = MapHistory::new(8);
        for t in 0..12u64 {
            let map = random_map(&mut rng, 4, 8, t);
            let window = build_reference_window(&hist, &map, 8);
            let latent = laplace_grid(&mut rng, 8, 6, 6);
            let coded = encode_tensor(
                &latent,
                &window,
                &z,
                &predictor,
                StreamKind::Context,
                10.0,
            )
            .unwrap();
            let back = decode_tensor(&coded.bytes, &window, &z, &predictor, 10.0).unwrap();
            assert_eq!(back, latent, "frame {t}");
            assert_eq!(coded.group_info_bits.len(), 4);
            hist.push(map).unwrap();
        }
    }

    #[test]
    fn measured_bits_track_information_content() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let predictor = DefaultPredictor::seeded(1);
        let z = IntGrid::zeros(2, 1, 1);
        let window = build_reference_window(&MapHistory::new(8), &uniform_map(8, 8, 0), 8);
        // >= 10^4 symbols.
        let latent = laplace_grid(&mut rng, 16, 28, 28);
        assert!(latent.data.len() >= 10_000);
        let coded =
            encode_tensor(&latent, &window, &z, &predictor, StreamKind::Context, 0.0).unwrap();
        let info = coded.info_bits();
        let payload_bits = ((coded.bytes.len() - 33) * 8) as f64;
        // The frequency table renormalizes over the coded span, dropping
        // Laplace tail mass, so the payload may land slightly below the
        // model information content.
        assert!(payload_bits >= 0.97 * info - 8.0, "payload implausibly small: {payload_bits} < {info}");
        assert!(
            payload_bits <= info + 64.0 + 0.001 * info,
            "overhead too large: {payload_bits} vs {info}"
        );
    }

    #[test]
    fn hyper_codec_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let density = HyperDensity::seeded(6, 42);
        let z = laplace_grid(&mut rng, 6, 3, 3);
        let coded = encode_hyper(&z, &density, StreamKind::HyperContext).unwrap();
        let back = decode_hyper(&coded.bytes, &density).unwrap();
        assert_eq!(back, z);
        let wrong = HyperDensity::seeded(5, 42);
        assert!(decode_hyper(&coded.bytes, &wrong).is_err());
    }

    #[test]
    fn group_rate_examples() {
        let probs = vec![0.5; 12];
        assert!((group_rate(&probs, 1.0).unwrap() - 12.0).abs() < 1e-12);
        assert_eq!(group_rate(&probs, 0.0).unwrap(), 0.0);
        let k1 = group_rate(&probs, 1.0).unwrap();
        let k2 = group_rate(&probs, 2.0).unwrap();
        assert!((k2 - 2.0 * k1).abs() < 1e-12);
        assert!(group_rate(&[0.0], 1.0).is_err());
        assert!(group_rate(&probs, -1.0).is_err());
    }

    #[test]
    fn rate_sums_and_invariants() {
        assert_eq!(total_rate(&[]).unwrap(), 0.0);
        assert_eq!(total_rate(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 10.0);
        assert_eq!(total_rate(&[4.0, 2.0, 1.0, 3.0]).unwrap(), 10.0);
        assert!(total_rate(&[-1.0]).is_err());
        assert_eq!(transmission_cost(1.0, 2.0, 3.0, 4.0).unwrap(), 10.0);
        assert_eq!(transmission_cost(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(transmission_cost(-0.1, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn eta_weights_from_map() {
        let mut map = uniform_map(2, 4, 0);
        map.values[0] = 0.7;
        let eta = eta_from_map(&map);
        assert!((eta[0] - 1.7).abs() < 1e-12);
        assert!((eta[1] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn cbr_matches_operating_point() {
        assert_eq!(cbr(&[0.0, 0.0], 16, 16).unwrap(), 0.0);
        let r = cbr(&[6802.8], 256, 256).unwrap();
        assert!((r - 0.0347).abs() < 1e-4, "cbr {r}");
        let r2 = cbr(&[2.0 * 6802.8], 256, 256).unwrap();
        assert!((r2 - 2.0 * r).abs() < 1e-12);
        assert!(cbr(&[], 256, 256).is_err());
    }

    #[test]
    fn diagnostic_loss_composition() {
        assert_eq!(diagnostic_loss(10.0, 0.5, 2.0, 4.0), 13.0);
        assert_eq!(diagnostic_loss(10.0, 0.0, 2.0, 4.0), 10.0);
    }

    #[test]
    fn stats3_pooling() {
        assert_eq!(stats3(std::iter::empty()), [0.0; 3]);
        let s = stats3([3.0, -3.0].into_iter());
        assert_eq!(s, [0.0, 3.0, 3.0]);
    }
}
