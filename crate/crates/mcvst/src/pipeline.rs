//! End-to-end frame transmission.
//!
//! A frame is carried through: orthonormal block transform, motion/context
//! split against the previous reconstruction, quantization, correlation-map
//! construction from sampled CSI, two-pass entropy coding with the map
//! window as references, QAM modulation, per-subcarrier SVD-precoded
//! transmission over the fading channel, and the exact inverse chain at the
//! receiver. Coded bits travel uncoded with hard decisions; a frame with
//! any residual bit error is flagged, and the resulting cliff is reported
//! rather than hidden.

use crate::channel::{ChannelConfig, ChannelRealization, ChannelState};
use crate::corrmap::{build_map, FeatureEmbedder, MapConfig};
use crate::entropy::hyper::HyperDensity;
use crate::entropy::range::{parse_container, StreamKind};
use crate::entropy::{
    build_reference_window, decode_hyper, decode_tensor, diagnostic_loss, encode_hyper,
    encode_tensor, eta_from_map, quantize, transmission_cost, weighted_cost, DefaultPredictor,
    MapHistory,
};
use crate::error::{Error, Result};
use crate::num::{split_seed, streams};
use crate::precoding::{svd_decompose, transmit_equalize, NoiseConfig};
use crate::qam::{bits_per_symbol, qam_demap, qam_map};
use crate::sampling::{sample, SampledCsi, SamplingSchedule};
use crate::tensor::{IntGrid, Tensor3};
use crate::{CVector, Cplx};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Spatial block edge of the semantic transform.
pub const BLOCK: usize = 16;
/// Latent channel count: one coefficient per value in a 3-channel block.
pub const FEATURE_CHANNELS: usize = 3 * BLOCK * BLOCK;

/// A group of pictures: T frames of 3 x H x W values in [0, 1].
#[derive(Debug, Clone)]
pub struct Gop {
    pub frames: Vec<Tensor3>,
}

impl Gop {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::InvalidInput("GoP must hold at least one frame".into()))?;
        for f in &self.frames {
            if f.channels != 3 {
                return Err(Error::InvalidInput("frames must have 3 channels".into()));
            }
            if !f.same_shape(first) {
                return Err(Error::InvalidInput("frames must share one shape".into()));
            }
            if f.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidInput(
                    "frame values must be finite and in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.frames[0].h
    }

    pub fn width(&self) -> usize {
        self.frames[0].w
    }
}

/// Deterministic smooth test content: per-channel sums of drifting
/// sinusoidal modes, seeded from the GoP stream of the root seed.
pub fn synthetic_gop(t_frames: usize, h: usize, w: usize, seed: u64) -> Gop {
    use rand::Rng;
    let mut rng = ChaCha12Rng::seed_from_u64(split_seed(seed, streams::GOP));
    // (amplitude, fx, fy, phase, drift) per mode, 3 modes per channel.
    let modes: Vec<[f64; 5]> = (0..9)
        .map(|_| {
            [
                rng.gen_range(0.05..0.15),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.1..0.4),
            ]
        })
        .collect();
    let frames = (0..t_frames)
        .map(|t| {
            let mut frame = Tensor3::zeros(3, h, w);
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let mut v = 0.5;
                        for m in &modes[3 * c..3 * c + 3] {
                            let arg = std::f64::consts::TAU
                                * (m[1] * x as f64 / w as f64 + m[2] * y as f64 / h as f64)
                                + m[3]
                                + m[4] * t as f64;
                            v += m[0] * arg.sin();
                        }
                        *frame.at_mut(c, y, x) = v.clamp(0.02, 0.98);
                    }
                }
            }
            frame
        })
        .collect();
    Gop { frames }
}

/// Fixed orthonormal block transform: each 16 x 16 x 3 block is mixed by a
/// seeded orthonormal matrix into one 768-vector; decode is the exact
/// transpose, so encode -> decode is lossless before quantization.
#[derive(Debug, Clone)]
pub struct BlockTransform {
    q: DMatrix<f64>,
}

fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        (2 * n).saturating_sub(i + 2).min(n - 1)
    }
}

impl BlockTransform {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(FEATURE_CHANNELS, FEATURE_CHANNELS, |_, _| {
            StandardNormal.sample(&mut rng)
        });
        let qr: nalgebra::QR<f64, nalgebra::Dyn, nalgebra::Dyn> = raw.qr();
        let r = qr.r();
        let mut q = qr.q();
        // Sign convention: positive R diagonal, so the factorization (and
        // hence the transform) is unique.
        for k in 0..FEATURE_CHANNELS {
            if r[(k, k)] < 0.0 {
                for i in 0..FEATURE_CHANNELS {
                    q[(i, k)] = -q[(i, k)];
                }
            }
        }
        Self { q }
    }

    /// Frames whose sides are not multiples of 16 are reflectively padded.
    pub fn encode(&self, frame: &Tensor3) -> Result<Tensor3> {
        if frame.channels != 3 {
            return Err(Error::InvalidInput("expected a 3-channel frame".into()));
        }
        if frame.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite frame values".into()));
        }
        let hb = frame.h.div_ceil(BLOCK);
        let wb = frame.w.div_ceil(BLOCK);
        let mut out = Tensor3::zeros(FEATURE_CHANNELS, hb, wb);
        let mut block = vec![0.0f64; FEATURE_CHANNELS];
        for by in 0..hb {
            for bx in 0..wb {
                for c in 0..3 {
                    for dy in 0..BLOCK {
                        for dx in 0..BLOCK {
                            let y = reflect(by * BLOCK + dy, frame.h);
                            let x = reflect(bx * BLOCK + dx, frame.w);
                            block[(c * BLOCK + dy) * BLOCK + dx] = frame.at(c, y, x);
                        }
                    }
                }
                for l in 0..FEATURE_CHANNELS {
                    let mut acc = 0.0;
                    for (j, &v) in block.iter().enumerate() {
                        acc += self.q[(j, l)] * v;
                    }
                    *out.at_mut(l, by, bx) = acc;
                }
            }
        }
        Ok(out)
    }

    /// Inverse transform, cropped back to h x w.
    pub fn decode(&self, features: &Tensor3, h: usize, w: usize) -> Result<Tensor3> {
        if features.channels != FEATURE_CHANNELS {
            return Err(Error::InvalidInput(format!(
                "expected {FEATURE_CHANNELS} feature channels, got {}",
                features.channels
            )));
        }
        if features.h != h.div_ceil(BLOCK) || features.w != w.div_ceil(BLOCK) {
            return Err(Error::InvalidInput("feature grid does not cover frame".into()));
        }
        let mut out = Tensor3::zeros(3, h, w);
        let mut coeffs = vec![0.0f64; FEATURE_CHANNELS];
        for by in 0..features.h {
            for bx in 0..features.w {
                for (l, c) in coeffs.iter_mut().enumerate() {
                    *c = features.at(l, by, bx);
                }
                for c in 0..3 {
                    for dy in 0..BLOCK {
                        let y = by * BLOCK + dy;
                        if y >= h {
                            continue;
                        }
                        for dx in 0..BLOCK {
                            let x = bx * BLOCK + dx;
                            if x >= w {
                                continue;
                            }
                            let j = (c * BLOCK + dy) * BLOCK + dx;
                            let mut acc = 0.0;
                            for (l, &cv) in coeffs.iter().enumerate() {
                                acc += self.q[(j, l)] * cv;
                            }
                            *out.at_mut(c, y, x) = acc;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Motion/context stand-in: v = f - f_ref, c = f_ref.
pub fn motion_context_split(f_t: &Tensor3, f_ref: &Tensor3) -> Result<(Tensor3, Tensor3)> {
    if !f_t.same_shape(f_ref) {
        return Err(Error::InvalidInput("feature shape mismatch".into()));
    }
    let mut v = f_t.clone();
    for (a, b) in v.data.iter_mut().zip(&f_ref.data) {
        *a -= b;
    }
    Ok((v, f_ref.clone()))
}

/// Combinator stand-in: f = v + c.
pub fn motion_context_combine(v: &Tensor3, c: &Tensor3) -> Result<Tensor3> {
    if !v.same_shape(c) {
        return Err(Error::InvalidInput("feature shape mismatch".into()));
    }
    let mut f = v.clone();
    for (a, b) in f.data.iter_mut().zip(&c.data) {
        *a += b;
    }
    Ok(f)
}

/// Modulated symbol sequence plus the side information it travels with.
#[derive(Debug, Clone)]
pub struct Codeword {
    pub symbols: Vec<Cplx>,
    pub bit_len: usize,
    /// SNR side information shared with the decoder.
    pub nu_snr_db: f64,
    /// Opaque rate-adaptive terms; unused by the defaults.
    pub q: Vec<f64>,
}

/// Map a byte stream to Gray QAM symbols, zero-padding the final symbol.
pub fn modulate(bytes: &[u8], order: usize, nu_snr_db: f64) -> Result<Codeword> {
    let bps = bits_per_symbol(order)?;
    let mut bits = Vec::with_capacity(bytes.len() * 8 + bps);
    for &b in bytes {
        for k in (0..8).rev() {
            bits.push((b >> k) & 1);
        }
    }
    let bit_len = bits.len();
    while bits.len() % bps != 0 {
        bits.push(0);
    }
    let symbols = qam_map::<f64>(&bits, order)?;
    Ok(Codeword {
        symbols,
        bit_len,
        nu_snr_db,
        q: Vec::new(),
    })
}

/// Hard-decision demapping back to whole bytes (trailing bits dropped).
pub fn demodulate(symbols: &[Cplx], order: usize) -> Result<Vec<u8>> {
    let bits = qam_demap(symbols, order)?;
    let n = bits.len() / 8;
    let mut out = Vec::with_capacity(n);
    for chunk in bits.chunks_exact(8) {
        let mut b = 0u8;
        for &bit in chunk {
            b = (b << 1) | bit;
        }
        out.push(b);
    }
    Ok(out)
}

/// Everything needed to run one simulation leg.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub channel: ChannelConfig,
    /// Active spatial streams, <= min(N_r, N_t).
    pub n_streams: usize,
    /// Subcarrier sampling group size m_h.
    pub m_h: usize,
    /// Context group size m_c (must divide 768).
    pub m_c: usize,
    /// Correlation-map softmax temperature.
    pub temperature: f64,
    /// Correlation-map embedding dimension.
    pub embed_dim: usize,
    pub qam_order: usize,
    /// Feature quantization step.
    pub quant_step: f64,
    /// Rate-distortion weight for the diagnostic loss.
    pub lambda: f64,
    /// Lower bound on predicted entropy scales.
    pub scale_floor: f64,
    /// How per-group weights eta are derived from the correlation map.
    pub eta_policy: EtaPolicy,
    pub snr_db: f64,
    pub seed: u64,
}

/// Policy for the per-group transmission-cost weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaPolicy {
    /// eta_i = 1 + row-max of the correlation map (the default).
    Map,
    /// eta_i = 1 for every group (rate accounting without map weighting).
    Uniform,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            channel: ChannelConfig {
                symbols_per_frame: 320,
                ..ChannelConfig::default()
            },
            n_streams: 4,
            m_h: 1,
            m_c: 96,
            temperature: 0.07,
            embed_dim: 32,
            qam_order: 4,
            quant_step: 1.0 / 64.0,
            lambda: 0.015,
            scale_floor: 1e-6,
            eta_policy: EtaPolicy::Map,
            snr_db: 10.0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        SamplingSchedule::new(self.channel.n_subcarriers, self.m_h)?;
        self.map_config().validate()?;
        bits_per_symbol(self.qam_order)?;
        let max_streams = self.channel.n_rx.min(self.channel.n_tx);
        if self.n_streams == 0 || self.n_streams > max_streams {
            return Err(Error::InvalidConfig(format!(
                "n_streams {} must be in [1, {max_streams}]",
                self.n_streams
            )));
        }
        if !(self.quant_step > 0.0 && self.quant_step.is_finite()) {
            return Err(Error::InvalidConfig("quant_step must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if !(self.scale_floor > 0.0 && self.scale_floor.is_finite()) {
            return Err(Error::InvalidConfig("scale_floor must be positive".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::InvalidConfig("snr_db must not be NaN".into()));
        }
        Ok(())
    }

    pub fn map_config(&self) -> MapConfig {
        MapConfig {
            feature_channels: FEATURE_CHANNELS,
            context_group: self.m_c,
            subcarrier_group: self.m_h,
            temperature: self.temperature,
            embed_dim: self.embed_dim,
        }
    }
}

/// Per-frame results; psnr_db = 10 log10(1 / mse) for peak-1 signals.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub mse: f64,
    pub psnr_db: f64,
    pub k_c: f64,
    pub k_v: f64,
    pub k_cz: f64,
    pub k_vz: f64,
    pub k_t: f64,
    /// This frame's contribution k_t / (H * W * 3).
    pub cbr: f64,
    pub frame_error: bool,
    /// Diagnostic loss k_t + lambda (D(x, x_hat) + D(x, x_bar)).
    pub loss: f64,
}

/// Mutable state threading channel, histories, and references across the
/// frames of one GoP.
pub struct PipelineState {
    cfg: PipelineConfig,
    channel: ChannelState,
    schedule: SamplingSchedule,
    map_hist: MapHistory,
    transform: BlockTransform,
    ctx_embedder: FeatureEmbedder,
    csi_embedder: FeatureEmbedder,
    predictor: DefaultPredictor,
    density_c: HyperDensity,
    density_v: HyperDensity,
    noise_rng: ChaCha12Rng,
    /// Encoder-side reference features (error-free reconstruction).
    f_ref: Option<Tensor3>,
    /// Decoder-side previous reconstruction, the fallback on frame error.
    f_prev_decoded: Option<Tensor3>,
    /// Pre-recorded channel realizations; the live channel is bypassed
    /// while entries remain.
    trace: Vec<ChannelRealization>,
    trace_cursor: usize,
    frames_run: u64,
}

fn scaled(x: &Tensor3, s: f64) -> Tensor3 {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        *v *= s;
    }
    out
}

fn grids_to_features(a: &IntGrid, b: &IntGrid, step: f64) -> Result<Tensor3> {
    if a.channels != b.channels || a.h != b.h || a.w != b.w {
        return Err(Error::Decoding("latent shape mismatch".into()));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 + y as f64) * step)
        .collect();
    Tensor3::from_data(a.channels, a.h, a.w, data)
}

/// Per-channel rms of a latent, rounded: the hyper latent summarizing the
/// magnitude profile the scale predictors condition on.
fn hyper_latent(g: &IntGrid) -> IntGrid {
    let plane = (g.h * g.w) as f64;
    let mut z = IntGrid::zeros(g.channels, 1, 1);
    for c in 0..g.channels {
        let ms: f64 = g.channel(c).iter().map(|&v| (v as f64) * (v as f64)).sum();
        z.data[c] = (ms / plane).sqrt().round() as i32;
    }
    z
}

fn mean_squared_error(a: &Tensor3, b: &Tensor3) -> f64 {
    let n = a.data.len() as f64;
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

fn clamp01(x: &mut Tensor3) {
    for v in x.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

impl PipelineState {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let mut channel_cfg = cfg.channel.clone();
        channel_cfg.seed = seed;
        let channel = ChannelState::new(channel_cfg)?;
        let schedule = SamplingSchedule::new(cfg.channel.n_subcarriers, cfg.m_h)?;
        let map_cfg = cfg.map_config();
        Ok(Self {
            map_hist: MapHistory::new(schedule.n_groups()),
            transform: BlockTransform::seeded(split_seed(seed, streams::BLOCK_TRANSFORM)),
            ctx_embedder: FeatureEmbedder::for_context(&map_cfg, seed),
            csi_embedder: FeatureEmbedder::for_csi(
                cfg.channel.n_rx,
                cfg.channel.n_tx,
                &map_cfg,
                seed,
            ),
            predictor: DefaultPredictor::seeded(split_seed(seed, streams::PARAM_PREDICTOR))
                .with_scale_floor(cfg.scale_floor),
            density_c: HyperDensity::seeded_in(
                FEATURE_CHANNELS,
                split_seed(seed, streams::HYPER_CONTEXT),
                (0.0, 64.0),
                (2.0, 16.0),
            ),
            density_v: HyperDensity::seeded_in(
                FEATURE_CHANNELS,
                split_seed(seed, streams::HYPER_MOTION),
                (0.0, 64.0),
                (2.0, 16.0),
            ),
            noise_rng: ChaCha12Rng::seed_from_u64(split_seed(seed, streams::NOISE)),
            channel,
            schedule,
            cfg,
            f_ref: None,
            f_prev_decoded: None,
            trace: Vec::new(),
            trace_cursor: 0,
            frames_run: 0,
        })
    }

    /// Drive the frames from a pre-recorded channel trace instead of the
    /// live channel model. Entries must match the configured geometry.
    pub fn with_trace(mut self, trace: Vec<ChannelRealization>) -> Result<Self> {
        let (n_r, n_t, n_s) = (
            self.cfg.channel.n_rx,
            self.cfg.channel.n_tx,
            self.cfg.channel.n_subcarriers,
        );
        for r in &trace {
            if r.freq_response.len() != n_s
                || r.freq_response
                    .iter()
                    .any(|h| h.nrows() != n_r || h.ncols() != n_t)
            {
                return Err(Error::InvalidInput(
                    "trace geometry does not match the configured channel".into(),
                ));
            }
        }
        self.trace = trace;
        self.trace_cursor = 0;
        Ok(self)
    }

    fn next_realization(&mut self) -> Result<ChannelRealization> {
        if self.trace.is_empty() {
            return Ok(self.channel.step());
        }
        let r = self
            .trace
            .get(self.trace_cursor)
            .cloned()
            .ok_or_else(|| Error::InvalidInput("channel trace exhausted".into()))?;
        self.trace_cursor += 1;
        Ok(r)
    }

    pub fn frames_run(&self) -> u64 {
        self.frames_run
    }

    /// Channel symbol index after the frames run so far.
    pub fn channel_symbols_elapsed(&self) -> u64 {
        self.frames_run * self.cfg.channel.symbols_per_frame as u64
    }

    /// Transmit one frame and reconstruct it at the receiver.
    pub fn run_frame(&mut self, frame: &Tensor3) -> Result<(Tensor3, FrameMetrics)> {
        let cfg = self.cfg.clone();
        let step = cfg.quant_step;
        // Semantic encode and motion/context generation.
        let f_t = self.transform.encode(frame)?;
        let f_ref = match &self.f_ref {
            Some(f) => f.clone(),
            None => Tensor3::zeros(f_t.channels, f_t.h, f_t.w),
        };
        let (v_t, c_t) = motion_context_split(&f_t, &f_ref)?;
        let ct_q = quantize(&scaled(&c_t, 1.0 / step))?;
        let vt_q = quantize(&scaled(&v_t, 1.0 / step))?;
        let z_c = hyper_latent(&ct_q);
        let z_v = hyper_latent(&vt_q);

        // Channel evolution for this frame; CSI is sampled every symbol.
        let spf = cfg.channel.symbols_per_frame;
        let mut realizations: Vec<ChannelRealization> = Vec::with_capacity(spf);
        let mut sampled: Vec<SampledCsi> = Vec::with_capacity(spf);
        for _ in 0..spf {
            let r = self.next_realization()?;
            sampled.push(sample(&r, &self.schedule, r.t)?);
            realizations.push(r);
        }

        // Correlation map from the frame's first symbol.
        let map = build_map(
            &c_t,
            &sampled[0],
            &cfg.map_config(),
            &self.ctx_embedder,
            &self.csi_embedder,
        )?;
        let window = build_reference_window(&self.map_hist, &map, self.schedule.n_groups());
        let eta = match cfg.eta_policy {
            EtaPolicy::Map => eta_from_map(&map),
            EtaPolicy::Uniform => vec![1.0; map.rows],
        };

        // Entropy coding; hyper streams first so the decoder has z before
        // the main latents.
        let hyper_c = encode_hyper(&z_c, &self.density_c, StreamKind::HyperContext)?;
        let hyper_v = encode_hyper(&z_v, &self.density_v, StreamKind::HyperMotion)?;
        let coded_c = encode_tensor(
            &ct_q,
            &window,
            &z_c,
            &self.predictor,
            StreamKind::Context,
            cfg.snr_db,
        )?;
        let coded_v = encode_tensor(
            &vt_q,
            &window,
            &z_v,
            &self.predictor,
            StreamKind::Motion,
            cfg.snr_db,
        )?;
        let k_c = weighted_cost(&coded_c.group_info_bits, &eta)?;
        let k_v = weighted_cost(&coded_v.group_info_bits, &eta)?;
        let k_cz = hyper_c.info_bits();
        let k_vz = hyper_v.info_bits();
        let k_t = transmission_cost(k_c, k_v, k_cz, k_vz)?;

        // Modulate and traverse the channel, round-robin across streams,
        // subcarriers, and the frame's OFDM symbols.
        let mut tx_bytes = hyper_c.bytes.clone();
        tx_bytes.extend_from_slice(&hyper_v.bytes);
        tx_bytes.extend_from_slice(&coded_c.bytes);
        tx_bytes.extend_from_slice(&coded_v.bytes);
        let cw = modulate(&tx_bytes, cfg.qam_order, cfg.snr_db)?;
        let capacity = spf * cfg.channel.n_subcarriers * cfg.n_streams;
        if cw.symbols.len() > capacity {
            return Err(Error::CapacityExceeded {
                required: cw.symbols.len(),
                available: capacity,
            });
        }
        let noise = NoiseConfig::from_snr_db(cfg.snr_db);
        let mut rx_symbols: Vec<Cplx> = Vec::with_capacity(cw.symbols.len());
        let mut idx = 0usize;
        'symbols: for s in 0..spf {
            if idx >= cw.symbols.len() {
                break;
            }
            // Group-representative SVDs from this symbol's sampled CSI.
            let svds: Vec<_> = sampled[s]
                .entries
                .iter()
                .map(svd_decompose)
                .collect::<Result<_>>()?;
            for i in 0..cfg.channel.n_subcarriers {
                if idx >= cw.symbols.len() {
                    break 'symbols;
                }
                let k = cfg.n_streams.min(cw.symbols.len() - idx);
                let x = CVector::from_fn(k, |j, _| cw.symbols[idx + j]);
                let y = transmit_equalize(
                    &x,
                    &realizations[s].freq_response[i],
                    &svds[self.schedule.group_of(i)],
                    &noise,
                    &mut self.noise_rng,
                )?;
                rx_symbols.extend(y.iter().copied());
                idx += k;
            }
        }

        // Receive side.
        let rx_bytes = demodulate(&rx_symbols, cfg.qam_order)?;
        let frame_error = rx_bytes.len() < tx_bytes.len() || rx_bytes[..tx_bytes.len()] != tx_bytes;
        let decoded = self.decode_streams(&rx_bytes, &window);
        let recon_f = match decoded {
            Ok((zc, zv, ct, vt)) => {
                let _ = (zc, zv);
                grids_to_features(&ct, &vt, step)
            }
            Err(e) => Err(e),
        }
        .unwrap_or_else(|_| match &self.f_prev_decoded {
            Some(f) => f.clone(),
            None => Tensor3::zeros(f_t.channels, f_t.h, f_t.w),
        });
        let mut x_hat = self.transform.decode(&recon_f, frame.h, frame.w)?;
        clamp01(&mut x_hat);

        // Encoder-side (error-free) reconstruction and bookkeeping.
        let f_bar = grids_to_features(&ct_q, &vt_q, step)?;
        let mut x_bar = self.transform.decode(&f_bar, frame.h, frame.w)?;
        clamp01(&mut x_bar);
        let mse = mean_squared_error(frame, &x_hat);
        let mse_bar = mean_squared_error(frame, &x_bar);
        let psnr_db = if mse > 0.0 {
            10.0 * (1.0 / mse).log10()
        } else {
            f64::INFINITY
        };
        let metrics = FrameMetrics {
            mse,
            psnr_db,
            k_c,
            k_v,
            k_cz,
            k_vz,
            k_t,
            cbr: k_t / (frame.h * frame.w * 3) as f64,
            frame_error,
            loss: diagnostic_loss(k_t, cfg.lambda, mse, mse_bar),
        };
        self.map_hist.push(map)?;
        self.f_ref = Some(f_bar);
        self.f_prev_decoded = Some(recon_f);
        self.frames_run += 1;
        Ok((x_hat, metrics))
    }

    /// Parse and decode the four concatenated streams; the map window is
    /// shared out of band.
    fn decode_streams(
        &self,
        bytes: &[u8],
        window: &crate::entropy::ReferenceWindow,
    ) -> Result<(IntGrid, IntGrid, IntGrid, IntGrid)> {
        let expect = |buf: &[u8], kind: StreamKind| -> Result<usize> {
            let (c, rest) = parse_container(buf)?;
            if c.kind != kind {
                return Err(Error::Decoding(format!(
                    "unexpected stream kind {:?}",
                    c.kind
                )));
            }
            Ok(buf.len() - rest.len())
        };
        let mut buf = bytes;
        let n = expect(buf, StreamKind::HyperContext)?;
        let z_c = decode_hyper(buf, &self.density_c)?;
        buf = &buf[n..];
        let n = expect(buf, StreamKind::HyperMotion)?;
        let z_v = decode_hyper(buf, &self.density_v)?;
        buf = &buf[n..];
        let n = expect(buf, StreamKind::Context)?;
        let ct = decode_tensor(buf, window, &z_c, &self.predictor, self.cfg.snr_db)?;
        buf = &buf[n..];
        expect(buf, StreamKind::Motion)?;
        let vt = decode_tensor(buf, window, &z_v, &self.predictor, self.cfg.snr_db)?;
        Ok((z_c, z_v, ct, vt))
    }
}

/// Run a whole GoP, returning reconstructions and per-frame metrics.
pub fn run_gop(cfg: &PipelineConfig, gop: &Gop) -> Result<(Vec<Tensor3>, Vec<FrameMetrics>)> {
    gop.validate()?;
    let mut state = PipelineState::new(cfg.clone())?;
    let mut recons = Vec::with_capacity(gop.frames.len());
    let mut metrics = Vec::with_capacity(gop.frames.len());
    for frame in &gop.frames {
        let (recon, m) = state.run_frame(frame)?;
        recons.push(recon);
        metrics.push(m);
    }
    Ok((recons, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::cbr;
    use rand::Rng;

    fn random_frame(seed: u64, h: usize, w: usize) -> Tensor3 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.gen::<f64>()).collect();
        Tensor3::from_data(3, h, w, data).unwrap()
    }

    #[test]
    fn transform_round_trip_and_energy() {
        let t = BlockTransform::seeded(1);
        let frame = random_frame(2, 32, 32);
        let f = t.encode(&frame).unwrap();
        assert_eq!((f.channels, f.h, f.w), (FEATURE_CHANNELS, 2, 2));
        let back = t.decode(&f, 32, 32).unwrap();
        let err = frame
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "round-trip error {err}");
        let e_in: f64 = frame.data.iter().map(|v| v * v).sum();
        let e_out: f64 = f.data.iter().map(|v| v * v).sum();
        assert!((e_in - e_out).abs() < 1e-9 * e_in.max(1.0));
    }

    #[test]
    fn transform_zero_frame_and_padding() {
        let t = BlockTransform::seeded(1);
        let zero = Tensor3::zeros(3, 16, 16);
        let f = t.encode(&zero).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
        // 20 x 24 needs reflective padding; the crop restores the original.
        let frame = random_frame(3, 20, 24);
        let f = t.encode(&frame).unwrap();
        assert_eq!((f.h, f.w), (2, 2));
        let back = t.decode(&f, 20, 24).unwrap();
        let err = frame
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn motion_split_combine_identity() {
        let f_t = random_frame(4, 16, 16);
        let f_ref = random_frame(5, 16, 16);
        let (v, c) = motion_context_split(&f_t, &f_ref).unwrap();
        let back = motion_context_combine(&v, &c).unwrap();
        for (a, b) in back.data.iter().zip(&f_t.data) {
            assert!((a - b).abs() < 1e-15);
        }
        let (v0, _) = motion_context_split(&f_t, &f_t).unwrap();
        assert!(v0.data.iter().all(|&x| x == 0.0));
        let bad = Tensor3::zeros(3, 8, 8);
        assert!(motion_context_split(&f_t, &bad).is_err());
    }

    #[test]
    fn modulation_counts_and_round_trip() {
        let cw = modulate(&[], 4, 10.0).unwrap();
        assert!(cw.symbols.is_empty());
        let bytes = [0xA5u8, 0x3C, 0xFF, 0x01, 0x80];
        for order in [4usize, 16, 64] {
            let bps = bits_per_symbol(order).unwrap();
            let cw = modulate(&bytes, order, 10.0).unwrap();
            assert_eq!(cw.symbols.len(), (bytes.len() * 8).div_ceil(bps));
            let back = demodulate(&cw.symbols, order).unwrap();
            assert_eq!(&back[..bytes.len()], &bytes);
            // Unit average power.
            let p: f64 = cw.symbols.iter().map(|s| s.norm_sqr()).sum();
            assert!((p / cw.symbols.len() as f64 - 1.0).abs() < 0.35);
        }
    }

    #[test]
    fn synthetic_gop_is_valid_and_deterministic() {
        let g1 = synthetic_gop(3, 32, 32, 7);
        let g2 = synthetic_gop(3, 32, 32, 7);
        g1.validate().unwrap();
        assert_eq!(g1.frames.len(), 3);
        for (a, b) in g1.frames.iter().zip(&g2.frames) {
            assert_eq!(a.data, b.data);
        }
        // Frames drift over time.
        assert_ne!(g1.frames[0].data, g1.frames[1].data);
    }

    #[test]
    fn noiseless_matched_csi_hits_quantization_floor() {
        let cfg = PipelineConfig {
            snr_db: f64::INFINITY,
            seed: 3,
            ..PipelineConfig::default()
        };
        let gop = synthetic_gop(2, 64, 64, 3);
        let (_, metrics) = run_gop(&cfg, &gop).unwrap();
        for m in &metrics {
            assert!(!m.frame_error);
            assert!(m.psnr_db >= 40.0, "psnr {}", m.psnr_db);
            let sum = m.k_c + m.k_v + m.k_cz + m.k_vz;
            assert_eq!(m.k_t, sum);
        }
    }

    #[test]
    fn static_gop_motion_rate_below_intra_rate() {
        let frame = synthetic_gop(1, 64, 64, 9).frames.remove(0);
        let gop = Gop {
            frames: vec![frame.clone(), frame.clone(), frame],
        };
        let cfg = PipelineConfig {
            snr_db: f64::INFINITY,
            seed: 9,
            ..PipelineConfig::default()
        };
        let (_, metrics) = run_gop(&cfg, &gop).unwrap();
        // Frame 0 codes the whole feature tensor in its motion stream (the
        // first reference is zero); later frames only code the residual.
        for p_frame in &metrics[1..] {
            assert!(
                p_frame.k_v < metrics[0].k_v,
                "motion rate {} vs intra rate {}",
                p_frame.k_v,
                metrics[0].k_v
            );
        }
    }

    #[test]
    fn low_snr_frames_are_flagged_and_worse() {
        let gop = synthetic_gop(1, 64, 64, 5);
        let clean = run_gop(
            &PipelineConfig {
                snr_db: f64::INFINITY,
                seed: 5,
                ..PipelineConfig::default()
            },
            &gop,
        )
        .unwrap()
        .1;
        let noisy = run_gop(
            &PipelineConfig {
                snr_db: -5.0,
                seed: 5,
                ..PipelineConfig::default()
            },
            &gop,
        )
        .unwrap()
        .1;
        assert!(noisy[0].frame_error);
        assert!(noisy[0].mse > 10.0 * clean[0].mse);
    }

    #[test]
    fn determinism_same_config_same_metrics() {
        let cfg = PipelineConfig {
            snr_db: 6.0,
            seed: 21,
            ..PipelineConfig::default()
        };
        let gop = synthetic_gop(2, 64, 64, 21);
        let a = run_gop(&cfg, &gop).unwrap().1;
        let b = run_gop(&cfg, &gop).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn channel_step_bookkeeping() {
        let cfg = PipelineConfig {
            snr_db: f64::INFINITY,
            seed: 2,
            ..PipelineConfig::default()
        };
        let gop = synthetic_gop(2, 64, 64, 2);
        let mut state = PipelineState::new(cfg.clone()).unwrap();
        for f in &gop.frames {
            state.run_frame(f).unwrap();
        }
        assert_eq!(
            state.channel_symbols_elapsed(),
            2 * cfg.channel.symbols_per_frame as u64
        );
    }

    #[test]
    fn gop_cbr_matches_per_frame_costs() {
        let cfg = PipelineConfig {
            snr_db: f64::INFINITY,
            seed: 4,
            ..PipelineConfig::default()
        };
        let gop = synthetic_gop(2, 64, 64, 4);
        let (_, metrics) = run_gop(&cfg, &gop).unwrap();
        let costs: Vec<f64> = metrics.iter().map(|m| m.k_t).collect();
        let r = cbr(&costs, 64, 64).unwrap();
        let mean_contrib: f64 =
            metrics.iter().map(|m| m.cbr).sum::<f64>() / metrics.len() as f64;
        assert!((r - mean_contrib).abs() < 1e-12);
    }

    #[test]
    fn capacity_error_reports_requirements() {
        let mut cfg = PipelineConfig {
            snr_db: f64::INFINITY,
            ..PipelineConfig::default()
        };
        cfg.channel.symbols_per_frame = 1;
        let gop = synthetic_gop(1, 64, 64, 1);
        match run_gop(&cfg, &gop) {
            Err(Error::CapacityExceeded {
                required,
                available,
            }) => assert!(required > available),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn recorded_trace_reproduces_live_run() {
        let cfg = PipelineConfig {
            snr_db: f64::INFINITY,
            seed: 12,
            ..PipelineConfig::default()
        };
        let gop = synthetic_gop(2, 64, 64, 12);
        // Record the realizations the live channel would produce.
        let mut ch = crate::channel::ChannelState::new(crate::channel::ChannelConfig {
            seed: 12,
            ..cfg.channel.clone()
        })
        .unwrap();
        let trace: Vec<_> = (0..2 * cfg.channel.symbols_per_frame)
            .map(|_| ch.step())
            .collect();
        let mut live = PipelineState::new(cfg.clone()).unwrap();
        let mut traced = PipelineState::new(cfg.clone())
            .unwrap()
            .with_trace(trace)
            .unwrap();
        for f in &gop.frames {
            let (_, a) = live.run_frame(f).unwrap();
            let (_, b) = traced.run_frame(f).unwrap();
            assert_eq!(a, b);
        }
        // Exhausted trace is an error, not silent fallback.
        assert!(traced.run_frame(&gop.frames[0]).is_err());
    }

    #[test]
    fn gop_validation_rejects_bad_frames() {
        assert!(Gop { frames: vec![] }.validate().is_err());
        let mut f = Tensor3::zeros(3, 8, 8);
        f.data[0] = 1.5;
        assert!(Gop { frames: vec![f] }.validate().is_err());
        assert!(Gop {
            frames: vec![Tensor3::zeros(1, 8, 8)]
        }
        .validate()
        .is_err());
    }
}
