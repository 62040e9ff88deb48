//! Experiment configuration, orchestration, and CSV export.
//!
//! Configs are plain `section.key = value` text (one pair per line, `#`
//! comments). Parsing reports every error with its line number rather than
//! stopping at the first, and unknown keys are rejected. An empty file
//! yields the documented defaults.

use crate::channel::ChannelRealization;
use crate::corrmap::CorrelationMap;
use crate::entropy::range::StreamKind;
use crate::entropy::{
    build_reference_window, decode_tensor, encode_tensor, DefaultPredictor, MapHistory,
};
use crate::error::{Error, Result};
use crate::pipeline::{synthetic_gop, EtaPolicy, PipelineConfig, PipelineState};
use crate::sampling::SamplingSchedule;
use crate::trace::read_trace;
use crate::tensor::IntGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::fmt;

/// One parse/validation problem, tagged with the 1-based source line
/// (line 0 marks whole-config invariant violations).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Sweep grid: SNR list x `seeds` consecutive seeds x `frames`-frame GoPs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    /// Number of seeds; cell i uses root seed `base_seed + i`.
    pub seeds: u64,
    /// Frames per GoP (also used by `simulate`).
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 4.0, 8.0, 12.0],
            seeds: 3,
            frames: 4,
            height: 64,
            width: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IoConfig {
    /// Output CSV path (CLI --out overrides).
    pub out: Option<String>,
    /// Optional channel-trace path; live generation when absent.
    pub trace: Option<String>,
}

/// Fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub sweep: SweepConfig,
    pub io: IoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            sweep: SweepConfig::default(),
            io: IoConfig::default(),
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(v: &str, what: &str) -> std::result::Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("expected {what}, got '{v}'"))
}

fn parse_list<T: std::str::FromStr>(v: &str, what: &str) -> std::result::Result<Vec<T>, String> {
    let body = v
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(v);
    let items: Vec<&str> = body
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(format!("expected a non-empty list of {what}"));
    }
    items
        .into_iter()
        .map(|s| parse_scalar::<T>(s, what))
        .collect()
}

fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let p = &mut cfg.pipeline;
    match key {
        "mimo.n_tx" => p.channel.n_tx = parse_scalar(value, "an integer")?,
        "mimo.n_rx" => p.channel.n_rx = parse_scalar(value, "an integer")?,
        "mimo.n_subcarriers" => p.channel.n_subcarriers = parse_scalar(value, "an integer")?,
        "mimo.tap_delays" => p.channel.tap_delays = parse_list(value, "integers")?,
        "mimo.tap_powers" => p.channel.tap_powers = parse_list(value, "numbers")?,
        "mimo.carrier_freq_hz" => p.channel.carrier_freq_hz = parse_scalar(value, "a number")?,
        "mimo.speed_mps" => p.channel.speed_mps = parse_scalar(value, "a number")?,
        "mimo.symbol_duration_s" => {
            p.channel.symbol_duration_s = parse_scalar(value, "a number")?
        }
        "mimo.symbols_per_frame" => {
            p.channel.symbols_per_frame = parse_scalar(value, "an integer")?
        }
        "mimo.n_streams" => p.n_streams = parse_scalar(value, "an integer")?,
        "sampling.m_h" => p.m_h = parse_scalar(value, "an integer")?,
        "map.m_c" => p.m_c = parse_scalar(value, "an integer")?,
        "map.tau" => p.temperature = parse_scalar(value, "a number")?,
        "map.d_e" => p.embed_dim = parse_scalar(value, "an integer")?,
        "codec.qam_order" => p.qam_order = parse_scalar(value, "an integer")?,
        "codec.quant_step" => p.quant_step = parse_scalar(value, "a number")?,
        "codec.lambda" => p.lambda = parse_scalar(value, "a number")?,
        "codec.scale_floor" => p.scale_floor = parse_scalar(value, "a number")?,
        "codec.eta_policy" => {
            p.eta_policy = match value {
                "map" => EtaPolicy::Map,
                "uniform" => EtaPolicy::Uniform,
                other => return Err(format!("unknown eta policy '{other}' (map|uniform)")),
            }
        }
        "run.seed" => p.seed = parse_scalar(value, "an integer")?,
        "run.snr_db" => p.snr_db = parse_scalar(value, "a number")?,
        "sweep.snr_db" => cfg.sweep.snr_db = parse_list(value, "numbers")?,
        "sweep.seeds" => cfg.sweep.seeds = parse_scalar(value, "an integer")?,
        "sweep.frames" => cfg.sweep.frames = parse_scalar(value, "an integer")?,
        "sweep.height" => cfg.sweep.height = parse_scalar(value, "an integer")?,
        "sweep.width" => cfg.sweep.width = parse_scalar(value, "an integer")?,
        "io.out" => cfg.io.out = Some(value.to_string()),
        "io.trace" => cfg.io.trace = Some(value.to_string()),
        other => return Err(format!("unknown key '{other}'")),
    }
    Ok(())
}

/// Parse and fully validate a config, reporting all errors at once.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, Vec<ConfigError>> {
    let mut cfg = ExperimentConfig::default();
    let mut errors = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(ConfigError {
                line: line_no,
                message: format!("expected 'section.key = value', got '{line}'"),
            });
            continue;
        };
        if let Err(message) = apply_key(&mut cfg, key.trim(), value.trim()) {
            errors.push(ConfigError {
                line: line_no,
                message,
            });
        }
    }
    if errors.is_empty() {
        if let Err(e) = cfg.validate() {
            errors.push(ConfigError {
                line: 0,
                message: e.to_string(),
            });
        }
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.sweep.snr_db.is_empty() || self.sweep.snr_db.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidConfig(
                "sweep.snr_db must be a non-empty list of numbers".into(),
            ));
        }
        if self.sweep.seeds == 0 || self.sweep.frames == 0 {
            return Err(Error::InvalidConfig(
                "sweep.seeds and sweep.frames must be >= 1".into(),
            ));
        }
        if self.sweep.height == 0 || self.sweep.width == 0 {
            return Err(Error::InvalidConfig(
                "sweep.height and sweep.width must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One CSV output row; the schema is stable.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub snr_db: f64,
    pub seed: u64,
    pub frame: usize,
    pub mse: f64,
    pub psnr_db: f64,
    pub k_c: f64,
    pub k_v: f64,
    pub k_cz: f64,
    pub k_vz: f64,
    pub k_t: f64,
    pub cbr: f64,
    pub frame_error: bool,
}

pub const CSV_HEADER: &str =
    "snr_db,seed,frame,mse,psnr_db,k_c,k_v,k_cz,k_vz,k_t,cbr,frame_error";

/// Render rows (sorted by snr, seed, frame) with the stable header.
pub fn render_csv(rows: &[CsvRow]) -> String {
    let mut rows: Vec<&CsvRow> = rows.iter().collect();
    rows.sort_by(|a, b| {
        a.snr_db
            .total_cmp(&b.snr_db)
            .then(a.seed.cmp(&b.seed))
            .then(a.frame.cmp(&b.frame))
    });
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.snr_db,
            r.seed,
            r.frame,
            r.mse,
            r.psnr_db,
            r.k_c,
            r.k_v,
            r.k_cz,
            r.k_vz,
            r.k_t,
            r.cbr,
            r.frame_error as u8
        ));
    }
    out
}

fn run_cell(
    base: &PipelineConfig,
    sweep: &SweepConfig,
    snr_db: f64,
    seed: u64,
    trace: Option<Vec<ChannelRealization>>,
) -> Result<Vec<CsvRow>> {
    let cfg = PipelineConfig {
        snr_db,
        seed,
        ..base.clone()
    };
    let gop = synthetic_gop(sweep.frames, sweep.height, sweep.width, seed);
    gop.validate()?;
    let mut state = PipelineState::new(cfg)?;
    if let Some(t) = trace {
        state = state.with_trace(t)?;
    }
    let mut metrics = Vec::with_capacity(gop.frames.len());
    for frame in &gop.frames {
        metrics.push(state.run_frame(frame)?.1);
    }
    Ok(metrics
        .into_iter()
        .enumerate()
        .map(|(frame, m)| CsvRow {
            snr_db,
            seed,
            frame,
            mse: m.mse,
            psnr_db: m.psnr_db,
            k_c: m.k_c,
            k_v: m.k_v,
            k_cz: m.k_cz,
            k_vz: m.k_vz,
            k_t: m.k_t,
            cbr: m.cbr,
            frame_error: m.frame_error,
        })
        .collect())
}

/// One GoP at the configured run seed and SNR; uses the channel trace at
/// `io.trace` when present, the live channel model otherwise.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Vec<CsvRow>> {
    cfg.validate()?;
    let trace = match &cfg.io.trace {
        Some(path) => {
            let mut file = std::fs::File::open(path)?;
            Some(read_trace(&mut file)?)
        }
        None => None,
    };
    run_cell(
        &cfg.pipeline,
        &cfg.sweep,
        cfg.pipeline.snr_db,
        cfg.pipeline.seed,
        trace,
    )
}

/// Full SNR x seed grid over the live channel; cell (snr, i) uses root
/// seed `run.seed + i`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<CsvRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &snr in &cfg.sweep.snr_db {
        for i in 0..cfg.sweep.seeds {
            let seed = cfg.pipeline.seed.wrapping_add(i);
            rows.extend(run_cell(&cfg.pipeline, &cfg.sweep, snr, seed, None)?);
        }
    }
    Ok(rows)
}

/// Sampling-schedule audit: one line of sampled indices per symbol of a
/// cycle plus a partition proof over {0..N_s-1}.
pub fn coverage_report(cfg: &ExperimentConfig) -> Result<String> {
    let n_s = cfg.pipeline.channel.n_subcarriers;
    let m_h = cfg.pipeline.m_h;
    let schedule = SamplingSchedule::new(n_s, m_h)?;
    let mut out = String::new();
    let mut seen = vec![0usize; n_s];
    for t in 0..m_h as u64 {
        let idx = schedule.sampled_indices(t);
        out.push_str(&format!("t={t}:"));
        for &i in &idx {
            out.push_str(&format!(" {i}"));
            seen[i] += 1;
        }
        out.push('\n');
    }
    let partition = seen.iter().all(|&c| c == 1);
    out.push_str(&format!(
        "partition over 0..{}: {}\n",
        n_s - 1,
        if partition {
            "OK (each subcarrier sampled exactly once per cycle)"
        } else {
            "FAILED"
        }
    ));
    if !partition {
        return Err(Error::Internal("sampling schedule is not a partition".into()));
    }
    Ok(out)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn uniform_map(rows: usize, cols: usize, t: u64) -> CorrelationMap {
    CorrelationMap {
        rows,
        cols,
        values: vec![1.0 / cols as f64; rows * cols],
        t,
    }
}

/// Deterministic codec self-test: round-trip exactness and rate
/// consistency over several random latents; returns a bitstream digest.
pub fn codec_selftest(seed: u64) -> Result<String> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let predictor = DefaultPredictor::seeded(seed ^ 0x5eed);
    let groups = 8;
    let mut digest_input = Vec::new();
    for trial in 0..5u64 {
        let hist = MapHistory::new(groups);
        let map = uniform_map(4, groups, trial);
        let window = build_reference_window(&hist, &map, groups);
        let mut z = IntGrid::zeros(4, 1, 1);
        for v in z.data.iter_mut() {
            *v = rng.gen_range(0..8);
        }
        let mut latent = IntGrid::zeros(4, 12, 12);
        for v in latent.data.iter_mut() {
            *v = rng.gen_range(-6..=6);
        }
        let coded = encode_tensor(
            &latent,
            &window,
            &z,
            &predictor,
            StreamKind::Context,
            10.0,
        )?;
        let back = decode_tensor(&coded.bytes, &window, &z, &predictor, 10.0)?;
        if back != latent {
            return Err(Error::Internal(format!(
                "selftest round-trip mismatch in trial {trial}"
            )));
        }
        let info: f64 = coded.group_info_bits.iter().sum();
        let payload_bits = ((coded.bytes.len().saturating_sub(33)) * 8) as f64;
        if payload_bits > info + 64.0 + 0.001 * info {
            return Err(Error::Internal(format!(
                "selftest rate inconsistency in trial {trial}: {payload_bits} bits vs {info} info bits"
            )));
        }
        digest_input.extend_from_slice(&coded.bytes);
    }
    Ok(format!("{:016x}", fnv1a(&digest_input)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_yields_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.pipeline.channel.n_tx, 8);
        assert_eq!(cfg.pipeline.channel.n_subcarriers, 64);
        assert_eq!(cfg.sweep, SweepConfig::default());
    }

    #[test]
    fn table_defaults_and_overrides() {
        let cfg = parse_config("mimo.n_tx = 8\n# comment\nsampling.m_h = 8\nmap.tau = 0.1\n")
            .unwrap();
        assert_eq!(cfg.pipeline.channel.n_tx, 8);
        assert_eq!(cfg.pipeline.m_h, 8);
        assert!((cfg.pipeline.temperature - 0.1).abs() < 1e-15);
    }

    #[test]
    fn divisibility_error_reported() {
        let err = parse_config("sampling.m_h = 3\n").unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].line, 0);
        assert!(err[0].message.contains("divide"), "{}", err[0].message);
    }

    #[test]
    fn all_errors_reported_with_line_numbers() {
        let text = "mimo.n_tx = eight\nbogus.key = 1\n\nmap.tau = 0.07\nnot a pair\n";
        let errs = parse_config(text).unwrap_err();
        let lines: Vec<usize> = errs.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![1, 2, 5]);
        assert!(errs[1].message.contains("unknown key"));
    }

    #[test]
    fn lists_parse_both_styles() {
        let cfg = parse_config("sweep.snr_db = [0, 2, 4]\n").unwrap();
        assert_eq!(cfg.sweep.snr_db, vec![0.0, 2.0, 4.0]);
        let cfg = parse_config("sweep.snr_db = 0, 2, 4\n").unwrap();
        assert_eq!(cfg.sweep.snr_db, vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn standard_grids_accepted_verbatim() {
        let text = "sweep.snr_db = [0, 2, 4, 6, 8, 10, 12, 14]\ncodec.lambda = 0.015\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.sweep.snr_db.len(), 8);
        let text2 = "codec.lambda = 0.32\n";
        assert!(parse_config(text2).is_ok());
    }

    #[test]
    fn csv_schema_and_sorting() {
        let mk = |snr: f64, seed: u64, frame: usize| CsvRow {
            snr_db: snr,
            seed,
            frame,
            mse: 0.5,
            psnr_db: 3.0103,
            k_c: 1.0,
            k_v: 2.0,
            k_cz: 3.0,
            k_vz: 4.0,
            k_t: 10.0,
            cbr: 0.01,
            frame_error: false,
        };
        let csv = render_csv(&[mk(4.0, 0, 0), mk(0.0, 1, 0), mk(0.0, 0, 1), mk(0.0, 0, 0)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("0,0,0,"));
        assert!(lines[2].starts_with("0,0,1,"));
        assert!(lines[3].starts_with("0,1,0,"));
        assert!(lines[4].starts_with("4,0,0,"));
        assert_eq!(lines.len(), 5);
        assert!(lines[1].ends_with(",0"));
    }

    #[test]
    fn coverage_partitions_subcarriers() {
        let mut cfg = ExperimentConfig::default();
        cfg.pipeline.m_h = 8;
        let report = coverage_report(&cfg).unwrap();
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines.len(), 9);
        for line in &lines[..8] {
            assert_eq!(line.split_whitespace().count(), 9); // "t=k:" + 8 indices
        }
        assert!(lines[8].contains("OK"));
    }

    #[test]
    fn selftest_is_deterministic() {
        let a = codec_selftest(7).unwrap();
        let b = codec_selftest(7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, codec_selftest(8).unwrap());
    }

    #[test]
    fn sweep_emits_one_row_per_cell_frame() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep = SweepConfig {
            snr_db: vec![f64::INFINITY],
            seeds: 2,
            frames: 2,
            height: 32,
            width: 32,
        };
        cfg.pipeline.snr_db = f64::INFINITY;
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        let csv1 = render_csv(&rows);
        let csv2 = render_csv(&run_sweep(&cfg).unwrap());
        assert_eq!(csv1, csv2);
    }
}
