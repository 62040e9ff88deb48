//! Tapped-delay-line MIMO channel with AR(1) Doppler correlation.
//!
//! Each tap holds an N_r x N_t matrix of Rayleigh-faded gains. Taps evolve
//! as a first-order autoregressive process whose coefficient is
//! rho = J0(2 pi f_d T_s), so the lag-k autocorrelation of every gain
//! element is rho^k. Per-subcarrier frequency responses are the DFT of the
//! tap gains at the subcarrier bin.

use crate::error::{Error, Result};
use crate::num::{bessel_j0, split_seed, streams};
use crate::{CMatrix, Cplx};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default tap profile: 4 taps exercising frequency selectivity across
/// 64 subcarriers. Artifact defaults.
pub const DEFAULT_TAP_DELAYS: [usize; 4] = [0, 2, 5, 9];
pub const DEFAULT_TAP_POWERS: [f64; 4] = [0.5, 0.25, 0.15, 0.10];

#[derive(Debug, Clone)]
pub struct ChannelConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_subcarriers: usize,
    /// Integer sample delays, strictly increasing, all < n_subcarriers.
    pub tap_delays: Vec<usize>,
    /// Linear power fractions, all > 0, summing to 1.
    pub tap_powers: Vec<f64>,
    pub carrier_freq_hz: f64,
    pub speed_mps: f64,
    pub symbol_duration_s: f64,
    /// Channel symbols advanced per transmitted frame.
    pub symbols_per_frame: usize,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            n_tx: 8,
            n_rx: 8,
            n_subcarriers: 64,
            tap_delays: DEFAULT_TAP_DELAYS.to_vec(),
            tap_powers: DEFAULT_TAP_POWERS.to_vec(),
            carrier_freq_hz: 2.6e9,
            // 40 km/h
            speed_mps: 40.0 / 3.6,
            // one symbol per LTE-like slot fraction; artifact default
            symbol_duration_s: 1.0 / 14_000.0,
            symbols_per_frame: 1,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx < 1 || self.n_rx < 1 || self.n_subcarriers < 1 {
            return Err(Error::InvalidConfig(
                "antenna and subcarrier counts must be >= 1".into(),
            ));
        }
        if self.tap_delays.is_empty() || self.tap_delays.len() != self.tap_powers.len() {
            return Err(Error::InvalidConfig(
                "tap_delays and tap_powers must be non-empty and equal length".into(),
            ));
        }
        if !self.tap_delays.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "tap_delays must be strictly increasing".into(),
            ));
        }
        if *self.tap_delays.last().unwrap() >= self.n_subcarriers {
            return Err(Error::InvalidConfig(
                "tap delays must be < n_subcarriers".into(),
            ));
        }
        if self.tap_powers.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidConfig("tap_powers must all be > 0".into()));
        }
        let sum: f64 = self.tap_powers.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "tap_powers must sum to 1 (got {sum})"
            )));
        }
        if self.carrier_freq_hz <= 0.0 || self.symbol_duration_s <= 0.0 || self.speed_mps < 0.0 {
            return Err(Error::InvalidConfig(
                "carrier frequency and symbol duration must be positive, speed non-negative"
                    .into(),
            ));
        }
        if self.symbols_per_frame < 1 {
            return Err(Error::InvalidConfig("symbols_per_frame must be >= 1".into()));
        }
        Ok(())
    }
}

/// Temporal correlation coefficient rho = J0(2 pi f_d T_s), clamped to
/// [0, 1], with Doppler frequency f_d = speed * carrier / c.
pub fn doppler_coefficient(
    speed_mps: f64,
    carrier_freq_hz: f64,
    symbol_duration_s: f64,
) -> Result<f64> {
    if speed_mps < 0.0 || carrier_freq_hz <= 0.0 || symbol_duration_s <= 0.0 {
        return Err(Error::InvalidConfig(
            "doppler_coefficient requires speed >= 0 and positive carrier/duration".into(),
        ));
    }
    let f_d = speed_mps * carrier_freq_hz / SPEED_OF_LIGHT;
    let rho = bessel_j0(std::f64::consts::TAU * f_d * symbol_duration_s);
    Ok(rho.clamp(0.0, 1.0))
}

/// Per-OFDM-symbol frequency-domain channel: one N_r x N_t matrix per
/// subcarrier bin.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub t: u64,
    pub freq_response: Vec<CMatrix>,
}

/// Per-subcarrier frequency response of a set of tap gains:
/// bin i = sum_l G_l * exp(-j 2 pi i d_l / N_s).
pub fn freq_response(
    tap_gains: &[CMatrix],
    tap_delays: &[usize],
    n_subcarriers: usize,
) -> Result<Vec<CMatrix>> {
    if tap_gains.len() != tap_delays.len() {
        return Err(Error::InvalidInput(
            "tap gain / delay count mismatch".into(),
        ));
    }
    if tap_delays.iter().any(|&d| d >= n_subcarriers) {
        return Err(Error::InvalidConfig(
            "tap delay must be < n_subcarriers".into(),
        ));
    }
    let (n_rx, n_tx) = if let Some(g) = tap_gains.first() {
        (g.nrows(), g.ncols())
    } else {
        return Err(Error::InvalidInput("no taps".into()));
    };
    let mut out = Vec::with_capacity(n_subcarriers);
    for i in 0..n_subcarriers {
        let mut h = CMatrix::zeros(n_rx, n_tx);
        for (g, &d) in tap_gains.iter().zip(tap_delays) {
            let phase =
                -std::f64::consts::TAU * (i as f64) * (d as f64) / (n_subcarriers as f64);
            let rot = Cplx::from_polar(1.0, phase);
            h += g * rot;
        }
        out.push(h);
    }
    Ok(out)
}

/// Mutable channel state: per-tap gain matrices plus the AR(1) coefficient.
#[derive(Debug, Clone)]
pub struct ChannelState {
    config: ChannelConfig,
    gains: Vec<CMatrix>,
    rho: f64,
    rng: ChaCha12Rng,
    next_t: u64,
}

impl ChannelState {
    /// Draw the initial per-tap gains i.i.d. circularly-symmetric complex
    /// Gaussian with per-element variance tap_powers[l].
    pub fn new(config: ChannelConfig) -> Result<Self> {
        config.validate()?;
        let rho = doppler_coefficient(
            config.speed_mps.max(0.0),
            config.carrier_freq_hz,
            config.symbol_duration_s,
        )?;
        let mut rng = ChaCha12Rng::seed_from_u64(split_seed(config.seed, streams::CHANNEL));
        let gains = config
            .tap_powers
            .iter()
            .map(|&p| draw_gain(&mut rng, config.n_rx, config.n_tx, p))
            .collect();
        Ok(Self {
            config,
            gains,
            rho,
            rng,
            next_t: 0,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Current per-tap gain matrices (for statistical tests).
    pub fn tap_gains(&self) -> &[CMatrix] {
        &self.gains
    }

    /// Advance the tap gains to the next symbol index and return it.
    ///
    /// The first call keeps the initial stationary draw (t = 0);
    /// subsequent calls apply G <- rho G + sqrt(1 - rho^2) W per tap.
    pub fn advance(&mut self) -> u64 {
        if self.next_t > 0 {
            let decay = self.rho;
            let excite = (1.0 - self.rho * self.rho).max(0.0).sqrt();
            for (l, power) in self.config.tap_powers.clone().iter().enumerate() {
                let w = draw_gain(&mut self.rng, self.config.n_rx, self.config.n_tx, *power);
                self.gains[l] =
                    &self.gains[l] * Cplx::new(decay, 0.0) + w * Cplx::new(excite, 0.0);
            }
        }
        let t = self.next_t;
        self.next_t += 1;
        t
    }

    /// Advance to the next symbol and return its frequency response.
    pub fn step(&mut self) -> ChannelRealization {
        let t = self.advance();
        let freq = freq_response(
            &self.gains,
            &self.config.tap_delays,
            self.config.n_subcarriers,
        )
        .expect("state validated at construction");
        ChannelRealization {
            t,
            freq_response: freq,
        }
    }
}

fn draw_gain(rng: &mut ChaCha12Rng, n_rx: usize, n_tx: usize, power: f64) -> CMatrix {
    let sigma = (power / 2.0).sqrt();
    CMatrix::from_fn(n_rx, n_tx, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Cplx::new(re * sigma, im * sigma)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_tap_config() -> ChannelConfig {
        ChannelConfig {
            tap_delays: vec![0],
            tap_powers: vec![1.0],
            ..ChannelConfig::default()
        }
    }

    #[test]
    fn doppler_static_channel_is_one() {
        assert_eq!(doppler_coefficient(0.0, 2.6e9, 1e-4).unwrap(), 1.0);
    }

    #[test]
    fn doppler_at_first_bessel_zero() {
        // Pick speed/duration so 2 pi f_d T_s hits the first J0 zero.
        let arg = 2.404825557695773;
        let carrier = 2.6e9;
        let t_s = 1e-3;
        let f_d = arg / (std::f64::consts::TAU * t_s);
        let speed = f_d * SPEED_OF_LIGHT / carrier;
        let rho = doppler_coefficient(speed, carrier, t_s).unwrap();
        assert!(rho.abs() < 1e-9);
    }

    #[test]
    fn doppler_table_g1_frequency() {
        // 40 km/h at 2.6 GHz -> f_d = v f_c / c = 96.3 Hz.
        let f_d = (40.0 / 3.6) * 2.6e9 / SPEED_OF_LIGHT;
        assert!((f_d - 96.3).abs() < 0.1);
    }

    #[test]
    fn doppler_rejects_nonpositive() {
        assert!(doppler_coefficient(1.0, 0.0, 1e-4).is_err());
        assert!(doppler_coefficient(1.0, 2.6e9, 0.0).is_err());
        assert!(doppler_coefficient(-1.0, 2.6e9, 1e-4).is_err());
    }

    #[test]
    fn flat_channel_has_identical_bins() {
        let cfg = single_tap_config();
        let mut state = ChannelState::new(cfg).unwrap();
        let r = state.step();
        for h in &r.freq_response[1..] {
            assert_eq!(h, &r.freq_response[0]);
        }
    }

    #[test]
    fn static_channel_is_constant_over_time() {
        // speed = 0 -> rho = 1 -> degenerate AR(1).
        let mut cfg = single_tap_config();
        cfg.speed_mps = 0.0;
        let mut state = ChannelState::new(cfg).unwrap();
        let first = state.step();
        for _ in 0..5 {
            let next = state.step();
            assert_eq!(next.freq_response[0], first.freq_response[0]);
        }
    }

    #[test]
    fn two_equal_taps_alternate_sum_difference() {
        // exp(-j pi i) alternates +1 / -1, so bins alternate G0+G1 / G0-G1.
        let n_s = 8;
        let g0 = CMatrix::from_fn(2, 2, |r, c| Cplx::new((r + c) as f64, 1.0));
        let g1 = CMatrix::from_fn(2, 2, |r, c| Cplx::new(1.0, (r * c) as f64));
        let resp = freq_response(&[g0.clone(), g1.clone()], &[0, n_s / 2], n_s).unwrap();
        for i in 0..n_s {
            let expected = if i % 2 == 0 { &g0 + &g1 } else { &g0 - &g1 };
            assert!((resp[i].clone() - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn freq_response_matches_naive_dft_oracle() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n_s = 8;
        let delays = [0usize, 3, 6];
        let gains: Vec<CMatrix> = (0..3)
            .map(|_| {
                CMatrix::from_fn(2, 3, |_, _| Cplx::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            })
            .collect();
        let resp = freq_response(&gains, &delays, n_s).unwrap();
        // Naive per-entry DFT loop oracle.
        for i in 0..n_s {
            for r in 0..2 {
                for c in 0..3 {
                    let mut acc = Cplx::new(0.0, 0.0);
                    for (l, &d) in delays.iter().enumerate() {
                        let ph = -std::f64::consts::TAU * (i * d) as f64 / n_s as f64;
                        acc += gains[l][(r, c)] * Cplx::from_polar(1.0, ph);
                    }
                    assert!((resp[i][(r, c)] - acc).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn freq_response_rejects_delay_out_of_range() {
        let g = CMatrix::zeros(1, 1);
        assert!(matches!(
            freq_response(&[g], &[8], 8),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn rho_zero_has_no_lag1_correlation() {
        // Force rho = 0 by hitting the Bessel zero.
        let arg = 2.404825557695773;
        let t_s = 1e-3;
        let f_d = arg / (std::f64::consts::TAU * t_s);
        let mut cfg = single_tap_config();
        cfg.n_tx = 1;
        cfg.n_rx = 1;
        cfg.speed_mps = f_d * SPEED_OF_LIGHT / cfg.carrier_freq_hz;
        cfg.symbol_duration_s = t_s;
        cfg.seed = 3;
        let mut state = ChannelState::new(cfg).unwrap();
        assert!(state.rho() < 1e-9);
        let n = 100_000;
        let mut prev = Cplx::new(0.0, 0.0);
        let mut corr = 0.0;
        let mut var = 0.0;
        for k in 0..n {
            state.advance();
            let g = state.tap_gains()[0][(0, 0)];
            if k > 0 {
                corr += (g * prev.conj()).re;
            }
            var += g.norm_sqr();
            prev = g;
        }
        let lag1 = corr / var;
        assert!(lag1.abs() < 0.02, "lag-1 correlation {lag1}");
    }

    #[test]
    fn determinism_same_seed_same_realizations() {
        let cfg = ChannelConfig::default();
        let mut a = ChannelState::new(cfg.clone()).unwrap();
        let mut b = ChannelState::new(cfg).unwrap();
        for _ in 0..4 {
            let ra = a.step();
            let rb = b.step();
            assert_eq!(ra.freq_response, rb.freq_response);
        }
    }

    #[test]
    fn power_conservation_monte_carlo() {
        let mut cfg = ChannelConfig::default();
        cfg.n_tx = 2;
        cfg.n_rx = 2;
        cfg.seed = 11;
        // Long symbol duration pushes J0 past its first zero; the clamp
        // gives rho = 0 so successive symbols are independent draws.
        cfg.symbol_duration_s = 5e-3;
        let mut state = ChannelState::new(cfg).unwrap();
        assert_eq!(state.rho(), 0.0);
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            state.advance();
            let p: f64 = state
                .tap_gains()
                .iter()
                .map(|g| g.iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum();
            acc += p / 4.0;
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean tap power {mean}");
    }
}
