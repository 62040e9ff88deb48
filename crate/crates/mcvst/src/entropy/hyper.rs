//! Factorized hyperprior density.
//!
//! Each hyper-latent channel has its own monotone CDF modeled as a convex
//! mixture of logistic CDFs (piecewise-logistic); box probabilities are
//! CDF differences. The default seeded construction draws per-channel
//! mixtures; `standard` degenerates to a unit-scale zero-mean logistic for
//! closed-form checks.

use crate::entropy::laplace::{PROB_FLOOR, SCALE_FLOOR};
use crate::error::{Error, Result};
use crate::num::logistic;
use crate::tensor::IntGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone)]
pub struct LogisticComponent {
    pub weight: f64,
    pub mu: f64,
    pub scale: f64,
}

/// Per-channel density parameters (the psi of one channel).
#[derive(Debug, Clone)]
pub struct ChannelPsi {
    pub components: Vec<LogisticComponent>,
}

impl ChannelPsi {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidParams("empty hyper density".into()));
        }
        let wsum: f64 = self.components.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-9 || self.components.iter().any(|c| c.weight <= 0.0) {
            return Err(Error::InvalidParams(
                "mixture weights must be positive and sum to 1".into(),
            ));
        }
        if self.components.iter().any(|c| c.scale < SCALE_FLOOR || !c.mu.is_finite()) {
            return Err(Error::InvalidParams("invalid mixture component".into()));
        }
        Ok(())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * logistic((x - c.mu) / c.scale))
            .sum()
    }

    pub fn box_prob(&self, n: i32) -> f64 {
        let x = n as f64;
        (self.cdf(x + 0.5) - self.cdf(x - 0.5)).max(PROB_FLOOR)
    }

    /// Integer support bounds covering all but < 1e-12 of the mass.
    pub fn support(&self) -> (i32, i32) {
        let lo = self
            .components
            .iter()
            .map(|c| c.mu - 30.0 * c.scale)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .components
            .iter()
            .map(|c| c.mu + 30.0 * c.scale)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo.floor() as i32, hi.ceil() as i32)
    }
}

/// Fully factorized hyperprior: one [`ChannelPsi`] per latent channel.
#[derive(Debug, Clone)]
pub struct HyperDensity {
    pub channels: Vec<ChannelPsi>,
}

impl HyperDensity {
    /// Seeded mixture-of-3-logistics per channel.
    pub fn seeded(n_channels: usize, seed: u64) -> Self {
        Self::seeded_in(n_channels, seed, (-2.0, 2.0), (0.5, 2.0))
    }

    /// Seeded mixtures with explicit location and scale ranges, for hyper
    /// latents whose support is known to sit away from the origin.
    pub fn seeded_in(
        n_channels: usize,
        seed: u64,
        mu_range: (f64, f64),
        scale_range: (f64, f64),
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let channels = (0..n_channels)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.2..1.0)).collect();
                let wsum: f64 = raw.iter().sum();
                let components = raw
                    .into_iter()
                    .map(|w| LogisticComponent {
                        weight: w / wsum,
                        mu: rng.gen_range(mu_range.0..mu_range.1),
                        scale: rng.gen_range(scale_range.0..scale_range.1),
                    })
                    .collect();
                ChannelPsi { components }
            })
            .collect();
        Self { channels }
    }

    /// Unit-scale zero-mean logistic in every channel.
    pub fn standard(n_channels: usize) -> Self {
        Self {
            channels: (0..n_channels)
                .map(|_| ChannelPsi {
                    components: vec![LogisticComponent {
                        weight: 1.0,
                        mu: 0.0,
                        scale: 1.0,
                    }],
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.channels {
            c.validate()?;
        }
        Ok(())
    }
}

/// Per-element box probabilities of a hyper-latent grid under psi.
pub fn hyper_likelihood(z: &IntGrid, psi: &HyperDensity) -> Result<Vec<f64>> {
    if z.channels != psi.channels.len() {
        return Err(Error::InvalidParams(format!(
            "grid has {} channels, density has {}",
            z.channels,
            psi.channels.len()
        )));
    }
    psi.validate()?;
    let plane = z.h * z.w;
    let mut out = Vec::with_capacity(z.data.len());
    for (c, chan) in psi.channels.iter().enumerate() {
        for &v in &z.data[c * plane..(c + 1) * plane] {
            out.push(chan.box_prob(v));
        }
    }
    Ok(out)
}
