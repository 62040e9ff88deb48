//! Link-level MIMO-OFDM simulator with recursive subcarrier sampling,
//! context-subcarrier correlation maps, and a time-correlated
//! multi-reference variable-length entropy codec.
//!
//! The crate is organized around the transmission pipeline:
//!
//! * [`channel`] — tapped-delay-line MIMO channel with AR(1) Doppler
//!   correlation and per-subcarrier frequency responses.
//! * [`precoding`] — SVD precoding/equalization, waterfilling, and the
//!   noise model.
//! * [`qam`] — Gray-mapped square QAM for the modulated bitstream.
//! * [`sampling`] — the recursive subcarrier sampling schedule and CSI
//!   history.
//! * [`corrmap`] — the context-subcarrier correlation map.
//! * [`entropy`] — checkerboard two-pass entropy model, hyperprior,
//!   rate accounting, and a bit-exact range coder.
//! * [`pipeline`] — end-to-end frame transmission and metrics.
//! * [`config`] — experiment configuration, sweeps, and CSV export.
//!
//! Scalar-valued numeric kernels are generic over [`num::Real`]; the
//! concrete aliases below pin the precision used by the simulator and
//! its bit-exact file formats.

pub mod channel;
pub mod config;
pub mod corrmap;
pub mod entropy;
pub mod error;
pub mod num;
pub mod pipeline;
pub mod precoding;
pub mod qam;
pub mod sampling;
pub mod tensor;
pub mod trace;

pub use error::{Error, Result};

/// Scalar type used throughout the simulator.
pub type Scalar = f64;
/// Complex sample type.
pub type Cplx = num_complex::Complex<Scalar>;
/// Dense complex matrix (antenna-domain channel matrices, precoders).
pub type CMatrix = nalgebra::DMatrix<Cplx>;
/// Dense complex vector (stream/symbol vectors).
pub type CVector = nalgebra::DVector<Cplx>;
