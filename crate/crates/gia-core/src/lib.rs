//! Core library for low-light raw image restoration.
//!
//! The crate provides, from the ground up:
//!
//! - a dense 4-D `f32` tensor with reverse-mode automatic differentiation
//!   over a dynamically recorded tape ([`tensor`], [`tape`]);
//! - the neural building blocks of SID-style U-Nets with exact analytic
//!   parameter and FLOP accounting ([`nn`], [`cost`]);
//! - declarative builders for the backbone and its variants, including the
//!   global-information-aware bottleneck module ([`models`]);
//! - the joint l1 + MS-SSIM training objective and evaluation metrics
//!   ([`loss`]);
//! - raw sensor ingestion: CFA packing, black-level normalization, exposure
//!   amplification, augmentation and a synthetic scene generator ([`raw`],
//!   [`container`]);
//! - an Adam training loop with checkpointing and an ablation runner
//!   ([`train`]).

pub mod container;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod models;
pub mod nn;
pub mod raw;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
