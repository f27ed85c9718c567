//! Speech-to-electroglottograph conversion by adversarial approximate inference.
//!
//! An EGG autoencoder is trained first and its encoder images of real EGG
//! frames serve as an informative latent prior. A speech encoder is then
//! trained to reconstruct EGG frames through the shared decoder while a
//! discriminator pushes its latent codes toward the prior. Inference averages
//! overlapping stride-1 window predictions.
//!
//! The [`eggmetrics`] module holds the evaluation suite: dEGG epochs (GCI and
//! GOI), detection scoring, contact/open/speed quotients, HNR and energy-based
//! voicing. [`synthdata`] generates speech/EGG pairs with exactly known glottal
//! ground truth.

pub mod aai;
pub mod cli;
pub mod eggmetrics;
mod error;
pub mod neuralcore;
pub mod preprocess;
pub mod signal_io;
pub mod synthdata;

pub use error::{Error, Result};
pub use signal_io::{ChannelRole, Waveform};
