//! Self-supervised speech enhancement with a clean-speech autoencoder and a
//! mixture autoencoder that share a latent space.

pub mod audio_io;
pub mod baseline_ss;
pub mod dsp;
pub mod enhance;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod training;
pub mod vae;
