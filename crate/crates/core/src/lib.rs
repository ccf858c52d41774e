//! Assessment of speech anti-spoofing corpora through waveform amplitude
//! distributions.
//!
//! The pipeline: parse corpus manifests ([`corpus`]), decode 16-bit audio
//! ([`audio`]), estimate 2^16-bin amplitude PMFs ([`pmf`]), compare them with a
//! battery of divergences ([`similarity`]), build filterbank PMF embeddings
//! ([`filterbank`], [`embedding`]), project them to 2-D ([`projection`]) and
//! evaluate external countermeasure scores ([`detection`]). [`report`] drives
//! all of it from a [`config::RunConfig`].

pub mod audio;
pub mod cache;
pub mod config;
mod container;
pub mod corpus;
pub mod detection;
pub mod embedding;
pub mod filterbank;
pub mod pmf;
pub mod projection;
pub mod report;
pub mod similarity;
pub mod synth;

pub use container::ContainerError;
