//! Speech recognition threshold prediction by simulated listening
//! experiments.
//!
//! A whole-word HMM-GMM recognizer stands in for a well-trained listener.
//! For every training SNR a recognizer is trained on noisy matrix sentences
//! and then tested across a range of test SNRs; the lowest test SNR at which
//! half of the words are recognized is the predicted speech recognition
//! threshold (SRT).
//!
//! Modules follow the processing chain:
//!
//! - [`frontend`]: waveforms, STFT and log-mel spectrograms
//! - [`features`]: MFCC and separable Gabor filter bank features
//! - [`noise`]: maskers and SNR-controlled mixing
//! - [`corpus`]: matrix grammar, manifests and a synthetic token corpus
//! - [`asr`]: recognizer training, grammar-constrained decoding, scoring
//! - [`sim`]: train-SNR × test-SNR sweeps and SRT extraction
//! - [`stats`]: agreement measures between predictions and measurements
//! - [`runner`]: experiment configuration, execution and reports

pub mod asr;
pub mod corpus;
pub mod error;
pub mod features;
pub mod frontend;
pub mod noise;
pub mod runner;
pub mod seed;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
