//! Brain-driven visual classification.
//!
//! Two stages: recurrent encoders learn a class-discriminative EEG feature
//! space from evoked multi-channel recordings, then regressors map image
//! feature vectors into that space so that the EEG-trained softmax head can
//! classify images.
//!
//! - [`eeg`]: dataset model, file formats, validation, image-level splits
//! - [`dsp`]: notch/band-pass design, causal filtering, time windows
//! - [`encoder`]: LSTM encoders, softmax head, BPTT training, gradient check
//! - [`manifold`]: per-sequence feature extraction and per-image aggregation
//! - [`regress`]: k-NN, ridge and random-forest regression onto the manifold
//! - [`pipeline`]: end-to-end classification and experiment grids
//! - [`synth`]: synthetic evoked-EEG datasets and image features

pub mod audit;
pub mod codec;
pub mod dsp;
pub mod eeg;
pub mod rng;
pub mod encoder;
pub mod manifold;
pub mod pipeline;
pub mod regress;
pub mod synth;
