//! Gesture recognition from high-density surface EMG via spatio-temporal
//! graph convolution.
//!
//! The pipeline: multichannel EMG recordings are segmented into fixed-length
//! windows ([`signal`]), each window yields a muscle-network graph built from
//! Pearson correlations between channels ([`graph`]), and a spatio-temporal
//! graph convolutional classifier predicts the gesture performed in the
//! window ([`model`]). Training with Adam, early stopping, and
//! repetition-held-out five-fold cross-validation lives in [`train`].
//!
//! Everything is built on a minimal reverse-mode differentiation engine
//! ([`tensor`]) so gradients are checkable against finite differences, and
//! the spectral graph filters come in both an exact eigendecomposition form
//! and the Chebyshev/first-order approximations actually used by the model,
//! so every approximation can be verified against its exact counterpart.
//!
//! [`synth`] generates seeded synthetic datasets with class-specific spatial
//! correlation structure, plus a training-free separability oracle, so the
//! end-to-end harness can be exercised without the external HD-sEMG database.

pub mod graph;
pub mod model;
pub mod provenance;
pub mod signal;
pub mod synth;
pub mod tensor;
pub mod train;
