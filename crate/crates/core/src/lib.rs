//! Continuous engagement estimation from video: annotation tracks and
//! inter-coder agreement, windowed datasets, a pluggable feature backbone,
//! an LSTM regressor with Adagrad training, streaming inference and ROC
//! evaluation.

pub mod agreement;
pub mod annotation;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod optim;
pub mod service;
pub mod source;
pub mod stream;
pub mod train;
