//! Offline-trained, online-streamed QoS violation predictor.

pub mod model;
pub mod stream;
pub mod train;

pub use model::{logistic, Hyperparams, Model, MODEL_FILE_VERSION, SCORE_EPS};
pub use stream::{infer_stream, Alert, InferenceStream};
pub use train::{batch_gradients, batch_loss, train};
