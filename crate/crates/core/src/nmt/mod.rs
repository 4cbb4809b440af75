//! Attentional GRU encoder-decoder with hand-written backpropagation.

mod checkpoint;
mod grad;
mod gradcheck;
pub(crate) mod linalg;
mod model;
mod train;
pub mod vocab;

pub use checkpoint::{MAGIC, VERSION};
pub use gradcheck::{gradient_check, GradCheckReport, TensorCheck};
pub use model::{Dims, Encoded, Params, Seq2SeqModel, StepOutput};
pub use train::{
    checkpoint_name, encode_pairs, init_model, mean_loss, train, train_to_dir, Adadelta, IdPair,
    TrainConfig, TrainEvent, TrainSummary,
};
pub use vocab::Vocab;

#[cfg(test)]
mod tests;
