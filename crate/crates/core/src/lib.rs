//! Joint pre-training of speech and text on discrete token sequences.
//!
//! Speech is vector-quantized into centroid indices, text is expanded into
//! positional phonemes and stochastically up-sampled to speech-like lengths,
//! and a single shared Transformer encoder is trained with a masked-token
//! objective over both streams.

mod kernels;

pub mod analysis;
pub mod io;
pub mod masking;
pub mod model;
pub mod seeds;
pub mod speech;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod trainer;
pub mod types;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{cosine, Tensor, TensorError, NORM_FLOOR};
pub use types::{Modality, TokenSequence};
