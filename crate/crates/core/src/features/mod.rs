//! Input representations: log mel filterbank sequences, word-vector
//! sequences, and the interpretable lexical category vector.

mod embedding;
mod lexicon;
mod mfb;
mod wav;

pub use embedding::{embed_tokens, EmbeddingTable, UNK_TOKEN};
pub use lexicon::{
    lexical_category_vector, tokenize, Category, CategoryLexicon, LexicalFeatureVector, FEATURE_NAMES,
};
pub use mfb::{
    compute_mfb, hz_to_mel, mel_to_hz, znormalize, FrameSpec, MelFilterbank, Waveform, ENERGY_FLOOR,
    HOP_S, NUM_FILTERS, WINDOW_S,
};
pub use wav::{encode_wav_pcm16, parse_wav, read_wav};
