//! Tokenisation, vocabulary, corpus files, padding, and the synthetic corpus.

mod batch;
mod corpus;
mod synthetic;
mod tokenize;
mod vocab;

pub use batch::{encode_batch, encode_instance, EncodeParams, EncodedBatch, EncodedInstance};
pub use corpus::{load_jsonl, parse_jsonl, write_jsonl, ClaimInstance};
pub use synthetic::{gen_synthetic, GoldMetadata, SyntheticCorpus, SyntheticParams};
pub use tokenize::tokenize;
pub use vocab::{Vocab, BOS, PAD, UNK};
