//! Corpora, ontology, bracketed trees, pretrained vectors and vocabulary.
//!
//! All spans are 0-based and inclusive.

mod annotated;
mod embeddings;
mod tree;
mod vocab;

pub(crate) use annotated::hex_sha256;
pub use annotated::{
    build_frame_instances, build_instances, corpus_to_jsonl, framenet_scaffold_instances,
    instance_id, load_corpus, parse_corpus, AnnotatedSentence, Annotation, ArgInstance, Element,
    FrameIdInstance, FrameOntology, Span,
};
pub use embeddings::PretrainedEmbeddings;
pub use tree::{load_treebank, parse_bracketed_tree, parse_treebank};
pub use vocab::{apply_unk_policy, Vocabulary, UNK, UNK_TOKEN};
