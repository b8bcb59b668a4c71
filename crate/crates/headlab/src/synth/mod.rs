//! Procedural talking-head world with fully known ground truth.

mod corpus;
mod estimate;
mod face;
mod utterance;

pub use corpus::{
    make_corpus, read_correspondence, write_correspondence, Corpus, CorpusConfig, CorpusRecord,
    RecordKind, Split, UtteranceMeta, MANIFEST_NAME,
};
pub use estimate::estimate_expression;
pub use face::{mouth_bbox, mouth_crop_rect, render_face, FaceParams, Pose};
pub use utterance::{
    make_paired, synth_utterance, synth_utterance_with_identity, Emotion, PairedUtterance,
    Utterance, UtteranceConfig, Warp,
};
