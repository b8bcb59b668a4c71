//! Mel-spectrogram DTW alignment and paired-supervision dataset building.

mod correspondence;
mod dataset;
mod dtw;

pub use correspondence::{path_to_frames, FrameCorrespondence};
pub use dataset::{
    align_pair, build_paired_dataset, build_pairs_from, read_dataset, read_sequence,
    write_dataset, write_sequence_with_manifest, DatasetConfig, PairedDataset, PairedSample,
};
pub use dtw::{dtw_align, dtw_align_banded, AlignmentPath, CostMetric};
