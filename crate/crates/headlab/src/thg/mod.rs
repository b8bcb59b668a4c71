//! Audio-driven talking-head generation with adjacent-frame learning.

mod checkpoint;
mod complexity;
mod infer;
mod model;
mod sync_expert;
mod tensor;
mod train;

pub use checkpoint::{
    load_discriminator, load_expert, load_thg, save_discriminator, save_expert, save_thg,
};
pub use complexity::{count_complexity, ComplexityReport, ComplexityRow};
pub use infer::infer_video;
pub use model::{generate_n, DiscCache, Discriminator, ThgCache, ThgConfig, ThgModel};
pub use sync_expert::{
    load_split, separation, train_sync_expert, SyncExpert, SyncExpertConfig, SyncTrainConfig,
};
pub use tensor::{
    frames_to_tensor, mel_to_tensor, mel_window_to_patches, mouth_crop_groups,
    mouth_crop_groups_backward, pose_to_input, tensor_to_frames,
};
pub use train::{train_adjacent, LossHistory, ThgTrainConfig};
