//! Dataset ingestion, preprocessing, verification protocols, and batching.

mod batches;
mod dataset;
mod preprocess;
mod protocol;
pub mod toy;

pub use batches::{batch_indices, batches_per_epoch, TrainingBatches};
pub use dataset::{
    load_dataset, load_face, DatasetRecord, DiskImageSource, IdentityDataset, ImageSource,
    InMemorySource,
};
pub use preprocess::{denormalize_pixel, preprocess, read_landmarks_file};
pub use protocol::{
    build_protocol, read_protocol, write_protocol, PairProtocol, ProtocolPair, Scenario,
};
