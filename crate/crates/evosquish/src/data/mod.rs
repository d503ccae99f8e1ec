//! Dataset ingestion: binary and folder sources, class manifests, and
//! seeded minibatch streams.

mod cifar;
mod folder;
mod manifest;
mod stream;
mod synthetic;

pub use cifar::{
    compute_normalization, load_cifar_binary, DataStore, SplitData, CIFAR10_NAMES,
    CIFAR_PIXELS, CIFAR_RECORD_BYTES,
};
pub use folder::load_image_folder;
pub use manifest::{
    ClassEntry, DatasetManifest, Normalization, SourceFormat, SourceSpec, SplitFiles,
    DATASET_SCHEMA, IMAGENET10_CLASSES,
};
pub use stream::{make_stream, LabeledBatchStream, Split, StreamOptions};
pub use synthetic::{write_synthetic_cifar, SynthSpec};
