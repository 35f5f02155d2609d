//! Manifests, the synthetic forgery corpus, perturbations and batching.

pub mod batch;
pub mod corpus;
pub mod forgery;
pub mod image;
pub mod manifest;
pub mod perturb;
pub mod synth;

pub use batch::{BatchIterator, Composition, SampleKind, SampleRef};
pub use corpus::{Corpus, FakeEntry, GroupEntry};
pub use forgery::{apply_forgery_method, apply_forgery_with, FaceRegion, ForgeryParams, METHOD_CLASS_NAMES};
pub use image::{Image, Mask};
pub use manifest::{load_manifest, ImageRecord, Label, Manifest, Split};
pub use perturb::{perturb, perturb_level, PerturbationKind, PerturbationSpec};
pub use synth::{generate_synthetic_corpus, SyntheticConfig, MANIFEST_FILE};
