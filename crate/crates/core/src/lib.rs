//! Brain tumor slice analysis on synthetic phantoms: a shallow CNN
//! classifier, an anchor-based tumor localizer, Prewitt-based segmentation
//! inside the detected box, objective metrics, and a DSIS rating engine.

pub mod classifier;
pub mod dataset;
pub mod dsis;
pub mod evaluate;
pub mod geometry;
pub mod image;
pub mod localizer;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod segment;
pub mod stimuli;
pub mod weights;

pub use classifier::{ClassifierWeights, Classification};
pub use dataset::{DatasetManifest, Sample};
pub use geometry::{iou, BBox, BinaryMask, Boundary};
pub use image::{GrayImage, NormImage};
pub use nn::Tensor3;
pub use phantom::{PhantomSpec, TumorClass};
