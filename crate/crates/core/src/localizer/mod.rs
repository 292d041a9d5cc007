//! Anchor-based tumor localization at 128x128 and mapping of boxes back to
//! the native 512x512 frame.

pub mod anchors;
pub mod detector;
pub mod nms;
pub mod roi;

pub use anchors::{assign_anchors, decode_deltas, encode_deltas, generate_anchors, Anchor, AnchorLabel};
pub use detector::{detect, propose, train_detector, DetectConfig, DetectorTrainConfig, DetectorWeights};
pub use nms::{nms, Detection};
pub use roi::roi_pool;

use crate::geometry::BBox;

/// Native slice resolution.
pub const ORIGINAL_SIZE: usize = 512;
/// Network input resolution.
pub const NETWORK_SIZE: usize = 128;
pub const FRAME_SCALE: f64 = (ORIGINAL_SIZE / NETWORK_SIZE) as f64;

/// 128x128 frame to 512x512 frame; real-valued, no rounding.
pub fn map_box_to_original(b: &BBox) -> BBox {
    b.scale(FRAME_SCALE)
}

pub fn map_box_to_network(b: &BBox) -> BBox {
    b.scale(1.0 / FRAME_SCALE)
}
