//! Dataset ingestion and report emission.

mod coco;
mod report;

pub use coco::{
    bbox_to_roi, keypoint_sampler, load_coco_keypoints, parse_coco_keypoints, CocoKeypoints, Instance, Keypoint,
    DEFAULT_PADDING,
};
pub use report::{format_report, parse_report, read_report, round_sig9, write_report, ReportFormat};
