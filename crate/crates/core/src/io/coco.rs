use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::biaslab::Sampler;
use crate::error::{Error, Result};
use crate::geometry::{PlaneSize, Point, Roi};

pub const DEFAULT_PADDING: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub point: Point,
    /// 0 = not labelled, 1 = labelled but occluded, 2 = visible.
    pub visibility: u8,
}

/// One annotated person joined with the size of its image.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub annotation_id: u64,
    pub image_id: u64,
    pub image_size: PlaneSize,
    /// Top-left `(x, y, w, h)` in source units.
    pub bbox: [f64; 4],
    pub keypoints: Vec<Keypoint>,
}

impl Instance {
    /// Keypoints usable as ground truth (visibility 1 or 2).
    pub fn labelled(&self) -> impl Iterator<Item = Point> + '_ {
        self.keypoints.iter().filter(|k| k.visibility > 0).map(|k| k.point)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocoKeypoints {
    pub instances: Vec<Instance>,
    /// Annotations dropped because no keypoint was labelled.
    pub skipped_unlabelled: usize,
    /// Annotations dropped because their box had no area.
    pub skipped_empty_bbox: usize,
    pub joint_count: usize,
}

#[derive(Deserialize)]
struct RawFile {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<RawCategory>,
}

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    #[serde(default)]
    category_id: Option<u64>,
    bbox: [f64; 4],
    keypoints: Vec<f64>,
}

#[derive(Deserialize)]
struct RawCategory {
    id: u64,
    #[serde(default)]
    keypoints: Vec<String>,
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn parse_coco_keypoints(text: &str) -> Result<CocoKeypoints> {
    let raw: RawFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let images: HashMap<u64, &RawImage> = raw.images.iter().map(|im| (im.id, im)).collect();
    let declared: HashMap<u64, usize> = raw
        .categories
        .iter()
        .filter(|c| !c.keypoints.is_empty())
        .map(|c| (c.id, c.keypoints.len()))
        .collect();

    let mut out = CocoKeypoints {
        instances: Vec::new(),
        skipped_unlabelled: 0,
        skipped_empty_bbox: 0,
        joint_count: 0,
    };
    let mut expected: Option<usize> = None;
    for ann in &raw.annotations {
        let image = images.get(&ann.image_id).ok_or(Error::MissingImage {
            annotation_id: ann.id,
            image_id: ann.image_id,
        })?;
        if ann.keypoints.len() % 3 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "annotation {} has {} keypoint values, not a multiple of 3",
                ann.id,
                ann.keypoints.len()
            )));
        }
        let joints = ann.keypoints.len() / 3;
        let want = ann
            .category_id
            .and_then(|c| declared.get(&c).copied())
            .or(expected)
            .unwrap_or(joints);
        if joints != want {
            return Err(Error::DimensionMismatch(format!(
                "annotation {} has {joints} joints, expected {want}",
                ann.id
            )));
        }
        expected = Some(want);

        let keypoints = ann
            .keypoints
            .chunks_exact(3)
            .map(|c| {
                let v = c[2];
                if v != 0.0 && v != 1.0 && v != 2.0 {
                    return Err(Error::invalid(format!(
                        "annotation {} has visibility flag {v}",
                        ann.id
                    )));
                }
                Ok(Keypoint {
                    point: Point::new(c[0], c[1]),
                    visibility: v as u8,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let [_, _, w, h] = ann.bbox;
        if !(w > 0.0 && h > 0.0 && ann.bbox.iter().all(|v| v.is_finite())) {
            out.skipped_empty_bbox += 1;
            continue;
        }
        if keypoints.iter().all(|k| k.visibility == 0) {
            out.skipped_unlabelled += 1;
            continue;
        }
        out.instances.push(Instance {
            annotation_id: ann.id,
            image_id: ann.image_id,
            image_size: PlaneSize::new(image.width, image.height)?,
            bbox: ann.bbox,
            keypoints,
        });
    }
    out.joint_count = expected.unwrap_or(0);
    Ok(out)
}

pub fn load_coco_keypoints(path: impl AsRef<Path>) -> Result<CocoKeypoints> {
    parse_coco_keypoints(&fs::read_to_string(path)?)
}

/// Turns a top-left `(x, y, w, h)` box into an ROI with the given `w / h`
/// aspect: the center stays, the side that is too short grows, then both
/// sides are scaled by `padding`.
pub fn bbox_to_roi(bbox: [f64; 4], target_aspect: f64, padding: f64) -> Result<Roi> {
    let [x, y, w, h] = bbox;
    if !(target_aspect > 0.0 && target_aspect.is_finite()) {
        return Err(Error::invalid(format!("aspect must be positive, got {target_aspect}")));
    }
    if !(padding > 0.0 && padding.is_finite()) {
        return Err(Error::invalid(format!("padding must be positive, got {padding}")));
    }
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::invalid(format!("bbox extent must be positive, got {w} x {h}")));
    }
    let (mut rw, mut rh) = (w, h);
    if w > target_aspect * h {
        rh = w / target_aspect;
    } else {
        rw = h * target_aspect;
    }
    Roi::new(x + 0.5 * w, y + 0.5 * h, rw * padding, rh * padding)
}

/// Every labelled keypoint paired with the ROI of its instance.
pub fn keypoint_sampler(instances: &[Instance], target_aspect: f64, padding: f64) -> Result<Sampler> {
    let mut points = Vec::new();
    for inst in instances {
        let roi = bbox_to_roi(inst.bbox, target_aspect, padding)?;
        points.extend(inst.labelled().map(|p| (p, roi)));
    }
    if points.is_empty() {
        return Err(Error::invalid("no labelled keypoints to sample from"));
    }
    Ok(Sampler::Instances(points))
}
