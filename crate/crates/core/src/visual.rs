//! Face-detection features: per-axis Gaussian encoding of box centers,
//! detection swapping for corruption experiments, and the detection rate.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::geom::BoundingBox;

pub const DEFAULT_BINS: usize = 51;
/// Flattened width of the default feature: two rows of 51.
pub const DEFAULT_VISUAL_DIM: usize = 2 * DEFAULT_BINS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisualError {
    #[error("no frames")]
    EmptyDataset,
    #[error("swap fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("invalid encoding: {0}")]
    InvalidEncoding(String),
}

/// All face boxes reported for one video frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub frame_index: u32,
    #[serde(with = "box_list")]
    pub boxes: Vec<BoundingBox>,
}

mod box_list {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::geom::BoundingBox;

    pub fn serialize<S: Serializer>(boxes: &[BoundingBox], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(boxes.iter().map(|b| b.to_array()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BoundingBox>, D::Error> {
        let raw: Vec<[f64; 4]> = Vec::deserialize(d)?;
        raw.into_iter()
            .map(|[u, v, w, h]| {
                BoundingBox::new(u, v, w, h)
                    .ok_or_else(|| D::Error::custom(format!("invalid box [{u}, {v}, {w}, {h}]")))
            })
            .collect()
    }
}

/// `(u + w/2, v + h/2)`.
pub fn bbox_center(b: &BoundingBox) -> (f64, f64) {
    (b.u + 0.5 * b.w, b.v + 0.5 * b.h)
}

/// Encoding parameters: grid size and the fill value used when a frame has
/// no detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualEncoding {
    pub bins: usize,
    pub empty_value: f64,
}

impl VisualEncoding {
    pub fn new(bins: usize) -> Result<Self, VisualError> {
        if bins < 2 {
            return Err(VisualError::InvalidEncoding("need at least two bins".into()));
        }
        Ok(Self {
            bins,
            empty_value: 1.0 / bins as f64,
        })
    }
}

impl Default for VisualEncoding {
    fn default() -> Self {
        Self::new(DEFAULT_BINS).expect("default bins")
    }
}

/// `2 x L` feature: row 0 spans the image width, row 1 the height.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeature {
    values: Vec<f64>,
    bins: usize,
}

impl VisualFeature {
    pub fn from_values(values: Vec<f64>, bins: usize) -> Result<Self, VisualError> {
        if values.len() != 2 * bins {
            return Err(VisualError::InvalidEncoding(format!(
                "{} values for a 2x{bins} feature",
                values.len()
            )));
        }
        Ok(Self { values, bins })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn horizontal(&self) -> &[f64] {
        &self.values[..self.bins]
    }

    pub fn vertical(&self) -> &[f64] {
        &self.values[self.bins..]
    }
}

fn grid(extent: f64, bins: usize) -> impl Iterator<Item = f64> {
    let step = extent / (bins - 1) as f64;
    (0..bins).map(move |i| i as f64 * step)
}

/// Evaluates, on `L` evenly spaced points over `[0, width]` and
/// `[0, height]`, the maximum over detections of a 1-D Gaussian centered at
/// the box center with the box width (resp. height) as standard deviation.
pub fn encode_visual(frame: &DetectionFrame, image_w: f64, image_h: f64, enc: VisualEncoding) -> VisualFeature {
    let l = enc.bins;
    if frame.boxes.is_empty() {
        return VisualFeature {
            values: vec![enc.empty_value; 2 * l],
            bins: l,
        };
    }
    let axis = |extent: f64, pick: fn(&BoundingBox) -> (f64, f64)| -> Vec<f64> {
        grid(extent, l)
            .map(|g| {
                frame
                    .boxes
                    .iter()
                    .map(|b| {
                        let (mu, sd) = pick(b);
                        (-(g - mu).powi(2) / (2.0 * sd * sd)).exp()
                    })
                    .fold(0.0, f64::max)
                    // Far tails of tiny boxes underflow; keep values positive.
                    .max(f64::MIN_POSITIVE)
            })
            .collect()
    };
    let mut values = axis(image_w, |b| (bbox_center(b).0, b.w));
    values.extend(axis(image_h, |b| (bbox_center(b).1, b.h)));
    VisualFeature { values, bins: l }
}

pub fn encode_visual_frames(
    frames: &[DetectionFrame],
    image_w: f64,
    image_h: f64,
    enc: VisualEncoding,
    exec: Execution,
) -> Vec<VisualFeature> {
    exec::map_range(exec, frames.len(), |i| encode_visual(&frames[i], image_w, image_h, enc))
}

/// How frames are picked for swapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwapMode {
    /// Exactly `ceil(fdsp * F)` distinct frames.
    #[default]
    ExactCount,
    /// Each frame independently with probability `fdsp`.
    Bernoulli,
}

/// Disjoint frame pairs whose detection sets get exchanged.
pub fn swap_plan<R: Rng + ?Sized>(
    frame_count: usize,
    fdsp: f64,
    mode: SwapMode,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, VisualError> {
    if !(0.0..=1.0).contains(&fdsp) {
        return Err(VisualError::InvalidFraction(fdsp));
    }
    let mut selected: Vec<usize> = match mode {
        SwapMode::ExactCount => {
            let k = ((fdsp * frame_count as f64) - 1e-9).ceil().max(0.0) as usize;
            index::sample(rng, frame_count, k.min(frame_count)).into_vec()
        }
        SwapMode::Bernoulli => (0..frame_count).filter(|_| rng.random_bool(fdsp)).collect(),
    };
    selected.shuffle(rng);
    let mut pairs: Vec<(usize, usize)> = selected.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    if selected.len() % 2 == 1 {
        let leftover = *selected.last().expect("odd length");
        let mut chosen = vec![false; frame_count];
        selected.iter().for_each(|&i| chosen[i] = true);
        let free: Vec<usize> = (0..frame_count).filter(|&i| !chosen[i]).collect();
        if let Some(&partner) = free.get(rng.random_range(0..free.len().max(1))) {
            pairs.push((leftover, partner));
        }
    }
    Ok(pairs)
}

/// Exchanges detection sets along `plan`. Frame indices stay in place.
/// Applying the same plan twice restores the input.
pub fn apply_swaps(frames: &mut [DetectionFrame], plan: &[(usize, usize)]) {
    for &(a, b) in plan {
        let tmp = std::mem::take(&mut frames[a].boxes);
        frames[a].boxes = std::mem::replace(&mut frames[b].boxes, tmp);
    }
}

/// Moves the detections of `ceil(fdsp * F)` random frames onto other frames,
/// creating matched false positives and false negatives.
pub fn swap_detections<R: Rng + ?Sized>(
    frames: &[DetectionFrame],
    fdsp: f64,
    mode: SwapMode,
    rng: &mut R,
) -> Result<Vec<DetectionFrame>, VisualError> {
    let plan = swap_plan(frames.len(), fdsp, mode, rng)?;
    let mut out = frames.to_vec();
    apply_swaps(&mut out, &plan);
    Ok(out)
}

/// Percentage of frames with at least one detection.
pub fn detection_rate(frames: &[DetectionFrame]) -> Result<f64, VisualError> {
    if frames.is_empty() {
        return Err(VisualError::EmptyDataset);
    }
    let hits = frames.iter().filter(|f| !f.boxes.is_empty()).count();
    Ok(100.0 * hits as f64 / frames.len() as f64)
}
