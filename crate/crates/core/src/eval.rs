//! Posterior decoding and DoA error metrics.
//!
//! Errors are circular: 179 and -179 degrees are 2 degrees apart. With
//! several sources in a frame, predictions are matched to ground truth by
//! the permutation with the smallest total error.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::geom::wrap_degrees;

pub const DOA_BINS: usize = 360;
pub const DEFAULT_ALLOWANCE_DEG: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("frame {frame}: {pred} predictions for {gt} sources")]
    CardinalityMismatch { frame: usize, pred: usize, gt: usize },
    #[error("{pred} predicted frames for {gt} ground-truth frames")]
    FrameCountMismatch { pred: usize, gt: usize },
    #[error("nothing to evaluate")]
    Empty,
}

/// Absolute circular difference in degrees, in `[0, 180]`.
pub fn angular_error(a: f64, b: f64) -> f64 {
    let d = wrap_degrees(a - b).abs();
    d.min(360.0 - d)
}

/// Azimuth of posterior bin `i`.
pub fn bin_to_degrees(i: usize) -> f64 {
    i as f64 - 180.0
}

/// Nearest posterior bin for an azimuth.
pub fn degrees_to_bin(deg: f64) -> usize {
    ((wrap_degrees(deg).round() + 180.0) as usize) % DOA_BINS
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// Peaks closer than this many degrees to an already chosen peak are suppressed.
    pub min_separation_deg: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            min_separation_deg: 10.0,
        }
    }
}

fn bin_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Picks `n` azimuths from a circular score vector: local maxima in
/// descending order of score (ties to the lower index), skipping any
/// within the separation radius of a previous pick, then topped up with
/// the best remaining bins if suppression left too few.
pub fn decode_doa(scores: &[f64], n: usize, config: &DecodeConfig) -> Vec<f64> {
    let len = scores.len();
    if len == 0 || n == 0 {
        return Vec::new();
    }
    let by_score = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let mut peaks: Vec<usize> = (0..len)
        .filter(|&i| {
            let prev = scores[(i + len - 1) % len];
            let next = scores[(i + 1) % len];
            scores[i] >= prev && scores[i] >= next
        })
        .collect();
    peaks.sort_by(by_score);

    let scale = len as f64 / DOA_BINS as f64;
    let radius = config.min_separation_deg * scale;
    let mut picked: Vec<usize> = Vec::with_capacity(n);
    for p in peaks {
        if picked.len() == n {
            break;
        }
        if picked.iter().all(|&q| (bin_distance(p, q, len) as f64) >= radius) {
            picked.push(p);
        }
    }
    if picked.len() < n {
        let mut rest: Vec<usize> = (0..len).filter(|i| !picked.contains(i)).collect();
        rest.sort_by(by_score);
        picked.extend(rest.into_iter().take(n - picked.len()));
    }
    picked
        .into_iter()
        .map(|i| wrap_degrees(i as f64 / scale - 180.0))
        .collect()
}

/// Matched errors for one frame, listed in ground-truth order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameErrors {
    /// `assignment[k]` is the prediction matched to ground truth `k`.
    pub assignment: Vec<usize>,
    pub matched_errors: Vec<f64>,
}

/// Minimum-total-error matching by exhaustive permutation search.
///
/// Assignments whose totals tie (within 1e-9) are ranked by their errors
/// sorted largest first, so the pick never depends on input order.
pub fn match_frame(pred: &[f64], gt: &[f64]) -> FrameErrors {
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    for perm in (0..pred.len()).permutations(pred.len()) {
        let errs: Vec<f64> = perm.iter().zip(gt).map(|(&p, &g)| angular_error(pred[p], g)).collect();
        let total: f64 = errs.iter().sum();
        let mut key = errs;
        key.sort_by(|a, b| b.total_cmp(a));
        let better = match &best {
            None => true,
            Some((b, bkey, _)) => total < b - 1e-9 || ((total - b).abs() <= 1e-9 && key < *bkey),
        };
        if better {
            best = Some((total, key, perm));
        }
    }
    let assignment = best.map(|(_, _, p)| p).unwrap_or_default();
    let matched_errors = assignment
        .iter()
        .zip(gt)
        .map(|(&p, &g)| angular_error(pred[p], g))
        .collect();
    FrameErrors {
        assignment,
        matched_errors,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mae: f64,
    pub acc: f64,
    pub frame_count: usize,
    pub pair_count: usize,
    pub frames: Vec<FrameErrors>,
}

/// MAE over all matched source-frame pairs and the percentage of pairs with
/// error at most `allowance_deg` (inclusive).
pub fn mae_acc(
    pred_sets: &[Vec<f64>],
    gt_sets: &[Vec<f64>],
    allowance_deg: f64,
    exec: Execution,
) -> Result<EvalResult, EvalError> {
    if pred_sets.len() != gt_sets.len() {
        return Err(EvalError::FrameCountMismatch {
            pred: pred_sets.len(),
            gt: gt_sets.len(),
        });
    }
    if let Some((frame, (p, g))) = pred_sets
        .iter()
        .zip(gt_sets)
        .enumerate()
        .find(|(_, (p, g))| p.len() != g.len())
    {
        return Err(EvalError::CardinalityMismatch {
            frame,
            pred: p.len(),
            gt: g.len(),
        });
    }
    let frames = exec::map_range(exec, gt_sets.len(), |i| match_frame(&pred_sets[i], &gt_sets[i]));
    let errors: Vec<f64> = frames.iter().flat_map(|f| f.matched_errors.iter().copied()).collect();
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let pair_count = errors.len();
    let mae = errors.iter().sum::<f64>() / pair_count as f64;
    let hits = errors.iter().filter(|&&e| e <= allowance_deg).count();
    Ok(EvalResult {
        mae,
        acc: 100.0 * hits as f64 / pair_count as f64,
        frame_count: frames.len(),
        pair_count,
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub mae: f64,
    pub acc: f64,
}

/// MAE/ACC for every (SNR, swap fraction) combination. `None` SNR is clean audio.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessGrid {
    pub snr_levels: Vec<Option<f64>>,
    pub fdsp_levels: Vec<f64>,
    /// `cells[row][col]` for `snr_levels[row]`, `fdsp_levels[col]`.
    pub cells: Vec<Vec<GridCell>>,
}

impl RobustnessGrid {
    pub fn default_snr_levels() -> Vec<Option<f64>> {
        vec![Some(-10.0), Some(0.0), Some(10.0), Some(20.0), None]
    }

    pub fn default_fdsp_levels() -> Vec<f64> {
        vec![0.0, 0.1, 0.3, 0.5, 0.7]
    }

    pub fn cell(&self, snr: Option<f64>, fdsp: f64) -> Option<GridCell> {
        let r = self.snr_levels.iter().position(|s| *s == snr)?;
        let c = self.fdsp_levels.iter().position(|f| *f == fdsp)?;
        Some(self.cells[r][c])
    }

    pub fn is_complete(&self) -> bool {
        self.cells.len() == self.snr_levels.len()
            && self.cells.iter().all(|row| row.len() == self.fdsp_levels.len())
    }

    /// Rows are SNR levels, columns swap percentages, cells `mae/acc`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("snr_db");
        for f in &self.fdsp_levels {
            s.push_str(&format!(",fdsp_{}", (f * 100.0).round()));
        }
        s.push('\n');
        for (snr, row) in self.snr_levels.iter().zip(&self.cells) {
            match snr {
                Some(v) => s.push_str(&format!("{v}")),
                None => s.push_str("clean"),
            }
            for c in row {
                s.push_str(&format!(",{:.2}/{:.1}", c.mae, c.acc));
            }
            s.push('\n');
        }
        s
    }

    /// Long-form plot data: one line per (fdsp, snr) with MAE and ACC.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("fdsp_percent,snr_db,mae_deg,acc_percent\n");
        for (c, f) in self.fdsp_levels.iter().enumerate() {
            for (r, snr) in self.snr_levels.iter().enumerate() {
                let cell = self.cells[r][c];
                let snr = snr.map_or("clean".to_string(), |v| v.to_string());
                s.push_str(&format!("{},{snr},{},{}\n", (f * 100.0).round(), cell.mae, cell.acc));
            }
        }
        s
    }
}
