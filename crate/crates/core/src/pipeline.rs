//! Command-level drivers: feature extraction, training, evaluation, the
//! SRP-PHAT baseline and the robustness grid, plus their on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{
    add_noise_at_snr, decode_srp, gcc_feature, srp_phat, GccFeature, LagRange, Multichannel, DEFAULT_FFT_LEN,
};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{mae_acc, DecodeConfig, GridCell, RobustnessGrid, DEFAULT_ALLOWANCE_DEG};
use crate::exec::{self, Execution};
use crate::io::feature_store::{read_index, read_store, write_index, FeatureRecord, FeatureWriter};
use crate::io::kv::KeyValues;
use crate::nn::checkpoint;
use crate::nn::target::{encode_target, DEFAULT_TARGET_SIGMA_DEG};
use crate::nn::{train, AdamConfig, Architecture, Matrix, Model, ModelConfig, TrainConfig, TrainOutcome, TrainingSet};
use crate::rng;
use crate::visual::{encode_visual_frames, swap_detections, DetectionFrame, SwapMode, VisualEncoding};

pub const GCC_STORE: &str = "gcc.doaf";
pub const GCC_INDEX: &str = "gcc.idx";
pub const VISUAL_STORE: &str = "visual.doaf";
pub const VISUAL_INDEX: &str = "visual.idx";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const CHECKPOINT_FILE: &str = "model.doam";
pub const LOSS_FILE: &str = "loss.csv";
pub const TRAIN_CONFIG_FILE: &str = "train_config.txt";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const GRID_FILE: &str = "grid.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const CHART_FILE: &str = "grid.svg";

const NOISE_DOMAIN: u64 = 0x0015E;
const SWAP_DOMAIN: u64 = 0x05A9;
const PREDICT_BATCH: usize = 512;

/// Test-time corruption. `seed` drives both the noise and the swaps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Corruption {
    pub snr_db: Option<f64>,
    pub fdsp: Option<f64>,
    pub seed: u64,
}

impl Corruption {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::Config("SNR must be finite".into()));
        }
        if self.fdsp.is_some_and(|f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::Config("swap fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureParams {
    pub lags: LagRange,
    pub visual: VisualEncoding,
}

fn fft_len_for(frame_len: usize) -> usize {
    DEFAULT_FFT_LEN.max(frame_len.next_power_of_two())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub split: Split,
    pub azimuths: Vec<f64>,
}

/// Row-aligned features for a set of frames, at stored (`f32`) precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub labels: Vec<Label>,
    pub gcc: Matrix,
    pub gcc_shape: (usize, usize),
    pub vis: Matrix,
    pub vis_shape: (usize, usize),
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self, split: Option<Split>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| split.is_none_or(|s| self.labels[i].split == s))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> FeatureSet {
        FeatureSet {
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
            gcc: self.gcc.select_rows(rows),
            gcc_shape: self.gcc_shape,
            vis: self.vis.select_rows(rows),
            vis_shape: self.vis_shape,
        }
    }
}

fn round_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

/// GCC-PHAT rows for `selection` (positions into `ds.frames`), with optional
/// white noise at `snr_db`. Noise for a frame depends only on the seed and
/// its frame index.
pub fn audio_features(
    ds: &Dataset,
    selection: &[usize],
    snr_db: Option<f64>,
    seed: u64,
    params: &FeatureParams,
    exec: Execution,
) -> Result<Matrix> {
    let pairs = ds.array.pairs().len();
    let width = pairs * params.lags.len();
    let fft_len = fft_len_for(ds.frame_len());
    let mut out = Matrix::zeros(selection.len(), width);
    ds.for_each_audio_group(selection, |positions, frames| {
        let rows = exec::try_map_range(exec, frames.len(), |k| -> Result<Vec<f64>> {
            let index = ds.frames[selection[positions[k]]].frame_index;
            let frame = match snr_db {
                Some(snr) => {
                    let mut r = rng::for_item(seed, NOISE_DOMAIN, index as u64);
                    add_noise_at_snr(&frames[k], snr, &mut r)?
                }
                None => frames[k].clone(),
            };
            Ok(round_f32(gcc_feature(&frame, params.lags, fft_len)?.values()))
        })?;
        for (pos, row) in positions.iter().zip(rows) {
            out.row_mut(*pos).copy_from_slice(&row);
        }
        Ok(())
    })?;
    Ok(out)
}

/// Detections of `selection`, swapped among themselves at rate `fdsp`.
pub fn selected_detections(ds: &Dataset, selection: &[usize], fdsp: Option<f64>, seed: u64) -> Result<Vec<DetectionFrame>> {
    let frames: Vec<DetectionFrame> = selection.iter().map(|&i| ds.frames[i].detections.clone()).collect();
    Ok(match fdsp {
        Some(f) => {
            let mut r = rng::for_item(seed, SWAP_DOMAIN, 0);
            swap_detections(&frames, f, SwapMode::ExactCount, &mut r)?
        }
        None => frames,
    })
}

pub fn visual_features(
    ds: &Dataset,
    selection: &[usize],
    fdsp: Option<f64>,
    seed: u64,
    params: &FeatureParams,
    exec: Execution,
) -> Result<Matrix> {
    let dets = selected_detections(ds, selection, fdsp, seed)?;
    let i = ds.camera.intrinsics();
    let feats = encode_visual_frames(&dets, i.width as f64, i.height as f64, params.visual, exec);
    let width = 2 * params.visual.bins;
    let mut out = Matrix::zeros(selection.len(), width);
    for (r, f) in feats.iter().enumerate() {
        out.row_mut(r).copy_from_slice(&round_f32(f.values()));
    }
    Ok(out)
}

fn labels_for(ds: &Dataset, selection: &[usize]) -> Vec<Label> {
    selection
        .iter()
        .map(|&i| {
            let f = &ds.frames[i];
            Label {
                frame_index: f.frame_index,
                timestamp_s: f.timestamp_s,
                split: f.split,
                azimuths: f.azimuths(),
            }
        })
        .collect()
}

/// Audio and visual features for the selected frames.
pub fn extract(
    ds: &Dataset,
    selection: &[usize],
    corruption: &Corruption,
    params: &FeatureParams,
    exec: Execution,
) -> Result<FeatureSet> {
    corruption.validate()?;
    let gcc = audio_features(ds, selection, corruption.snr_db, corruption.seed, params, exec)?;
    let vis = visual_features(ds, selection, corruption.fdsp, corruption.seed, params, exec)?;
    Ok(FeatureSet {
        labels: labels_for(ds, selection),
        gcc,
        gcc_shape: (ds.array.pairs().len(), params.lags.len()),
        vis,
        vis_shape: (2, params.visual.bins),
    })
}

fn write_store(dir: &Path, store: &str, index: &str, labels: &[Label], m: &Matrix, shape: (usize, usize)) -> Result<()> {
    let mut w = FeatureWriter::create(dir.join(store))?;
    for (l, r) in labels.iter().zip(0..m.rows()) {
        w.write(l.frame_index, shape.0, shape.1, m.row(r))?;
    }
    w.finish()?;
    let entries: Vec<(u32, f64)> = labels.iter().map(|l| (l.frame_index, l.timestamp_s)).collect();
    write_index(dir.join(index), &entries)
}

pub fn write_features(set: &FeatureSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_store(dir, GCC_STORE, GCC_INDEX, &set.labels, &set.gcc, set.gcc_shape)?;
    write_store(dir, VISUAL_STORE, VISUAL_INDEX, &set.labels, &set.vis, set.vis_shape)?;
    let mut text = String::new();
    for l in &set.labels {
        text.push_str(&serde_json::to_string(l).map_err(|e| Error::format(dir.join(LABELS_FILE), e.to_string()))?);
        text.push('\n');
    }
    let p = dir.join(LABELS_FILE);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

fn store_matrix(path: &Path, records: &[FeatureRecord], labels: &[Label]) -> Result<(Matrix, (usize, usize))> {
    if records.len() != labels.len() {
        return Err(Error::format(path, format!("{} records for {} labels", records.len(), labels.len())));
    }
    let shape = records
        .first()
        .map_or((0, 0), |r| (r.rows as usize, r.cols as usize));
    let mut m = Matrix::zeros(records.len(), shape.0 * shape.1);
    for (i, (rec, l)) in records.iter().zip(labels).enumerate() {
        if rec.frame_index != l.frame_index {
            return Err(Error::format(
                path,
                format!("record {i} is frame {}, labels say {}", rec.frame_index, l.frame_index),
            ));
        }
        if (rec.rows as usize, rec.cols as usize) != shape {
            return Err(Error::format(path, format!("frame {} has shape {}x{}", rec.frame_index, rec.rows, rec.cols)));
        }
        m.row_mut(i).copy_from_slice(&rec.values_f64());
    }
    Ok((m, shape))
}

fn check_index(path: &Path, labels: &[Label]) -> Result<()> {
    let idx = read_index(path)?;
    let ok = idx.len() == labels.len() && idx.iter().zip(labels).all(|(e, l)| e.0 == l.frame_index);
    if !ok {
        return Err(Error::format(path, "index does not match the labels"));
    }
    Ok(())
}

pub fn read_labels(dir: &Path) -> Result<Vec<Label>> {
    let p = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::format(&p, format!("line {}: {e}", n + 1))))
        .collect()
}

/// Loads a features directory. With `with_visual == false` the visual store
/// is never opened and the visual matrix is all zeros.
pub fn read_features(dir: &Path, with_visual: bool, vis_width: usize) -> Result<FeatureSet> {
    let labels = read_labels(dir)?;
    if labels.is_empty() {
        return Err(Error::format(dir.join(LABELS_FILE), "no frames"));
    }
    let gpath = dir.join(GCC_STORE);
    let (gcc, gcc_shape) = store_matrix(&gpath, &read_store(&gpath)?, &labels)?;
    check_index(&dir.join(GCC_INDEX), &labels)?;
    let (vis, vis_shape) = if with_visual {
        let vpath = dir.join(VISUAL_STORE);
        let out = store_matrix(&vpath, &read_store(&vpath)?, &labels)?;
        check_index(&dir.join(VISUAL_INDEX), &labels)?;
        out
    } else {
        (Matrix::zeros(labels.len(), vis_width), (2, vis_width / 2))
    };
    Ok(FeatureSet {
        labels,
        gcc,
        gcc_shape,
        vis,
        vis_shape,
    })
}

/// Everything a training run is configured by.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub hidden: Vec<usize>,
    pub weight_hidden: usize,
    pub sigma_deg: f64,
    pub train: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hidden: vec![1000; 3],
            weight_hidden: 64,
            sigma_deg: DEFAULT_TARGET_SIGMA_DEG,
            train: TrainConfig::default(),
        }
    }
}

impl TrainSettings {
    pub fn from_key_values(kv: &KeyValues) -> std::result::Result<Self, String> {
        const KNOWN: &[&str] = &[
            "epochs",
            "batch",
            "lr",
            "beta1",
            "beta2",
            "adam_eps",
            "hidden",
            "weight_hidden",
            "sigma_deg",
            "seed",
        ];
        if let Some(k) = kv.keys().find(|k| !KNOWN.contains(k)) {
            return Err(format!("unknown training key `{k}`"));
        }
        let d = Self::default();
        let hidden = match kv.get("hidden") {
            None => d.hidden,
            Some(v) => {
                let n = KeyValues::numbers(v)?;
                if n.is_empty() || n.iter().any(|&w| w < 1.0 || w.fract() != 0.0) {
                    return Err("`hidden`: expected positive integer widths".into());
                }
                n.into_iter().map(|w| w as usize).collect()
            }
        };
        let a = AdamConfig::default();
        let s = Self {
            hidden,
            weight_hidden: kv.parse_value("weight_hidden")?.unwrap_or(d.weight_hidden),
            sigma_deg: kv.parse_value("sigma_deg")?.unwrap_or(d.sigma_deg),
            train: TrainConfig {
                epochs: kv.parse_value("epochs")?.unwrap_or(d.train.epochs),
                batch_size: kv.parse_value("batch")?.unwrap_or(d.train.batch_size),
                adam: AdamConfig {
                    lr: kv.parse_value("lr")?.unwrap_or(a.lr),
                    beta1: kv.parse_value("beta1")?.unwrap_or(a.beta1),
                    beta2: kv.parse_value("beta2")?.unwrap_or(a.beta2),
                    eps: kv.parse_value("adam_eps")?.unwrap_or(a.eps),
                },
                seed: kv.parse_value("seed")?.unwrap_or(d.train.seed),
            },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let a = &self.train.adam;
        if self.train.epochs == 0 {
            return Err("epochs must be positive".into());
        }
        if self.train.batch_size < 2 {
            return Err("batch must be at least 2".into());
        }
        if !(a.lr > 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err("Adam settings out of range".into());
        }
        if !(a.eps > 0.0) || !(self.sigma_deg > 0.0 && self.sigma_deg.is_finite()) {
            return Err("adam_eps and sigma_deg must be positive".into());
        }
        if self.weight_hidden == 0 || self.hidden.contains(&0) {
            return Err("layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let t = &self.train;
        kv.push("epochs", t.epochs);
        kv.push("batch", t.batch_size);
        kv.push("lr", format!("{:?}", t.adam.lr));
        kv.push("beta1", format!("{:?}", t.adam.beta1));
        kv.push("beta2", format!("{:?}", t.adam.beta2));
        kv.push("adam_eps", format!("{:?}", t.adam.eps));
        kv.push("hidden", self.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" "));
        kv.push("weight_hidden", self.weight_hidden);
        kv.push("sigma_deg", format!("{:?}", self.sigma_deg));
        kv.push("seed", t.seed);
        kv
    }

    pub fn model_config(&self, arch: Architecture, set: &FeatureSet) -> ModelConfig {
        ModelConfig {
            gcc_dim: set.gcc.cols(),
            vis_dim: set.vis.cols(),
            hidden: self.hidden.clone(),
            weight_hidden: self.weight_hidden,
            ..ModelConfig::new(arch)
        }
    }
}

pub fn training_set(set: &FeatureSet, rows: &[usize], sigma_deg: f64) -> Result<TrainingSet> {
    let mut targets = Matrix::zeros(rows.len(), crate::eval::DOA_BINS);
    for (k, &r) in rows.iter().enumerate() {
        targets.row_mut(k).copy_from_slice(&encode_target(&set.labels[r].azimuths, sigma_deg));
    }
    Ok(TrainingSet::new(set.gcc.select_rows(rows), set.vis.select_rows(rows), targets)?)
}

/// Trains `arch` on the train split of `set`.
pub fn train_on(set: &FeatureSet, arch: Architecture, settings: &TrainSettings) -> Result<TrainOutcome> {
    settings.validate().map_err(Error::Config)?;
    let rows = set.rows(Some(Split::Train));
    if rows.is_empty() {
        return Err(crate::nn::NnError::EmptyDataset.into());
    }
    let data = training_set(set, &rows, settings.sigma_deg)?;
    Ok(train(settings.model_config(arch, set), &data, &settings.train)?)
}

/// Features dir in, checkpoint + loss history out.
pub fn train_command(features_dir: &Path, arch: Architecture, settings: &TrainSettings, out: &Path) -> Result<TrainOutcome> {
    settings.validate().map_err(Error::Config)?;
    let set = read_features(features_dir, arch.uses_visual(), crate::visual::DEFAULT_VISUAL_DIM)?;
    let outcome = train_on(&set, arch, settings)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    checkpoint::save(&outcome.model, out.join(CHECKPOINT_FILE))?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_history.iter().enumerate() {
        writeln!(csv, "{},{l}", e + 1).unwrap();
    }
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(LOSS_FILE, csv)?;
    write(TRAIN_CONFIG_FILE, settings.to_key_values().to_text())?;
    Ok(outcome)
}

/// Eval-mode posteriors, in batches.
pub fn predict(model: &Model, gcc: &Matrix, vis: &Matrix) -> Result<Matrix> {
    let n = gcc.rows();
    let mut out = Matrix::zeros(n, model.config().outputs);
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + PREDICT_BATCH).min(n)).collect();
        let p = model.predict(&gcc.select_rows(&idx), &vis.select_rows(&idx))?;
        for (k, &r) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(p.row(k));
        }
        start += PREDICT_BATCH;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub frame_index: u32,
    pub gt: Vec<f64>,
    pub pred: Vec<f64>,
    pub matched_errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mae: f64,
    pub acc: f64,
    pub frames: usize,
}

/// MAE/ACC split by source count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub single: Option<Stats>,
    pub double: Option<Stats>,
    pub overall: Stats,
}

impl Summary {
    pub const HEADER: &'static str = "N=1 MAE,N=1 ACC,N=2 MAE,N=2 ACC,overall MAE,overall ACC";

    pub fn to_csv(&self) -> String {
        let cell = |s: Option<Stats>| match s {
            Some(s) => format!("{:.4},{:.4}", s.mae, s.acc),
            None => "nan,nan".to_string(),
        };
        format!(
            "{}\n{},{},{}\n",
            Self::HEADER,
            cell(self.single),
            cell(self.double),
            cell(Some(self.overall))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub frames: Vec<FramePrediction>,
    pub summary: Summary,
}

impl Evaluation {
    pub fn results_jsonl(&self) -> String {
        let mut s = String::new();
        for f in &self.frames {
            s.push_str(&serde_json::to_string(f).expect("plain numbers serialize"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (name, text) in [(RESULTS_FILE, self.results_jsonl()), (SUMMARY_FILE, self.summary.to_csv())] {
            let p = out.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Scores predicted azimuth sets against ground truth.
pub fn score(frame_indices: &[u32], preds: Vec<Vec<f64>>, gts: Vec<Vec<f64>>, exec: Execution) -> Result<Evaluation> {
    let all = mae_acc(&preds, &gts, DEFAULT_ALLOWANCE_DEG, exec)?;
    let subset = |n: usize| -> Result<Option<Stats>> {
        let idx: Vec<usize> = (0..gts.len()).filter(|&i| gts[i].len() == n).collect();
        if idx.is_empty() {
            return Ok(None);
        }
        let p: Vec<Vec<f64>> = idx.iter().map(|&i| preds[i].clone()).collect();
        let g: Vec<Vec<f64>> = idx.iter().map(|&i| gts[i].clone()).collect();
        let r = mae_acc(&p, &g, DEFAULT_ALLOWANCE_DEG, exec)?;
        Ok(Some(Stats {
            mae: r.mae,
            acc: r.acc,
            frames: r.frame_count,
        }))
    };
    let summary = Summary {
        single: subset(1)?,
        double: subset(2)?,
        overall: Stats {
            mae: all.mae,
            acc: all.acc,
            frames: all.frame_count,
        },
    };
    let frames = all
        .frames
        .into_iter()
        .enumerate()
        .map(|(i, f)| FramePrediction {
            frame_index: frame_indices[i],
            gt: gts[i].clone(),
            pred: f.assignment.iter().map(|&k| preds[i][k]).collect(),
            matched_errors: f.matched_errors,
        })
        .collect();
    Ok(Evaluation { frames, summary })
}

/// Decodes the model's posterior for `rows` of `set` with the known source
/// count and scores it.
pub fn evaluate(model: &Model, set: &FeatureSet, rows: &[usize], exec: Execution) -> Result<Evaluation> {
    let sub = set.subset(rows);
    if sub.is_empty() {
        return Err(crate::eval::EvalError::Empty.into());
    }
    let post = predict(model, &sub.gcc, &sub.vis)?;
    let cfg = DecodeConfig::default();
    let gts: Vec<Vec<f64>> = sub.labels.iter().map(|l| l.azimuths.clone()).collect();
    let preds = exec::map_range(exec, sub.len(), |i| crate::eval::decode_doa(post.row(i), gts[i].len(), &cfg));
    let idx: Vec<u32> = sub.labels.iter().map(|l| l.frame_index).collect();
    score(&idx, preds, gts, exec)
}

fn check_model_fits(model: &Model, set: &FeatureSet) -> Result<()> {
    let c = model.config();
    if c.gcc_dim != set.gcc.cols() || c.vis_dim != set.vis.cols() {
        return Err(crate::nn::NnError::ShapeMismatch(format!(
            "model expects {}+{} inputs, features have {}+{}",
            c.gcc_dim,
            c.vis_dim,
            set.gcc.cols(),
            set.vis.cols()
        ))
        .into());
    }
    Ok(())
}

/// Checkpoint + features dir in, per-frame results and summary out.
pub fn eval_command(checkpoint_path: &Path, features_dir: &Path, split: Option<Split>, out: &Path, exec: Execution) -> Result<Evaluation> {
    let model = checkpoint::load(checkpoint_path)?;
    let set = read_features(features_dir, model.arch().uses_visual(), model.config().vis_dim)?;
    check_model_fits(&model, &set)?;
    let ev = evaluate(&model, &set, &set.rows(split), exec)?;
    ev.write(out)?;
    Ok(ev)
}

/// SRP-PHAT with the known source count on the selected frames.
pub fn baseline(ds: &Dataset, selection: &[usize], snr_db: Option<f64>, seed: u64, exec: Execution) -> Result<Evaluation> {
    let params = FeatureParams::default();
    let gcc = audio_features(ds, selection, snr_db, seed, &params, exec)?;
    let pairs = ds.array.pairs().len();
    let cfg = DecodeConfig::default();
    let gts: Vec<Vec<f64>> = selection.iter().map(|&i| ds.frames[i].azimuths()).collect();
    let preds = exec::try_map_range(exec, selection.len(), |r| -> Result<Vec<f64>> {
        let feat = GccFeature::new(gcc.row(r).to_vec(), pairs, params.lags)?;
        let map = srp_phat(&feat, &ds.array, ds.sample_rate())?;
        Ok(decode_srp(&map, gts[r].len(), &cfg))
    })?;
    let idx: Vec<u32> = selection.iter().map(|&i| ds.frames[i].frame_index).collect();
    score(&idx, preds, gts, exec)
}

pub fn baseline_command(dataset_dir: &Path, split: Option<Split>, snr_db: Option<f64>, seed: u64, out: &Path, exec: Execution) -> Result<Evaluation> {
    Corruption { snr_db, fdsp: None, seed }.validate()?;
    let ds = Dataset::load(dataset_dir)?;
    let ev = baseline(&ds, &ds.indices(split), snr_db, seed, exec)?;
    ev.write(out)?;
    Ok(ev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub snr_levels: Vec<Option<f64>>,
    pub fdsp_levels: Vec<f64>,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            snr_levels: RobustnessGrid::default_snr_levels(),
            fdsp_levels: RobustnessGrid::default_fdsp_levels(),
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.snr_levels.is_empty() || self.fdsp_levels.is_empty() {
            return Err(Error::Config("grid needs at least one SNR and one swap level".into()));
        }
        for &s in &self.snr_levels {
            Corruption { snr_db: s, fdsp: None, seed: 0 }.validate()?;
        }
        for &f in &self.fdsp_levels {
            Corruption { snr_db: None, fdsp: Some(f), seed: 0 }.validate()?;
        }
        Ok(())
    }
}

/// Evaluates a trained model on the test split under every (SNR, swap)
/// combination. Corruption is applied to test frames only.
pub fn robustness_grid(model: &Model, ds: &Dataset, spec: &GridSpec, exec: Execution) -> Result<RobustnessGrid> {
    spec.validate()?;
    let params = FeatureParams::default();
    let sel = ds.indices(Some(Split::Test));
    if sel.is_empty() {
        return Err(crate::eval::EvalError::Empty.into());
    }
    let labels = labels_for(ds, &sel);
    let vis_width = model.config().vis_dim;
    let visual: Vec<Matrix> = spec
        .fdsp_levels
        .iter()
        .map(|&f| {
            if model.arch().uses_visual() {
                visual_features(ds, &sel, Some(f).filter(|&f| f > 0.0), spec.seed, &params, exec)
            } else {
                Ok(Matrix::zeros(sel.len(), vis_width))
            }
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(spec.snr_levels.len());
    for &snr in &spec.snr_levels {
        let gcc = audio_features(ds, &sel, snr, spec.seed, &params, exec)?;
        let mut row = Vec::with_capacity(visual.len());
        for vis in &visual {
            let set = FeatureSet {
                labels: labels.clone(),
                gcc: gcc.clone(),
                gcc_shape: (ds.array.pairs().len(), params.lags.len()),
                vis: vis.clone(),
                vis_shape: (2, vis_width / 2),
            };
            check_model_fits(model, &set)?;
            let ev = evaluate(model, &set, &(0..set.len()).collect::<Vec<_>>(), exec)?;
            row.push(GridCell {
                mae: ev.summary.overall.mae,
                acc: ev.summary.overall.acc,
            });
        }
        cells.push(row);
    }
    Ok(RobustnessGrid {
        snr_levels: spec.snr_levels.clone(),
        fdsp_levels: spec.fdsp_levels.clone(),
        cells,
    })
}

pub fn robustness_command(
    checkpoint_path: &Path,
    dataset_dir: &Path,
    spec: &GridSpec,
    svg: bool,
    out: &Path,
    exec: Execution,
) -> Result<RobustnessGrid> {
    spec.validate()?;
    let model = checkpoint::load(checkpoint_path)?;
    let ds = Dataset::load(dataset_dir)?;
    let grid = robustness_grid(&model, &ds, spec, exec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = vec![(GRID_FILE, grid.to_csv()), (CURVES_FILE, grid.curves_csv())];
    if svg {
        files.push((CHART_FILE, grid_svg(&grid)));
    }
    for (name, text) in files {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(grid)
}

/// Static line chart of MAE against SNR, one line per swap level.
pub fn grid_svg(grid: &RobustnessGrid) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 60.0;
    const R: f64 = 140.0;
    const T: f64 = 30.0;
    const B: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    let n = grid.snr_levels.len().max(1);
    let max_mae = grid
        .cells
        .iter()
        .flatten()
        .map(|c| c.mae)
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let top = (max_mae / 10.0).ceil() * 10.0;
    let x = |i: usize| L + (W - L - R) * if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
    let y = |v: f64| T + (H - T - B) * (1.0 - v / top);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B).unwrap();
    writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B).unwrap();
    for k in 0..=5 {
        let v = top * k as f64 / 5.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, L - 6.0, y(v) + 4.0).unwrap();
    }
    for (i, snr) in grid.snr_levels.iter().enumerate() {
        let label = snr.map_or("clean".to_string(), |v| format!("{v} dB"));
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#, x(i), H - B + 18.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">SNR</text>"#, (L + W - R) / 2.0, H - 10.0).unwrap();
    writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">MAE (deg)</text>"#, (T + H - B) / 2.0, (T + H - B) / 2.0).unwrap();
    for (c, f) in grid.fdsp_levels.iter().enumerate() {
        let color = COLORS[c % COLORS.len()];
        let pts: Vec<String> = (0..grid.snr_levels.len())
            .filter_map(|r| grid.cells.get(r).and_then(|row| row.get(c)))
            .enumerate()
            .map(|(r, cell)| format!("{:.1},{:.1}", x(r), y(cell.mae)))
            .collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" ")).unwrap();
        let ly = T + 18.0 * c as f64;
        writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - R + 12.0, W - R + 36.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">FDSP {}%</text>"#, W - R + 42.0, ly + 4.0, (f * 100.0).round()).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Dataset dir in, feature stores out.
pub fn features_command(dataset_dir: &Path, corruption: &Corruption, out: &Path, exec: Execution) -> Result<FeatureSet> {
    corruption.validate()?;
    let ds = Dataset::load(dataset_dir)?;
    let set = extract(&ds, &ds.indices(None), corruption, &FeatureParams::default(), exec)?;
    write_features(&set, out)?;
    Ok(set)
}

/// Single-frame helper for callers holding audio in memory.
pub fn frame_gcc(frame: &Multichannel) -> Result<GccFeature> {
    Ok(gcc_feature(frame, LagRange::default(), fft_len_for(frame.len()))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{simulate, ScenarioConfig};
    use crate::audio::SourceKind;

    fn dataset(frames: usize) -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig {
            frames,
            frames_per_file: 16,
            source: SourceKind::White,
            ..ScenarioConfig::default()
        };
        let ds = simulate(&cfg, &dir.path().join("data"), Execution::default()).unwrap();
        (dir, ds)
    }

    #[test]
    fn store_round_trip_and_independence() {
        let (dir, ds) = dataset(24);
        let clean = features_command(&ds.root, &Corruption::default(), &dir.path().join("f0"), Execution::default()).unwrap();
        let again = read_features(&dir.path().join("f0"), true, 102).unwrap();
        assert_eq!(clean, again);
        assert_eq!(clean.gcc.cols(), 306);
        assert_eq!(clean.vis.cols(), 102);

        let noisy = extract(&ds, &ds.indices(None), &Corruption { snr_db: Some(0.0), ..Default::default() }, &FeatureParams::default(), Execution::default()).unwrap();
        assert_ne!(noisy.gcc, clean.gcc);
        assert_eq!(noisy.vis, clean.vis);
        let swapped = extract(&ds, &ds.indices(None), &Corruption { fdsp: Some(0.3), ..Default::default() }, &FeatureParams::default(), Execution::default()).unwrap();
        assert_eq!(swapped.gcc, clean.gcc);
        assert_ne!(swapped.vis, clean.vis);

        let audio_only = read_features(&dir.path().join("f0"), false, 102).unwrap();
        assert_eq!(audio_only.gcc, clean.gcc);
        assert!(audio_only.vis.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_feature_runs_are_byte_identical() {
        let (dir, ds) = dataset(10);
        let c = Corruption { snr_db: Some(5.0), fdsp: Some(0.5), seed: 3 };
        features_command(&ds.root, &c, &dir.path().join("a"), Execution::Parallel).unwrap();
        features_command(&ds.root, &c, &dir.path().join("b"), Execution::Sequential).unwrap();
        for f in [GCC_STORE, GCC_INDEX, VISUAL_STORE, VISUAL_INDEX, LABELS_FILE] {
            assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
        }
    }

    #[test]
    fn summary_layout() {
        let ev = score(
            &[0, 1, 2],
            vec![vec![10.0], vec![0.0, 50.0], vec![-3.0]],
            vec![vec![12.0], vec![55.0, 1.0], vec![3.0]],
            Execution::Sequential,
        )
        .unwrap();
        let csv = ev.summary.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], Summary::HEADER);
        assert_eq!(lines[1].split(',').count(), 6);
        assert_eq!(ev.summary.single.unwrap().frames, 2);
        assert!((ev.summary.single.unwrap().mae - 4.0).abs() < 1e-12);
        assert_eq!(ev.frames[1].pred, vec![50.0, 0.0]);
        assert_eq!(ev.frames[1].matched_errors, vec![5.0, 1.0]);
        assert!((ev.summary.overall.acc - 75.0).abs() < 1e-12);
    }

    #[test]
    fn train_settings_text_round_trip() {
        let s = TrainSettings {
            hidden: vec![32, 16],
            sigma_deg: 6.0,
            ..TrainSettings::default()
        };
        let kv = KeyValues::parse(&s.to_key_values().to_text()).unwrap();
        assert_eq!(TrainSettings::from_key_values(&kv).unwrap(), s);
        assert!(TrainSettings::from_key_values(&KeyValues::parse("batch = 1").unwrap()).is_err());
        assert!(TrainSettings::from_key_values(&KeyValues::parse("widths = 3").unwrap()).is_err());
        let d = TrainSettings::default();
        assert_eq!((d.train.epochs, d.train.batch_size, d.train.adam.lr), (10, 256, 0.001));
    }

    #[test]
    fn clean_grid_cell_matches_direct_evaluation() {
        let (_dir, ds) = dataset(40);
        let set = extract(&ds, &ds.indices(None), &Corruption::default(), &FeatureParams::default(), Execution::default()).unwrap();
        let settings = TrainSettings {
            hidden: vec![16],
            train: TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() },
            ..TrainSettings::default()
        };
        let model = train_on(&set, Architecture::Avc, &settings).unwrap().model;
        let spec = GridSpec { snr_levels: vec![Some(-10.0), None], fdsp_levels: vec![0.0, 0.5], seed: 1 };
        let grid = robustness_grid(&model, &ds, &spec, Execution::default()).unwrap();
        assert!(grid.is_complete());
        let direct = evaluate(&model, &set, &set.rows(Some(Split::Test)), Execution::default()).unwrap();
        let cell = grid.cell(None, 0.0).unwrap();
        assert_eq!((cell.mae, cell.acc), (direct.summary.overall.mae, direct.summary.overall.acc));
        let again = robustness_grid(&model, &ds, &spec, Execution::default()).unwrap();
        assert_eq!(grid, again);
        let svg = grid_svg(&grid);
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }

    #[test]
    fn baseline_finds_clean_single_sources() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig {
            frames: 30,
            source_count_probs: [1.0, 0.0],
            ..ScenarioConfig::default()
        };
        let ds = simulate(&cfg, dir.path(), Execution::default()).unwrap();
        let ev = baseline(&ds, &ds.indices(None), None, 0, Execution::default()).unwrap();
        assert!(ev.summary.overall.acc > 90.0, "{:?}", ev.summary);
        assert!(ev.summary.double.is_none());
    }
}
