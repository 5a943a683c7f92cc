//! Synthetic scene datasets: sampled speaker positions, rendered array
//! audio, simulated face detections and the manifest tying them together.
//!
//! A dataset directory holds
//!
//! - `manifest.jsonl`: a header line, then one JSON record per frame
//! - `array.txt`, `camera.txt`: microphone geometry and camera calibration
//! - `detections.jsonl`: one detection record per frame
//! - `scenario.txt`: the scenario the set was generated from
//! - `audio/chunk_NNNN.wav`: float32 audio, frames laid end to end

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{
    frame_len_samples, render_array, synth_source, Multichannel, SourceKind, DEFAULT_FRAME_SECONDS,
    DEFAULT_SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geom::{
    bbox_from_camera_point, doa_from_position, is_in_fov, position_from_doa, synthesize_bbox, world_to_camera,
    CameraCalibration, FaceSize, Intrinsics, MicArray, NoiseCov3, WorldPoint,
};
use crate::io::kv::KeyValues;
use crate::io::wav::{read_wav, write_wav_f32};
use crate::rng;
use crate::visual::DetectionFrame;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ARRAY_FILE: &str = "array.txt";
pub const CAMERA_FILE: &str = "camera.txt";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const SCENARIO_FILE: &str = "scenario.txt";
pub const MANIFEST_FORMAT: &str = "avdoa-manifest";
pub const MANIFEST_VERSION: u32 = 1;

const SCENE_DOMAIN: u64 = 0x5CE7E;
const DETECT_DOMAIN: u64 = 0xDE7EC7;
/// In-FoV sources stay this far inside the horizontal field of view, and
/// out-of-FoV sources this far outside it.
const FOV_MARGIN_DEG: f64 = 2.0;
const MAX_TRIES: usize = 10_000;
const MAX_DETECTION_TRIES: usize = 100;

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub frames: usize,
    /// Probabilities of one and of two concurrent speakers.
    pub source_count_probs: [f64; 2],
    /// Azimuth sampling range in degrees, array frame.
    pub azimuth_range: (f64, f64),
    /// Horizontal source distance from the array in meters.
    pub distance_range: (f64, f64),
    /// Mouth height relative to the array plane in meters.
    pub height_range: (f64, f64),
    /// Probability that each source is placed inside the camera's view.
    pub visibility_fraction: f64,
    pub min_separation_deg: f64,
    pub source: SourceKind,
    /// Variances (m^2) of the 3D location noise behind simulated detections.
    pub location_noise: NoiseCov3,
    pub face: FaceSize,
    pub array_side: f64,
    pub speed_of_sound: f64,
    pub intrinsics: Intrinsics,
    pub sample_rate: u32,
    pub frame_seconds: f64,
    pub test_fraction: f64,
    pub frames_per_file: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            frames: 1000,
            source_count_probs: [0.5, 0.5],
            azimuth_range: (-180.0, 180.0),
            distance_range: (1.5, 4.0),
            height_range: (-0.3, 0.3),
            visibility_fraction: 0.5,
            min_separation_deg: 10.0,
            source: SourceKind::SpeechLikeAr,
            location_noise: NoiseCov3::default(),
            face: FaceSize::default(),
            array_side: 0.1,
            speed_of_sound: 343.0,
            intrinsics: Intrinsics::default(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            frame_seconds: DEFAULT_FRAME_SECONDS,
            test_fraction: 0.2,
            frames_per_file: 256,
            seed: 0,
        }
    }
}

fn source_name(kind: &SourceKind) -> String {
    match kind {
        SourceKind::White => "white".into(),
        SourceKind::SpeechLikeAr => "speech_like".into(),
        SourceKind::WavFile(p) => format!("wav:{}", p.display()),
    }
}

fn parse_source(s: &str) -> std::result::Result<SourceKind, String> {
    match s {
        "white" => Ok(SourceKind::White),
        "speech_like" => Ok(SourceKind::SpeechLikeAr),
        _ => match s.strip_prefix("wav:") {
            Some(p) if !p.is_empty() => Ok(SourceKind::WavFile(PathBuf::from(p))),
            _ => Err(format!("unknown source '{s}' (expected white, speech_like or wav:<path>)")),
        },
    }
}

fn pair(kv: &KeyValues, key: &str, default: (f64, f64)) -> std::result::Result<(f64, f64), String> {
    match kv.get(key) {
        None => Ok(default),
        Some(_) => {
            let v = kv.require_numbers(key, 2)?;
            Ok((v[0], v[1]))
        }
    }
}

impl ScenarioConfig {
    pub fn frame_len(&self) -> usize {
        frame_len_samples(self.sample_rate, self.frame_seconds)
    }

    pub fn array(&self) -> Result<MicArray> {
        let sq = MicArray::square(self.array_side);
        Ok(MicArray::new(sq.mics().to_vec(), WorldPoint::origin(), 0.0, self.speed_of_sound)?)
    }

    pub fn camera(&self) -> Result<CameraCalibration> {
        Ok(CameraCalibration::looking_along(WorldPoint::origin(), 0.0, self.intrinsics)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let [p1, p2] = self.source_count_probs;
        if self.frames == 0 {
            return bad("frames must be positive");
        }
        if self.frames > u32::MAX as usize {
            return bad("too many frames");
        }
        if p1 < 0.0 || p2 < 0.0 || (p1 + p2 - 1.0).abs() > 1e-9 {
            return bad("source_count_probs must be non-negative and sum to 1");
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a < b;
        if !ordered(self.azimuth_range) || self.azimuth_range.0 < -180.0 || self.azimuth_range.1 > 180.0 {
            return bad("azimuth_range must be an increasing pair within [-180, 180]");
        }
        if !ordered(self.distance_range) || self.distance_range.0 <= 0.0 {
            return bad("distance_range must be an increasing pair of positive distances");
        }
        if !(self.height_range.0.is_finite() && self.height_range.1.is_finite())
            || self.height_range.0 > self.height_range.1
        {
            return bad("height_range must be a non-decreasing pair");
        }
        if !(0.0..=1.0).contains(&self.visibility_fraction) {
            return bad("visibility_fraction must be in [0, 1]");
        }
        if !(self.min_separation_deg >= 0.0 && self.min_separation_deg < 180.0) {
            return bad("min_separation_deg must be in [0, 180)");
        }
        if !(self.array_side > 0.0 && self.array_side.is_finite()) {
            return bad("array_side must be positive");
        }
        if !(self.frame_seconds > 0.0 && self.frame_seconds.is_finite()) || self.frame_len() < 2 {
            return bad("frame_seconds must give at least two samples");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must be in [0, 1)");
        }
        if self.frames_per_file == 0 {
            return bad("frames_per_file must be positive");
        }
        self.array()?;
        let cam = self.camera()?;
        let half = cam.half_fov_u_deg();
        let (lo, hi) = self.azimuth_range;
        let inside = lo.max(-half + FOV_MARGIN_DEG) < hi.min(half - FOV_MARGIN_DEG);
        let outside = lo < -half - FOV_MARGIN_DEG || hi > half + FOV_MARGIN_DEG;
        if self.visibility_fraction > 0.0 && !inside {
            return bad("azimuth_range does not overlap the camera's field of view");
        }
        if self.visibility_fraction < 1.0 && !outside {
            return bad("azimuth_range leaves no room outside the camera's field of view");
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> std::result::Result<Self, String> {
        const KNOWN: &[&str] = &[
            "frames",
            "source_count_probs",
            "azimuth_range",
            "distance_range",
            "height_range",
            "visibility_fraction",
            "min_separation_deg",
            "source",
            "location_noise_variance",
            "face_size",
            "array_side",
            "speed_of_sound",
            "camera",
            "sample_rate",
            "frame_seconds",
            "test_fraction",
            "frames_per_file",
            "seed",
        ];
        if let Some(k) = kv.keys().find(|k| !KNOWN.contains(k)) {
            return Err(format!("unknown scenario key `{k}`"));
        }
        let d = Self::default();
        let probs = match kv.get("source_count_probs") {
            None => d.source_count_probs,
            Some(_) => {
                let v = kv.require_numbers("source_count_probs", 2)?;
                [v[0], v[1]]
            }
        };
        let location_noise = match kv.get("location_noise_variance") {
            None => d.location_noise,
            Some(_) => {
                let v = kv.require_numbers("location_noise_variance", 3)?;
                NoiseCov3::from_variances([v[0], v[1], v[2]]).map_err(|e| e.to_string())?
            }
        };
        let face = match kv.get("face_size") {
            None => d.face,
            Some(_) => {
                let v = kv.require_numbers("face_size", 2)?;
                FaceSize::new(v[0], v[1]).map_err(|e| e.to_string())?
            }
        };
        let intrinsics = match kv.get("camera") {
            None => d.intrinsics,
            Some(_) => {
                let v = kv.require_numbers("camera", 6)?;
                if v[4] < 1.0 || v[5] < 1.0 || v[4].fract() != 0.0 || v[5].fract() != 0.0 {
                    return Err("`camera`: width and height must be positive integers".into());
                }
                Intrinsics {
                    fu: v[0],
                    fv: v[1],
                    cu: v[2],
                    cv: v[3],
                    width: v[4] as u32,
                    height: v[5] as u32,
                }
            }
        };
        Ok(Self {
            frames: kv.parse_value("frames")?.unwrap_or(d.frames),
            source_count_probs: probs,
            azimuth_range: pair(kv, "azimuth_range", d.azimuth_range)?,
            distance_range: pair(kv, "distance_range", d.distance_range)?,
            height_range: pair(kv, "height_range", d.height_range)?,
            visibility_fraction: kv.parse_value("visibility_fraction")?.unwrap_or(d.visibility_fraction),
            min_separation_deg: kv.parse_value("min_separation_deg")?.unwrap_or(d.min_separation_deg),
            source: kv.get("source").map(parse_source).transpose()?.unwrap_or(d.source),
            location_noise,
            face,
            array_side: kv.parse_value("array_side")?.unwrap_or(d.array_side),
            speed_of_sound: kv.parse_value("speed_of_sound")?.unwrap_or(d.speed_of_sound),
            intrinsics,
            sample_rate: kv.parse_value("sample_rate")?.unwrap_or(d.sample_rate),
            frame_seconds: kv.parse_value("frame_seconds")?.unwrap_or(d.frame_seconds),
            test_fraction: kv.parse_value("test_fraction")?.unwrap_or(d.test_fraction),
            frames_per_file: kv.parse_value("frames_per_file")?.unwrap_or(d.frames_per_file),
            seed: kv.parse_value("seed")?.unwrap_or(d.seed),
        })
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let n = |x: f64| format!("{x:?}");
        kv.push("frames", self.frames);
        kv.push("source_count_probs", format!("{} {}", n(self.source_count_probs[0]), n(self.source_count_probs[1])));
        kv.push("azimuth_range", format!("{} {}", n(self.azimuth_range.0), n(self.azimuth_range.1)));
        kv.push("distance_range", format!("{} {}", n(self.distance_range.0), n(self.distance_range.1)));
        kv.push("height_range", format!("{} {}", n(self.height_range.0), n(self.height_range.1)));
        kv.push("visibility_fraction", n(self.visibility_fraction));
        kv.push("min_separation_deg", n(self.min_separation_deg));
        kv.push("source", source_name(&self.source));
        let v = self.location_noise.variances();
        kv.push("location_noise_variance", format!("{} {} {}", n(v[0]), n(v[1]), n(v[2])));
        kv.push("face_size", format!("{} {}", n(self.face.width), n(self.face.height)));
        kv.push("array_side", n(self.array_side));
        kv.push("speed_of_sound", n(self.speed_of_sound));
        let i = &self.intrinsics;
        kv.push("camera", format!("{} {} {} {} {} {}", n(i.fu), n(i.fv), n(i.cu), n(i.cv), i.width, i.height));
        kv.push("sample_rate", self.sample_rate);
        kv.push("frame_seconds", n(self.frame_seconds));
        kv.push("test_fraction", n(self.test_fraction));
        kv.push("frames_per_file", self.frames_per_file);
        kv.push("seed", self.seed);
        kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Degrees in the array frame, derived from `(x, y, z)`.
    pub azimuth: f64,
}

impl SourceRecord {
    pub fn position(&self) -> WorldPoint {
        WorldPoint::new(self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub active_sources: Vec<SourceRecord>,
    pub audio_file: String,
    pub sample_offset: u64,
    pub split: Split,
    pub detections: DetectionFrame,
    /// Seed of each source's excitation, in source order.
    pub signal_seeds: Vec<u64>,
}

impl FrameRecord {
    pub fn azimuths(&self) -> Vec<f64> {
        self.active_sources.iter().map(|s| s.azimuth).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub array_file: String,
    pub calibration_file: String,
    pub detections_file: String,
    pub sample_rate: u32,
    pub frame_length: usize,
    pub frame_seconds: f64,
    pub source: String,
}

/// A loaded (or freshly simulated) dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub header: ManifestHeader,
    pub array: MicArray,
    pub camera: CameraCalibration,
    pub frames: Vec<FrameRecord>,
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// One frame's scene: where each source is and what the detector reports.
fn sample_scene(cfg: &ScenarioConfig, array: &MicArray, cam: &CameraCalibration, index: u32) -> Result<FrameRecord> {
    let mut r = rng::for_item(cfg.seed, SCENE_DOMAIN, index as u64);
    let count = if r.random::<f64>() < cfg.source_count_probs[0] { 1 } else { 2 };
    let half = cam.half_fov_u_deg();
    let mut sources: Vec<SourceRecord> = Vec::with_capacity(count);
    for id in 0..count {
        let visible = r.random::<f64>() < cfg.visibility_fraction;
        let mut placed = None;
        for _ in 0..MAX_TRIES {
            let az = sample_range(&mut r, cfg.azimuth_range);
            let in_wedge = az.abs() <= half - FOV_MARGIN_DEG;
            let out_wedge = az.abs() >= half + FOV_MARGIN_DEG;
            if (visible && !in_wedge) || (!visible && !out_wedge) {
                continue;
            }
            if sources
                .iter()
                .any(|s| crate::eval::angular_error(s.azimuth, az) < cfg.min_separation_deg)
            {
                continue;
            }
            let range = sample_range(&mut r, cfg.distance_range);
            let height = sample_range(&mut r, cfg.height_range);
            let p = position_from_doa(az, range, height, array);
            if is_in_fov(p, cam) != visible {
                continue;
            }
            let azimuth = doa_from_position(p, array)?;
            placed = Some(SourceRecord {
                id: id as u32,
                x: p.x,
                y: p.y,
                z: p.z,
                azimuth,
            });
            break;
        }
        sources.push(placed.ok_or_else(|| {
            Error::Config(format!("could not place source {id} of frame {index}; widen the sampling ranges"))
        })?);
    }
    let signal_seeds = (0..count).map(|_| r.random::<u64>()).collect();

    let mut dr = rng::for_item(cfg.seed, DETECT_DOMAIN, index as u64);
    let mut boxes = Vec::new();
    for s in &sources {
        let p = s.position();
        if !is_in_fov(p, cam) {
            continue;
        }
        // Location noise can push a face out of the image; redraw it a
        // bounded number of times, then fall back to the exact box.
        let b = (0..MAX_DETECTION_TRIES)
            .find_map(|_| synthesize_bbox(p, cam, cfg.face, cfg.location_noise, &mut dr))
            .or_else(|| bbox_from_camera_point(world_to_camera(p, cam), cam, cfg.face));
        boxes.extend(b);
    }
    let split_at = ((1.0 - cfg.test_fraction) * cfg.frames as f64).floor() as usize;
    Ok(FrameRecord {
        frame_index: index,
        timestamp_s: index as f64 * cfg.frame_seconds,
        active_sources: sources,
        audio_file: String::new(),
        sample_offset: 0,
        split: if (index as usize) < split_at { Split::Train } else { Split::Test },
        detections: DetectionFrame {
            frame_index: index,
            boxes,
        },
        signal_seeds,
    })
}

/// Renders the clean array signal of one frame, at `f32` precision.
pub fn render_frame(record: &FrameRecord, source: &SourceKind, array: &MicArray, fs: u32, frame_len: usize) -> Result<Multichannel> {
    let duration = frame_len as f64 / fs as f64;
    let mut sigs = Vec::with_capacity(record.active_sources.len());
    for (s, &seed) in record.active_sources.iter().zip(&record.signal_seeds) {
        let mut sig = synth_source(source, duration, fs, seed)?;
        sig.samples.resize(frame_len, 0.0);
        sigs.push((sig, s.azimuth));
    }
    Ok(render_array(&sigs, array)?.quantized_f32())
}

fn chunk_name(c: usize) -> String {
    format!("audio/chunk_{c:04}.wav")
}

fn write_jsonl<T: Serialize>(path: &Path, header: Option<&ManifestHeader>, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    let ser = |e: serde_json::Error| Error::format(path, e.to_string());
    if let Some(h) = header {
        serde_json::to_writer(&mut out, h).map_err(ser)?;
        out.push(b'\n');
    }
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(ser)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Generates a dataset into `out` (created if needed). Everything is
/// validated before the first file is written.
pub fn simulate(cfg: &ScenarioConfig, out: &Path, exec: Execution) -> Result<Dataset> {
    cfg.validate()?;
    let array = cfg.array()?;
    let camera = cfg.camera()?;
    let frame_len = cfg.frame_len();
    let records = exec::try_map_range(exec, cfg.frames, |i| sample_scene(cfg, &array, &camera, i as u32))?;
    // Probe the source once so a bad WAV path fails before any output.
    if let Some(first) = records.first() {
        render_frame(first, &cfg.source, &array, cfg.sample_rate, frame_len)?;
    }

    let audio_dir = out.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut records = records;
    for (c, chunk) in records.chunks_mut(cfg.frames_per_file).enumerate() {
        let rendered = exec::try_map_range(exec, chunk.len(), |k| {
            render_frame(&chunk[k], &cfg.source, &array, cfg.sample_rate, frame_len)
        })?;
        let mut channels = vec![Vec::with_capacity(frame_len * chunk.len()); array.len()];
        for (k, (rec, audio)) in chunk.iter_mut().zip(&rendered).enumerate() {
            rec.audio_file = chunk_name(c);
            rec.sample_offset = (k * frame_len) as u64;
            for (dst, src) in channels.iter_mut().zip(audio.channels()) {
                dst.extend(src.iter().map(|&v| v as f32));
            }
        }
        write_wav_f32(&out.join(chunk_name(c)), &channels, cfg.sample_rate)?;
    }

    let header = ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        array_file: ARRAY_FILE.into(),
        calibration_file: CAMERA_FILE.into(),
        detections_file: DETECTIONS_FILE.into(),
        sample_rate: cfg.sample_rate,
        frame_length: frame_len,
        frame_seconds: cfg.frame_seconds,
        source: source_name(&cfg.source),
    };
    let write_text = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write_text(ARRAY_FILE, array.to_key_values().to_text())?;
    write_text(CAMERA_FILE, camera.to_key_values().to_text())?;
    write_text(SCENARIO_FILE, cfg.to_key_values().to_text())?;
    let detections: Vec<DetectionFrame> = records.iter().map(|r| r.detections.clone()).collect();
    write_jsonl(&out.join(DETECTIONS_FILE), None, &detections)?;
    write_jsonl(&out.join(MANIFEST_FILE), Some(&header), &records)?;
    Ok(Dataset {
        root: out.to_path_buf(),
        header,
        array,
        camera,
        frames: records,
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionFrame>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1))))
        .collect()
}

impl Dataset {
    /// Loads and cross-checks a dataset directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let lines = read_lines(&mpath)?;
        let Some((head, rest)) = lines.split_first() else {
            return Err(Error::format(&mpath, "empty manifest"));
        };
        let header: ManifestHeader =
            serde_json::from_str(head).map_err(|e| Error::format(&mpath, format!("header: {e}")))?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(Error::format(
                &mpath,
                format!("unsupported manifest {} v{}", header.format, header.version),
            ));
        }
        let mut frames: Vec<FrameRecord> = Vec::with_capacity(rest.len());
        for (n, l) in rest.iter().enumerate() {
            let rec: FrameRecord =
                serde_json::from_str(l).map_err(|e| Error::format(&mpath, format!("line {}: {e}", n + 2)))?;
            frames.push(rec);
        }
        let array = MicArray::read(&dir.join(&header.array_file))?;
        let camera = CameraCalibration::read(&dir.join(&header.calibration_file))?;
        let detections = read_detections(&dir.join(&header.detections_file))?;
        if detections.len() != frames.len() {
            return Err(Error::format(
                dir.join(&header.detections_file),
                format!("{} detection records for {} frames", detections.len(), frames.len()),
            ));
        }
        for (rec, det) in frames.iter_mut().zip(detections) {
            if det.frame_index != rec.frame_index {
                return Err(Error::format(
                    dir.join(&header.detections_file),
                    format!("detection record {} out of step with frame {}", det.frame_index, rec.frame_index),
                ));
            }
            // The sidecar is authoritative so detections can be replaced.
            rec.detections = det;
        }
        let ds = Self {
            root: dir.to_path_buf(),
            header,
            array,
            camera,
            frames,
        };
        ds.check().map_err(|m| Error::format(&mpath, m))?;
        Ok(ds)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.frames.is_empty() {
            return Err("no frames".into());
        }
        for w in self.frames.windows(2) {
            if w[1].frame_index <= w[0].frame_index {
                return Err(format!("frame indices not increasing at {}", w[1].frame_index));
            }
        }
        for f in &self.frames {
            if f.active_sources.is_empty() {
                return Err(format!("frame {} has no active sources", f.frame_index));
            }
            if f.signal_seeds.len() != f.active_sources.len() {
                return Err(format!("frame {}: one signal seed per source expected", f.frame_index));
            }
            for s in &f.active_sources {
                let az = doa_from_position(s.position(), &self.array).map_err(|e| e.to_string())?;
                if crate::eval::angular_error(az, s.azimuth) > 1e-6 {
                    return Err(format!(
                        "frame {} source {}: azimuth {} disagrees with position ({az})",
                        f.frame_index, s.id, s.azimuth
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.header.frame_length
    }

    pub fn sample_rate(&self) -> u32 {
        self.header.sample_rate
    }

    pub fn indices(&self, split: Option<Split>) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|&i| split.is_none_or(|s| self.frames[i].split == s))
            .collect()
    }

    /// Reads the audio of the selected frames (positions into `frames`),
    /// one audio file at a time. `f` gets the selection positions and the
    /// matching frames.
    pub fn for_each_audio_group(
        &self,
        selection: &[usize],
        mut f: impl FnMut(&[usize], Vec<Multichannel>) -> Result<()>,
    ) -> Result<()> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (pos, &i) in selection.iter().enumerate() {
            groups.entry(self.frames[i].audio_file.as_str()).or_default().push(pos);
        }
        let n = self.frame_len();
        for (file, positions) in groups {
            let path = self.root.join(file);
            let (channels, fs) = read_wav(&path)?;
            if fs != self.sample_rate() {
                return Err(Error::format(&path, format!("sample rate {fs}, manifest says {}", self.sample_rate())));
            }
            let mut frames = Vec::with_capacity(positions.len());
            for &pos in &positions {
                let rec = &self.frames[selection[pos]];
                let start = rec.sample_offset as usize;
                if channels.iter().any(|c| c.len() < start + n) {
                    return Err(Error::format(&path, format!("frame {} runs past the end", rec.frame_index)));
                }
                let chans = channels.iter().map(|c| c[start..start + n].to_vec()).collect();
                frames.push(Multichannel::new(chans, fs)?);
            }
            f(&positions, frames)?;
        }
        Ok(())
    }
}
