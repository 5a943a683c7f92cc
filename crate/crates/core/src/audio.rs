//! Far-field array simulation, additive noise, framing, and the GCC-PHAT /
//! SRP-PHAT front end.
//!
//! Sign convention: when channel `p` lags channel `l` by `d` samples, the
//! pair correlation `gcc_phat_pair(l, p)` peaks at lag `-d`. The renderer
//! and the SRP steering both follow it.

use std::cell::RefCell;
use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::eval::{decode_doa, DecodeConfig};
use crate::exec::{self, Execution};
use crate::geom::MicArray;
use crate::io::wav::read_wav;
use crate::rng::seeded;

pub const DEFAULT_SAMPLE_RATE: u32 = 48_000;
pub const DEFAULT_FRAME_SECONDS: f64 = 0.170;
pub const DEFAULT_FFT_LEN: usize = 8192;
/// Cross-spectrum bins below this magnitude are left out of the PHAT sum.
pub const PHAT_EPSILON: f64 = 1e-12;
/// Flattened width of the default feature: 6 pairs x 51 lags.
pub const DEFAULT_GCC_DIM: usize = 306;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("duration must be positive")]
    InvalidDuration,
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("bad wav: {0}")]
    BadWav(String),
    #[error("sample rate mismatch: {expected} Hz vs {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("signal is silent")]
    SilentSignal,
    #[error("signal of {len} samples is shorter than one {frame}-sample frame")]
    TooShort { len: usize, frame: usize },
    #[error("channel lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("fft length {fft_len} is shorter than the frame ({frame})")]
    FftTooShort { fft_len: usize, frame: usize },
    #[error("every cross-spectrum bin vanished")]
    AllZeroSpectrum,
    #[error("lag range ±{available} cannot hold the array's maximum delay of {needed:.2} samples")]
    LagRangeTooSmall { needed: f64, available: i32 },
    #[error("need at least two channels, got {0}")]
    TooFewChannels(usize),
    #[error("feature has {found} pairs but the array has {expected}")]
    PairCountMismatch { expected: usize, found: usize },
    #[error("no sources to render")]
    NoSources,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

fn spectrum(x: &[f64], n: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    forward_plan(n).process(&mut buf);
    buf
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonoSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// `C` equal-length channels. Also used for single analysis frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Multichannel {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Multichannel {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidParameter("sample rate must be positive".into()));
        }
        if let Some(first) = channels.first() {
            if let Some(bad) = channels.iter().find(|c| c.len() != first.len()) {
                return Err(AudioError::LengthMismatch(first.len(), bad.len()));
            }
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Multichannel {
        Multichannel {
            channels: self
                .channels
                .iter()
                .map(|c| c[start..start + len].to_vec())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Rounds every sample through `f32`, the precision of stored audio.
    pub fn quantized_f32(&self) -> Multichannel {
        Multichannel {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&s| s as f32 as f64).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    White,
    /// Tilted, resonant all-pole noise with a syllable-rate envelope.
    SpeechLikeAr,
    WavFile(PathBuf),
}

pub fn synth_source(
    kind: &SourceKind,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<MonoSignal, AudioError> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(AudioError::InvalidDuration);
    }
    if sample_rate == 0 {
        return Err(AudioError::InvalidParameter("sample rate must be positive".into()));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    if n == 0 {
        return Err(AudioError::InvalidDuration);
    }
    let mut rng = seeded(seed);
    let samples = match kind {
        SourceKind::White => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        SourceKind::SpeechLikeAr => speech_like(n, sample_rate, &mut rng),
        SourceKind::WavFile(path) => {
            let (channels, fs) = read_wav(path)?;
            if fs != sample_rate {
                return Err(AudioError::SampleRateMismatch {
                    expected: sample_rate,
                    found: fs,
                });
            }
            let first = channels.into_iter().next().unwrap_or_default();
            if first.len() < n {
                return Err(AudioError::TooShort {
                    len: first.len(),
                    frame: n,
                });
            }
            first[..n].to_vec()
        }
    };
    Ok(MonoSignal {
        samples,
        sample_rate,
    })
}

fn speech_like<R: Rng + ?Sized>(n: usize, fs: u32, rng: &mut R) -> Vec<f64> {
    let fs = fs as f64;
    let warmup = 2048;
    // Spectral tilt pole plus one mild formant-like resonance near 700 Hz.
    // Sharper resonances leak into the weak upper bins of a rectangular frame
    // and pull PHAT peaks toward lag 0.
    let tilt = 0.7;
    let (r, w) = (0.6, std::f64::consts::TAU * 700.0 / fs);
    let (a1, a2) = (2.0 * r * w.cos(), -r * r);
    let syllable_hz = rng.random_range(3.0..5.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let floor = 0.05;

    let (mut t1, mut y1, mut y2) = (0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n + warmup {
        let e: f64 = rng.sample(StandardNormal);
        t1 = e + tilt * t1;
        let y = t1 + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        if i >= warmup {
            let t = (i - warmup) as f64 / fs;
            let c = 0.5 - 0.5 * (std::f64::consts::TAU * syllable_hz * t + phase).cos();
            out.push(y * (floor + (1.0 - floor) * c * c));
        }
    }
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|x| *x /= rms);
    }
    out
}

/// Delays `x` by `delay` samples (possibly fractional) with a frequency-domain
/// phase shift. The signal is edge-padded by `pad` samples on both sides so
/// the circular wrap only touches padding.
fn fractional_delays(x: &[f64], delays: &[f64]) -> Vec<Vec<f64>> {
    let max_d = delays.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let pad = max_d.ceil() as usize + 16;
    let t = x.len();
    let n = (t + 2 * pad).next_power_of_two();
    let mut ext = Vec::with_capacity(n);
    ext.extend(std::iter::repeat_n(x[0], pad));
    ext.extend_from_slice(x);
    ext.extend(std::iter::repeat_n(x[t - 1], n - pad - t));
    let spec = spectrum(&ext, n);
    let inv = inverse_plan(n);
    delays
        .iter()
        .map(|&d| {
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            buf[0] = spec[0];
            for k in 1..n / 2 {
                let phi = -std::f64::consts::TAU * k as f64 * d / n as f64;
                let v = spec[k] * Complex::from_polar(1.0, phi);
                buf[k] = v;
                buf[n - k] = v.conj();
            }
            buf[n / 2] = spec[n / 2] * (std::f64::consts::PI * d).cos();
            inv.process(&mut buf);
            let scale = 1.0 / n as f64;
            buf[pad..pad + t].iter().map(|c| c.re * scale).collect()
        })
        .collect()
}

/// Free-field, far-field rendering: microphone `m` receives every source
/// delayed by `-(d_m . u(az)) / c`, summed across sources.
pub fn render_array(sources: &[(MonoSignal, f64)], array: &MicArray) -> Result<Multichannel, AudioError> {
    let Some((first, _)) = sources.first() else {
        return Err(AudioError::NoSources);
    };
    let fs = first.sample_rate;
    let len = sources.iter().map(|(s, _)| s.samples.len()).max().unwrap_or(0);
    if len == 0 {
        return Err(AudioError::InvalidDuration);
    }
    let mut channels = vec![vec![0.0; len]; array.len()];
    for (sig, az) in sources {
        if sig.sample_rate != fs {
            return Err(AudioError::SampleRateMismatch {
                expected: fs,
                found: sig.sample_rate,
            });
        }
        if sig.samples.is_empty() {
            continue;
        }
        let delays: Vec<f64> = (0..array.len())
            .map(|m| array.arrival_delay(m, *az) * fs as f64)
            .collect();
        for (ch, delayed) in channels.iter_mut().zip(fractional_delays(&sig.samples, &delays)) {
            for (o, v) in ch.iter_mut().zip(delayed) {
                *o += v;
            }
        }
    }
    Multichannel::new(channels, fs)
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Adds independent white Gaussian noise to each channel, scaled so the
/// realized per-channel SNR equals `snr_db`.
pub fn add_noise_at_snr<R: Rng + ?Sized>(
    x: &Multichannel,
    snr_db: f64,
    rng: &mut R,
) -> Result<Multichannel, AudioError> {
    if !snr_db.is_finite() {
        return Err(AudioError::InvalidParameter("snr must be finite".into()));
    }
    let mut out = Vec::with_capacity(x.channel_count());
    for ch in x.channels() {
        let ps = power(ch);
        if !(ps > 0.0) {
            return Err(AudioError::SilentSignal);
        }
        let noise: Vec<f64> = (0..ch.len()).map(|_| rng.sample(StandardNormal)).collect();
        let pn = power(&noise);
        let scale = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
        out.push(ch.iter().zip(&noise).map(|(s, n)| s + scale * n).collect());
    }
    Multichannel::new(out, x.sample_rate())
}

/// Number of samples in a frame of `seconds` at `sample_rate`.
pub fn frame_len_samples(sample_rate: u32, seconds: f64) -> usize {
    (seconds * sample_rate as f64).round() as usize
}

/// Splits `x` into frames of `frame_len` samples advancing by `hop`; the
/// trailing partial frame is dropped.
pub fn frame_signal(x: &Multichannel, frame_len: usize, hop: usize) -> Result<Vec<Multichannel>, AudioError> {
    if frame_len == 0 || hop == 0 {
        return Err(AudioError::InvalidParameter("frame and hop must be positive".into()));
    }
    if x.len() < frame_len {
        return Err(AudioError::TooShort {
            len: x.len(),
            frame: frame_len,
        });
    }
    let count = (x.len() - frame_len) / hop + 1;
    Ok((0..count).map(|i| x.slice(i * hop, frame_len)).collect())
}

/// Inclusive integer lag window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagRange {
    pub min: i32,
    pub max: i32,
}

impl LagRange {
    pub fn new(min: i32, max: i32) -> Result<Self, AudioError> {
        if min > max {
            return Err(AudioError::InvalidParameter(format!("empty lag range [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn len(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = i32> {
        self.min..=self.max
    }

    /// Largest magnitude covered symmetrically around zero.
    pub fn symmetric_reach(&self) -> i32 {
        (-self.min).min(self.max)
    }
}

impl Default for LagRange {
    fn default() -> Self {
        Self { min: -25, max: 25 }
    }
}

/// PHAT-weighted correlation of two precomputed spectra at the given lags,
/// normalized by the number of bins that contributed.
fn phat_from_spectra(
    sl: &[Complex<f64>],
    sp: &[Complex<f64>],
    lags: LagRange,
) -> Result<Vec<f64>, AudioError> {
    let n = sl.len();
    let mut count = 0usize;
    let mut cross: Vec<Complex<f64>> = sl
        .iter()
        .zip(sp)
        .map(|(a, b)| {
            let c = a * b.conj();
            let mag = c.norm();
            if mag < PHAT_EPSILON {
                Complex::new(0.0, 0.0)
            } else {
                count += 1;
                c / mag
            }
        })
        .collect();
    if count == 0 {
        return Err(AudioError::AllZeroSpectrum);
    }
    // Unnormalized inverse transform evaluates sum_k X[k] e^{j 2 pi k tau / N}.
    inverse_plan(n).process(&mut cross);
    let norm = 1.0 / count as f64;
    Ok(lags
        .iter()
        .map(|tau| cross[(tau.rem_euclid(n as i32)) as usize].re * norm)
        .collect())
}

/// GCC-PHAT between two equal-length frames, one value per lag in `lags`
/// (ascending). Identical inputs peak at exactly 1.0 at lag 0.
pub fn gcc_phat_pair(
    frame_l: &[f64],
    frame_p: &[f64],
    lags: LagRange,
    fft_len: usize,
) -> Result<Vec<f64>, AudioError> {
    if frame_l.len() != frame_p.len() {
        return Err(AudioError::LengthMismatch(frame_l.len(), frame_p.len()));
    }
    if fft_len < frame_l.len() {
        return Err(AudioError::FftTooShort {
            fft_len,
            frame: frame_l.len(),
        });
    }
    phat_from_spectra(&spectrum(frame_l, fft_len), &spectrum(frame_p, fft_len), lags)
}

/// Pairwise GCC-PHAT rows for one frame, `P x L` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GccFeature {
    values: Vec<f64>,
    pairs: usize,
    lags: LagRange,
}

impl GccFeature {
    pub fn new(values: Vec<f64>, pairs: usize, lags: LagRange) -> Result<Self, AudioError> {
        if values.len() != pairs * lags.len() {
            return Err(AudioError::InvalidParameter(format!(
                "{} values for {pairs}x{} feature",
                values.len(),
                lags.len()
            )));
        }
        Ok(Self { values, pairs, lags })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn lags(&self) -> LagRange {
        self.lags
    }

    pub fn row(&self, pair: usize) -> &[f64] {
        let l = self.lags.len();
        &self.values[pair * l..(pair + 1) * l]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.pairs, self.lags.len())
    }
}

/// GCC-PHAT for every microphone pair `(l, p)`, `l < p`, in lexicographic order.
pub fn gcc_feature(frame: &Multichannel, lags: LagRange, fft_len: usize) -> Result<GccFeature, AudioError> {
    let c = frame.channel_count();
    if c < 2 {
        return Err(AudioError::TooFewChannels(c));
    }
    if fft_len < frame.len() {
        return Err(AudioError::FftTooShort {
            fft_len,
            frame: frame.len(),
        });
    }
    let spectra: Vec<_> = frame.channels().iter().map(|ch| spectrum(ch, fft_len)).collect();
    let mut values = Vec::with_capacity(c * (c - 1) / 2 * lags.len());
    for l in 0..c {
        for p in l + 1..c {
            values.extend(phat_from_spectra(&spectra[l], &spectra[p], lags)?);
        }
    }
    GccFeature::new(values, c * (c - 1) / 2, lags)
}

/// [`gcc_feature`] over many frames; parallel and sequential results match bit for bit.
pub fn gcc_features(
    frames: &[Multichannel],
    lags: LagRange,
    fft_len: usize,
    exec: Execution,
) -> Result<Vec<GccFeature>, AudioError> {
    exec::try_map_range(exec, frames.len(), |i| gcc_feature(&frames[i], lags, fft_len))
}

/// Steered response power over integer azimuths; index `i` is `i - 180` degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct SrpMap {
    pub scores: Vec<f64>,
}

/// Expected GCC peak lag (samples) of pair `(l, p)` for a source at `az_deg`.
pub fn steering_lag(array: &MicArray, l: usize, p: usize, az_deg: f64, sample_rate: u32) -> f64 {
    (array.arrival_delay(l, az_deg) - array.arrival_delay(p, az_deg)) * sample_rate as f64
}

/// SRP-PHAT: for each candidate azimuth, sum every pair's GCC value at the
/// predicted lag, linearly interpolated between integer lags.
pub fn srp_phat(feature: &GccFeature, array: &MicArray, sample_rate: u32) -> Result<SrpMap, AudioError> {
    let pairs = array.pairs();
    if pairs.len() != feature.pairs() {
        return Err(AudioError::PairCountMismatch {
            expected: pairs.len(),
            found: feature.pairs(),
        });
    }
    let lags = feature.lags();
    let needed = array.max_pair_distance() / array.speed_of_sound() * sample_rate as f64;
    if needed > lags.symmetric_reach() as f64 {
        return Err(AudioError::LagRangeTooSmall {
            needed,
            available: lags.symmetric_reach(),
        });
    }
    let last = lags.len() - 1;
    let scores = (-180..180)
        .map(|az| {
            pairs
                .iter()
                .enumerate()
                .map(|(k, &(l, p))| {
                    let row = feature.row(k);
                    let pos = steering_lag(array, l, p, az as f64, sample_rate) - lags.min as f64;
                    let i0 = (pos.floor().max(0.0) as usize).min(last);
                    let i1 = (i0 + 1).min(last);
                    let f = (pos - i0 as f64).clamp(0.0, 1.0);
                    row[i0] * (1.0 - f) + row[i1] * f
                })
                .sum()
        })
        .collect();
    Ok(SrpMap { scores })
}

/// The `n` strongest SRP peaks, using the same peak picking as the networks.
pub fn decode_srp(map: &SrpMap, n: usize, config: &DecodeConfig) -> Vec<f64> {
    decode_doa(&map.scores, n, config)
}
