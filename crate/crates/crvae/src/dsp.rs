//! STFT analysis/synthesis producing the 200-bin complex spectrogram and
//! reconstructing waveforms by normalized overlap-add.
//!
//! Defaults: 400-sample frames (25 ms at 16 kHz), hop 100, periodic Hann.
//! The 400-point DFT gives 201 nonredundant bins; the Nyquist bin is dropped
//! to land exactly on 200 and restored as zero at synthesis. A 4:1
//! frame/hop ratio keeps the squared-Hann overlap-add sum exactly constant
//! in the interior.

use crate::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 400;
pub const HOP: usize = 100;
pub const N_BINS: usize = 200;
/// Global scale applied to spectrograms before they enter the model
/// (`1/√frame_len` for the default frame), keeping activations well inside
/// the linear range of the gates. Inverted symmetrically at synthesis.
pub const SPEC_SCALE: f64 = 0.05;
/// Relative floor on the overlap-add normalizer in [`istft`]: samples whose
/// accumulated squared window falls below this fraction of the interior value
/// are muted rather than divided by a vanishing normalizer.
pub const ISTFT_NORM_FLOOR: f64 = 0.1;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    HannPeriodic,
}

impl WindowKind {
    pub fn samples(&self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::HannPeriodic => (0..len)
                .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

/// Time-major complex spectrogram with its analysis metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub n_bins: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Short-time Fourier transform keeping bins `0..n_bins−1`. Signals shorter
/// than one frame are zero-padded to a single frame.
pub fn stft(w: &Waveform, frame_len: usize, hop: usize, window: WindowKind) -> Result<Spectrogram> {
    if hop == 0 || frame_len < hop {
        return Err(Error::Config(format!("stft: need frame_len >= hop > 0, got {frame_len}/{hop}")));
    }
    let n_bins = frame_len / 2;
    let win = window.samples(frame_len);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_len);

    let len = w.samples.len().max(frame_len);
    let n_frames = 1 + (len - frame_len) / hop;
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    for f in 0..n_frames {
        let start = f * hop;
        for (n, b) in buf.iter_mut().enumerate() {
            let s = w.samples.get(start + n).copied().unwrap_or(0.0);
            *b = Complex64::new(s * win[n], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..n_bins].to_vec());
    }
    Ok(Spectrogram { frames, n_bins, frame_len, hop, window })
}

/// Inverse STFT: conjugate-symmetric extension (dropped bins restored as
/// zero), inverse DFT, synthesis-windowed overlap-add, and pointwise
/// normalization by the accumulated squared window.
pub fn istft(s: &Spectrogram, length_hint: Option<usize>) -> Result<Waveform> {
    let frame_len = s.frame_len;
    let hop = s.hop;
    if s.frames.iter().any(|f| f.len() != s.n_bins) {
        return Err(Error::Shape("istft: ragged spectrogram".into()));
    }
    let win = s.window.samples(frame_len);
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(frame_len);

    let out_len = if s.frames.is_empty() { 0 } else { (s.frames.len() - 1) * hop + frame_len };
    let mut acc = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    for (f, bins) in s.frames.iter().enumerate() {
        for b in buf.iter_mut() {
            *b = Complex64::new(0.0, 0.0);
        }
        buf[..s.n_bins].copy_from_slice(bins);
        for k in 1..s.n_bins {
            buf[frame_len - k] = bins[k].conj();
        }
        ifft.process(&mut buf);
        let start = f * hop;
        for n in 0..frame_len {
            // rustfft's inverse is unnormalized
            let sample = buf[n].re / frame_len as f64;
            acc[start + n] += sample * win[n];
            norm[start + n] += win[n] * win[n];
        }
    }
    // Samples near the signal edges are covered by only the tapered tails of
    // one or two windows, so the accumulated squared window can be arbitrarily
    // small there. Dividing by it is exact for a consistent spectrogram but
    // amplifies any inconsistency (e.g. model-generated frames) by orders of
    // magnitude, so the normalizer is floored relative to its interior value
    // and samples below the floor are muted instead of amplified.
    let nmax = norm.iter().cloned().fold(0.0f64, f64::max);
    let floor = ISTFT_NORM_FLOOR * nmax;
    for (a, n) in acc.iter_mut().zip(&norm) {
        if *n > floor {
            *a /= n;
        } else {
            *a = 0.0;
        }
    }
    if let Some(len) = length_hint {
        acc.truncate(len);
        while acc.len() < len {
            acc.push(0.0);
        }
    }
    Ok(Waveform::new(acc, SAMPLE_RATE))
}

/// Maximum deviation of `Σ_k win²(n − k·hop)` from its interior mean.
pub fn cola_error(frame_len: usize, hop: usize, window: WindowKind) -> f64 {
    let win = window.samples(frame_len);
    let span = frame_len * 8;
    let mut sum = vec![0.0; span];
    let mut k = 0;
    while k * hop < span {
        let start = k * hop;
        for (n, w) in win.iter().enumerate() {
            if start + n < span {
                sum[start + n] += w * w;
            }
        }
        k += 1;
    }
    let interior = &sum[frame_len..span - 2 * frame_len];
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    interior.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max)
}
