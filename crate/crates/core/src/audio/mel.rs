use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{ensure, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub mel_bins: usize,
    /// Lower bound applied to mel energies before the logarithm.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: super::SAMPLE_RATE,
            window: 1024,
            hop: 512,
            mel_bins: 64,
            log_floor: 1e-10,
        }
    }
}

/// `T×F` log-mel matrix, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Vec<f64>,
    pub frames: usize,
    pub mel_bins: usize,
    pub frame_hop: usize,
}

impl LogMelSpectrogram {
    pub fn new(values: Vec<f64>, frames: usize, mel_bins: usize, frame_hop: usize) -> Result<Self> {
        ensure!(
            values.len() == frames * mel_bins,
            "{} values do not form a {frames}x{mel_bins} spectrogram",
            values.len()
        );
        Ok(LogMelSpectrogram {
            values,
            frames,
            mel_bins,
            frame_hop,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.mel_bins..(t + 1) * self.mel_bins]
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.mel_bins + f]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.frames, self.mel_bins], self.values.clone())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular, area-normalized filters spaced evenly on the mel scale from
/// 0 Hz to Nyquist. Returns `mel_bins` rows of `window/2 + 1` weights and the
/// center frequency of each filter.
pub fn mel_filterbank(sample_rate: u32, window: usize, mel_bins: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n_freqs = window / 2 + 1;
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_freqs)
        .map(|k| k as f64 * f64::from(sample_rate) / window as f64)
        .collect();
    let filters = (0..mel_bins)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            bin_hz
                .iter()
                .map(|&f| {
                    let w = if f > lo && f <= center {
                        (f - lo) / (center - lo)
                    } else if f > center && f < hi {
                        (hi - f) / (hi - center)
                    } else {
                        0.0
                    };
                    w * norm
                })
                .collect()
        })
        .collect();
    (filters, edges[1..=mel_bins].to_vec())
}

/// Center-padded STFT (periodic Hann window) → magnitude → mel filterbank →
/// `ln(max(floor, energy))`. Produces `1 + len/hop` frames.
pub fn compute_log_mel(wave: &Waveform, cfg: &MelConfig) -> Result<LogMelSpectrogram> {
    ensure!(!wave.samples.is_empty(), "cannot compute features of an empty waveform");
    ensure!(
        cfg.window >= 2 && cfg.hop >= 1 && cfg.mel_bins >= 1,
        "invalid STFT configuration {cfg:?}"
    );
    ensure!(cfg.log_floor > 0.0, "log floor must be positive");
    let wave = if wave.sample_rate == cfg.sample_rate {
        std::borrow::Cow::Borrowed(wave)
    } else {
        std::borrow::Cow::Owned(wave.resample(cfg.sample_rate))
    };
    let n = cfg.window;
    let pad = n / 2;
    let len = wave.samples.len();
    let frames = 1 + len / cfg.hop;
    let hann: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect();
    let (filters, _) = mel_filterbank(cfg.sample_rate, n, cfg.mel_bins);
    // Sparse support of each filter.
    let support: Vec<(usize, usize)> = filters
        .iter()
        .map(|f| {
            let first = f.iter().position(|&w| w != 0.0).unwrap_or(0);
            let last = f.iter().rposition(|&w| w != 0.0).map_or(0, |p| p + 1);
            (first, last.max(first))
        })
        .collect();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut mag = vec![0.0; n / 2 + 1];
    let mut values = Vec::with_capacity(frames * cfg.mel_bins);
    for t in 0..frames {
        let start = (t * cfg.hop) as isize - pad as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let s = if idx >= 0 && (idx as usize) < len {
                wave.samples[idx as usize]
            } else {
                0.0
            };
            *b = Complex::new(s * hann[i], 0.0);
        }
        fft.process(&mut buf);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        for (f, &(lo, hi)) in filters.iter().zip(&support) {
            let e: f64 = (lo..hi).map(|k| f[k] * mag[k]).sum();
            values.push(e.max(cfg.log_floor).ln());
        }
    }
    LogMelSpectrogram::new(values, frames, cfg.mel_bins, cfg.hop)
}
