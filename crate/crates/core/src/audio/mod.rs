//! Waveforms, log-mel features, patching, SpecAugment and the synthetic
//! event corpus.

mod augment;
mod mel;
mod patch;
mod synth;
mod wav;

pub use augment::{spec_augment, SpecAugmentPolicy};
pub use mel::{compute_log_mel, mel_filterbank, mel_to_hz, hz_to_mel, LogMelSpectrogram, MelConfig};
pub use patch::{patchify, PatchSequence};
pub use synth::{
    caption_for, caption_scenes, synthesize_event_clip, tagging_scenes, EventKind, SoundEvent, SynthClip, TAG_NAMES,
};
pub use wav::{read_wav, write_wav};

/// Canonical sample rate of every prepared clip.
pub const SAMPLE_RATE: u32 = 32_000;
/// Canonical clip length in seconds.
pub const CLIP_SECONDS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, rate: u32) -> Waveform {
        if rate == self.sample_rate || self.samples.is_empty() {
            return Waveform::new(self.samples.clone(), rate);
        }
        let ratio = f64::from(self.sample_rate) / f64::from(rate);
        let n_out = ((self.samples.len() as f64) / ratio).round().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let j = (pos.floor() as usize).min(last);
                let frac = pos - j as f64;
                let next = self.samples[(j + 1).min(last)];
                self.samples[j] * (1.0 - frac) + next * frac
            })
            .collect();
        Waveform::new(samples, rate)
    }

    /// Resamples to `rate` and zero-pads or truncates to exactly `seconds`.
    pub fn prepare(&self, rate: u32, seconds: f64) -> Waveform {
        let mut w = self.resample(rate);
        let target = (seconds * f64::from(rate)).round() as usize;
        w.samples.resize(target, 0.0);
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prepare_pads_and_truncates() {
        let short = Waveform::new(vec![0.5; 1000], SAMPLE_RATE);
        let p = short.prepare(SAMPLE_RATE, CLIP_SECONDS);
        assert_eq!(p.samples.len(), 320_000);
        assert_eq!(p.samples[999], 0.5);
        assert_eq!(p.samples[1000], 0.0);
        let long = Waveform::new(vec![0.1; 400_000], SAMPLE_RATE);
        assert_eq!(long.prepare(SAMPLE_RATE, CLIP_SECONDS).samples.len(), 320_000);
    }

    #[test]
    fn resample_linear() {
        let w = Waveform::new(vec![0.0, 1.0, 2.0, 3.0], 16_000);
        let up = w.resample(32_000);
        assert_eq!(up.samples.len(), 8);
        assert_eq!(&up.samples[..4], &[0.0, 0.5, 1.0, 1.5]);
        let long = Waveform::new(vec![0.0; 16_000], 16_000).prepare(SAMPLE_RATE, CLIP_SECONDS);
        assert_eq!(long.samples.len(), 320_000);
    }
}
