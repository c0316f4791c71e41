use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LogMelSpectrogram;

/// Time and frequency band masking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugmentPolicy {
    pub time_mask_width_max: usize,
    pub freq_mask_width_max: usize,
    pub num_time_masks: usize,
    pub num_freq_masks: usize,
    /// Value written into masked cells (log domain).
    pub mask_value: f64,
}

impl Default for SpecAugmentPolicy {
    fn default() -> Self {
        SpecAugmentPolicy {
            time_mask_width_max: 40,
            freq_mask_width_max: 8,
            num_time_masks: 2,
            num_freq_masks: 2,
            mask_value: 0.0,
        }
    }
}

impl SpecAugmentPolicy {
    pub fn disabled() -> Self {
        SpecAugmentPolicy {
            num_time_masks: 0,
            num_freq_masks: 0,
            ..Self::default()
        }
    }
}

/// Applies the policy's time masks, then frequency masks. Each mask width is
/// uniform on `0..=max` (capped by the axis length) and its start uniform
/// over the positions where it fits.
pub fn spec_augment(spec: &LogMelSpectrogram, policy: &SpecAugmentPolicy, seed: u64) -> LogMelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = spec.clone();
    let (frames, bins) = (spec.frames, spec.mel_bins);
    for _ in 0..policy.num_time_masks {
        let (start, width) = draw_band(&mut rng, policy.time_mask_width_max, frames);
        for t in start..start + width {
            out.values[t * bins..(t + 1) * bins].fill(policy.mask_value);
        }
    }
    for _ in 0..policy.num_freq_masks {
        let (start, width) = draw_band(&mut rng, policy.freq_mask_width_max, bins);
        for t in 0..frames {
            out.values[t * bins + start..t * bins + start + width].fill(policy.mask_value);
        }
    }
    out
}

fn draw_band(rng: &mut ChaCha8Rng, max_width: usize, axis: usize) -> (usize, usize) {
    let width = rng.gen_range(0..=max_width.min(axis));
    let start = rng.gen_range(0..=axis - width);
    (start, width)
}
