use super::LogMelSpectrogram;
use crate::error::{ensure, Result};
use crate::numerics::Tensor;

/// `N` non-overlapping `t×F` slices of a spectrogram, each flattened
/// time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub data: Vec<f64>,
    pub count: usize,
    pub frames_per_patch: usize,
    pub mel_bins: usize,
}

impl PatchSequence {
    pub fn new(data: Vec<f64>, count: usize, frames_per_patch: usize, mel_bins: usize) -> Result<Self> {
        ensure!(
            count >= 1 && data.len() == count * frames_per_patch * mel_bins,
            "{} values do not form {count} patches of {frames_per_patch}x{mel_bins}",
            data.len()
        );
        Ok(PatchSequence {
            data,
            count,
            frames_per_patch,
            mel_bins,
        })
    }

    pub fn patch_dim(&self) -> usize {
        self.frames_per_patch * self.mel_bins
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let d = self.patch_dim();
        &self.data[i * d..(i + 1) * d]
    }

    /// `N × (t·F)` matrix.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.count, self.patch_dim()], self.data.clone())
    }

    /// Inverse of [`patchify`] on the truncated spectrogram.
    pub fn concatenate(&self, frame_hop: usize) -> LogMelSpectrogram {
        LogMelSpectrogram {
            values: self.data.clone(),
            frames: self.count * self.frames_per_patch,
            mel_bins: self.mel_bins,
            frame_hop,
        }
    }
}

/// Splits `spec` into `⌊T/t⌋` patches, dropping trailing frames.
pub fn patchify(spec: &LogMelSpectrogram, frames_per_patch: usize) -> Result<PatchSequence> {
    ensure!(frames_per_patch >= 1, "patch length must be at least one frame");
    ensure!(
        frames_per_patch <= spec.frames,
        "patch length {frames_per_patch} exceeds the {} available frames",
        spec.frames
    );
    let count = spec.frames / frames_per_patch;
    // Time-major storage means each patch is already a contiguous run.
    let used = count * frames_per_patch * spec.mel_bins;
    PatchSequence::new(spec.values[..used].to_vec(), count, frames_per_patch, spec.mel_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(frames: usize, bins: usize) -> LogMelSpectrogram {
        let v = (0..frames * bins).map(|i| i as f64 * 0.5 - 3.0).collect();
        LogMelSpectrogram::new(v, frames, bins, 512).unwrap()
    }

    #[test]
    fn five_hundred_frames_make_125_patches() {
        let p = patchify(&ramp(500, 64), 4).unwrap();
        assert_eq!(p.count, 125);
        assert_eq!(p.patch_dim(), 256);
        assert_eq!(p.to_tensor().shape(), &[125, 256]);
    }

    #[test]
    fn whole_spectrogram_as_one_patch() {
        let s = ramp(7, 3);
        let p = patchify(&s, 7).unwrap();
        assert_eq!(p.count, 1);
        assert_eq!(p.patch(0), s.values.as_slice());
    }

    #[test]
    fn desk_framing_truncates_to_624() {
        let p = patchify(&ramp(626, 64), 4).unwrap();
        assert_eq!(p.count, 156);
        assert!(patchify(&ramp(3, 64), 4).is_err());
        assert!(patchify(&ramp(3, 64), 0).is_err());
    }

    #[test]
    fn patch_layout_is_time_major() {
        let s = ramp(8, 2);
        let p = patchify(&s, 4).unwrap();
        // second patch, second frame, first bin = frame 5 bin 0
        assert_eq!(p.patch(1)[2], s.get(5, 0));
    }

    proptest! {
        #[test]
        fn concatenation_restores_truncated_spectrogram(frames in 1usize..40, bins in 1usize..6, t in 1usize..8) {
            prop_assume!(t <= frames);
            let s = ramp(frames, bins);
            let p = patchify(&s, t).unwrap();
            let back = p.concatenate(s.frame_hop);
            let kept = (frames / t) * t;
            prop_assert_eq!(back.frames, kept);
            prop_assert_eq!(&back.values[..], &s.values[..kept * bins]);
        }
    }
}
