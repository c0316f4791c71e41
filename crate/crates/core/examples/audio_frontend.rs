//! Renders a synthetic clip, computes its log-mel spectrogram, cuts it into
//! patches and applies SpecAugment.
//!
//! Usage: `cargo run --example audio_frontend -- [seed]`

use act_core::audio::{
    caption_scenes, compute_log_mel, patchify, spec_augment, synthesize_event_clip, MelConfig, SpecAugmentPolicy,
};

fn main() -> act_core::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let scene = &caption_scenes(1, seed)[0];
    let clip = synthesize_event_clip(scene, seed)?;
    println!("caption: {}", clip.caption);
    println!("{:.1} s at {} Hz", clip.waveform.duration_seconds(), clip.waveform.sample_rate);

    let spec = compute_log_mel(&clip.waveform, &MelConfig::default())?;
    let (lo, hi) = spec.values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("log-mel: {} frames x {} bins, range [{lo:.2}, {hi:.2}]", spec.frames, spec.mel_bins);

    let patches = patchify(&spec, 4)?;
    println!("patches: {} of {} values", patches.count, patches.patch_dim());

    let masked = spec_augment(&spec, &SpecAugmentPolicy::default(), seed);
    let changed = spec.values.iter().zip(&masked.values).filter(|(a, b)| a != b).count();
    println!("SpecAugment changed {changed} of {} cells", spec.values.len());
    Ok(())
}
