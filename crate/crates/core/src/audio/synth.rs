use std::collections::BTreeSet;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Waveform, CLIP_SECONDS, SAMPLE_RATE};
use crate::error::{ensure, Result};

/// Tag names indexed by tag id.
pub const TAG_NAMES: [&str; 3] = ["tone", "noise", "chirp"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Tone { freq_hz: f64 },
    NoiseBurst,
    Chirp { start_hz: f64, end_hz: f64 },
}

impl EventKind {
    pub fn tag_id(&self) -> usize {
        match self {
            EventKind::Tone { .. } => 0,
            EventKind::NoiseBurst => 1,
            EventKind::Chirp { .. } => 2,
        }
    }

    pub fn phrase(&self) -> &'static str {
        match self {
            EventKind::Tone { .. } => "a tone sounds",
            EventKind::NoiseBurst => "a burst of noise",
            EventKind::Chirp { start_hz, end_hz } if end_hz < start_hz => "a chirp falls",
            EventKind::Chirp { .. } => "a chirp rises",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundEvent {
    pub onset: f64,
    pub duration: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub waveform: Waveform,
    pub caption: String,
    pub tags: BTreeSet<usize>,
}

/// Joins event phrases in onset order: two events use "followed by", longer
/// sequences chain with "then" and close with "followed by".
pub fn caption_for(events: &[SoundEvent]) -> String {
    let mut ordered: Vec<&SoundEvent> = events.iter().collect();
    ordered.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let phrases: Vec<&str> = ordered.iter().map(|e| e.kind.phrase()).collect();
    match phrases.len() {
        0 => "silence".to_string(),
        1 => phrases[0].to_string(),
        n => {
            let head = phrases[..n - 1].join(" then ");
            format!("{head} followed by {}", phrases[n - 1])
        }
    }
}

const FADE_SECONDS: f64 = 0.01;

/// Renders a 10 s, 32 kHz clip from an event list. Noise is drawn from a
/// generator seeded by `seed`, so identical inputs give identical samples.
pub fn synthesize_event_clip(events: &[SoundEvent], seed: u64) -> Result<SynthClip> {
    let rate = f64::from(SAMPLE_RATE);
    let total = (CLIP_SECONDS * rate) as usize;
    let mut samples = vec![0.0; total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in events {
        ensure!(
            e.onset >= 0.0 && e.duration > 0.0,
            "event onset must be non-negative and duration positive: {e:?}"
        );
        ensure!(
            e.onset + e.duration <= CLIP_SECONDS + 1e-9,
            "event at {}s lasting {}s runs past the {CLIP_SECONDS}s clip",
            e.onset,
            e.duration
        );
        let start = (e.onset * rate).round() as usize;
        let len = ((e.duration * rate).round() as usize).min(total - start);
        let fade = ((FADE_SECONDS * rate) as usize).min(len / 2).max(1);
        let mut phase = 0.0;
        for i in 0..len {
            let t = i as f64 / rate;
            let v = match &e.kind {
                EventKind::Tone { freq_hz } => 0.5 * (TAU * freq_hz * t).sin(),
                EventKind::NoiseBurst => 0.3 * rng.gen_range(-1.0..1.0),
                EventKind::Chirp { start_hz, end_hz } => {
                    let f = start_hz + (end_hz - start_hz) * t / e.duration;
                    phase += TAU * f / rate;
                    0.5 * phase.sin()
                }
            };
            let env = (i.min(len - 1 - i) as f64 / fade as f64).min(1.0);
            samples[start + i] += v * env;
        }
    }
    Ok(SynthClip {
        waveform: Waveform::new(samples, SAMPLE_RATE),
        caption: caption_for(events),
        tags: events.iter().map(|e| e.kind.tag_id()).collect(),
    })
}

/// The four caption phrases an event can produce, as event templates.
fn phrase_kind(code: usize, rng: &mut impl Rng) -> EventKind {
    match code {
        0 => EventKind::Tone {
            freq_hz: [440.0, 880.0, 1500.0, 3000.0][rng.gen_range(0..4)],
        },
        1 => EventKind::NoiseBurst,
        2 => EventKind::Chirp {
            start_hz: rng.gen_range(300.0..800.0),
            end_hz: rng.gen_range(2500.0..5000.0),
        },
        _ => EventKind::Chirp {
            start_hz: rng.gen_range(2500.0..5000.0),
            end_hz: rng.gen_range(300.0..800.0),
        },
    }
}

fn place(codes: &[usize], rng: &mut impl Rng) -> Vec<SoundEvent> {
    let slot = CLIP_SECONDS / codes.len() as f64;
    codes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let duration = rng.gen_range(0.5 * slot..0.8 * slot);
            let onset = i as f64 * slot + rng.gen_range(0.0..(slot - duration));
            SoundEvent {
                onset,
                duration,
                kind: phrase_kind(c, rng),
            }
        })
        .collect()
}

/// Event lists for a captioning corpus of one- and two-event scenes. The
/// first 20 scenes have pairwise distinct captions; beyond that captions
/// repeat with fresh timings and frequencies.
pub fn caption_scenes(count: usize, seed: u64) -> Vec<Vec<SoundEvent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combos: Vec<Vec<usize>> = (0..4).map(|a| vec![a]).collect();
    for a in 0..4 {
        for b in 0..4 {
            combos.push(vec![a, b]);
        }
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut order = combos.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for codes in order.into_iter().take(count - out.len()) {
            out.push(place(&codes, &mut rng));
        }
    }
    out
}

/// Single-event scenes cycling through the tag classes, for a linearly
/// separable tagging set.
pub fn tagging_scenes(count: usize, seed: u64) -> Vec<Vec<SoundEvent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let code = match i % 3 {
                0 => 0,
                1 => 1,
                _ => 2 + rng.gen_range(0..2),
            };
            place(&[code], &mut rng)
        })
        .collect()
}
