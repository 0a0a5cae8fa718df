use avra_core::analyzer::{analyze, label_run_lengths, shift_markers, tick_positions, Classifier, Tick};
use avra_core::audio::{AudioBuffer, WORKING_SAMPLE_RATE};
use avra_core::dataset::{RegisterLabel, FEATURE_DIM, INPUT_HEIGHT};
use avra_core::dsp::{MelConfig, MelRenderer, StftConfig};
use avra_core::image::SpectrogramImage;
use avra_core::model_io::ModelKind;
use avra_core::Result;
use proptest::prelude::*;

/// Labels a window by which quarter of the frequency axis holds most of its energy.
struct BandClassifier;

impl Classifier<f64> for BandClassifier {
    fn kind(&self) -> ModelKind {
        ModelKind::Svm
    }

    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn classify(&self, img: &SpectrogramImage<f64>) -> Result<(RegisterLabel, f64)> {
        let quarter = INPUT_HEIGHT / 4;
        let energy: Vec<f64> = (0..4)
            .map(|q| (q * quarter..(q + 1) * quarter).map(|r| img.row(r).iter().sum::<f64>()).sum())
            .collect();
        let best = (0..4).fold(0, |b, i| if energy[i] > energy[b] { i } else { b });
        Ok((RegisterLabel::ALL[best], 1.0))
    }
}

fn ticks(codes: &[u8]) -> Vec<Tick<f64>> {
    codes
        .iter()
        .enumerate()
        .map(|(i, &c)| Tick {
            x: i * 10,
            label: RegisterLabel::from_code(c).unwrap(),
            confidence: 0.5,
        })
        .collect()
}

proptest! {
    #[test]
    fn tick_count(width in 1usize..5000) {
        let xs = tick_positions(width);
        prop_assert_eq!(xs.len(), (width - 1) / 10 + 1);
        prop_assert!(xs.iter().enumerate().all(|(i, &x)| x == 10 * i && x < width));
    }

    #[test]
    fn markers_and_runs(codes in prop::collection::vec(0u8..4, 1..80)) {
        let t = ticks(&codes);
        let changes = codes.windows(2).filter(|w| w[0] != w[1]).count();
        let markers = shift_markers(&t);
        prop_assert_eq!(markers.len(), changes);
        let runs = label_run_lengths(&t);
        prop_assert_eq!(runs.len(), changes + 1);
        let mut covered = Vec::new();
        for r in &runs {
            for tick in t.iter().filter(|tk| tk.x >= r.start_x && tk.x <= r.end_x) {
                prop_assert_eq!(tick.label, r.label);
                covered.push(tick.x);
            }
        }
        prop_assert_eq!(covered, t.iter().map(|tk| tk.x).collect::<Vec<_>>());
        for (m, w) in markers.iter().zip(runs.windows(2)) {
            prop_assert!(w[0].end_x < *m && *m < w[1].start_x);
        }
    }
}

#[test]
fn selection_matches_full_clip_on_interior_ticks() {
    let renderer = MelRenderer::new(StftConfig::default(), MelConfig::default(), WORKING_SAMPLE_RATE).unwrap();
    let hop = renderer.stft().hop;
    let rate = WORKING_SAMPLE_RATE as f64;
    let tones = [150.0, 9000.0, 1200.0, 4000.0];
    let segment = 3 * 44_100 / 2;
    let samples: Vec<f64> = (0..tones.len() * segment)
        .map(|n| (std::f64::consts::TAU * tones[n / segment] * n as f64 / rate).sin() * 0.5)
        .collect();
    let audio = AudioBuffer::new(samples, WORKING_SAMPLE_RATE).unwrap();
    let full = analyze(&audio, 0.0, audio.duration_seconds(), &renderer, &BandClassifier).unwrap();

    let offset = 30;
    let start = (offset * hop) as f64 / rate;
    let end = ((offset + 240) * hop) as f64 / rate;
    let part = analyze(&audio, start, end, &renderer, &BandClassifier).unwrap();
    assert!(full.markers.len() >= 2);
    let half = 77 + 2;
    let mut compared = Vec::new();
    for t in &part.ticks {
        if t.x < half || t.x + half > part.spectrogram.width() {
            continue;
        }
        let twin = full.ticks.iter().find(|f| f.x == t.x + offset).unwrap();
        assert_eq!(t.label, twin.label, "tick {}", t.x);
        compared.push(t.label);
    }
    assert!(compared.len() >= 8);
    assert!(compared.windows(2).any(|w| w[0] != w[1]), "no label change inside the compared span");
}
