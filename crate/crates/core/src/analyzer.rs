//! Sliding register analysis over a long spectrogram.
//!
//! A tick is placed every [`TICK_SPACING`] columns starting at column 0. Each tick is
//! classified from a [`WINDOW_WIDTH`]-column window centered on it, with silence (zero
//! columns) beyond the selection's edges.

use std::fmt::Write as _;

use crate::audio::{resample_linear, AudioBuffer, WORKING_SAMPLE_RATE};
use crate::cnn::CnnModel;
use crate::dataset::{flatten, standardize, RegisterLabel, FEATURE_DIM, INPUT_WIDTH};
use crate::dsp::MelRenderer;
use crate::error::{Error, Result};
use crate::image::{RgbImage, SpectrogramImage};
use crate::model_io::{Model, ModelKind};
use crate::scalar::Scalar;
use crate::svm::SvmModel;

pub const TICK_SPACING: usize = 10;
pub const WINDOW_WIDTH: usize = INPUT_WIDTH;

pub const LABEL_COLOR: [u8; 3] = [0, 0, 255];
pub const MARKER_COLOR: [u8; 3] = [255, 0, 0];

/// Anything that labels a standardized 154×128 spectrogram.
pub trait Classifier<T: Scalar>: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn feature_dim(&self) -> usize;

    /// Predicted label and the model's probability for it.
    fn classify(&self, img: &SpectrogramImage<T>) -> Result<(RegisterLabel, T)>;
}

impl<T: Scalar> Classifier<T> for SvmModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Svm
    }

    fn feature_dim(&self) -> usize {
        SvmModel::feature_dim(self)
    }

    fn classify(&self, img: &SpectrogramImage<T>) -> Result<(RegisterLabel, T)> {
        let x = flatten(img)?;
        let scores = self.decision_values(&x)?;
        let label = crate::svm::argmax_label(&scores);
        Ok((label, self.probabilities_from_scores(&scores)[label.index()]))
    }
}

impl<T: Scalar> Classifier<T> for CnnModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Cnn
    }

    fn feature_dim(&self) -> usize {
        self.config().input_height * self.config().input_width
    }

    fn classify(&self, img: &SpectrogramImage<T>) -> Result<(RegisterLabel, T)> {
        let label = self.predict(img)?;
        Ok((label, self.predict_proba(img)?[label.index()]))
    }
}

impl<T: Scalar> Classifier<T> for Model<T> {
    fn kind(&self) -> ModelKind {
        Model::kind(self)
    }

    fn feature_dim(&self) -> usize {
        Model::feature_dim(self)
    }

    fn classify(&self, img: &SpectrogramImage<T>) -> Result<(RegisterLabel, T)> {
        match self {
            Model::Svm(m) => m.classify(img),
            Model::Cnn(m) => m.classify(img),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tick<T> {
    pub x: usize,
    pub label: RegisterLabel,
    pub confidence: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult<T> {
    pub spectrogram: SpectrogramImage<T>,
    pub ticks: Vec<Tick<T>>,
    /// Midpoints between consecutive ticks whose labels differ.
    pub markers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub label: RegisterLabel,
    pub start_x: usize,
    pub end_x: usize,
}

/// `floor((width − 1) / 10) + 1` ticks at `0, 10, 20, …`.
pub fn tick_positions(width: usize) -> Vec<usize> {
    (0..width).step_by(TICK_SPACING).collect()
}

pub fn shift_markers<T>(ticks: &[Tick<T>]) -> Vec<usize> {
    ticks
        .windows(2)
        .filter(|w| w[0].label != w[1].label)
        .map(|w| (w[0].x + w[1].x) / 2)
        .collect()
}

/// The window classified for the tick at column `x`.
pub fn tick_window<T: Scalar>(spectrogram: &SpectrogramImage<T>, x: usize) -> SpectrogramImage<T> {
    let start = x as isize - (WINDOW_WIDTH / 2) as isize;
    spectrogram.columns(start, start + WINDOW_WIDTH as isize)
}

/// Labels every tick of an already rendered spectrogram.
pub fn analyze_image<T: Scalar>(
    spectrogram: &SpectrogramImage<T>,
    model: &dyn Classifier<T>,
) -> Result<AnalysisResult<T>> {
    if model.feature_dim() != FEATURE_DIM {
        return Err(Error::Model(format!(
            "{} model expects {} features, analysis windows have {FEATURE_DIM}",
            model.kind().name(),
            model.feature_dim()
        )));
    }
    if spectrogram.width() == 0 || spectrogram.height() == 0 {
        return Err(Error::Selection("selection renders no spectrogram columns".into()));
    }
    let ticks = tick_positions(spectrogram.width())
        .into_iter()
        .map(|x| {
            let window = standardize(&tick_window(spectrogram, x))?;
            let (label, confidence) = model.classify(&window)?;
            Ok(Tick { x, label, confidence })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalysisResult {
        spectrogram: spectrogram.clone(),
        markers: shift_markers(&ticks),
        ticks,
    })
}

/// Renders the `[start_s, end_s)` selection of `audio` and analyzes it.
pub fn analyze<T: Scalar>(
    audio: &AudioBuffer<T>,
    start_s: f64,
    end_s: f64,
    renderer: &MelRenderer<T>,
    model: &dyn Classifier<T>,
) -> Result<AnalysisResult<T>> {
    let selection = audio.segment(start_s, end_s)?;
    let selection = if selection.sample_rate() == renderer.sample_rate() {
        selection
    } else {
        resample_linear(&selection, renderer.sample_rate())?
    };
    if selection.is_empty() {
        return Err(Error::Selection("selection contains no samples".into()));
    }
    analyze_image(&renderer.render(&selection)?, model)
}

/// [`analyze`] with the default rendering pipeline at the working sample rate.
pub fn analyze_default<T: Scalar>(
    audio: &AudioBuffer<T>,
    start_s: f64,
    end_s: f64,
    model: &dyn Classifier<T>,
) -> Result<AnalysisResult<T>> {
    let renderer = MelRenderer::new(Default::default(), Default::default(), WORKING_SAMPLE_RATE)?;
    analyze(audio, start_s, end_s, &renderer, model)
}

pub fn label_run_lengths<T>(ticks: &[Tick<T>]) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for t in ticks {
        match runs.last_mut() {
            Some(r) if r.label == t.label => r.end_x = t.x,
            _ => runs.push(Run {
                label: t.label,
                start_x: t.x,
                end_x: t.x,
            }),
        }
    }
    runs
}

impl<T: Scalar> AnalysisResult<T> {
    pub fn runs(&self) -> Vec<Run> {
        label_run_lengths(&self.ticks)
    }

    /// One `x,label,confidence` line per tick.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.ticks {
            let _ = writeln!(out, "{},{},{:.6}", t.x, t.label.code(), t.confidence.as_f64());
        }
        out
    }

    pub fn annotate(&self) -> RgbImage {
        annotate(self)
    }
}

const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
const GLYPH_MARGIN: usize = 1;

/// 3×5 bitmaps for the digits 0-3, one row per entry, most significant bit leftmost.
const GLYPHS: [[u8; GLYPH_H]; 4] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b011, 0b001, 0b111],
];

/// `(left, top, width, height)` of the label digit drawn for the tick at `x`.
pub fn glyph_box(x: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let left = x.saturating_sub(GLYPH_W / 2).min(width.saturating_sub(GLYPH_W));
    let top = height.saturating_sub(GLYPH_H + GLYPH_MARGIN);
    (left, top, GLYPH_W, GLYPH_H)
}

/// Grayscale spectrogram with a blue label digit under every tick and a red vertical
/// line at every shift marker.
pub fn annotate<T: Scalar>(result: &AnalysisResult<T>) -> RgbImage {
    let mut img = RgbImage::from_gray(&result.spectrogram);
    let (w, h) = (img.width, img.height);
    for &m in &result.markers {
        for row in 0..h {
            img.put(row, m, MARKER_COLOR);
        }
    }
    for t in &result.ticks {
        let (left, top, gw, gh) = glyph_box(t.x, w, h);
        let glyph = GLYPHS[t.label.index()];
        for (dy, bits) in glyph.iter().enumerate().take(gh) {
            for dx in 0..gw {
                if bits >> (GLYPH_W - 1 - dx) & 1 == 1 {
                    img.put(top + dy, left + dx, LABEL_COLOR);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::{BinaryHead, Sigmoid};
    use crate::dataset::INPUT_HEIGHT;
    use RegisterLabel::*;

    fn ticks(labels: &[RegisterLabel]) -> Vec<Tick<f64>> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Tick {
                x: i * TICK_SPACING,
                label,
                confidence: 1.0,
            })
            .collect()
    }

    /// Picks the class from the brightness of the window's center column.
    fn center_model() -> SvmModel<f64> {
        let heads = (0..4)
            .map(|c| {
                let mut weights = vec![0.0; FEATURE_DIM];
                // pixel (row 0, column 77)
                weights[WINDOW_WIDTH / 2] = 10.0 * c as f64;
                BinaryHead {
                    weights,
                    bias: -10.0 * (c * c) as f64 / 6.0,
                }
            })
            .collect();
        SvmModel::from_parts(heads, vec![Sigmoid::default(); 4]).unwrap()
    }

    #[test]
    fn tick_counts() {
        assert_eq!(tick_positions(100), (0..10).map(|i| i * 10).collect::<Vec<_>>());
        for w in 1..200 {
            assert_eq!(tick_positions(w).len(), (w - 1) / 10 + 1);
        }
        assert!(tick_positions(0).is_empty());
    }

    #[test]
    fn markers_and_runs() {
        let t = ticks(&[Chest, Chest, Mix, Mix]);
        assert_eq!(shift_markers(&t), vec![15]);
        let runs = label_run_lengths(&t);
        assert_eq!(
            runs,
            vec![
                Run { label: Chest, start_x: 0, end_x: 10 },
                Run { label: Mix, start_x: 20, end_x: 30 }
            ]
        );
        assert_eq!(label_run_lengths(&ticks(&[Head; 5])).len(), 1);
        assert_eq!(label_run_lengths(&ticks(&[Chest, Mix, Chest, Mix])).len(), 4);
    }

    #[test]
    fn analysis_follows_the_signal() {
        // first row bright in columns 100..200 only
        let img = SpectrogramImage::from_fn(300, INPUT_HEIGHT, |r, c| {
            if r == 0 && (100..200).contains(&c) {
                0.3
            } else {
                0.0
            }
        });
        let r = analyze_image(&img, &center_model()).unwrap();
        assert_eq!(r.ticks.len(), 30);
        let labels: Vec<_> = r.ticks.iter().map(|t| t.label).collect();
        assert!(labels[..10].iter().all(|&l| l == Chest));
        assert!(labels[10..20].iter().all(|&l| l != Chest));
        assert!(labels[20..].iter().all(|&l| l == Chest));
        assert_eq!(r.markers.len(), shift_markers(&r.ticks).len());
        assert_eq!(r.to_text().lines().count(), 30);
        assert!(r.to_text().starts_with("0,0,"));
    }

    #[test]
    fn interior_ticks_match_a_column_aligned_sub_selection() {
        let full = SpectrogramImage::from_fn(400, INPUT_HEIGHT, |r, c| ((r * 7 + c * 13) % 17) as f64 / 17.0);
        let model = center_model();
        let whole = analyze_image(&full, &model).unwrap();
        let part = analyze_image(&full.columns(100, 360), &model).unwrap();
        for t in &part.ticks {
            if t.x >= WINDOW_WIDTH / 2 && t.x + WINDOW_WIDTH / 2 <= 260 {
                assert_eq!(whole.ticks[(t.x + 100) / 10], Tick { x: t.x + 100, ..*t });
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_a_model_error() {
        let small = SvmModel::from_parts(
            (0..4).map(|_| BinaryHead { weights: vec![0.0; 5], bias: 0.0 }).collect(),
            vec![Sigmoid::default(); 4],
        )
        .unwrap();
        let img = SpectrogramImage::zeros(50, INPUT_HEIGHT);
        assert!(matches!(analyze_image(&img, &small), Err(Error::Model(_))));
        assert!(matches!(
            analyze_image(&SpectrogramImage::<f64>::zeros(0, INPUT_HEIGHT), &center_model()),
            Err(Error::Selection(_))
        ));
    }

    #[test]
    fn annotation() {
        let img = SpectrogramImage::from_fn(60, INPUT_HEIGHT, |r, c| ((r + c) % 5) as f64 / 5.0);
        let empty = AnalysisResult {
            spectrogram: img.clone(),
            ticks: vec![],
            markers: vec![],
        };
        assert_eq!(annotate(&empty), RgbImage::from_gray(&img));

        let t = ticks(&[Chest, Mix, Mix, Head, Head, Head]);
        let r = AnalysisResult {
            spectrogram: img,
            markers: shift_markers(&t),
            ticks: t,
        };
        let a = annotate(&r);
        assert_eq!(a.to_png().unwrap(), annotate(&r).to_png().unwrap());
        assert_eq!(a.get(0, 5), MARKER_COLOR);
        assert_eq!(a.get(0, 25), MARKER_COLOR);
        // top row of the "1" glyph under tick 10 is its middle pixel
        let (left, top, _, _) = glyph_box(10, 60, INPUT_HEIGHT);
        assert_eq!(a.get(top, left + 1), LABEL_COLOR);
    }

    #[test]
    fn glyphs_stay_inside_the_image() {
        for width in 20..=400 {
            for x in tick_positions(width) {
                let (left, top, w, h) = glyph_box(x, width, INPUT_HEIGHT);
                assert!(left + w <= width && top + h <= INPUT_HEIGHT, "width {width} tick {x}");
            }
        }
    }
}
