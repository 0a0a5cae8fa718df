//! Model-input preparation: image standardization, augmentation, flattening, labels,
//! stratified splitting, manifests, and the synthetic register corpus.

mod manifest;
mod synth;

pub use manifest::{DatasetManifest, ManifestEntry};
pub use synth::{
    generate_synthetic_corpus, synthesize_clip, write_corpus, ClassTimbre, CorpusClip,
    SyntheticCorpusConfig,
};

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::SpectrogramImage;
use crate::scalar::Scalar;

pub const INPUT_WIDTH: usize = 154;
pub const INPUT_HEIGHT: usize = 128;
/// 154 × 128 flattened row-major.
pub const FEATURE_DIM: usize = INPUT_WIDTH * INPUT_HEIGHT;
pub const NUM_CLASSES: usize = 4;

/// Brightness factors applied by [`augment`], identity first.
pub const BRIGHTNESS_FACTORS: [f64; 3] = [1.0, 0.8, 1.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum RegisterLabel {
    Chest = 0,
    Mix = 1,
    HeadMix = 2,
    Head = 3,
}

impl RegisterLabel {
    pub const ALL: [RegisterLabel; NUM_CLASSES] = [
        RegisterLabel::Chest,
        RegisterLabel::Mix,
        RegisterLabel::HeadMix,
        RegisterLabel::Head,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("label code {code} outside 0..=3")))
    }

    pub fn name(self) -> &'static str {
        match self {
            RegisterLabel::Chest => "Chest",
            RegisterLabel::Mix => "Mix",
            RegisterLabel::HeadMix => "HeadMix",
            RegisterLabel::Head => "Head",
        }
    }
}

impl fmt::Display for RegisterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A flattened 154×128 image and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub features: Vec<T>,
    pub label: RegisterLabel,
}

impl<T: Scalar> Sample<T> {
    pub fn new(features: Vec<T>, label: RegisterLabel) -> Result<Self> {
        if features.len() != FEATURE_DIM {
            return Err(Error::Dimension {
                expected: FEATURE_DIM,
                got: features.len(),
            });
        }
        Ok(Self { features, label })
    }

    pub fn from_image(img: &SpectrogramImage<T>, label: RegisterLabel) -> Result<Self> {
        Ok(Self {
            features: flatten(img)?,
            label,
        })
    }
}

fn bilinear_resize<T: Scalar>(img: &SpectrogramImage<T>, width: usize, height: usize) -> SpectrogramImage<T> {
    // corner-aligned: output corners sample input corners exactly
    let coord = |i: usize, dst: usize, src: usize| -> f64 {
        if dst <= 1 {
            0.0
        } else {
            i as f64 * (src - 1) as f64 / (dst - 1) as f64
        }
    };
    SpectrogramImage::from_fn(width, height, |r, c| {
        let y = coord(r, height, img.height());
        let x = coord(c, width, img.width());
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(img.height() - 1), (x0 + 1).min(img.width() - 1));
        let (fy, fx) = (T::of(y - y0 as f64), T::of(x - x0 as f64));
        let lerp = |a: T, b: T, t: T| a + (b - a) * t;
        let top = lerp(img.get(y0, x0), img.get(y0, x1), fx);
        let bottom = lerp(img.get(y1, x0), img.get(y1, x1), fx);
        lerp(top, bottom, fy)
    })
}

/// Aspect-preserving bilinear fit into 154×128 followed by symmetric zero padding.
pub fn standardize<T: Scalar>(img: &SpectrogramImage<T>) -> Result<SpectrogramImage<T>> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot standardize an empty image"));
    }
    if w == INPUT_WIDTH && h == INPUT_HEIGHT {
        return Ok(img.clone());
    }
    let scale = (INPUT_WIDTH as f64 / w as f64).min(INPUT_HEIGHT as f64 / h as f64);
    let new_w = ((w as f64 * scale).round() as usize).clamp(1, INPUT_WIDTH);
    let new_h = ((h as f64 * scale).round() as usize).clamp(1, INPUT_HEIGHT);
    let resized = if (new_w, new_h) == (w, h) {
        img.clone()
    } else {
        bilinear_resize(img, new_w, new_h)
    };
    let left = (INPUT_WIDTH - new_w) / 2;
    let top = (INPUT_HEIGHT - new_h) / 2;
    Ok(SpectrogramImage::from_fn(INPUT_WIDTH, INPUT_HEIGHT, |r, c| {
        if r >= top && r < top + new_h && c >= left && c < left + new_w {
            resized.get(r - top, c - left)
        } else {
            T::zero()
        }
    }))
}

/// Mirror across the vertical axis (time reversal); frequency rows are untouched.
pub fn hflip<T: Scalar>(img: &SpectrogramImage<T>) -> SpectrogramImage<T> {
    let w = img.width();
    SpectrogramImage::from_fn(w, img.height(), |r, c| img.get(r, w - 1 - c))
}

/// `pixel ← min(1, pixel · factor)`.
pub fn brightness<T: Scalar>(img: &SpectrogramImage<T>, factor: f64) -> Result<SpectrogramImage<T>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!("brightness factor {factor} must be positive")));
    }
    let f = T::of(factor);
    Ok(SpectrogramImage::from_fn(img.width(), img.height(), |r, c| {
        (img.get(r, c) * f).min(T::one())
    }))
}

/// `{original, hflip} × {1.0, 0.8, 1.2}`: original ×3 brightness, then flipped ×3.
pub fn augment<T: Scalar>(img: &SpectrogramImage<T>) -> Vec<SpectrogramImage<T>> {
    let flipped = hflip(img);
    let mut out = Vec::with_capacity(6);
    for base in [img, &flipped] {
        for &factor in &BRIGHTNESS_FACTORS {
            if factor == 1.0 {
                out.push(base.clone());
            } else {
                out.push(brightness(base, factor).expect("factors are positive"));
            }
        }
    }
    out
}

/// Row-major flattening of a 154×128 image into 19 712 features.
pub fn flatten<T: Scalar>(img: &SpectrogramImage<T>) -> Result<Vec<T>> {
    if img.width() != INPUT_WIDTH || img.height() != INPUT_HEIGHT {
        return Err(Error::shape(
            format!("{INPUT_WIDTH}x{INPUT_HEIGHT} image"),
            format!("{}x{}", img.width(), img.height()),
        ));
    }
    Ok(img.pixels().to_vec())
}

pub fn reshape<T: Scalar>(features: &[T]) -> Result<SpectrogramImage<T>> {
    if features.len() != FEATURE_DIM {
        return Err(Error::Dimension {
            expected: FEATURE_DIM,
            got: features.len(),
        });
    }
    SpectrogramImage::new(INPUT_WIDTH, INPUT_HEIGHT, features.to_vec())
}

pub fn class_counts(labels: &[RegisterLabel]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Indices into the labelled input, both sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub const MIN_PER_CLASS: usize = 5;

/// Stratified split: each class contributes `round(train_fraction · n_c)` items to train.
pub fn split_train_test(labels: &[RegisterLabel], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let counts = class_counts(labels);
    for label in RegisterLabel::ALL {
        if counts[label.index()] < MIN_PER_CLASS {
            return Err(Error::Stratification {
                label: label.code(),
                count: counts[label.index()],
                min: MIN_PER_CLASS,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for label in RegisterLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        split.train.extend_from_slice(&idx[..n_train]);
        split.test.extend_from_slice(&idx[n_train..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> SpectrogramImage<f64> {
        SpectrogramImage::from_fn(w, h, |r, c| ((r * 31 + c * 7) % 97) as f64 / 96.0)
    }

    #[test]
    fn label_codes() {
        for (i, l) in RegisterLabel::ALL.iter().enumerate() {
            assert_eq!(l.code() as usize, i);
            assert_eq!(RegisterLabel::from_code(i as u8).unwrap(), *l);
        }
        assert!(RegisterLabel::from_code(4).is_err());
    }

    #[test]
    fn standardize_passes_native_size_through() {
        let img = ramp(154, 128);
        assert_eq!(standardize(&img).unwrap(), img);
    }

    #[test]
    fn standardize_wide_image_pads_rows() {
        let img = SpectrogramImage::<f64>::filled(308, 128, 0.5).unwrap();
        let out = standardize(&img).unwrap();
        assert_eq!((out.width(), out.height()), (154, 128));
        for r in 0..128 {
            let inside = (32..96).contains(&r);
            assert!(out.row(r).iter().all(|&p| p == if inside { 0.5 } else { 0.0 }), "row {r}");
        }
    }

    #[test]
    fn standardize_constant_any_size() {
        for (w, h) in [(1, 1), (10, 300), (259, 128), (77, 64), (500, 90)] {
            let out = standardize(&SpectrogramImage::<f64>::filled(w, h, 0.5).unwrap()).unwrap();
            assert!(out.pixels().iter().all(|&p| p == 0.5 || p == 0.0));
            assert!(out.pixels().iter().any(|&p| p == 0.5));
        }
    }

    #[test]
    fn standardize_rejects_empty() {
        assert!(standardize(&SpectrogramImage::<f64>::zeros(0, 5)).is_err());
    }

    #[test]
    fn hflip_maps_columns() {
        let mut px = vec![0.0; 154 * 128];
        px[5 * 154] = 1.0;
        let img = SpectrogramImage::new(154, 128, px).unwrap();
        let f = hflip(&img);
        assert_eq!(f.get(5, 153), 1.0);
        assert_eq!(f.get(5, 0), 0.0);
        let sym = SpectrogramImage::from_fn(9, 4, |r, c| (r as f64 + (c as f64 - 4.0).abs()) / 20.0);
        assert_eq!(hflip(&sym), sym);
    }

    #[test]
    fn brightness_rule() {
        let img = SpectrogramImage::new(2, 1, vec![0.9f64, 0.5]).unwrap();
        assert_eq!(brightness(&img, 1.0).unwrap(), img);
        assert_eq!(brightness(&img, 1.2).unwrap().pixels(), &[1.0, 0.6]);
        assert!((brightness(&img, 0.8).unwrap().get(0, 1) - 0.4).abs() < 1e-15);
        assert!(brightness(&img, 0.0).is_err());
        assert!(brightness(&img, -1.0).is_err());
    }

    #[test]
    fn augment_order() {
        let img = ramp(154, 128);
        let out = augment(&img);
        assert_eq!(out.len(), 6);
        assert_eq!(out[0], img);
        assert_eq!(out[1], brightness(&img, 0.8).unwrap());
        assert_eq!(out[3], hflip(&img));
        assert_eq!(out[5], brightness(&hflip(&img), 1.2).unwrap());
    }

    #[test]
    fn flatten_layout() {
        let img = ramp(154, 128);
        let v = flatten(&img).unwrap();
        assert_eq!(v.len(), 19_712);
        assert_eq!(v[1], img.get(0, 1));
        assert_eq!(v[154], img.get(1, 0));
        assert_eq!(reshape(&v).unwrap(), img);
        assert!(matches!(flatten(&ramp(153, 128)), Err(Error::Shape { .. })));
        assert!(matches!(reshape(&v[1..]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn split_counts_and_determinism() {
        let labels: Vec<RegisterLabel> = (0..400).map(|i| RegisterLabel::ALL[i % 4]).collect();
        let s = split_train_test(&labels, 0.8, 11).unwrap();
        let train_labels: Vec<_> = s.train.iter().map(|&i| labels[i]).collect();
        assert_eq!(class_counts(&train_labels), [80; 4]);
        assert_eq!(s.test.len(), 80);
        assert_eq!(s, split_train_test(&labels, 0.8, 11).unwrap());
        assert_ne!(s, split_train_test(&labels, 0.8, 12).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..400).collect::<Vec<_>>());
    }

    #[test]
    fn split_needs_five_per_class() {
        let mut labels: Vec<RegisterLabel> = (0..40).map(|i| RegisterLabel::ALL[i % 4]).collect();
        labels.retain(|l| *l != RegisterLabel::Head);
        labels.extend([RegisterLabel::Head; 4]);
        assert!(matches!(
            split_train_test(&labels, 0.8, 0),
            Err(Error::Stratification { label: 3, count: 4, .. })
        ));
    }
}
