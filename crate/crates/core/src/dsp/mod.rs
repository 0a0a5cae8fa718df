//! Mel-spectrogram rendering: Hann-windowed STFT, HTK mel filterbank, and a gain/range
//! decibel mapping onto `[0, 1]` intensities.

mod fft;

pub use fft::{fft, ifft, FftPlan};

use num_complex::Complex;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::image::SpectrogramImage;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    /// 2048-point frames with a hop of 864 samples: a 3 s clip at 44.1 kHz renders to
    /// exactly 154 columns.
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 864,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::Config(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples under centered padding.
    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub gain_db: f64,
    pub range_db: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            f_min: 0.0,
            f_max: 20_000.0,
            gain_db: 20.0,
            range_db: 80.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels < 2 {
            return Err(Error::Config("n_mels must be at least 2".into()));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 <= f_min < f_max, got {} and {}",
                self.f_min, self.f_max
            )));
        }
        if !self.gain_db.is_finite() {
            return Err(Error::Config("gain_db must be finite".into()));
        }
        if !(self.range_db > 0.0 && self.range_db.is_finite()) {
            return Err(Error::Config("range_db must be positive".into()));
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("equal-length rows", "ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::zero(), T::max)
    }
}

/// Periodic Hann window `w[k] = 0.5·(1 − cos(2πk/n))`.
pub fn hann_window<T: Scalar>(n: usize) -> Result<Vec<T>> {
    if n == 0 {
        return Err(Error::invalid("window length must be at least 1"));
    }
    Ok((0..n)
        .map(|k| {
            T::of(0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()))
        })
        .collect())
}

/// Index into a signal of length `n` under repeated mirror reflection (edge not repeated).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Power spectrogram `|FFT(window ⊙ frame)|²`, one row per frame, `fft_size/2 + 1` columns.
///
/// The signal is reflect-padded by `fft_size/2` on both ends so frame `f` is centered on
/// sample `f·hop`.
pub fn power_spectrogram<T: Scalar>(buf: &AudioBuffer<T>, cfg: &StftConfig) -> Result<Matrix<T>> {
    cfg.validate()?;
    let plan = FftPlan::new(cfg.fft_size)?;
    let window = hann_window::<T>(cfg.fft_size)?;
    power_spectrogram_with(buf.samples(), cfg, &plan, &window)
}

fn power_spectrogram_with<T: Scalar>(
    samples: &[T],
    cfg: &StftConfig,
    plan: &FftPlan<T>,
    window: &[T],
) -> Result<Matrix<T>> {
    let n = samples.len();
    let frames = cfg.frame_count(n);
    let bins = cfg.bins();
    let pad = (cfg.fft_size / 2) as isize;
    let mut out = Matrix::zeros(frames, bins);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    for f in 0..frames {
        let origin = (f * cfg.hop) as isize - pad;
        for (k, slot) in scratch.iter_mut().enumerate() {
            let v = if n == 0 {
                T::zero()
            } else {
                samples[reflect_index(origin + k as isize, n)]
            };
            *slot = Complex::new(v * window[k], T::zero());
        }
        plan.forward(&mut scratch)?;
        for (dst, z) in out.row_mut(f).iter_mut().zip(&scratch[..bins]) {
            *dst = z.norm_sqr();
        }
    }
    Ok(out)
}

/// HTK mel scale `2595·log10(1 + f/700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels × (fft_size/2 + 1)`, each scaled to a peak weight of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank<T> {
    weights: Matrix<T>,
    // nonzero column span per filter, for the sparse product
    spans: Vec<(usize, usize)>,
}

impl<T: Scalar> MelFilterbank<T> {
    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    /// Center frequency in Hz of every filter, lowest band first.
    pub fn center_frequencies(cfg: &MelConfig) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let step = (hi - lo) / (cfg.n_mels + 1) as f64;
        (1..=cfg.n_mels).map(|i| mel_to_hz(lo + step * i as f64)).collect()
    }

    /// `power` is frames × bins; the result is frames × n_mels.
    pub fn apply(&self, power: &Matrix<T>) -> Result<Matrix<T>> {
        if power.cols != self.weights.cols {
            return Err(Error::shape(
                format!("{} frequency bins", self.weights.cols),
                power.cols,
            ));
        }
        let mut out = Matrix::zeros(power.rows, self.weights.rows);
        for f in 0..power.rows {
            let spectrum = power.row(f);
            for (m, &(a, b)) in self.spans.iter().enumerate() {
                let w = &self.weights.row(m)[a..b];
                out.data[f * self.weights.rows + m] = crate::scalar::dot(w, &spectrum[a..b]);
            }
        }
        Ok(out)
    }
}

pub fn mel_filterbank<T: Scalar>(
    cfg: &MelConfig,
    fft_size: usize,
    sample_rate: u32,
) -> Result<MelFilterbank<T>> {
    cfg.validate()?;
    if fft_size < 2 || !fft_size.is_power_of_two() {
        return Err(Error::Config(format!("fft_size {fft_size} is not a power of two")));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if cfg.f_max > nyquist {
        return Err(Error::Config(format!(
            "f_max {} exceeds Nyquist {nyquist}",
            cfg.f_max
        )));
    }
    let bins = fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;

    let mut weights = Matrix::zeros(cfg.n_mels, bins);
    let mut spans = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row: Vec<f64> = (0..bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                let up = (f - left) / (center - left);
                let down = (right - f) / (right - center);
                up.min(down).max(0.0)
            })
            .collect();
        let peak = row.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::Config(format!(
                "mel band {m} ({left:.1}-{right:.1} Hz) contains no FFT bin; reduce n_mels or raise fft_size"
            )));
        }
        let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
        let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        spans.push((first, last + 1));
        for (dst, w) in weights.row_mut(m).iter_mut().zip(&row) {
            *dst = T::of(w / peak);
        }
    }
    Ok(MelFilterbank { weights, spans })
}

/// Maps a frames × n_mels power matrix to image intensities.
///
/// `L = 10·log10(p / p_max)`, `D = clamp(L + gain, −range, 0)`, `I = (D + range) / range`.
/// An all-zero matrix renders black.
pub fn to_decibel_image<T: Scalar>(mel_power: &Matrix<T>, cfg: &MelConfig) -> Result<SpectrogramImage<T>> {
    cfg.validate()?;
    if let Some(p) = mel_power.data.iter().find(|p| !(**p >= T::zero()) || !p.is_finite()) {
        return Err(Error::invalid(format!("mel power cell {p} is negative or non-finite")));
    }
    let (frames, n_mels) = (mel_power.rows, mel_power.cols);
    let p_max = mel_power.max();
    if p_max <= T::zero() {
        return Ok(SpectrogramImage::zeros(frames, n_mels));
    }
    let (gain, range) = (cfg.gain_db, cfg.range_db);
    let p_max = p_max.as_f64();
    Ok(SpectrogramImage::from_fn(frames, n_mels, |r, c| {
        let p = mel_power.get(c, n_mels - 1 - r).as_f64();
        if p <= 0.0 {
            return T::zero();
        }
        let level = 10.0 * (p / p_max).log10();
        let d = (level + gain).clamp(-range, 0.0);
        T::of((d + range) / range)
    }))
}

/// Reusable renderer holding the FFT plan, window and filterbank for one configuration.
#[derive(Debug, Clone)]
pub struct MelRenderer<T> {
    stft: StftConfig,
    mel: MelConfig,
    sample_rate: u32,
    plan: FftPlan<T>,
    window: Vec<T>,
    filterbank: MelFilterbank<T>,
}

impl<T: Scalar> MelRenderer<T> {
    pub fn new(stft: StftConfig, mel: MelConfig, sample_rate: u32) -> Result<Self> {
        stft.validate()?;
        Ok(Self {
            plan: FftPlan::new(stft.fft_size)?,
            window: hann_window(stft.fft_size)?,
            filterbank: mel_filterbank(&mel, stft.fft_size, sample_rate)?,
            stft,
            mel,
            sample_rate,
        })
    }

    pub fn stft(&self) -> &StftConfig {
        &self.stft
    }

    pub fn mel(&self) -> &MelConfig {
        &self.mel
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.filterbank
    }

    /// Power spectrogram followed by the mel projection (frames × n_mels).
    pub fn mel_power(&self, buf: &AudioBuffer<T>) -> Result<Matrix<T>> {
        if buf.sample_rate() != self.sample_rate {
            return Err(Error::invalid(format!(
                "buffer rate {} differs from renderer rate {}",
                buf.sample_rate(),
                self.sample_rate
            )));
        }
        let power = power_spectrogram_with(buf.samples(), &self.stft, &self.plan, &self.window)?;
        self.filterbank.apply(&power)
    }

    pub fn render(&self, buf: &AudioBuffer<T>) -> Result<SpectrogramImage<T>> {
        to_decibel_image(&self.mel_power(buf)?, &self.mel)
    }
}

/// Power spectrogram → mel filterbank → decibel image.
pub fn render_mel_spectrogram<T: Scalar>(
    buf: &AudioBuffer<T>,
    stft: &StftConfig,
    mel: &MelConfig,
) -> Result<SpectrogramImage<T>> {
    MelRenderer::new(*stft, *mel, buf.sample_rate())?.render(buf)
}
