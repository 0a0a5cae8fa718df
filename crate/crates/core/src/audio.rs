//! Audio ingestion: RIFF/WAVE decoding, linear resampling and fixed-length clip slicing.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Canonical working rate. Everything ingested is resampled to this before rendering.
pub const WORKING_SAMPLE_RATE: u32 = 44_100;

const PCM_SCALE: f64 = 32_768.0;

/// Mono samples in `[-1, 1]` plus their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Scalar> AudioBuffer<T> {
    /// Fails on a zero rate or any non-finite sample. Finite samples outside `[-1, 1]` are clamped.
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let mut samples = samples;
        for s in samples.iter_mut() {
            if !s.is_finite() {
                return Err(Error::invalid("non-finite audio sample"));
            }
            *s = s.max(-T::one()).min(T::one());
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    /// Samples `[start_s, end_s)`, rounded to the nearest sample index.
    pub fn segment(&self, start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s >= 0.0 && end_s > start_s) {
            return Err(Error::Selection(format!(
                "invalid range [{start_s}, {end_s})"
            )));
        }
        let dur = self.duration_seconds();
        if end_s > dur + 0.5 / self.sample_rate as f64 {
            return Err(Error::Selection(format!(
                "range end {end_s} s exceeds duration {dur} s"
            )));
        }
        let rate = self.sample_rate as f64;
        let a = ((start_s * rate).round() as usize).min(self.len());
        let b = ((end_s * rate).round() as usize).min(self.len());
        if b <= a {
            return Err(Error::Selection("selection shorter than one sample".into()));
        }
        Ok(Self {
            samples: self.samples[a..b].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Clip duration and the rule for keeping a trailing partial clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub clip_seconds: f64,
    /// Fraction of a full clip the trailing remainder must fill to be kept (zero-padded).
    pub min_fill_fraction: f64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            clip_seconds: 3.0,
            min_fill_fraction: 0.5,
        }
    }
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return Err(Error::Config("clip_seconds must be positive".into()));
        }
        if !(self.min_fill_fraction > 0.0 && self.min_fill_fraction <= 1.0) {
            return Err(Error::Config("min_fill_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, chunk: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Decode {
                chunk: chunk.to_string(),
                reason: format!(
                    "needs {n} bytes at offset {}, only {} remain",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, chunk: &str) -> Result<u32> {
        let b = self.take(4, chunk)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[derive(Debug, Clone, Copy)]
enum Encoding {
    Pcm16,
    Float32,
}

struct Format {
    encoding: Encoding,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
}

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn parse_fmt(body: &[u8]) -> Result<Format> {
    let err = |reason: &str| Error::Decode {
        chunk: "fmt ".into(),
        reason: reason.into(),
    };
    if body.len() < 16 {
        return Err(err("chunk shorter than 16 bytes"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([body[i], body[i + 1]]);
    let mut tag = u16_at(0);
    let channels = u16_at(2);
    let sample_rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
    let block_align = u16_at(12);
    let bits = u16_at(14);
    if tag == WAVE_FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(err("extensible format without sub-format GUID"));
        }
        tag = u16_at(24);
    }
    let encoding = match (tag, bits) {
        (WAVE_FORMAT_PCM, 16) => Encoding::Pcm16,
        (WAVE_FORMAT_IEEE_FLOAT, 32) => Encoding::Float32,
        (WAVE_FORMAT_PCM, b) => {
            return Err(Error::UnsupportedFormat(format!("{b}-bit integer PCM")))
        }
        (WAVE_FORMAT_IEEE_FLOAT, b) => {
            return Err(Error::UnsupportedFormat(format!("{b}-bit float")))
        }
        (0x0006, _) => return Err(Error::UnsupportedFormat("A-law".into())),
        (0x0007, _) => return Err(Error::UnsupportedFormat("mu-law".into())),
        (t, _) => return Err(Error::UnsupportedFormat(format!("format tag {t:#06x}"))),
    };
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedFormat(format!("{channels} channels")));
    }
    if sample_rate == 0 {
        return Err(err("zero sample rate"));
    }
    let bytes_per_sample = match encoding {
        Encoding::Pcm16 => 2,
        Encoding::Float32 => 4,
    };
    if block_align as usize != bytes_per_sample * channels as usize {
        return Err(err("block alignment disagrees with channels and bit depth"));
    }
    Ok(Format {
        encoding,
        channels,
        sample_rate,
        block_align,
    })
}

/// Decodes a RIFF/WAVE byte stream (16-bit PCM or 32-bit float, mono or stereo) to mono.
///
/// Stereo frames are averaged; 16-bit samples are scaled by 1/32768.
pub fn decode_wav<T: Scalar>(bytes: &[u8]) -> Result<AudioBuffer<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let riff = r.take(4, "RIFF")?;
    if riff != b"RIFF" {
        return Err(Error::Decode {
            chunk: "RIFF".into(),
            reason: "missing RIFF magic".into(),
        });
    }
    let _riff_size = r.u32("RIFF")?;
    if r.take(4, "RIFF")? != b"WAVE" {
        return Err(Error::Decode {
            chunk: "RIFF".into(),
            reason: "form type is not WAVE".into(),
        });
    }

    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    while r.remaining() >= 8 && data.is_none() {
        let id = r.take(4, "chunk header")?;
        let name = String::from_utf8_lossy(id).into_owned();
        let size = r.u32(&name)? as usize;
        let body = r.take(size, &name)?;
        match id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        if size % 2 == 1 && r.remaining() > 0 {
            r.pos += 1;
        }
    }

    let format = format.ok_or_else(|| Error::Decode {
        chunk: "fmt ".into(),
        reason: "missing format chunk before data".into(),
    })?;
    let data = data.ok_or_else(|| Error::Decode {
        chunk: "data".into(),
        reason: "missing data chunk".into(),
    })?;
    if data.len() % format.block_align as usize != 0 {
        return Err(Error::Decode {
            chunk: "data".into(),
            reason: "length is not a whole number of frames".into(),
        });
    }

    let channels = format.channels as usize;
    let frames = data.len() / format.block_align as usize;
    let mut samples = Vec::with_capacity(frames);
    let inv_channels = 1.0 / channels as f64;
    for frame in data.chunks_exact(format.block_align as usize) {
        let mut acc = 0.0f64;
        match format.encoding {
            Encoding::Pcm16 => {
                for c in frame.chunks_exact(2) {
                    acc += i16::from_le_bytes([c[0], c[1]]) as f64 / PCM_SCALE;
                }
            }
            Encoding::Float32 => {
                for c in frame.chunks_exact(4) {
                    let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                    if !v.is_finite() {
                        return Err(Error::Decode {
                            chunk: "data".into(),
                            reason: "non-finite float sample".into(),
                        });
                    }
                    acc += (v as f64).clamp(-1.0, 1.0);
                }
            }
        }
        samples.push(T::of(if channels == 1 { acc } else { acc * inv_channels }));
    }
    AudioBuffer::new(samples, format.sample_rate)
}

/// Canonical mono 16-bit PCM WAV.
pub fn encode_wav_pcm16<T: Scalar>(buf: &AudioBuffer<T>) -> Vec<u8> {
    let data_len = buf.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate().to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in buf.samples() {
        let q = (s.as_f64() * PCM_SCALE).round().clamp(-32_768.0, 32_767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Linear interpolation onto `target_rate`; the last input sample is held past the end.
pub fn resample_linear<T: Scalar>(buf: &AudioBuffer<T>, target_rate: u32) -> Result<AudioBuffer<T>> {
    if target_rate == 0 {
        return Err(Error::invalid("target rate must be positive"));
    }
    let source_rate = buf.sample_rate();
    if source_rate == target_rate {
        return Ok(buf.clone());
    }
    let n = buf.len();
    let out_len = (n as f64 * target_rate as f64 / source_rate as f64).round() as usize;
    let step = source_rate as f64 / target_rate as f64;
    let src = buf.samples();
    let out = (0..out_len)
        .map(|i| {
            let t = i as f64 * step;
            let j = t.floor() as usize;
            if j + 1 >= n {
                src[n - 1]
            } else {
                let frac = T::of(t - j as f64);
                src[j] + (src[j + 1] - src[j]) * frac
            }
        })
        .collect();
    Ok(AudioBuffer {
        samples: out,
        sample_rate: target_rate,
    })
}

/// Cuts consecutive non-overlapping clips; keeps a zero-padded trailing remainder when it
/// fills at least `min_fill_fraction` of a clip.
pub fn slice_clips<T: Scalar>(buf: &AudioBuffer<T>, spec: &ClipSpec) -> Result<Vec<AudioBuffer<T>>> {
    spec.validate()?;
    if buf.is_empty() {
        return Err(Error::EmptyInput);
    }
    let clip_len = (spec.clip_seconds * buf.sample_rate() as f64).round() as usize;
    if clip_len == 0 {
        return Err(Error::Config("clip shorter than one sample".into()));
    }
    let mut clips: Vec<AudioBuffer<T>> = buf
        .samples()
        .chunks_exact(clip_len)
        .map(|c| AudioBuffer {
            samples: c.to_vec(),
            sample_rate: buf.sample_rate(),
        })
        .collect();
    let rem = buf.len() % clip_len;
    if rem > 0 && rem as f64 / clip_len as f64 >= spec.min_fill_fraction {
        let mut tail = buf.samples()[buf.len() - rem..].to_vec();
        tail.resize(clip_len, T::zero());
        clips.push(AudioBuffer {
            samples: tail,
            sample_rate: buf.sample_rate(),
        });
    }
    Ok(clips)
}
