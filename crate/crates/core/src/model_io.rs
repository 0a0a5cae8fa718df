//! Binary model container shared by both classifiers.
//!
//! ```text
//! "AVRA"  version:u16  kind:u8 (1 = SVM, 2 = CNN)  feature_dim:u32  classes:u32
//! SVM: per class  w[feature_dim]:f64  b:f64  A:f64  B:f64
//! CNN: input_height:u32 input_width:u32 kernel:u32 hidden:u32 channels:3×u32
//!      learning_rate:f64 momentum:f64 batch_size:u32 epochs:u32 seed:u64
//!      layers:u32, per layer  kind:u8 (1 = conv, 2 = dense) rank:u32 dims:rank×u32 bias_len:u32
//!      then every weight tensor and bias as f64, in layer order
//! ```
//!
//! Integers and floats are little-endian. Parameters are always stored as `f64`.

use std::path::Path;

use crate::cnn::{CnnConfig, CnnModel, LayerKind, Tensor};
use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::svm::{BinaryHead, Sigmoid, SvmModel};

pub const MAGIC: &[u8; 4] = b"AVRA";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Svm = 1,
    Cnn = 2,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Svm => "svm",
            ModelKind::Cnn => "cnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model<T> {
    Svm(SvmModel<T>),
    Cnn(CnnModel<T>),
}

impl<T: Scalar> Model<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Svm(_) => ModelKind::Svm,
            Model::Cnn(_) => ModelKind::Cnn,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Model::Svm(m) => m.feature_dim(),
            Model::Cnn(m) => m.config().input_height * m.config().input_width,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Model::Svm(m) => m.to_bytes(),
            Model::Cnn(m) => m.to_bytes(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let header = read_header(&mut r)?;
        let model = match header.kind {
            ModelKind::Svm => Model::Svm(read_svm(&mut r, &header)?),
            ModelKind::Cnn => Model::Cnn(read_cnn(&mut r, &header)?),
        };
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads a model and checks that it consumes `feature_dim` inputs.
    pub fn load_expecting(path: impl AsRef<Path>, feature_dim: usize) -> Result<Self> {
        let m = Self::load(path)?;
        if m.feature_dim() != feature_dim {
            return Err(Error::Dimension {
                expected: feature_dim,
                got: m.feature_dim(),
            });
        }
        Ok(m)
    }
}

fn write_header(out: &mut Vec<u8>, kind: ModelKind, feature_dim: usize) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind as u8);
    put_u32(out, feature_dim);
    put_u32(out, NUM_CLASSES);
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_all<T: Scalar>(out: &mut Vec<u8>, vs: &[T]) {
    for &v in vs {
        put_f64(out, v.as_f64());
    }
}

struct Header {
    kind: ModelKind,
    feature_dim: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn scalars<T: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after model body",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn read_header(r: &mut Reader) -> Result<Header> {
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let kind = match r.u8("model kind")? {
        1 => ModelKind::Svm,
        2 => ModelKind::Cnn,
        k => return Err(Error::Format(format!("unknown model kind {k}"))),
    };
    let feature_dim = r.u32("feature_dim")?;
    let classes = r.u32("class count")?;
    if classes != NUM_CLASSES {
        return Err(Error::Format(format!("expected {NUM_CLASSES} classes, file has {classes}")));
    }
    Ok(Header { kind, feature_dim })
}

fn read_svm<T: Scalar>(r: &mut Reader, h: &Header) -> Result<SvmModel<T>> {
    let mut heads = Vec::with_capacity(NUM_CLASSES);
    let mut calibration = Vec::with_capacity(NUM_CLASSES);
    for _ in 0..NUM_CLASSES {
        let weights = r.scalars(h.feature_dim, "weights")?;
        let bias = T::of(r.f64("bias")?);
        heads.push(BinaryHead { weights, bias });
        calibration.push(Sigmoid {
            a: r.f64("sigmoid A")?,
            b: r.f64("sigmoid B")?,
        });
    }
    SvmModel::from_parts(heads, calibration)
}

fn read_cnn<T: Scalar>(r: &mut Reader, h: &Header) -> Result<CnnModel<T>> {
    let input_height = r.u32("input height")?;
    let input_width = r.u32("input width")?;
    let kernel = r.u32("kernel")?;
    let hidden = r.u32("hidden width")?;
    let channels = [r.u32("channels")?, r.u32("channels")?, r.u32("channels")?];
    let config = CnnConfig {
        input_height,
        input_width,
        channels,
        kernel,
        hidden,
        learning_rate: r.f64("learning rate")?,
        momentum: r.f64("momentum")?,
        batch_size: r.u32("batch size")?,
        epochs: r.u32("epochs")?,
        seed: r.u64("seed")?,
    };
    config.validate().map_err(|e| Error::Format(e.to_string()))?;
    if input_height * input_width != h.feature_dim {
        return Err(Error::Format(format!(
            "feature_dim {} does not match input {input_height}x{input_width}",
            h.feature_dim
        )));
    }
    let specs = config.layers();
    let count = r.u32("layer count")?;
    if count != specs.len() {
        return Err(Error::Format(format!("expected {} layers, file has {count}", specs.len())));
    }
    for spec in &specs {
        let kind = match r.u8("layer kind")? {
            1 => LayerKind::Conv,
            2 => LayerKind::Dense,
            k => return Err(Error::Format(format!("unknown layer kind {k}"))),
        };
        let rank = r.u32("layer rank")?;
        let dims = (0..rank).map(|_| r.u32("layer dims")).collect::<Result<Vec<_>>>()?;
        let bias_len = r.u32("bias length")?;
        if kind != spec.kind || dims != spec.weight_shape || bias_len != spec.bias_len {
            return Err(Error::Format(format!(
                "layer manifest {kind:?} {dims:?}/{bias_len} disagrees with the configuration"
            )));
        }
    }
    let mut params = Vec::with_capacity(2 * specs.len());
    for spec in &specs {
        let n = spec.weight_shape.iter().product();
        params.push(Tensor::new(spec.weight_shape.clone(), r.scalars(n, "layer weights")?)?);
        params.push(Tensor::new(vec![spec.bias_len], r.scalars(spec.bias_len, "layer bias")?)?);
    }
    CnnModel::from_parameters(config, params)
}

fn expect_kind<T>(m: Model<T>, want: ModelKind) -> Result<Model<T>> {
    let got = match &m {
        Model::Svm(_) => ModelKind::Svm,
        Model::Cnn(_) => ModelKind::Cnn,
    };
    if got != want {
        return Err(Error::Format(format!(
            "expected a {} model, file holds a {} model",
            want.name(),
            got.name()
        )));
    }
    Ok(m)
}

impl<T: Scalar> SvmModel<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.feature_dim();
        let mut out = Vec::with_capacity(15 + NUM_CLASSES * (dim + 3) * 8);
        write_header(&mut out, ModelKind::Svm, dim);
        for (head, s) in self.heads().iter().zip(self.calibration()) {
            put_all(&mut out, &head.weights);
            put_f64(&mut out, head.bias.as_f64());
            put_f64(&mut out, s.a);
            put_f64(&mut out, s.b);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match expect_kind(Model::from_bytes(bytes)?, ModelKind::Svm)? {
            Model::Svm(m) => Ok(m),
            Model::Cnn(_) => unreachable!(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl<T: Scalar> CnnModel<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.config();
        let mut out = Vec::new();
        write_header(&mut out, ModelKind::Cnn, c.input_height * c.input_width);
        for v in [c.input_height, c.input_width, c.kernel, c.hidden] {
            put_u32(&mut out, v);
        }
        for &ch in &c.channels {
            put_u32(&mut out, ch);
        }
        put_f64(&mut out, c.learning_rate);
        put_f64(&mut out, c.momentum);
        put_u32(&mut out, c.batch_size);
        put_u32(&mut out, c.epochs);
        out.extend_from_slice(&c.seed.to_le_bytes());
        let specs = c.layers();
        put_u32(&mut out, specs.len());
        for spec in &specs {
            out.push(match spec.kind {
                LayerKind::Conv => 1,
                LayerKind::Dense => 2,
            });
            put_u32(&mut out, spec.weight_shape.len());
            for &d in &spec.weight_shape {
                put_u32(&mut out, d);
            }
            put_u32(&mut out, spec.bias_len);
        }
        for p in self.parameters() {
            put_all(&mut out, p.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match expect_kind(Model::from_bytes(bytes)?, ModelKind::Cnn)? {
            Model::Cnn(m) => Ok(m),
            Model::Svm(_) => unreachable!(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn svm(dim: usize) -> SvmModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let heads = (0..4)
            .map(|_| BinaryHead {
                weights: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bias: rng.random_range(-1.0..1.0),
            })
            .collect();
        let cal = (0..4).map(|i| Sigmoid { a: -1.5 - i as f64, b: 0.1 * i as f64 }).collect();
        SvmModel::from_parts(heads, cal).unwrap()
    }

    fn cnn() -> CnnModel<f64> {
        let cfg = CnnConfig {
            input_height: 8,
            input_width: 16,
            channels: [2, 3, 2],
            hidden: 5,
            seed: 9,
            ..CnnConfig::default()
        };
        CnnModel::new(cfg).unwrap()
    }

    #[test]
    fn svm_round_trip_is_bit_exact() {
        let m = svm(10);
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 15 + 4 * 13 * 8);
        let back = SvmModel::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn cnn_round_trip_is_bit_exact() {
        let m = cnn();
        let bytes = m.to_bytes();
        let back = CnnModel::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let bytes = svm(3).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Model::<f64>::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Model::<f64>::from_bytes(&bad), Err(Error::Format(_))));
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(matches!(Model::<f64>::from_bytes(&bytes[..cut]), Err(Error::Format(_))));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Model::<f64>::from_bytes(&long), Err(Error::Format(_))));
        assert!(matches!(CnnModel::<f64>::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn dimension_is_checked_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.avra");
        svm(7).save(&path).unwrap();
        assert!(matches!(
            Model::<f64>::load_expecting(&path, 19_712),
            Err(Error::Dimension { expected: 19_712, got: 7 })
        ));
        assert_eq!(Model::<f64>::load_expecting(&path, 7).unwrap().kind(), ModelKind::Svm);
    }
}
