//! Three conv blocks (conv 3×3 → ReLU → max-pool 2×2) followed by two dense layers.
//!
//! Gradients are computed by hand and checked against finite differences in tests.
//! Training is single-threaded mini-batch SGD with momentum, so a fixed seed gives
//! bitwise identical parameters.

mod layers;
mod tensor;

pub use layers::{
    conv2d_backward, conv2d_forward, conv_output_dim, dense_backward, dense_forward, maxpool2d,
    maxpool2d_backward, relu, relu_backward, softmax, softmax_cross_entropy, ConvGrads, DenseGrads,
};
pub use tensor::Tensor;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use layers::{conv2d_backward_impl, cross_entropy_single, relu_in_place, relu_mask};

use crate::dataset::{RegisterLabel, INPUT_HEIGHT, INPUT_WIDTH, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::image::SpectrogramImage;
use crate::scalar::Scalar;
use crate::svm::argmax_label;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub channels: [usize; 3],
    /// Square kernel side; padding is `kernel / 2` so convolutions keep the spatial size.
    pub kernel: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input_height: INPUT_HEIGHT,
            input_width: INPUT_WIDTH,
            channels: [8, 16, 32],
            kernel: 3,
            hidden: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 6,
            seed: 0,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.channels.contains(&0) {
            return Err(Error::Config("batch size, hidden width and channels must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        let (h, w) = self.pooled_dims();
        if h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input {}x{} is too small for three pooling stages",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn pooled_dims(&self) -> (usize, usize) {
        (self.input_height / 8, self.input_width / 8)
    }

    /// Length of the flattened feature map fed to the first dense layer.
    pub fn flat_len(&self) -> usize {
        let (h, w) = self.pooled_dims();
        self.channels[2] * h * w
    }

    /// Layer manifest in declaration order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let k = self.kernel;
        let mut specs = Vec::with_capacity(5);
        let mut c_in = 1;
        for &c in &self.channels {
            specs.push(LayerSpec {
                kind: LayerKind::Conv,
                weight_shape: vec![c, c_in, k, k],
                bias_len: c,
            });
            c_in = c;
        }
        specs.push(LayerSpec {
            kind: LayerKind::Dense,
            weight_shape: vec![self.hidden, self.flat_len()],
            bias_len: self.hidden,
        });
        specs.push(LayerSpec {
            kind: LayerKind::Dense,
            weight_shape: vec![NUM_CLASSES, self.hidden],
            bias_len: NUM_CLASSES,
        });
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub weight_shape: Vec<usize>,
    pub bias_len: usize,
}

/// Parameters are stored as `[weights, bias]` per layer, in [`CnnConfig::layers`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T> {
    config: CnnConfig,
    params: Vec<Tensor<T>>,
}

struct Cache<T> {
    /// Inputs to each convolution.
    conv_in: Vec<Tensor<T>>,
    /// Post-ReLU conv outputs (pooling inputs).
    activ: Vec<Tensor<T>>,
    argmax: Vec<Vec<usize>>,
    flat: Vec<T>,
    hidden: Vec<T>,
    logits: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss_mean: f64,
    /// Extremes over the epoch's mini-batch losses.
    pub train_loss_min: f64,
    pub train_loss_max: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

impl<T: Scalar> CnnModel<T> {
    /// He-normal conv and hidden weights, zero biases and a zero output layer, so the
    /// initial prediction is uniform.
    pub fn new(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let specs = config.layers();
        let last = specs.len() - 1;
        let mut params = Vec::with_capacity(2 * specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let fan_in: usize = spec.weight_shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let weights = if i == last {
                Tensor::zeros(&spec.weight_shape)
            } else {
                Tensor::from_fn(&spec.weight_shape, |_| {
                    T::of(std * rng.sample::<f64, _>(StandardNormal))
                })
            };
            params.push(weights);
            params.push(Tensor::zeros(&[spec.bias_len]));
        }
        Ok(Self { config, params })
    }

    pub fn from_parameters(config: CnnConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.layers();
        if params.len() != 2 * specs.len() {
            return Err(Error::Model(format!(
                "expected {} parameter tensors, got {}",
                2 * specs.len(),
                params.len()
            )));
        }
        for (spec, pair) in specs.iter().zip(params.chunks(2)) {
            if pair[0].shape() != spec.weight_shape.as_slice() || pair[1].shape() != [spec.bias_len] {
                return Err(Error::Model(format!(
                    "parameter shapes {:?}/{:?} do not match layer {:?}",
                    pair[0].shape(),
                    pair[1].shape(),
                    spec
                )));
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = [1, self.config.input_height, self.config.input_width];
        if x.shape() != want {
            return Err(Error::shape(format!("{want:?}"), format!("{:?}", x.shape())));
        }
        Ok(())
    }

    /// Wraps a grayscale image as a `(1, height, width)` tensor.
    pub fn image_tensor(&self, img: &SpectrogramImage<T>) -> Result<Tensor<T>> {
        let t = Tensor::new(vec![1, img.height(), img.width()], img.pixels().to_vec())?;
        self.check_input(&t)?;
        Ok(t)
    }

    fn run(&self, x: &Tensor<T>) -> Result<Cache<T>> {
        self.check_input(x)?;
        let pad = self.config.pad();
        let mut conv_in = Vec::with_capacity(3);
        let mut activ = Vec::with_capacity(3);
        let mut argmax = Vec::with_capacity(3);
        let mut cur = x.clone();
        for l in 0..3 {
            let mut y = conv2d_forward(&cur, &self.params[2 * l], self.params[2 * l + 1].data(), 1, pad)?;
            relu_in_place(y.data_mut());
            let (pooled, arg) = maxpool2d(&y)?;
            conv_in.push(std::mem::replace(&mut cur, pooled));
            activ.push(y);
            argmax.push(arg);
        }
        let flat = cur.into_data();
        let mut hidden = dense_forward(&flat, &self.params[6], self.params[7].data())?;
        relu_in_place(&mut hidden);
        let logits = dense_forward(&hidden, &self.params[8], self.params[9].data())?;
        Ok(Cache {
            conv_in,
            activ,
            argmax,
            flat,
            hidden,
            logits,
        })
    }

    /// Output of the last pooling stage, `(channels[2], H/8, W/8)`.
    pub fn feature_maps(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.run(x)?;
        let (h, w) = self.config.pooled_dims();
        Tensor::new(vec![self.config.channels[2], h, w], c.flat)
    }

    /// Logits for one `(1, H, W)` input.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.run(x)?.logits)
    }

    /// Logits for a `(batch, 1, H, W)` input, as a `(batch, 4)` tensor.
    pub fn forward_batch(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        batch.expect_rank(4, "batch")?;
        let per = batch.shape()[1..].iter().product::<usize>();
        let mut out = Vec::with_capacity(batch.shape()[0] * NUM_CLASSES);
        for chunk in batch.data().chunks(per.max(1)) {
            let x = Tensor::new(batch.shape()[1..].to_vec(), chunk.to_vec())?;
            out.extend(self.forward(&x)?);
        }
        Tensor::new(vec![batch.shape()[0], NUM_CLASSES], out)
    }

    /// Adds this sample's parameter gradients (for upstream logit gradient `g`) into `acc`.
    fn backward(&self, cache: &Cache<T>, g: &[T], acc: &mut [Tensor<T>]) -> Result<()> {
        let d5 = dense_backward(&cache.hidden, &self.params[8], g)?;
        add_into(&mut acc[8], d5.weights.data());
        add_into(&mut acc[9], &d5.bias);
        let mut gh = d5.input;
        relu_mask(&cache.hidden, &mut gh);
        let d4 = dense_backward(&cache.flat, &self.params[6], &gh)?;
        add_into(&mut acc[6], d4.weights.data());
        add_into(&mut acc[7], &d4.bias);

        let (h, w) = self.config.pooled_dims();
        let mut grad = Tensor::new(vec![self.config.channels[2], h, w], d4.input)?;
        let pad = self.config.pad();
        for l in (0..3).rev() {
            let mut ga = maxpool2d_backward(&grad, &cache.argmax[l], cache.activ[l].shape())?;
            relu_mask(cache.activ[l].data(), ga.data_mut());
            let gc = conv2d_backward_impl(&cache.conv_in[l], &self.params[2 * l], &ga, 1, pad, l > 0)?;
            add_into(&mut acc[2 * l], gc.kernel.data());
            add_into(&mut acc[2 * l + 1], &gc.bias);
            if let Some(gi) = gc.input {
                grad = gi;
            }
        }
        Ok(())
    }

    /// Mean cross-entropy over the inputs and its gradient for every parameter tensor.
    pub fn loss_and_gradients(&self, inputs: &[Tensor<T>], labels: &[usize]) -> Result<(T, Vec<Tensor<T>>)> {
        if inputs.len() != labels.len() {
            return Err(Error::invalid("inputs and labels differ in length"));
        }
        if inputs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut total = T::zero();
        for (x, &label) in inputs.iter().zip(labels) {
            let cache = self.run(x)?;
            let (loss, g) = cross_entropy_single(&cache.logits, label)?;
            total += loss;
            self.backward(&cache, &g, &mut grads)?;
        }
        let scale = T::one() / T::of(inputs.len() as f64);
        for g in &mut grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        Ok((total * scale, grads))
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, inputs: &[Tensor<T>], labels: &[usize]) -> Result<T> {
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(Error::invalid("need equally many, nonempty inputs and labels"));
        }
        let mut total = T::zero();
        for (x, &label) in inputs.iter().zip(labels) {
            total += cross_entropy_single(&self.forward(x)?, label)?.0;
        }
        Ok(total / T::of(inputs.len() as f64))
    }

    pub fn predict(&self, img: &SpectrogramImage<T>) -> Result<RegisterLabel> {
        let logits = self.forward(&self.image_tensor(img)?)?;
        Ok(argmax_label(&to_array(&logits)))
    }

    pub fn predict_proba(&self, img: &SpectrogramImage<T>) -> Result<[T; NUM_CLASSES]> {
        let logits = self.forward(&self.image_tensor(img)?)?;
        Ok(to_array(&softmax(&logits)))
    }

    /// Same architecture with a replacement parameter set.
    pub fn with_parameters(&self, params: Vec<Tensor<T>>) -> Result<Self> {
        Self::from_parameters(self.config.clone(), params)
    }
}

fn add_into<T: Scalar>(acc: &mut Tensor<T>, g: &[T]) {
    for (a, &v) in acc.data_mut().iter_mut().zip(g) {
        *a += v;
    }
}

fn to_array<T: Scalar>(v: &[T]) -> [T; NUM_CLASSES] {
    let mut out = [T::zero(); NUM_CLASSES];
    out.copy_from_slice(&v[..NUM_CLASSES]);
    out
}

/// Trains a freshly initialized network for `config.epochs` epochs and reports per-epoch
/// training and validation statistics.
pub fn train<T: Scalar>(
    config: &CnnConfig,
    train_images: &[SpectrogramImage<T>],
    train_labels: &[RegisterLabel],
    val_images: &[SpectrogramImage<T>],
    val_labels: &[RegisterLabel],
) -> Result<(CnnModel<T>, Vec<EpochReport>)> {
    train_with_progress(config, train_images, train_labels, val_images, val_labels, |_| {})
}

/// [`train`] with a callback invoked after each epoch.
pub fn train_with_progress<T: Scalar>(
    config: &CnnConfig,
    train_images: &[SpectrogramImage<T>],
    train_labels: &[RegisterLabel],
    val_images: &[SpectrogramImage<T>],
    val_labels: &[RegisterLabel],
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(CnnModel<T>, Vec<EpochReport>)> {
    if train_images.len() != train_labels.len() || val_images.len() != val_labels.len() {
        return Err(Error::invalid("images and labels differ in length"));
    }
    if train_images.is_empty() || val_images.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut model = CnnModel::new(config.clone())?;
    let xs: Vec<Tensor<T>> = train_images.iter().map(|i| model.image_tensor(i)).collect::<Result<_>>()?;
    let ys: Vec<usize> = train_labels.iter().map(|l| l.index()).collect();
    let vx: Vec<Tensor<T>> = val_images.iter().map(|i| model.image_tensor(i)).collect::<Result<_>>()?;
    let vy: Vec<usize> = val_labels.iter().map(|l| l.index()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let lr = T::of(config.learning_rate);
    let mu = T::of(config.momentum);
    let mut velocity: Vec<Tensor<T>> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut reports = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for batch in order.chunks(config.batch_size) {
            let bx: Vec<Tensor<T>> = batch.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&bx, &by)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "non-finite mini-batch loss".into(),
                });
            }
            sum += loss * batch.len() as f64;
            lo = lo.min(loss);
            hi = hi.max(loss);
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = mu * *vv - lr * gv;
                    *pv += *vv;
                }
            }
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                epoch,
                reason: "non-finite parameters".into(),
            });
        }
        let (val_loss, val_accuracy) = evaluate(&model, &vx, &vy)?;
        let report = EpochReport {
            epoch,
            train_loss_mean: sum / xs.len() as f64,
            train_loss_min: lo,
            train_loss_max: hi,
            val_loss,
            val_accuracy,
        };
        on_epoch(&report);
        reports.push(report);
    }
    Ok((model, reports))
}

fn evaluate<T: Scalar>(model: &CnnModel<T>, xs: &[Tensor<T>], ys: &[usize]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, &y) in xs.iter().zip(ys) {
        let logits = model.forward(x)?;
        loss += cross_entropy_single(&logits, y)?.0.as_f64();
        if argmax_label(&to_array(&logits)).index() == y {
            correct += 1;
        }
    }
    let n = xs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}
