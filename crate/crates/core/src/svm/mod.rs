//! One-vs-rest linear SVM.
//!
//! Each binary head minimizes
//!
//! ```text
//! ½(‖w‖² + (b/β)²) + Σᵢ Cᵢ · max(0, 1 − yᵢ(w·xᵢ + b))
//! ```
//!
//! by dual coordinate descent with shrinking (Hsieh et al., 2008). The bias rides on an
//! extra constant feature of value `β = bias_scale`; as `β` grows the bias penalty
//! vanishes and the objective approaches the textbook `½‖w‖² + C·Σ hinge`.
//! `Cᵢ = C · weight(class of i)`, with balanced weights `N / (K · N_c)`.

mod platt;

pub use platt::{fit_sigmoid, Sigmoid};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{class_counts, RegisterLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct SvmTrainConfig {
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the spread of projected gradients over a full pass falls below this.
    pub tolerance: f64,
    pub balanced: bool,
    pub seed: u64,
    /// Internal folds used to calibrate when no held-out set is supplied.
    pub calibration_folds: usize,
    /// Value of the constant feature that carries the bias. The bias is penalized as
    /// `(b / bias_scale)²`, so large values leave it effectively unregularized.
    pub bias_scale: f64,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        Self {
            c: 2.5e-6,
            max_epochs: 1000,
            tolerance: 1e-4,
            balanced: true,
            seed: 0,
            calibration_folds: 3,
            bias_scale: 100.0,
        }
    }
}

impl SvmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.bias_scale > 0.0 && self.bias_scale.is_finite()) {
            return Err(Error::Config("bias_scale must be positive".into()));
        }
        if self.calibration_folds < 2 {
            return Err(Error::Config("calibration needs at least 2 folds".into()));
        }
        Ok(())
    }
}

/// `weight_c = N / (K · N_c)` over the `K = counts.len()` classes.
pub fn balanced_class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::invalid("no classes"));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no samples")));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&n| total as f64 / (k * n as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHead<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> BinaryHead<T> {
    pub fn decision(&self, x: &[T]) -> T {
        dot(&self.weights, x) + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub epochs: usize,
    pub converged: bool,
    /// Dual objective `½‖w̃‖² − Σα` at the start and after every pass.
    pub dual_objective: Vec<f64>,
}

/// Primal objective `½(‖w‖² + (b/β)²) + Σ Cᵢ·hinge`.
pub fn primal_objective<T: Scalar, X: AsRef<[T]>>(
    head: &BinaryHead<T>,
    x: &[X],
    positive: &[bool],
    costs: &[f64],
    bias_scale: f64,
) -> f64 {
    let wb = head.bias.as_f64() / bias_scale;
    let reg = 0.5 * (dot(&head.weights, &head.weights).as_f64() + wb * wb);
    let loss: f64 = x
        .iter()
        .zip(positive)
        .zip(costs)
        .map(|((xi, &p), &c)| {
            let y = if p { 1.0 } else { -1.0 };
            c * (1.0 - y * head.decision(xi.as_ref()).as_f64()).max(0.0)
        })
        .sum();
    reg + loss
}

/// Dual coordinate descent for one binary problem with per-sample costs `costs[i] = Cᵢ`.
pub fn solve_binary<T: Scalar, X: AsRef<[T]>>(
    x: &[X],
    positive: &[bool],
    costs: &[f64],
    cfg: &SvmTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(BinaryHead<T>, SolverReport)> {
    cfg.validate()?;
    let n = x.len();
    if positive.len() != n || costs.len() != n {
        return Err(Error::invalid("features, targets and costs differ in length"));
    }
    if !positive.iter().any(|&p| p) || positive.iter().all(|&p| p) {
        return Err(Error::DegenerateTraining(
            "binary problem needs at least one positive and one negative sample".into(),
        ));
    }
    let dim = x[0].as_ref().len();
    if let Some(bad) = x.iter().find(|xi| xi.as_ref().len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.as_ref().len(),
        });
    }
    if let Some(c) = costs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::invalid(format!("sample cost {c} must be positive")));
    }

    let y: Vec<T> = positive.iter().map(|&p| if p { T::one() } else { -T::one() }).collect();
    let upper: Vec<T> = costs.iter().map(|&c| T::of(c)).collect();
    let beta = T::of(cfg.bias_scale);
    // diagonal of Q: ‖xᵢ‖² + β²
    let qd: Vec<T> = x.iter().map(|xi| dot(xi.as_ref(), xi.as_ref()) + beta * beta).collect();

    let mut w = vec![T::zero(); dim];
    // weight on the constant feature; the bias is β·wb
    let mut wb = T::zero();
    let mut alpha = vec![T::zero(); n];
    let mut alpha_sum = T::zero();
    let mut index: Vec<usize> = (0..n).collect();
    let mut active = n;

    let mut pg_max_old = f64::INFINITY;
    let mut pg_min_old = f64::NEG_INFINITY;
    let dual = |w: &[T], wb: T, alpha_sum: T| -> f64 {
        (T::of(0.5) * (dot(w, w) + wb * wb) - alpha_sum).as_f64()
    };
    let mut history = vec![0.0];
    let mut converged = false;
    let mut epochs = 0;

    while epochs < cfg.max_epochs {
        index[..active].shuffle(rng);
        let mut pg_max_new = f64::NEG_INFINITY;
        let mut pg_min_new = f64::INFINITY;

        let mut s = 0;
        while s < active {
            let i = index[s];
            let xi = x[i].as_ref();
            let g = (y[i] * (dot(&w, xi) + beta * wb) - T::one()).as_f64();
            let a = alpha[i];
            let mut pg = 0.0;
            if a == T::zero() {
                if g > pg_max_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g < 0.0 {
                    pg = g;
                }
            } else if a == upper[i] {
                if g < pg_min_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g > 0.0 {
                    pg = g;
                }
            } else {
                pg = g;
            }
            pg_max_new = pg_max_new.max(pg);
            pg_min_new = pg_min_new.min(pg);

            if pg.abs() > 1e-12 {
                let new_a = (a - T::of(g) / qd[i]).max(T::zero()).min(upper[i]);
                let d = (new_a - a) * y[i];
                alpha[i] = new_a;
                alpha_sum += new_a - a;
                axpy(d, xi, &mut w);
                wb += d * beta;
            }
            s += 1;
        }
        epochs += 1;
        history.push(dual(&w, wb, alpha_sum));

        if pg_max_new - pg_min_new <= cfg.tolerance {
            if active == n {
                converged = true;
                break;
            }
            // converged on the shrunken set; re-check everything
            active = n;
            pg_max_old = f64::INFINITY;
            pg_min_old = f64::NEG_INFINITY;
            continue;
        }
        pg_max_old = if pg_max_new <= 0.0 { f64::INFINITY } else { pg_max_new };
        pg_min_old = if pg_min_new >= 0.0 { f64::NEG_INFINITY } else { pg_min_new };
    }

    let b = beta * wb;
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::DegenerateTraining("solver produced non-finite weights".into()));
    }
    Ok((
        BinaryHead { weights: w, bias: b },
        SolverReport {
            epochs,
            converged,
            dual_objective: history,
        },
    ))
}

fn per_sample_costs(labels: &[RegisterLabel], cfg: &SvmTrainConfig) -> Result<Vec<f64>> {
    if !cfg.balanced {
        return Ok(vec![cfg.c; labels.len()]);
    }
    let counts = class_counts(labels);
    let present: Vec<usize> = (0..NUM_CLASSES).filter(|&c| counts[c] > 0).collect();
    let weights = balanced_class_weights(&present.iter().map(|&c| counts[c]).collect::<Vec<_>>())?;
    let mut by_class = [0.0; NUM_CLASSES];
    for (&c, &wt) in present.iter().zip(&weights) {
        by_class[c] = wt;
    }
    Ok(labels.iter().map(|l| cfg.c * by_class[l.index()]).collect())
}

fn head_rng(cfg: &SvmTrainConfig, positive: RegisterLabel) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(positive.code() as u64);
    rng
}

/// Trains the `positive`-vs-rest head. Balanced weights are computed over the classes
/// present in `labels`.
pub fn train_binary<T: Scalar, X: AsRef<[T]>>(
    features: &[X],
    labels: &[RegisterLabel],
    positive: RegisterLabel,
    cfg: &SvmTrainConfig,
) -> Result<(BinaryHead<T>, SolverReport)> {
    if features.len() != labels.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    let targets: Vec<bool> = labels.iter().map(|&l| l == positive).collect();
    let costs = per_sample_costs(labels, cfg)?;
    solve_binary(features, &targets, &costs, cfg, &mut head_rng(cfg, positive))
}

/// Four one-vs-rest heads plus a per-head Platt sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel<T> {
    feature_dim: usize,
    heads: Vec<BinaryHead<T>>,
    calibration: Vec<Sigmoid>,
}

impl<T: Scalar> SvmModel<T> {
    pub fn from_parts(heads: Vec<BinaryHead<T>>, calibration: Vec<Sigmoid>) -> Result<Self> {
        if heads.len() != NUM_CLASSES || calibration.len() != NUM_CLASSES {
            return Err(Error::Model(format!(
                "expected {NUM_CLASSES} heads, got {} heads and {} sigmoids",
                heads.len(),
                calibration.len()
            )));
        }
        let feature_dim = heads[0].weights.len();
        for h in &heads {
            if h.weights.len() != feature_dim {
                return Err(Error::Dimension {
                    expected: feature_dim,
                    got: h.weights.len(),
                });
            }
            if !h.bias.is_finite() || h.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Model("non-finite SVM parameter".into()));
            }
        }
        if calibration.iter().any(|s| !(s.a.is_finite() && s.b.is_finite())) {
            return Err(Error::Model("non-finite calibration parameter".into()));
        }
        Ok(Self {
            feature_dim,
            heads,
            calibration,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn heads(&self) -> &[BinaryHead<T>] {
        &self.heads
    }

    pub fn calibration(&self) -> &[Sigmoid] {
        &self.calibration
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::Dimension {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `score_c = w_c·x + b_c`.
    pub fn decision_values(&self, x: &[T]) -> Result<[T; NUM_CLASSES]> {
        self.check_dim(x)?;
        let mut out = [T::zero(); NUM_CLASSES];
        for (o, h) in out.iter_mut().zip(&self.heads) {
            *o = h.decision(x);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[T]) -> Result<RegisterLabel> {
        Ok(argmax_label(&self.decision_values(x)?))
    }

    /// Per-class sigmoid outputs renormalized to sum to one.
    pub fn predict_proba(&self, x: &[T]) -> Result<[T; NUM_CLASSES]> {
        let scores = self.decision_values(x)?;
        Ok(self.probabilities_from_scores(&scores))
    }

    pub fn probabilities_from_scores(&self, scores: &[T; NUM_CLASSES]) -> [T; NUM_CLASSES] {
        let mut p = [0.0f64; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            p[c] = self.calibration[c].probability(scores[c].as_f64());
        }
        let sum: f64 = p.iter().sum();
        let mut out = [T::zero(); NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            out[c] = T::of(if sum > 0.0 { p[c] / sum } else { 1.0 / NUM_CLASSES as f64 });
        }
        out
    }

    /// Refits every head's sigmoid on held-out decision values.
    pub fn calibrate<X: AsRef<[T]>>(&self, features: &[X], labels: &[RegisterLabel]) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::invalid("features and labels differ in length"));
        }
        let scores = features
            .iter()
            .map(|x| self.decision_values(x.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let calibration = fit_all_sigmoids(&scores, labels)?;
        Ok(Self {
            calibration,
            ..self.clone()
        })
    }
}

fn fit_all_sigmoids<T: Scalar>(scores: &[[T; NUM_CLASSES]], labels: &[RegisterLabel]) -> Result<Vec<Sigmoid>> {
    RegisterLabel::ALL
        .iter()
        .map(|&class| {
            let f: Vec<f64> = scores.iter().map(|s| s[class.index()].as_f64()).collect();
            let t: Vec<bool> = labels.iter().map(|&l| l == class).collect();
            fit_sigmoid(&f, &t).map_err(|e| Error::Calibration(format!("class {class}: {e}")))
        })
        .collect()
}

/// Argmax with ties resolved toward the lowest label code.
pub fn argmax_label<T: Scalar>(scores: &[T; NUM_CLASSES]) -> RegisterLabel {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    RegisterLabel::ALL[best]
}

/// Trains the four heads (concurrently) with default, uncalibrated sigmoids.
pub fn train_uncalibrated<T: Scalar, X: AsRef<[T]> + Sync>(
    features: &[X],
    labels: &[RegisterLabel],
    cfg: &SvmTrainConfig,
) -> Result<SvmModel<T>> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    let counts = class_counts(labels);
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateTraining(format!("class {c} has no samples")));
    }
    let heads: Vec<Result<BinaryHead<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = RegisterLabel::ALL
            .iter()
            .map(|&class| scope.spawn(move || train_binary(features, labels, class, cfg).map(|(h, _)| h)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let heads = heads.into_iter().collect::<Result<Vec<_>>>()?;
    SvmModel::from_parts(heads, vec![Sigmoid::default(); NUM_CLASSES])
}

/// Trains on everything, then calibrates on out-of-fold decision values from
/// `cfg.calibration_folds` stratified internal folds.
pub fn train<T: Scalar, X: AsRef<[T]> + Sync>(
    features: &[X],
    labels: &[RegisterLabel],
    cfg: &SvmTrainConfig,
) -> Result<SvmModel<T>> {
    let model = train_uncalibrated(features, labels, cfg)?;

    let k = cfg.calibration_folds;
    let mut fold_of = vec![0usize; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ca1b);
    for class in RegisterLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (j, &i) in idx.iter().enumerate() {
            fold_of[i] = j % k;
        }
    }
    let mut scores = vec![[T::zero(); NUM_CLASSES]; labels.len()];
    for fold in 0..k {
        let (train_idx, held_idx): (Vec<usize>, Vec<usize>) =
            (0..labels.len()).partition(|&i| fold_of[i] != fold);
        let xs: Vec<&[T]> = train_idx.iter().map(|&i| features[i].as_ref()).collect();
        let ys: Vec<RegisterLabel> = train_idx.iter().map(|&i| labels[i]).collect();
        let sub = train_uncalibrated(&xs, &ys, cfg)?;
        for &i in &held_idx {
            scores[i] = sub.decision_values(features[i].as_ref())?;
        }
    }
    let calibration = fit_all_sigmoids(&scores, labels)?;
    Ok(SvmModel { calibration, ..model })
}
