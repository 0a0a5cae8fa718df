//! Platt sigmoid fitting, `P(y=1 | f) = 1 / (1 + exp(A·f + B))`.
//!
//! Newton's method with backtracking on the regularized negative log-likelihood, using the
//! smoothed targets `(N₊+1)/(N₊+2)` and `1/(N₋+2)` (Lin, Lin & Weng's formulation).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigmoid {
    pub a: f64,
    pub b: f64,
}

impl Default for Sigmoid {
    /// Uncalibrated: `A = −1`, `B = 0`, i.e. a plain logistic of the score.
    fn default() -> Self {
        Self { a: -1.0, b: 0.0 }
    }
}

impl Sigmoid {
    pub fn probability(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        if z >= 0.0 {
            (-z).exp() / (1.0 + (-z).exp())
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// Fits `(A, B)` to decision values `scores` with binary targets `positive`.
pub fn fit_sigmoid(scores: &[f64], positive: &[bool]) -> Result<Sigmoid> {
    if scores.len() != positive.len() {
        return Err(Error::invalid("scores and targets differ in length"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Calibration(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative scores"
        )));
    }
    const MAX_ITER: usize = 100;
    const MIN_STEP: f64 = 1e-10;
    const SIGMA: f64 = 1e-12;
    const EPS: f64 = 1e-5;

    let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo = 1.0 / (n_neg as f64 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();

    let nll = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = nll(a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &ti) in scores.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut moved = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Calibration("sigmoid fit diverged".into()));
    }
    Ok(Sigmoid { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_scores_give_negative_slope() {
        let scores = [-3.0, -2.0, -1.5, -0.5, 0.5, 1.0, 2.0, 3.5];
        let pos = [false, false, false, false, true, true, true, true];
        let s = fit_sigmoid(&scores, &pos).unwrap();
        assert!(s.a < 0.0);
        assert!(s.probability(3.0) > 0.8);
        assert!(s.probability(-3.0) < 0.2);
    }

    #[test]
    fn gradient_vanishes_at_fit() {
        let scores = [-1.0, -0.2, 0.1, 0.4, -0.6, 0.9, 1.3, -0.1];
        let pos = [false, true, false, true, false, true, true, false];
        let s = fit_sigmoid(&scores, &pos).unwrap();
        let n_pos = 4.0;
        let n_neg = 4.0;
        let (hi, lo) = ((n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0));
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&f, &p) in scores.iter().zip(&pos) {
            let t = if p { hi } else { lo };
            let d = t - s.probability(f);
            g1 += f * d;
            g2 += d;
        }
        assert!(g1.abs() < 1e-4 && g2.abs() < 1e-4);
    }

    #[test]
    fn one_sided_is_an_error() {
        assert!(matches!(
            fit_sigmoid(&[1.0, 2.0], &[true, true]),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn probability_is_stable_for_large_arguments() {
        let s = Sigmoid { a: -1.0, b: 0.0 };
        assert_eq!(s.probability(1e4), 1.0);
        assert_eq!(s.probability(-1e4), 0.0);
        assert_eq!(s.probability(0.0), 0.5);
    }
}
