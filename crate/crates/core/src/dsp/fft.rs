//! Iterative radix-2 decimation-in-time FFT.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Precomputed twiddles and bit-reversal permutation for one transform length.
#[derive(Debug, Clone)]
pub struct FftPlan<T> {
    len: usize,
    twiddles: Vec<Complex<T>>,
    bitrev: Vec<usize>,
}

impl<T: Scalar> FftPlan<T> {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::invalid(format!(
                "FFT length {len} is not a power of two"
            )));
        }
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        // Each twiddle is evaluated directly in f64; no recurrence drift.
        let twiddles = (0..len / 2)
            .map(|k| {
                let theta = -2.0 * std::f64::consts::PI * k as f64 / len as f64;
                Complex::new(T::of(theta.cos()), T::of(theta.sin()))
            })
            .collect();
        Ok(Self {
            len,
            twiddles,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, x: &mut [Complex<T>]) -> Result<()> {
        if x.len() != self.len {
            return Err(Error::invalid(format!(
                "buffer length {} does not match plan length {}",
                x.len(),
                self.len
            )));
        }
        for i in 0..self.len {
            let j = self.bitrev[i];
            if i < j {
                x.swap(i, j);
            }
        }
        let mut half = 1;
        while half < self.len {
            let stride = self.len / (2 * half);
            for start in (0..self.len).step_by(2 * half) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = x[start + k];
                    let b = x[start + k + half] * w;
                    x[start + k] = a + b;
                    x[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
        Ok(())
    }

    /// Inverse transform (conjugate, forward, conjugate, divide by N) in place.
    pub fn inverse(&self, x: &mut [Complex<T>]) -> Result<()> {
        x.iter_mut().for_each(|v| *v = v.conj());
        self.forward(x)?;
        let scale = T::one() / T::of(self.len as f64);
        x.iter_mut().for_each(|v| *v = v.conj() * scale);
        Ok(())
    }
}

/// Forward DFT `X[k] = Σ x[n]·exp(−2πi·kn/N)` of a power-of-two-length sequence.
pub fn fft<T: Scalar>(x: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    let plan = FftPlan::new(x.len())?;
    let mut out = x.to_vec();
    plan.forward(&mut out)?;
    Ok(out)
}

pub fn ifft<T: Scalar>(x: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    let plan = FftPlan::new(x.len())?;
    let mut out = x.to_vec();
    plan.inverse(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex<f64> {
        Complex::new(re, 0.0)
    }

    #[test]
    fn impulse_and_constant() {
        let imp = fft(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert!(imp.iter().all(|v| (*v - c(1.0)).norm() < 1e-15));
        let dc = fft(&[c(1.0); 4]).unwrap();
        assert!((dc[0] - c(4.0)).norm() < 1e-15);
        assert!(dc[1..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn length_one_is_identity() {
        let x = [Complex::new(0.3, -0.7)];
        assert_eq!(fft(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(fft(&[c(1.0); 6]), Err(Error::InvalidArgument(_))));
        assert!(matches!(fft::<f64>(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let x: Vec<Complex<f32>> = (0..64).map(|i| Complex::new((i as f32 * 0.3).sin(), 0.0)).collect();
        let back = ifft(&fft(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-5);
        }
    }
}
