//! Dense row-major `f64` tensors plus the few numeric primitives
//! (stable softmax, cosine similarity) the rest of the crate builds on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense tensor of 64-bit floats in row-major order.
///
/// Rank is 1 (vectors) or 2 (matrices) everywhere in this crate; the
/// shape is kept generic so parameter handling stays uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(&other.shape)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Uniform random values in `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Sole element of a `[1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// `y = W x` for a `(m, n)` matrix and an `n`-vector.
pub fn matvec(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let n = w.cols();
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(out.len(), w.rows());
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(n)) {
        *o = dot(row, x);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Softmax over a score vector, with max-subtraction so large scores do
/// not overflow.
pub fn softmax_over_positions(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptySequence);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// Cosine similarity in `[-1, 1]`.
///
/// A zero-norm input is a degenerate topic vector; we define the
/// similarity as 0 and warn rather than fail.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine_similarity: length mismatch");
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine_similarity on zero-norm vector, returning 0");
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform_scores() {
        let w = softmax_over_positions(&[0.0, 0.0, 0.0]).unwrap();
        for v in &w {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_scores_no_overflow() {
        let w = softmax_over_positions(&[1000.0, 1000.0]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
        assert!(w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_closed_form() {
        // exp(0) = 1, exp(ln 3) = 3 -> 1/4, 3/4
        let w = softmax_over_positions(&[0.0, 3.0_f64.ln()]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-12);
        assert!((w[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_empty_errors() {
        assert!(matches!(
            softmax_over_positions(&[]),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn cosine_identity() {
        let u = [1.0, 2.0, 3.0];
        assert!((cosine_similarity(&u, &u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn cosine_closed_form() {
        let s = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]);
        assert!((s - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn cosine_zero_norm_is_zero() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(scores in proptest::collection::vec(-50.0f64..50.0, 1..200)) {
            let w = softmax_over_positions(&scores).unwrap();
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|v| *v > 0.0));
        }

        #[test]
        fn softmax_shift_invariant(
            scores in proptest::collection::vec(-20.0f64..20.0, 1..50),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax_over_positions(&scores).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let b = softmax_over_positions(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn cosine_bounded_symmetric(
            u in proptest::collection::vec(-10.0f64..10.0, 2..20),
            v in proptest::collection::vec(-10.0f64..10.0, 2..20),
        ) {
            let n = u.len().min(v.len());
            let (u, v) = (&u[..n], &v[..n]);
            let s = cosine_similarity(u, v);
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((s - cosine_similarity(v, u)).abs() < 1e-12);
        }

        #[test]
        fn cosine_scale_invariant(
            u in proptest::collection::vec(-10.0f64..10.0, 2..10),
            a in 0.1f64..100.0,
            b in 0.1f64..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-6);
            let ua: Vec<f64> = u.iter().map(|x| x * a).collect();
            let ub: Vec<f64> = u.iter().map(|x| x * b).collect();
            let s = cosine_similarity(&ua, &ub);
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
