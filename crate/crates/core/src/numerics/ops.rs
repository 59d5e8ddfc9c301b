//! Stand-alone forward kernels shared by the tape and by non-recording callers.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Loss-averse s-curve: `c·tanh(z)` for `z < 0`, `tanh(z)` otherwise.
#[inline]
pub fn kinked_tanh_scalar<S: Scalar>(z: S, c: S) -> S {
    let t = z.tanh();
    if z < S::zero() {
        c * t
    } else {
        t
    }
}

/// Derivative of [`kinked_tanh_scalar`] in `z`; the kink at 0 takes the
/// right-branch value 1.
#[inline]
pub fn kinked_tanh_grad<S: Scalar>(z: S, c: S) -> S {
    let t = z.tanh();
    let d = S::one() - t * t;
    if z < S::zero() {
        c * d
    } else {
        d
    }
}

pub fn kinked_tanh<S: Scalar>(z: &Tensor<S>, c: S) -> Tensor<S> {
    z.map(|v| kinked_tanh_scalar(v, c))
}

#[inline]
pub fn kinked_linear_scalar<S: Scalar>(z: S, c: S) -> S {
    if z < S::zero() {
        c * z
    } else {
        z
    }
}

/// `max(z, 0)^rho`.
#[inline]
pub fn power_scalar<S: Scalar>(z: S, rho: S) -> S {
    if z > S::zero() {
        z.powf(rho)
    } else {
        S::zero()
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(scores: &[S]) -> Vec<S> {
    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `−log softmax(scores)[label]`, computed with max-subtraction.
pub fn softmax_nll<S: Scalar>(scores: &[S], label: usize) -> Result<S> {
    if label >= scores.len() {
        return Err(Error::InvalidLabel { label, n: scores.len() });
    }
    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
    let log_total = scores.iter().map(|&s| (s - max).exp()).sum::<S>().ln();
    Ok((log_total - (scores[label] - max)).max(S::zero()))
}

/// Column-wise mean of an `n × k` matrix.
pub fn mean_pool<S: Scalar>(rows: &Tensor<S>) -> Result<Tensor<S>> {
    let n = rows.rows();
    if rows.is_empty() || n == 0 {
        return Err(Error::EmptySet("mean_pool over zero rows"));
    }
    let k = rows.cols();
    let mut out = vec![S::zero(); k];
    for i in 0..n {
        for (o, &v) in out.iter_mut().zip(rows.row(i)) {
            *o = *o + v;
        }
    }
    let inv = S::one() / S::of_usize(n);
    Ok(Tensor::vector(out.into_iter().map(|v| v * inv).collect()))
}

/// `a · b` for `a: [n, k]` and `b: [k, m]` (or `b: [k]`, giving `[n]`).
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, k) = (a.rows(), a.cols());
    let (kb, m) = if b.shape().len() == 1 { (b.len(), 1) } else { (b.rows(), b.cols()) };
    if k != kb {
        return Err(Error::Shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![S::zero(); n * m];
    matmul_into(a.data(), b.data(), &mut out, n, k, m);
    let shape = if b.shape().len() == 1 {
        vec![n]
    } else if a.shape().len() == 1 {
        vec![m]
    } else {
        vec![n, m]
    };
    Tensor::new(shape, out)
}

/// `out += a[n×k] · b[k×m]`.
pub(crate) fn matmul_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinked_tanh_reference_values() {
        assert_eq!(kinked_tanh_scalar(0.0f64, 2.0), 0.0);
        assert!((kinked_tanh_scalar(1.0f64, 2.0) - 0.761594).abs() < 1e-6);
        assert!((kinked_tanh_scalar(-1.0f64, 2.0) + 1.523188).abs() < 1e-6);
    }

    #[test]
    fn kinked_tanh_with_unit_c_is_tanh() {
        for i in -50..=50 {
            let z = i as f64 * 0.1;
            assert_eq!(kinked_tanh_scalar(z, 1.0), z.tanh());
        }
    }

    #[test]
    fn kinked_tanh_range_and_monotonicity() {
        let c = 3.0f64;
        let mut prev = f64::NEG_INFINITY;
        for i in -200..=200 {
            let v = kinked_tanh_scalar(i as f64 * 0.05, c);
            assert!(v > -c && v < 1.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn softmax_nll_closed_forms() {
        assert!((softmax_nll(&[0.0f64, 0.0], 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let expected = (1.0f64 + (-20.0f64).exp()).ln();
        assert!((softmax_nll(&[10.0f64, -10.0], 0).unwrap() - expected).abs() < 1e-20);
        assert!((expected - 2.061e-9).abs() < 1e-12);
        assert_eq!(softmax_nll(&[4.2f64], 0).unwrap(), 0.0);
        assert!(matches!(softmax_nll(&[1.0f64], 1), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn softmax_nll_shift_invariant() {
        let s = [0.3f64, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = s.iter().map(|v| v + 123.4).collect();
        for label in 0..s.len() {
            let a = softmax_nll(&s, label).unwrap();
            let b = softmax_nll(&shifted, label).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_pool_examples() {
        let m = Tensor::from_rows(&[vec![1.0f64, 3.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(mean_pool(&m).unwrap().data(), &[2.0, 4.0]);
        let single = Tensor::from_rows(&[vec![7.0f64, -1.0]]).unwrap();
        assert_eq!(mean_pool(&single).unwrap().data(), &[7.0, -1.0]);
        let empty = Tensor::<f64>::matrix(0, 2, vec![]).unwrap();
        assert!(matches!(mean_pool(&empty), Err(Error::EmptySet(_))));
    }

    #[test]
    fn mean_pool_reversal() {
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let mut rev = rows.clone();
        rev.reverse();
        let a = mean_pool(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let b = mean_pool(&Tensor::from_rows(&rev).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
