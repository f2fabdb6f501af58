//! Forward kernels over plain tensors.
//!
//! These are the value-level versions of the differentiable ops in
//! [`Graph`](super::Graph); the graph calls into them and adds backward rules.

use crate::error::{Error, Result};

use super::Tensor;

/// `c = alpha * op(a) * op(b) + beta * c` for row-major buffers.
///
/// `op(a)` is `m×k`; when `ta` is set, `a` is stored as `k×m`. Same for `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are exactly m*k, k*n and m*n long and the strides
    // above address only those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product of `a: m×n` and `b: n×p`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    let (n2, p) = b.dims2()?;
    if n != n2 {
        return Err(Error::shape(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * p];
    gemm(m, n, p, 1.0, a.data(), false, b.data(), false, 0.0, &mut out);
    Tensor::matrix(m, p, out)
}

/// Splits a shape around `axis` into (outer, axis_len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len().max(1) {
        return Err(Error::shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    if shape.is_empty() {
        return Ok((1, 1, 1));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Softmax along `axis`, stabilized by subtracting each slice's max.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_extents(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let idx = |j: usize| base + j * inner;
            let max = (0..len)
                .map(|j| src[idx(j)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (src[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[idx(j)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Output of [`layer_norm_forward`]: the result plus what backward needs.
pub(crate) struct LayerNormParts {
    pub out: Tensor,
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<LayerNormParts> {
    let d = x.last_dim();
    if d < 2 {
        return Err(Error::shape("layer_norm needs a last axis of at least 2"));
    }
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::shape(format!(
            "layer_norm affine parameters must have {d} values"
        )));
    }
    let rows = x.outer_len();
    let mut normalized = vec![0.0; x.numel()];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; x.numel()];
    let (g, b) = (gain.data(), bias.data());
    for r in 0..rows {
        let slice = x.row(r);
        let mean = slice.iter().sum::<f64>() / d as f64;
        let var = slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for j in 0..d {
            let xh = (slice[j] - mean) * inv;
            normalized[r * d + j] = xh;
            out[r * d + j] = xh * g[j] + b[j];
        }
    }
    Ok(LayerNormParts {
        out: Tensor::new(x.shape().to_vec(), out)?,
        normalized,
        inv_std,
    })
}

/// Normalizes each slice along the last axis to zero mean and unit variance,
/// then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(layer_norm_forward(x, gain, bias, eps)?.out)
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic function.
pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

// tanh via one exp; libm's tanh is several times slower and GELU sits on
// the hot path.
fn tanh_exp(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        return u.tanh();
    }
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

pub(crate) fn gelu_scalar(v: f64) -> f64 {
    0.5 * v * (1.0 + tanh_exp(GELU_C * (v + GELU_A * v * v * v)))
}

pub(crate) fn gelu_grad_scalar(v: f64) -> f64 {
    let t = tanh_exp(GELU_C * (v + GELU_A * v * v * v));
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
}

/// Tanh-approximated GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    map(x, gelu_scalar)
}

pub(crate) fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Scales each slice along the last axis to unit L2 norm.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let d = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += a[i * n + k] * b[k * p + j];
                }
                out[i * p + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&eye, &b).unwrap().data(), b.data());
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.item(), 11.0);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = matmul(
                &Tensor::matrix(4, 5, a.clone()).unwrap(),
                &Tensor::matrix(5, 3, b.clone()).unwrap(),
            )
            .unwrap();
            for (g, w) in got.data().iter().zip(naive_matmul(&a, &b, 4, 5, 3)) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_bad_inner_dims() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let s = softmax(&Tensor::vector(vec![0.0; 3]).unwrap(), 0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap(), 0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let oracle: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).collect();
        for ((got, want), frozen) in s.data().iter().zip(&oracle).zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 1e-15);
            assert!((got - frozen).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let s = softmax(&Tensor::vector(vec![1000.0, 0.0]).unwrap(), 0).unwrap();
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-15);
        assert!((s.data()[1] + s.data()[3] - 1.0).abs() < 1e-15);
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::full(&[4], 1.0);
        let zero = Tensor::zeros(&[4]);
        let flat = layer_norm(&Tensor::full(&[4], 5.0), &one, &zero, 1e-5).unwrap();
        assert!(flat.data().iter().all(|&v| v == 0.0));

        let one = Tensor::full(&[2], 1.0);
        let zero = Tensor::zeros(&[2]);
        let y = layer_norm(&Tensor::vector(vec![1.0, -1.0]).unwrap(), &one, &zero, 0.0).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 32;
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y = layer_norm(
            &Tensor::vector(x).unwrap(),
            &Tensor::full(&[d], 1.0),
            &Tensor::zeros(&[d]),
            1e-5,
        )
        .unwrap();
        let mean = y.data().iter().sum::<f64>() / d as f64;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn sigmoid_values() {
        let s = sigmoid(&Tensor::vector(vec![0.0, -50.0, 1.0]).unwrap());
        assert_eq!(s.data()[0], 0.5);
        assert!(s.data()[1] > 0.0 && s.data()[1] < 2e-22);
        assert!((s.data()[2] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((s.data()[2] - 0.731058).abs() < 1e-5);
    }
}
