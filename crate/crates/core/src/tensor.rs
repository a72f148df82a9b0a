//! Dense row-major `f64` tensors with the forward and reverse functions the
//! model is assembled from.
//!
//! There is no autodiff tape. Each op has an explicit backward function that
//! takes the cached forward values and an upstream gradient; the model
//! composes them in reverse order by hand.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Builds a 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension of a 2-D view (1 for vectors).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same("add", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Adds a bias vector to every row.
    pub fn add_row_vector(&mut self, bias: &Tensor) -> Result<()> {
        if bias.len() != self.cols() {
            return Err(Error::Dimension {
                op: "add_row_vector",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let c = self.cols();
        for row in self.data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Accumulates the column sums of `self` into `acc`.
    pub fn accumulate_column_sums(&self, acc: &mut Tensor) -> Result<()> {
        if acc.len() != self.cols() {
            return Err(Error::Dimension {
                op: "column_sums",
                left: self.shape.clone(),
                right: acc.shape.clone(),
            });
        }
        let c = self.cols();
        for row in self.data.chunks(c) {
            for (a, v) in acc.data.iter_mut().zip(row) {
                *a += v;
            }
        }
        Ok(())
    }

    fn check_same(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: vec![],
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns an ordered list of parameters.
///
/// The order returned by `params` and `params_mut` must be identical and
/// stable; optimizer state and checkpoints rely on it.
pub trait Parameterized {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl Parameterized for Vec<Parameter> {
    fn params(&self) -> Vec<&Parameter> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.iter_mut().collect()
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on raw row-major buffers, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product of `a[m x k]` and `b[k x n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix_dims("matmul")?;
    let (k2, n) = b.matrix_dims("matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(m, k, n, 1.0, &a.data, false, &b.data, false, 0.0, &mut out.data);
    Ok(out)
}

/// `a * b^T` for `a[m x k]`, `b[n x k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix_dims("matmul_nt")?;
    let (n, k2) = b.matrix_dims("matmul_nt")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul_nt",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(m, k, n, 1.0, &a.data, false, &b.data, true, 0.0, &mut out.data);
    Ok(out)
}

/// Accumulates `a^T * b` into `acc` for `a[k x m]`, `b[k x n]`, `acc[m x n]`.
pub fn accumulate_matmul_tn(a: &Tensor, b: &Tensor, acc: &mut Tensor) -> Result<()> {
    let (k, m) = a.matrix_dims("matmul_tn")?;
    let (k2, n) = b.matrix_dims("matmul_tn")?;
    if k != k2 || acc.shape != [m, n] {
        return Err(Error::Dimension {
            op: "matmul_tn",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    gemm(m, k, n, 1.0, &a.data, true, &b.data, false, 1.0, &mut acc.data);
    Ok(())
}

/// Reverse of [`matmul`]: returns `(dA, dB) = (dC * B^T, A^T * dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let grad_a = matmul_nt(grad_out, b)?;
    let mut grad_b = Tensor::zeros(b.shape());
    accumulate_matmul_tn(a, grad_out, &mut grad_b)?;
    Ok((grad_a, grad_b))
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v * std_normal_cdf(v)).collect(),
    }
}

pub fn gelu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.check_same("gelu_backward", grad_out)?;
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&v, &g)| g * (std_normal_cdf(v) + v * std_normal_pdf(v)))
            .collect(),
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    if c == 0 {
        return out;
    }
    for row in out.data.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Reverse of [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    y.check_same("softmax_backward", grad_out)?;
    let c = y.cols();
    let mut out = Tensor::zeros(y.shape());
    if c == 0 {
        return Ok(out);
    }
    for ((yr, gr), or) in y
        .data
        .chunks(c)
        .zip(grad_out.data.chunks(c))
        .zip(out.data.chunks_mut(c))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Ok(out)
}

pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;

/// Values kept from a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

/// Per-row normalization followed by `gain * x_hat + bias`.
pub fn layer_norm(x: &Tensor, gain: &Parameter, bias: &Parameter, eps: f64) -> Result<(Tensor, LayerNormCache)> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::Dimension {
            op: "layer_norm",
            left: x.shape.clone(),
            right: gain.value.shape.clone(),
        });
    }
    let mut normalized = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    if d == 0 {
        return Ok((out, LayerNormCache { normalized, inv_std }));
    }
    for (nr, or) in normalized.data.chunks_mut(d).zip(out.data.chunks_mut(d)) {
        let mean = nr.iter().sum::<f64>() / d as f64;
        let var = nr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        inv_std.push(rstd);
        for (j, (n, o)) in nr.iter_mut().zip(or.iter_mut()).enumerate() {
            *n = (*n - mean) * rstd;
            *o = *n * gain.value.data[j] + bias.value.data[j];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Reverse of [`layer_norm`]. Accumulates into `gain.grad` / `bias.grad` and
/// returns the input gradient.
pub fn layer_norm_backward(
    grad_out: &Tensor,
    cache: &LayerNormCache,
    gain: &mut Parameter,
    bias: &mut Parameter,
) -> Result<Tensor> {
    cache.normalized.check_same("layer_norm_backward", grad_out)?;
    let d = grad_out.cols();
    let mut grad_in = Tensor::zeros(grad_out.shape());
    if d == 0 {
        return Ok(grad_in);
    }
    let mut dxhat = vec![0.0; d];
    for (r, ((gr, xr), ir)) in grad_out
        .data
        .chunks(d)
        .zip(cache.normalized.data.chunks(d))
        .zip(grad_in.data.chunks_mut(d))
        .enumerate()
    {
        for j in 0..d {
            gain.grad.data[j] += gr[j] * xr[j];
            bias.grad.data[j] += gr[j];
            dxhat[j] = gr[j] * gain.value.data[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let rstd = cache.inv_std[r];
        for j in 0..d {
            ir[j] = rstd * (dxhat[j] - mean_dxhat - xr[j] * mean_dxhat_xhat);
        }
    }
    Ok(grad_in)
}

/// Scale factors applied by a dropout pass; `None` means identity.
#[derive(Debug, Clone)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn identity() -> Self {
        DropoutMask(None)
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        match &self.0 {
            None => x.clone(),
            Some(scales) => Tensor {
                shape: x.shape.clone(),
                data: x.data.iter().zip(scales).map(|(v, s)| v * s).collect(),
            },
        }
    }

    /// The backward pass of dropout applies the same mask.
    pub fn backward(&self, grad_out: &Tensor) -> Tensor {
        self.apply(grad_out)
    }
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout. Identity (and no RNG consumption) when not training or
/// when `rate == 0`.
pub fn dropout(x: &Tensor, rate: f64, rng: &mut SplitMix64, training: bool) -> Result<(Tensor, DropoutMask)> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let keep = 1.0 / (1.0 - rate);
    let scales: Vec<f64> = (0..x.len())
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect();
    let mask = DropoutMask(Some(scales));
    Ok((mask.apply(x), mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, Selection};

    fn random_tensor(rng: &mut SplitMix64, shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|_| rng.next_gaussian()).collect()).unwrap()
    }

    fn weighted_sum(y: &Tensor, w: &Tensor) -> f64 {
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);

        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(11);
        let a = random_tensor(&mut rng, &[3, 4]);
        let b = random_tensor(&mut rng, &[4, 2]);
        let w = random_tensor(&mut rng, &[3, 2]);
        let mut params = vec![Parameter::new("a", a), Parameter::new("b", b)];
        let (da, db) = matmul_backward(&params[0].value, &params[1].value, &w).unwrap();
        params[0].grad = da;
        params[1].grad = db;
        let report = grad_check(&mut params, 1e-5, Selection::All, |p| {
            weighted_sum(&matmul(&p[0].value, &p[1].value).unwrap(), &w)
        });
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn gelu_reference_values() {
        let x = Tensor::new(vec![3], vec![0.0, 1.0, 10.0]).unwrap();
        let y = gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.841_344_7).abs() < 1e-7);
        assert!((y.data()[2] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_reference_values() {
        let y = softmax_rows(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        assert_eq!(y.data(), &[0.5, 0.5]);

        let y = softmax_rows(&Tensor::from_rows(&[vec![1000.0; 3]]).unwrap());
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let y = softmax_rows(&Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap());
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_reference_values() {
        let gain = Parameter::new("g", Tensor::filled(&[3], 1.0));
        let bias = Parameter::new("b", Tensor::zeros(&[3]));
        let x = Tensor::from_rows(&[vec![5.0, 5.0, 5.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let (y, _) = layer_norm(&x, &gain, &bias, DEFAULT_LAYER_NORM_EPS).unwrap();
        assert!(y.row(0).iter().all(|v| *v == 0.0));
        let expected = [-1.2247, 0.0, 1.2247];
        for (v, e) in y.row(1).iter().zip(expected) {
            assert!((v - e).abs() < 1e-3);
        }
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(5);
        let x = random_tensor(&mut rng, &[2, 4]);
        let w = random_tensor(&mut rng, &[2, 4]);
        let gain = Tensor::new(vec![4], (0..4).map(|_| 1.0 + 0.3 * rng.next_gaussian()).collect()).unwrap();
        let bias = random_tensor(&mut rng, &[4]);
        let mut params = vec![
            Parameter::new("x", x),
            Parameter::new("gain", gain),
            Parameter::new("bias", bias),
        ];
        let (_, cache) = layer_norm(&params[0].value, &params[1], &params[2], 1e-5).unwrap();
        let (head, tail) = params.split_at_mut(1);
        let (g, b) = tail.split_at_mut(1);
        head[0].grad = layer_norm_backward(&w, &cache, &mut g[0], &mut b[0]).unwrap();
        let report = grad_check(&mut params, 1e-5, Selection::All, |p| {
            let (y, _) = layer_norm(&p[0].value, &p[1], &p[2], 1e-5).unwrap();
            weighted_sum(&y, &w)
        });
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn dropout_modes() {
        let mut rng = SplitMix64::new(1);
        let x = Tensor::filled(&[100_000], 1.0);
        let (y, _) = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
        let (y, _) = dropout(&x, 0.5, &mut rng, false).unwrap();
        assert_eq!(y, x);
        let (y, mask) = dropout(&x, 0.5, &mut rng, true).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert_eq!(mask.backward(&x), y);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, false).is_err());
    }

    #[test]
    fn unary_ops_gradients_match_finite_differences_across_seeds() {
        for seed in 0..20 {
            let mut rng = SplitMix64::new(100 + seed);
            let x = random_tensor(&mut rng, &[3, 5]);
            let w = random_tensor(&mut rng, &[3, 5]);

            let mut params = vec![Parameter::new("x", x.clone())];
            params[0].grad = gelu_backward(&x, &w).unwrap();
            let r = grad_check(&mut params, 1e-5, Selection::All, |p| {
                weighted_sum(&gelu(&p[0].value), &w)
            });
            assert!(r.max_rel_error < 1e-4, "gelu seed {seed}: {r:?}");

            let mut params = vec![Parameter::new("x", x.clone())];
            params[0].grad = softmax_rows_backward(&softmax_rows(&x), &w).unwrap();
            let r = grad_check(&mut params, 1e-5, Selection::All, |p| {
                weighted_sum(&softmax_rows(&p[0].value), &w)
            });
            assert!(r.max_rel_error < 1e-4, "softmax seed {seed}: {r:?}");

            // dropout with a frozen mask is linear
            let (_, mask) = dropout(&x, 0.3, &mut rng.clone(), true).unwrap();
            let mut params = vec![Parameter::new("x", x.clone())];
            params[0].grad = mask.backward(&w);
            let r = grad_check(&mut params, 1e-5, Selection::All, |p| {
                weighted_sum(&mask.apply(&p[0].value), &w)
            });
            assert!(r.max_rel_error < 1e-4, "dropout seed {seed}: {r:?}");
        }
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in proptest::collection::vec(
            proptest::collection::vec(-50.0f64..50.0, 1..8), 1..6)) {
            let width = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(width, 0.0); r }).collect();
            let y = softmax_rows(&Tensor::from_rows(&rows).unwrap());
            for r in 0..y.rows() {
                let s: f64 = y.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn layer_norm_rows_are_standardized(data in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let x = Tensor::new(vec![2, 6], data).unwrap();
            let gain = Parameter::new("g", Tensor::filled(&[6], 1.0));
            let bias = Parameter::new("b", Tensor::zeros(&[6]));
            let eps = 1e-5;
            let (y, _) = layer_norm(&x, &gain, &bias, eps).unwrap();
            for r in 0..2 {
                let xr = x.row(r);
                let xm = xr.iter().sum::<f64>() / 6.0;
                let xv = xr.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / 6.0;
                let yr = y.row(r);
                let mean = yr.iter().sum::<f64>() / 6.0;
                let var = yr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var - xv / (xv + eps)).abs() < 1e-9);
            }
        }
    }
}
