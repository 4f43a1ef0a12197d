use super::AutodiffError;

/// Large negative constant added to the logits of illegal actions.
///
/// `exp(MASK_PENALTY)` underflows to exactly zero, so masked entries carry
/// probability 0 while the log-softmax stays a single smooth primitive.
pub const MASK_PENALTY: f64 = -1e9;

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "Tensor::new",
                expected: shape,
                found: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
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

    /// Row count of a 2-D tensor (1-D tensors are a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on raw row-major buffers.
///
/// `a` is logically `m x k`, `b` is `k x n`; the transpose flags select
/// whether the stored buffer holds the matrix or its transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
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
    let (rsa, csa) = if a_transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

/// `x W + b` for `x: [rows, in]`, `W: [in, out]`, `b: [out]`.
pub(crate) fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
    let rows = x.rows();
    let inputs = x.cols();
    if w.shape.len() != 2 || w.shape[0] != inputs || b.len() != w.shape[1] {
        return Err(AutodiffError::ShapeMismatch {
            op: "affine",
            expected: vec![inputs, b.len()],
            found: w.shape.clone(),
        });
    }
    let out = w.shape[1];
    let mut data = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        data.extend_from_slice(&b.data);
    }
    gemm(rows, inputs, out, &x.data, false, &w.data, false, 1.0, &mut data);
    Ok(Tensor {
        shape: vec![rows, out],
        data,
    })
}

pub(crate) fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect(),
    }
}

/// Row-wise log-softmax after pushing illegal entries down by [`MASK_PENALTY`].
pub(crate) fn masked_log_softmax(x: &Tensor, mask: &[bool]) -> Result<Tensor, AutodiffError> {
    if mask.len() != x.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "masked_log_softmax",
            expected: x.shape.clone(),
            found: vec![mask.len()],
        });
    }
    let cols = x.cols();
    let mut data = Vec::with_capacity(x.len());
    if cols == 0 {
        return Ok(Tensor {
            shape: x.shape.clone(),
            data,
        });
    }
    for (row, row_mask) in x.data.chunks(cols).zip(mask.chunks(cols)) {
        let start = data.len();
        data.extend(
            row.iter()
                .zip(row_mask)
                .map(|(&v, &legal)| if legal { v } else { v + MASK_PENALTY }),
        );
        let shifted = &mut data[start..];
        let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + shifted.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        shifted.iter_mut().for_each(|v| *v -= log_norm);
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                naive[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &a, false, &b, false, 0.0, &mut c);
        for (x, y) in c.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }
        // store a^T and b^T explicitly, then ask gemm to undo the transposes
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, &at, true, &bt, true, 0.0, &mut c2);
        for (x, y) in c2.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_entries_get_exactly_zero_probability() {
        let x = Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 5.0, 5.0, 5.0]).unwrap();
        let mask = [true, false, true, false, false, true];
        let y = masked_log_softmax(&x, &mask).unwrap();
        for (row, row_mask) in y.data().chunks(3).zip(mask.chunks(3)) {
            let total: f64 = row
                .iter()
                .zip(row_mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| v.exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (v, &m) in row.iter().zip(row_mask) {
                if !m {
                    assert_eq!(v.exp(), 0.0);
                }
            }
        }
        assert_eq!(y.data()[5], 0.0);
    }

    #[test]
    fn softmax_arithmetic() {
        let x = Tensor::matrix(1, 3, vec![std::f64::consts::LN_2, 0.0, 0.0]).unwrap();
        let y = masked_log_softmax(&x, &[true; 3]).unwrap();
        let p: Vec<f64> = y.data().iter().map(|v| v.exp()).collect();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
        assert!((p[2] - 0.25).abs() < 1e-15);
    }
}
