use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::NetError;

/// Element type for networks: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    /// Raw GEMM: `C = alpha * A * B + beta * C` with explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n`, `m x n`
    /// matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits the scalar type")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `C (m x n) = op(A) * op(B) (+ C when accumulating)`, all row-major.
///
/// `A` is stored `m x k`, or `k x m` when `trans_a`; likewise `B` is `k x n`
/// or `n x k` when `trans_b`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<S: Scalar>(
    a: &[S],
    trans_a: bool,
    b: &[S],
    trans_b: bool,
    c: &mut [S],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "matmul: A has wrong length");
    assert_eq!(b.len(), k * n, "matmul: B has wrong length");
    assert_eq!(c.len(), m * n, "matmul: C has wrong length");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { S::one() } else { S::zero() };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = S::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: lengths were checked above against the strides chosen here, and
    // `c` is a distinct mutable borrow.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
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

/// Dense row-major tensor; dimension 0 is the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, NetError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NetError::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![S::zero(); n],
        }
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self, NetError> {
        Self::new(
            shape,
            values
                .iter()
                .map(|&v| S::from_f32(v).unwrap_or_else(S::nan))
                .collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Values per batch entry.
    pub fn sample_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, NetError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NetError::ShapeMismatch(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sample(&self, n: usize) -> &[S] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn convert<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| T::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(T::nan))
                .collect(),
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data
            .iter()
            .map(|v| v.to_f32().unwrap_or(f32::NAN))
            .collect()
    }
}
