use super::{NumericsError, Scalar};

/// Dense row-major array.
///
/// `shape.iter().product() == data.len()` always holds; constructors that
/// take external data also reject non-finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize, NumericsError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(NumericsError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NumericsError> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "tensor",
                expected: shape,
                got: vec![data.len()],
            });
        }
        let t = Tensor { shape, data };
        t.ensure_finite("tensor")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, NumericsError> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self, NumericsError> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn vector(data: Vec<T>) -> Result<Self, NumericsError> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Unchecked construction for internal kernels whose output shape is
    /// known by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of the tensor viewed as a matrix over its last axis.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is nonempty")
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> Result<T, NumericsError> {
        if self.data.len() != 1 {
            return Err(NumericsError::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        let len = check_shape(&shape)?;
        if len != self.data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                expected: shape,
                got: self.shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, context: &'static str) -> Result<(), NumericsError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(NumericsError::NonFinite(context))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| U::from_f64_lossy(x.as_f64()))
                .collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    /// Index of the largest entry; the first one wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumericsError> {
        self.same_shape("add", other)?;
        let out = Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        };
        out.ensure_finite("add")?;
        Ok(out)
    }

    pub fn scale(&self, c: T) -> Result<Self, NumericsError> {
        let out = self.map(|x| x * c);
        out.ensure_finite("scale")?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), NumericsError> {
        self.same_shape("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Matrix product of two 2-d tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self, NumericsError> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_into(m, k, n, &self.data, false, &other.data, false, &mut out, T::zero());
        let out = Tensor::from_parts(vec![m, n], out);
        out.ensure_finite("matmul")?;
        Ok(out)
    }

    /// Matrix-vector product `self · v` for a 2-d `self`.
    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>, NumericsError> {
        if self.shape.len() != 2 || self.shape[1] != v.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "matvec",
                expected: self.shape.clone(),
                got: vec![v.len()],
            });
        }
        let k = self.shape[1];
        Ok(self
            .data
            .chunks(k)
            .map(|row| row.iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    pub fn transpose(&self) -> Result<Self, NumericsError> {
        if self.shape.len() != 2 {
            return Err(NumericsError::InvalidShape(self.shape.clone()));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], data))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T, NumericsError> {
        self.same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    fn same_shape(&self, op: &'static str, other: &Self) -> Result<(), NumericsError> {
        if self.shape != other.shape {
            return Err(NumericsError::ShapeMismatch {
                op,
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// `out = a' · b' + beta · out`, where `a'` is `a` (`m x k`) or its
/// transpose, and likewise for `b` (`k x n`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    out: &mut [T],
    beta: T,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths are asserted above and `out` is a distinct mutable slice.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numerically stable softmax of a vector.
pub fn softmax<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::Empty("softmax"));
    }
    v.ensure_finite("softmax input")?;
    let mut data = v.data.clone();
    softmax_in_place(&mut data);
    Ok(Tensor::from_parts(v.shape.clone(), data))
}

pub fn log_softmax<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::Empty("log_softmax"));
    }
    v.ensure_finite("log_softmax input")?;
    let max = v.data.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = v.data.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
    Ok(v.map(|x| x - lse))
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// Floor applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn safe_ln<T: Scalar>(p: T) -> T {
    p.max(T::from_f64_lossy(PROB_FLOOR)).ln()
}
