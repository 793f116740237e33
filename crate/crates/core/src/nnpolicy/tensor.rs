use crate::Scalar;

/// Dense row-major tensor of rank 1 or 2.
///
/// Rank-1 tensors behave as single-row matrices in arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_vec(shape, vec![v; shape.iter().product()])
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert!(matches!(shape.len(), 1 | 2), "only rank 1 and 2 tensors are supported");
        assert_eq!(data.len(), shape.iter().product::<usize>(), "data length does not match shape {shape:?}");
        Self { shape: shape.to_vec(), data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Self {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 { 1 } else { self.shape[0] }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| U::of(x.as_f64())).collect() }
    }

    /// `alpha · op(a) · op(b) + beta · c` with optional transposes, writing into `c`.
    pub fn gemm_into(alpha: T, a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool, beta: T, c: &mut Tensor<T>) {
        let (ar, ac) = (a.rows(), a.cols());
        let (br, bc) = (b.rows(), b.cols());
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "inner dimensions differ");
        assert_eq!((c.rows(), c.cols()), (m, n), "output shape mismatch");
        let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
        T::gemm(m, k, n, alpha, &a.data, rsa, csa, &b.data, rsb, csb, beta, &mut c.data, n as isize, 1);
    }

    pub fn matmul(&self, b: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
        let m = if ta { self.cols() } else { self.rows() };
        let n = if tb { b.rows() } else { b.cols() };
        let mut c = Tensor::zeros(&[m, n]);
        Self::gemm_into(T::one(), self, ta, b, tb, T::zero(), &mut c);
        c
    }
}
