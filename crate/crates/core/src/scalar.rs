//! Floating-point scalar abstraction shared by the GP, the tensor core and the policy.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar usable by the numeric modules: `f32` for inference, `f64` for training.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Name written into checkpoint headers.
    const DTYPE: &'static str;
    /// Bytes per element in little-endian storage.
    const BYTES: usize;

    /// `c = alpha * a · b + beta * c` for row-major `a: m×k`, `b: k×n`, `c: m×n`,
    /// with explicit row/column strides so transposed views are free.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

macro_rules! check_gemm_bounds {
    ($m:expr, $k:expr, $n:expr, $a:expr, $rsa:expr, $csa:expr, $b:expr, $rsb:expr, $csb:expr, $c:expr, $rsc:expr, $csc:expr) => {{
        let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
            if rows == 0 || cols == 0 {
                0
            } else {
                (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
            }
        };
        assert!(span($m, $k, $rsa, $csa) as usize <= $a.len());
        assert!(span($k, $n, $rsb, $csb) as usize <= $b.len());
        assert!(span($m, $n, $rsc, $csc) as usize <= $c.len());
    }};
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm_bounds!(m, k, n, a, rsa, csa, b, rsb, csb, c, rsc, csc);
        // SAFETY: strides and extents were bounds-checked against the slices above.
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
                rsc,
                csc,
            )
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm_bounds!(m, k, n, a, rsa, csa, b, rsb, csb, c, rsc, csc);
        // SAFETY: strides and extents were bounds-checked against the slices above.
        unsafe {
            matrixmultiply::sgemm(
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
                rsc,
                csc,
            )
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}
