//! Floating-point element type shared by every numeric module.
//!
//! Training runs in `f32`; gradient checks and oracles run in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    fn as_f32(self) -> f32 {
        self.to_f32().expect("finite scalar")
    }

    /// Name used in checkpoint manifests.
    const DTYPE: &'static str;

    /// `c += a·b` for an `m×k` by `k×n` product with arbitrary strides
    /// (row stride, column stride) on `a` and `b`; `c` is row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_strides: (isize, isize), b: &[Self], b_strides: (isize, isize), c: &mut [Self]);
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize)) {
    if rows > 0 && cols > 0 {
        let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
        assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn gemm(m: usize, k: usize, n: usize, a: &[f32], sa: (isize, isize), b: &[f32], sb: (isize, isize), c: &mut [f32]) {
        check_extent(a.len(), m, k, sa);
        check_extent(b.len(), k, n, sb);
        assert_eq!(c.len(), m * n);
        // SAFETY: operand extents checked above; c is a dense m×n buffer.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, 1.0, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (isize, isize), b: &[f64], sb: (isize, isize), c: &mut [f64]) {
        check_extent(a.len(), m, k, sa);
        check_extent(b.len(), k, n, sb);
        assert_eq!(c.len(), m * n);
        // SAFETY: operand extents checked above; c is a dense m×n buffer.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, 1.0, c.as_mut_ptr(), n as isize, 1);
        }
    }
}
