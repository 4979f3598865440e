use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// Strided read-only matrix view into a flat buffer.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    data: &'a [T],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Real> View<'a, T> {
    pub fn matrix(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Rows `start..start+len` of this view.
    pub fn row_block(self, start: usize, len: usize) -> Self {
        debug_assert!(start + len <= self.rows);
        Self {
            offset: self.offset + start * self.rs,
            rows: len,
            ..self
        }
    }

    /// Columns `start..start+len` of this view.
    pub fn col_block(self, start: usize, len: usize) -> Self {
        debug_assert!(start + len <= self.cols);
        Self {
            offset: self.offset + start * self.cs,
            cols: len,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// Strided mutable matrix view.
pub(crate) struct ViewMut<'a, T> {
    data: &'a mut [T],
    offset: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Real> ViewMut<'a, T> {
    pub fn matrix(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn row_block(self, start: usize, len: usize) -> Self {
        debug_assert!(start + len <= self.rows);
        Self {
            offset: self.offset + start * self.rs,
            rows: len,
            ..self
        }
    }

    pub fn col_block(self, start: usize, len: usize) -> Self {
        debug_assert!(start + len <= self.cols);
        Self {
            offset: self.offset + start * self.cs,
            cols: len,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = alpha * a * b + beta * c`.
pub(crate) fn gemm<T: Real>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: ViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner extents");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    a.check();
    b.check();
    c.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: every view was bounds-checked above; `c` is an exclusive borrow
    // so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Matrix product of two 2-D tensors with optional transposition.
pub fn matmul<T: Real>(a: &Tensor<T>, ta: Transpose, b: &Tensor<T>, tb: Transpose) -> Result<Tensor<T>> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut av = View::matrix(a.data(), a.shape()[0], a.shape()[1]);
    let mut bv = View::matrix(b.data(), b.shape()[0], b.shape()[1]);
    if ta == Transpose::Yes {
        av = av.t();
    }
    if tb == Transpose::Yes {
        bv = bv.t();
    }
    if av.cols != bv.rows {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, n) = (av.rows, bv.cols);
    let mut out = vec![T::zero(); m * n];
    gemm(T::one(), av, bv, T::zero(), ViewMut::matrix(&mut out, m, n));
    Tensor::new(vec![m, n], out)
}
