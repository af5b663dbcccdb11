//! Dense row-major matrices and strided gemm helpers.

use crate::error::{Error, Result};
use crate::real::Real;

/// Row-major `rows × cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn view(&self) -> View<'_, T> {
        View {
            data: &self.data,
            offset: 0,
            rows: self.rows,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    /// Column block `[c0, c0 + width)` as a strided view.
    pub fn cols_view(&self, c0: usize, width: usize) -> View<'_, T> {
        assert!(c0 + width <= self.cols);
        View {
            data: &self.data,
            offset: c0,
            rows: self.rows,
            cols: width,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    /// Row block `[r0, r0 + count)`.
    pub fn rows_view(&self, r0: usize, count: usize) -> View<'_, T> {
        assert!(r0 + count <= self.rows);
        View {
            data: &self.data,
            offset: r0 * self.cols,
            rows: count,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Mat<T>]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::Shape(format!(
                    "cannot stack {} columns onto {cols}",
                    p.cols
                )));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// Copies out rows `[r0, r0 + count)`.
    pub fn slice_rows(&self, r0: usize, count: usize) -> Self {
        Self {
            rows: count,
            cols: self.cols,
            data: self.data[r0 * self.cols..(r0 + count) * self.cols].to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn transpose(&self) -> Self {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Read-only strided view into a buffer.
#[derive(Clone, Copy, Debug)]
pub struct View<'a, T> {
    data: &'a [T],
    offset: usize,
    pub rows: usize,
    pub cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a, T: Real> View<'a, T> {
    /// Row-major `rows × cols` view of a slice.
    pub fn from_slice(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols as isize,
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

    fn check_bounds(&self) {
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        let last = self.offset as isize
            + (self.rows as isize - 1) * self.rs
            + (self.cols as isize - 1) * self.cs;
        assert!(last >= 0 && (last as usize) < self.data.len());
    }
}

/// Mutable strided view.
#[derive(Debug)]
pub struct ViewMut<'a, T> {
    data: &'a mut [T],
    offset: usize,
    pub rows: usize,
    pub cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a, T: Real> ViewMut<'a, T> {
    pub fn of(m: &'a mut Mat<T>) -> Self {
        let (rows, cols) = (m.rows, m.cols);
        Self {
            data: &mut m.data,
            offset: 0,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn cols_of(m: &'a mut Mat<T>, c0: usize, width: usize) -> Self {
        assert!(c0 + width <= m.cols);
        let (rows, cols) = (m.rows, m.cols);
        Self {
            data: &mut m.data,
            offset: c0,
            rows,
            cols: width,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn rows_of(m: &'a mut Mat<T>, r0: usize, count: usize) -> Self {
        assert!(r0 + count <= m.rows);
        let cols = m.cols;
        Self {
            data: &mut m.data,
            offset: r0 * cols,
            rows: count,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    fn check_bounds(&self) {
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        let last = self.offset as isize
            + (self.rows as isize - 1) * self.rs
            + (self.cols as isize - 1) * self.cs;
        assert!(last >= 0 && (last as usize) < self.data.len());
    }
}

/// `c = alpha * a * b + beta * c`.
pub fn gemm<T: Real>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: ViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!(a.rows, c.rows, "output rows differ");
    assert_eq!(b.cols, c.cols, "output cols differ");
    a.check_bounds();
    b.check_bounds();
    c.check_bounds();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: bounds checked above; `c` is a unique borrow so it cannot alias.
    unsafe {
        T::gemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs,
            a.cs,
            b.data.as_ptr().add(b.offset),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs,
            c.cs,
        );
    }
}

/// `a * b` as a new matrix.
pub fn matmul<T: Real>(a: View<'_, T>, b: View<'_, T>) -> Mat<T> {
    let mut out = Mat::zeros(a.rows, b.cols);
    gemm(T::one(), a, b, T::zero(), ViewMut::of(&mut out));
    out
}
