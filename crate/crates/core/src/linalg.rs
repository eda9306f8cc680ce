//! Small dense kernels shared by the forward and backward passes.

/// Strided read-only matrix view: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows x cols` block starting at `data[0]` with row stride `rs`.
    pub fn rows(data: &'a [f64], rows: usize, cols: usize, rs: usize) -> Self {
        View { data, rows, cols, rs, cs: 1 }
    }

    pub fn t(self) -> Self {
        View { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = beta * c + a * b` where `c` is row-major with row stride `rsc`.
pub(crate) fn gemm(a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], rsc: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    a.check();
    b.check();
    assert!((m - 1) * rsc + n - 1 < c.len(), "output out of bounds");
    if k == 0 {
        for i in 0..m {
            c[i * rsc..i * rsc + n].iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // SAFETY: every index touched through the three pointers was bounds-checked
    // above, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += m * x` for a row-major `out.len() x x.len()` matrix.
#[inline]
pub(crate) fn matvec_add(out: &mut [f64], m: &[f64], x: &[f64]) {
    let cols = x.len();
    let mut rows = m.chunks_exact(cols);
    let mut outs = out.chunks_exact_mut(4);
    for o in &mut outs {
        let (r0, r1, r2, r3) = (rows.next().unwrap(), rows.next().unwrap(), rows.next().unwrap(), rows.next().unwrap());
        let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..cols {
            let xj = x[j];
            a0 += r0[j] * xj;
            a1 += r1[j] * xj;
            a2 += r2[j] * xj;
            a3 += r3[j] * xj;
        }
        o[0] += a0;
        o[1] += a1;
        o[2] += a2;
        o[3] += a3;
    }
    for (o, row) in outs.into_remainder().iter_mut().zip(rows) {
        *o += dot(row, x);
    }
}

/// `out += m^T * y` for a row-major `y.len() x out.len()` matrix.
#[inline]
pub(crate) fn matvec_t_add(out: &mut [f64], m: &[f64], y: &[f64]) {
    let cols = out.len();
    for (&yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if yi != 0.0 {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += yi * w;
            }
        }
    }
}

/// Adds every row of a `rows x cols` row-major block into `out`.
#[inline]
pub(crate) fn add_row_sums(out: &mut [f64], m: &[f64], cols: usize, rs: usize, rows: usize) {
    for t in 0..rows {
        for (o, v) in out.iter_mut().zip(&m[t * rs..t * rs + cols]) {
            *o += v;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// `tanh` through a single exponential; within a few ulps of `libm::tanh`
/// away from zero and exact at zero.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    if x.abs() < 0.03 {
        return libm::tanh(x);
    }
    let e = libm::exp(-2.0 * x.abs());
    let t = (1.0 - e) / (1.0 + e);
    if x < 0.0 {
        -t
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn fast_tanh_agrees() {
        for i in -4000..=4000 {
            let x = i as f64 / 200.0;
            assert!((tanh(x) - libm::tanh(x)).abs() < 4e-16, "{x}");
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(1e3), 1.0);
    }

    #[test]
    fn kernels_match_naive() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![1.0; m * n];
        gemm(View::rows(&a, m, k, k), View::rows(&b, k, n, n), 0.5, &mut c, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = 0.5 + (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f64>();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // transposed view
        let mut ct = vec![0.0; n * m];
        gemm(View::rows(&b, k, n, n).t(), View::rows(&a, m, k, k).t(), 0.0, &mut ct, m);
        for i in 0..m {
            for j in 0..n {
                assert!((ct[j * m + i] - (c[i * n + j] - 0.5)).abs() < 1e-12);
            }
        }
        let x: Vec<f64> = (0..k).map(|i| i as f64 - 2.0).collect();
        let mut y = vec![0.0; m];
        matvec_add(&mut y, &a, &x);
        for i in 0..m {
            assert!((y[i] - dot(&a[i * k..(i + 1) * k], &x)).abs() < 1e-12);
        }
        let mut back = vec![0.0; k];
        matvec_t_add(&mut back, &a, &y);
        for j in 0..k {
            let want: f64 = (0..m).map(|i| a[i * k + j] * y[i]).sum();
            assert!((back[j] - want).abs() < 1e-12);
        }
    }
}
