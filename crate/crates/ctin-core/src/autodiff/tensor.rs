//! Dense row-major `f64` arrays of rank 0..=3.
//!
//! Rank conventions used across the crate: rank-2 arrays are `(time, channel)`,
//! rank-3 arrays are `(batch-or-head, time, channel)`. The last axis is always
//! contiguous.

use alloc::vec;
use alloc::vec::Vec;

/// Dense real array with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Zero-filled tensor. Panics on rank > 3.
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.len() <= 3, "rank {} > 3 unsupported", shape.len());
        let n = shape.iter().product::<usize>();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    /// Constant-filled tensor.
    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// Build from raw data; `data.len()` must match the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert!(shape.len() <= 3, "rank {} > 3 unsupported", shape.len());
        let n: usize = shape.iter().product();
        assert_eq!(data.len(), n, "shape {:?} needs {} values, got {}", shape, n, data.len());
        Self { shape: shape.to_vec(), data }
    }

    /// Convenience rank-2 constructor from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { shape: vec![r, c], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Value of a rank-0 tensor.
    pub fn scalar_value(&self) -> f64 {
        assert!(self.rank() == 0, "scalar_value on shape {:?}", self.shape);
        self.data[0]
    }

    /// Rank-2 element accessor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Reinterpret with a new shape of the same length.
    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.data.len(), "reshape {:?} -> {:?}", self.shape, shape);
        self.shape = shape.to_vec();
        self
    }

    /// Elementwise accumulate: `self += other` (shapes must match).
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Scale every element in place.
    pub fn scale_assign(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// Sum of squares of all elements.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Random tensor with entries uniform in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut crate::rng::DetRng) -> Self {
        let mut t = Self::zeros(shape);
        for x in t.data.iter_mut() {
            *x = crate::rng::uniform(rng, -bound, bound);
        }
        t
    }
}

// ---------------------------------------------------------------------------
// Raw matrix kernels shared by forward ops and backward rules. All accumulate
// into `out` (callers zero-fill when needed).
// ---------------------------------------------------------------------------

/// `out += a · b` with `a: (m,k)`, `b: (k,n)`, `out: (m,n)`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[l * n..(l + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// `out += a · bᵀ` with `a: (m,k)`, `b: (n,k)`, `out: (m,n)`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            *o += s;
        }
    }
}

/// `out += aᵀ · b` with `a: (k,m)`, `b: (k,n)`, `out: (m,n)`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree_with_naive() {
        let mut rng = crate::rng::root(11);
        let (m, k, n) = (5, 4, 3);
        let a = Tensor::uniform(&[m, k], 1.0, &mut rng);
        let b = Tensor::uniform(&[k, n], 1.0, &mut rng);

        let mut c = vec![0.0; m * n];
        gemm_nn(a.data(), b.data(), &mut c, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|l| a.at2(i, l) * b.at2(l, j)).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }

        // a · bᵀ via gemm_nt equals explicitly transposing b.
        let bt: Vec<f64> = {
            let mut t = vec![0.0; k * n];
            for l in 0..k {
                for j in 0..n {
                    t[j * k + l] = b.at2(l, j);
                }
            }
            t
        };
        let mut c2 = vec![0.0; m * n];
        gemm_nt(a.data(), &bt, &mut c2, m, k, n);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ · b via gemm_tn equals explicitly transposing a.
        let at: Vec<f64> = {
            let mut t = vec![0.0; m * k];
            for i in 0..m {
                for l in 0..k {
                    t[l * m + i] = a.at2(i, l);
                }
            }
            t
        };
        let mut c3 = vec![0.0; m * n];
        gemm_tn(&at, b.data(), &mut c3, m, k, n);
        for (x, y) in c.iter().zip(&c3) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
