//! Dense complex linear algebra: the numeric carrier for every other module.
//!
//! Storage is row-major `f64` complex throughout; all operations are pure and
//! values are safe to share across threads once constructed.

use crate::{Error, Result};
use num_complex::Complex64;

/// Dense complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CVector {
    pub data: Vec<Complex64>,
}

impl CVector {
    pub fn zeros(dim: usize) -> Self {
        CVector { data: vec![Complex64::new(0.0, 0.0); dim] }
    }

    pub fn from_vec(data: Vec<Complex64>) -> Self {
        CVector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: Complex64, other: &CVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add(&self, other: &CVector) -> Result<CVector> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!("add: {} vs {}", self.dim(), other.dim())));
        }
        Ok(CVector::from_vec(self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect()))
    }
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub data: Vec<Complex64>,
    pub rows: usize,
    pub cols: usize,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { data: vec![Complex64::new(0.0, 0.0); rows * cols], rows, cols }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        CMatrix { data, rows: r, cols: c }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: Complex64) -> CMatrix {
        CMatrix { data: self.data.iter().map(|z| z * s).collect(), rows: self.rows, cols: self.cols }
    }

    pub fn sub(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape("sub: mismatched matrix shapes".into()));
        }
        Ok(CMatrix {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            rows: self.rows,
            cols: self.cols,
        })
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let orow = other.row(k);
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

/// `W x` with exact complex multiplication semantics.
pub fn cmatvec(w: &CMatrix, x: &CVector) -> Result<CVector> {
    if w.cols != x.dim() {
        return Err(Error::Shape(format!("cmatvec: {}x{} * {}", w.rows, w.cols, x.dim())));
    }
    let mut out = Vec::with_capacity(w.rows);
    for i in 0..w.rows {
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, b) in w.row(i).iter().zip(&x.data) {
            acc += a * b;
        }
        out.push(acc);
    }
    Ok(CVector::from_vec(out))
}

/// `Wᴴ x` without materializing the Hermitian transpose; the workhorse of
/// every linear backward pass.
pub fn cmatvec_hermitian(w: &CMatrix, x: &CVector) -> Result<CVector> {
    if w.rows != x.dim() {
        return Err(Error::Shape(format!("cmatvec_hermitian: ({}x{})ᴴ * {}", w.rows, w.cols, x.dim())));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); w.cols];
    for i in 0..w.rows {
        let xi = x.data[i];
        for (o, a) in out.iter_mut().zip(w.row(i)) {
            *o += a.conj() * xi;
        }
    }
    Ok(CVector::from_vec(out))
}

/// Elementwise complex product.
pub fn hadamard(a: &CVector, b: &CVector) -> Result<CVector> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("hadamard: {} vs {}", a.dim(), b.dim())));
    }
    Ok(CVector::from_vec(a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect()))
}

/// Conjugate transpose.
pub fn hermitian(w: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(w.cols, w.rows);
    for i in 0..w.rows {
        for j in 0..w.cols {
            out.set(j, i, w.get(i, j).conj());
        }
    }
    out
}

/// `‖WᴴW − I‖_F` for square `W`.
pub fn unitarity_error(w: &CMatrix) -> f64 {
    assert_eq!(w.rows, w.cols, "unitarity_error: matrix must be square");
    let n = w.rows;
    let mut acc = 0.0;
    // (WᴴW)_{jk} = Σ_i conj(W_{ij}) W_{ik}
    for j in 0..n {
        for k in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..n {
                s += w.get(i, j).conj() * w.get(i, k);
            }
            if j == k {
                s -= Complex64::new(1.0, 0.0);
            }
            acc += s.norm_sqr();
        }
    }
    acc.sqrt()
}

/// In-place LU inversion with partial pivoting.
fn invert(w: &CMatrix) -> Result<CMatrix> {
    if w.rows != w.cols {
        return Err(Error::Shape("invert: matrix must be square".into()));
    }
    let n = w.rows;
    let mut a = w.data.clone();
    let mut inv = CMatrix::identity(n);
    for col in 0..n {
        // pivot
        let mut piv = col;
        let mut best = a[col * n + col].norm();
        for r in (col + 1)..n {
            let m = a[r * n + col].norm();
            if m > best {
                best = m;
                piv = r;
            }
        }
        if best < 1e-300 {
            return Err(Error::Numerical("invert: singular or rank-deficient matrix".into()));
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
                inv.data.swap(col * n + j, piv * n + j);
            }
        }
        let d = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= d;
            inv.data[col * n + j] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                let t = a[col * n + j] * f;
                a[r * n + j] -= t;
                let t = inv.data[col * n + j] * f;
                inv.data[r * n + j] -= t;
            }
        }
    }
    Ok(inv)
}

/// Nearest unitary matrix in Frobenius norm: the polar factor of `W`,
/// computed by the scaled Newton iteration `X ← ½(γX + (γX)⁻ᴴ)`.
pub fn project_unitary(w: &CMatrix) -> Result<CMatrix> {
    if w.rows != w.cols {
        return Err(Error::Shape("project_unitary: matrix must be square".into()));
    }
    let mut x = w.clone();
    for _ in 0..100 {
        let xinv = invert(&x)?;
        // Frobenius scaling accelerates convergence far from the unit circle.
        let gamma = (xinv.frobenius_norm() / x.frobenius_norm()).sqrt();
        let xinv_h = hermitian(&xinv);
        let mut next = CMatrix::zeros(x.rows, x.cols);
        for (o, (a, b)) in next.data.iter_mut().zip(x.data.iter().zip(&xinv_h.data)) {
            *o = 0.5 * (gamma * a + b / gamma);
        }
        let delta = next.sub(&x)?.frobenius_norm();
        x = next;
        if delta <= 1e-13 * x.frobenius_norm().max(1.0) {
            break;
        }
    }
    let err = unitarity_error(&x);
    if !err.is_finite() || err > 1e-10 {
        return Err(Error::Numerical(format!("project_unitary failed to converge: residual {err:e}")));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
        let data = (0..rows * cols).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        CMatrix { data, rows, cols }
    }

    fn random_vector(rng: &mut impl Rng, dim: usize) -> CVector {
        CVector::from_vec((0..dim).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
    }

    #[test]
    fn cmatvec_identity() {
        let w = CMatrix::identity(2);
        let x = CVector::from_vec(vec![c(1.0, 2.0), c(3.0, -1.0)]);
        let y = cmatvec(&w, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn cmatvec_pure_imaginary() {
        let w = CMatrix::from_rows(vec![vec![c(0.0, 1.0)]]);
        let x = CVector::from_vec(vec![c(1.0, 1.0)]);
        let y = cmatvec(&w, &x).unwrap();
        assert!((y.data[0] - c(-1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn cmatvec_shape_error() {
        let w = CMatrix::identity(2);
        let x = CVector::zeros(3);
        assert!(matches!(cmatvec(&w, &x), Err(Error::Shape(_))));
    }

    /// Independent oracle: the real 2N-dimensional block representation
    /// [A −B; B A] acting on stacked (Re x, Im x).
    fn real_block_matvec(w: &CMatrix, x: &CVector) -> CVector {
        let n = w.rows;
        let m = w.cols;
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for i in 0..n {
            for j in 0..m {
                let a = w.get(i, j).re;
                let b = w.get(i, j).im;
                let xr = x.data[j].re;
                let xi = x.data[j].im;
                re[i] += a * xr - b * xi;
                im[i] += b * xr + a * xi;
            }
        }
        CVector::from_vec(re.into_iter().zip(im).map(|(r, i)| c(r, i)).collect())
    }

    #[test]
    fn cmatvec_matches_real_block_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let w = random_matrix(&mut rng, 5, 5);
            let x = random_vector(&mut rng, 5);
            let y = cmatvec(&w, &x).unwrap();
            let o = real_block_matvec(&w, &x);
            for (a, b) in y.data.iter().zip(&o.data) {
                assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
            }
        }
    }

    #[test]
    fn cmatvec_hermitian_matches_explicit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_matrix(&mut rng, 4, 6);
        let x = random_vector(&mut rng, 4);
        let fast = cmatvec_hermitian(&w, &x).unwrap();
        let slow = cmatvec(&hermitian(&w), &x).unwrap();
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn hadamard_cases() {
        let a = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let ones = CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
        let i = CVector::from_vec(vec![c(0.0, 1.0)]);
        assert_eq!(hadamard(&i, &i).unwrap().data[0], c(-1.0, 0.0));
        let z = CVector::zeros(2);
        assert_eq!(hadamard(&z, &a).unwrap(), z);
        assert!(hadamard(&i, &a).is_err());
    }

    #[test]
    fn hermitian_cases() {
        let sym = CMatrix::from_rows(vec![vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(2.0, 0.0), c(3.0, 0.0)]]);
        assert_eq!(hermitian(&sym), sym);
        let i = CMatrix::from_rows(vec![vec![c(0.0, 1.0)]]);
        assert_eq!(hermitian(&i).data[0], c(0.0, -1.0));
    }

    #[test]
    fn unitarity_error_cases() {
        assert_eq!(unitarity_error(&CMatrix::identity(3)), 0.0);
        let two = CMatrix::from_rows(vec![vec![c(2.0, 0.0)]]);
        assert!((unitarity_error(&two) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn unitarity_error_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_matrix(&mut rng, 6, 6);
        let wh = hermitian(&w);
        let prod = wh.matmul(&w).unwrap();
        let diff = prod.sub(&CMatrix::identity(6)).unwrap();
        assert!((unitarity_error(&w) - diff.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn project_unitary_fixed_point_and_scaling() {
        // DFT-like unitary 2x2
        let s = 1.0 / 2f64.sqrt();
        let u = CMatrix::from_rows(vec![vec![c(s, 0.0), c(s, 0.0)], vec![c(s, 0.0), c(-s, 0.0)]]);
        let p = project_unitary(&u).unwrap();
        assert!(p.sub(&u).unwrap().frobenius_norm() < 1e-12);

        let two_i = CMatrix::identity(3).scale(c(2.0, 0.0));
        let p = project_unitary(&two_i).unwrap();
        assert!(p.sub(&CMatrix::identity(3)).unwrap().frobenius_norm() < 1e-10);
    }

    #[test]
    fn project_unitary_random_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = random_matrix(&mut rng, 8, 8);
        let p = project_unitary(&w).unwrap();
        assert!(unitarity_error(&p) <= 1e-10);
        let pp = project_unitary(&p).unwrap();
        assert!(pp.sub(&p).unwrap().frobenius_norm() <= 1e-10);
    }

    #[test]
    fn project_unitary_rank_deficient_errors() {
        let z = CMatrix::zeros(3, 3);
        assert!(matches!(project_unitary(&z), Err(Error::Numerical(_))));
    }

    #[test]
    fn unitary_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_matrix(&mut rng, 8, 8);
        let u = project_unitary(&w).unwrap();
        let x = random_vector(&mut rng, 8);
        let y = cmatvec(&u, &x).unwrap();
        assert!((y.norm2() - x.norm2()).abs() <= 1e-10 * x.norm2().max(1.0));
    }

    proptest! {
        #[test]
        fn hermitian_involution(seed in 0u64..1000, n in 1usize..6, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_matrix(&mut rng, n, m);
            prop_assert_eq!(hermitian(&hermitian(&w)), w);
        }

        #[test]
        fn cmatvec_block_oracle_prop(seed in 0u64..1000, n in 1usize..7, m in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_matrix(&mut rng, n, m);
            let x = random_vector(&mut rng, m);
            let y = cmatvec(&w, &x).unwrap();
            let o = real_block_matvec(&w, &x);
            for (a, b) in y.data.iter().zip(&o.data) {
                prop_assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
            }
        }
    }
}
