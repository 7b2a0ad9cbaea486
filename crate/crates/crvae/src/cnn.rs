//! Complex-valued layers: dense, modReLU, modSigmoid, and the complex GRU,
//! forward and backward.
//!
//! Backward passes use the packed-gradient convention from [`crate::cgrad`]:
//! the gradient flowing along a complex activation `o` is
//! `∂L/∂Re(o) + i·∂L/∂Im(o)`. Under that convention a complex-linear map
//! `o = Wx` backpropagates as `g_W = g_o · conj(x)ᵀ` and `g_x = Wᴴ g_o`,
//! which reduces every complex layer to two real layers without building a
//! general tape.

use crate::ctensor::{cmatvec, cmatvec_hermitian, CMatrix, CVector};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;

/// Gate blend factor of modSigmoid. The reference setting is 0.5.
pub const MOD_SIGMOID_ALPHA: f64 = 0.5;

/// Complex dense layer parameters (`o = Wx + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: CMatrix,
    pub b: CVector,
}

impl DenseParams {
    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        DenseParams { w: CMatrix::zeros(n_out, n_in), b: CVector::zeros(n_out) }
    }

    pub fn init(n_out: usize, n_in: usize, rng: &mut impl Rng) -> Self {
        DenseParams { w: init_glorot_complex(n_in, n_out, rng), b: init_biases(BiasKind::Plain, n_out) }
    }
}

/// Per-unit learnable modReLU offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ModReluParams {
    pub b: Vec<f64>,
}

/// Complex GRU cell parameters. `w` is the candidate-recurrence transition
/// matrix and is the one held unitary during training; `w_r`/`w_z` gate
/// recurrences are left free unless the model is configured to constrain all
/// three.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w: CMatrix,
    pub v: CMatrix,
    pub b: CVector,
    pub w_r: CMatrix,
    pub v_r: CMatrix,
    pub b_r: CVector,
    pub w_z: CMatrix,
    pub v_z: CMatrix,
    pub b_z: CVector,
    pub modrelu_b: Vec<f64>,
}

impl GruParams {
    pub fn zeros(n_h: usize, n_x: usize) -> Self {
        GruParams {
            w: CMatrix::zeros(n_h, n_h),
            v: CMatrix::zeros(n_h, n_x),
            b: CVector::zeros(n_h),
            w_r: CMatrix::zeros(n_h, n_h),
            v_r: CMatrix::zeros(n_h, n_x),
            b_r: CVector::zeros(n_h),
            w_z: CMatrix::zeros(n_h, n_h),
            v_z: CMatrix::zeros(n_h, n_x),
            b_z: CVector::zeros(n_h),
            modrelu_b: vec![0.0; n_h],
        }
    }

    pub fn init(n_h: usize, n_x: usize, rng: &mut impl Rng) -> Self {
        GruParams {
            w: init_glorot_complex(n_h, n_h, rng),
            v: init_glorot_complex(n_x, n_h, rng),
            b: init_biases(BiasKind::Plain, n_h),
            w_r: init_glorot_complex(n_h, n_h, rng),
            v_r: init_glorot_complex(n_x, n_h, rng),
            b_r: init_biases(BiasKind::Gate, n_h),
            w_z: init_glorot_complex(n_h, n_h, rng),
            v_z: init_glorot_complex(n_x, n_h, rng),
            b_z: init_biases(BiasKind::Gate, n_h),
            modrelu_b: vec![0.0; n_h],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows
    }

    pub fn input_dim(&self) -> usize {
        self.v.cols
    }
}

/// GRU hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub h: CVector,
}

impl GruState {
    pub fn zeros(n_h: usize) -> Self {
        GruState { h: CVector::zeros(n_h) }
    }
}

pub fn dense_forward(p: &DenseParams, x: &CVector) -> Result<CVector> {
    let mut o = cmatvec(&p.w, x)?;
    o.axpy(Complex64::new(1.0, 0.0), &p.b);
    Ok(o)
}

/// Backward of `o = Wx + b`. Accumulates into `grads`, returns the input
/// gradient.
pub fn dense_backward(
    p: &DenseParams,
    x: &CVector,
    grad_out: &CVector,
    grads: &mut DenseParams,
) -> Result<CVector> {
    accumulate_outer(&mut grads.w, grad_out, x);
    grads.b.axpy(Complex64::new(1.0, 0.0), grad_out);
    cmatvec_hermitian(&p.w, grad_out)
}

/// `grads_w += g ⊗ conj(x)` — the packed gradient of a complex-linear map.
pub(crate) fn accumulate_outer(grads_w: &mut CMatrix, g: &CVector, x: &CVector) {
    debug_assert_eq!(grads_w.rows, g.dim());
    debug_assert_eq!(grads_w.cols, x.dim());
    for i in 0..g.dim() {
        let gi = g.data[i];
        let row = &mut grads_w.data[i * x.dim()..(i + 1) * x.dim()];
        for (wij, xj) in row.iter_mut().zip(&x.data) {
            *wij += gi * xj.conj();
        }
    }
}

/// modReLU: rescales the modulus by `ReLU(|z|+b)` while preserving phase.
/// Output is 0 where `|z|+b ≤ 0` and exactly 0 at `z = 0`.
pub fn modrelu(z: &CVector, b: &[f64]) -> Result<CVector> {
    if z.dim() != b.len() {
        return Err(Error::Shape(format!("modrelu: {} vs {}", z.dim(), b.len())));
    }
    let out = z
        .data
        .iter()
        .zip(b)
        .map(|(zi, bi)| {
            let r = zi.norm();
            if r == 0.0 || r + bi <= 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                zi * ((r + bi) / r)
            }
        })
        .collect();
    Ok(CVector::from_vec(out))
}

/// Backward of modReLU. Zero (sub)gradient on the clamped region and at the
/// origin. Accumulates the offset gradient into `grad_b`.
pub fn modrelu_backward(z: &CVector, b: &[f64], grad_out: &CVector, grad_b: &mut [f64]) -> CVector {
    debug_assert_eq!(z.dim(), b.len());
    debug_assert_eq!(z.dim(), grad_out.dim());
    let mut grad_in = Vec::with_capacity(z.dim());
    for k in 0..z.dim() {
        let zi = z.data[k];
        let r = zi.norm();
        if r == 0.0 || r + b[k] <= 0.0 {
            grad_in.push(Complex64::new(0.0, 0.0));
            continue;
        }
        let (x, y) = (zi.re, zi.im);
        let g = grad_out.data[k];
        let s = 1.0 + b[k] / r;
        let r3 = r * r * r;
        // Jacobian of ((1+b/r)x, (1+b/r)y) w.r.t. (x, y); symmetric.
        let j11 = s - b[k] * x * x / r3;
        let j12 = -b[k] * x * y / r3;
        let j22 = s - b[k] * y * y / r3;
        grad_in.push(Complex64::new(g.re * j11 + g.im * j12, g.re * j12 + g.im * j22));
        grad_b[k] += (g.re * x + g.im * y) / r;
    }
    CVector::from_vec(grad_in)
}

/// modSigmoid: `σ(α·Re z + (1−α)·Im z)`, a real-valued gate in (0, 1).
pub fn modsigmoid(z: &CVector, alpha: f64) -> Vec<f64> {
    z.data.iter().map(|zi| sigmoid(alpha * zi.re + (1.0 - alpha) * zi.im)).collect()
}

/// Backward of modSigmoid for a real downstream gradient.
pub fn modsigmoid_backward(z: &CVector, alpha: f64, grad_out: &[f64]) -> CVector {
    debug_assert_eq!(z.dim(), grad_out.len());
    let grad = z
        .data
        .iter()
        .zip(grad_out)
        .map(|(zi, g)| {
            let s = sigmoid(alpha * zi.re + (1.0 - alpha) * zi.im);
            let d = g * s * (1.0 - s);
            Complex64::new(d * alpha, d * (1.0 - alpha))
        })
        .collect();
    CVector::from_vec(grad)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bound on the gate pre-activation inside the GRU cell (after the α-blend,
/// before the sigmoid).
pub const GATE_PREACT_CAP: f64 = 15.0;

/// Rational squashing onto (−cap, cap): unlike tanh, the derivative decays
/// only quadratically and never underflows to zero, so a saturated value
/// still receives a restoring gradient.
#[inline]
pub fn squash(x: f64, cap: f64) -> f64 {
    x / (1.0 + x.abs() / cap)
}

#[inline]
pub fn squash_deriv(x: f64, cap: f64) -> f64 {
    let d = 1.0 + x.abs() / cap;
    1.0 / (d * d)
}

/// Gate used by the GRU cell: modSigmoid with the pre-activation squashed
/// into (−cap, cap) first. An unbounded pre-activation can drift so far
/// negative that σ′ underflows to exactly zero in f64, at which point a
/// closed gate stops every gradient flowing through it and the hidden state
/// is stuck for good; the squash keeps the saturation depth bounded and the
/// chain rule nonzero.
pub fn modsigmoid_capped(z: &CVector, alpha: f64, cap: f64) -> Vec<f64> {
    z.data
        .iter()
        .map(|zi| sigmoid(squash(alpha * zi.re + (1.0 - alpha) * zi.im, cap)))
        .collect()
}

/// Backward of [`modsigmoid_capped`] for a real downstream gradient.
pub fn modsigmoid_capped_backward(z: &CVector, alpha: f64, cap: f64, grad_out: &[f64]) -> CVector {
    debug_assert_eq!(z.dim(), grad_out.len());
    let grad = z
        .data
        .iter()
        .zip(grad_out)
        .map(|(zi, g)| {
            let u = alpha * zi.re + (1.0 - alpha) * zi.im;
            let s = sigmoid(squash(u, cap));
            let d = g * s * (1.0 - s) * squash_deriv(u, cap);
            Complex64::new(d * alpha, d * (1.0 - alpha))
        })
        .collect();
    CVector::from_vec(grad)
}

/// Intermediate values needed by the cell backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub h_prev: CVector,
    pub x: CVector,
    pub z_r: CVector,
    pub z_z: CVector,
    pub g_r: Vec<f64>,
    pub g_z: Vec<f64>,
    pub gated_h: CVector,
    pub z_tilde: CVector,
    pub cand: CVector,
}

/// One complex GRU step:
/// gates `g_r`, `g_z` from modSigmoid pre-activations, candidate
/// `z̃ = W(g_r ⊙ h) + Vx + b` through modReLU, blend
/// `h' = g_z ⊙ modReLU(z̃) + (1 − g_z) ⊙ h`. Gates are real and scale both
/// complex components.
pub fn gru_cell(p: &GruParams, h_prev: &GruState, x: &CVector) -> Result<GruState> {
    Ok(gru_cell_cached(p, h_prev, x)?.0)
}

pub fn gru_cell_cached(p: &GruParams, h_prev: &GruState, x: &CVector) -> Result<(GruState, GruCache)> {
    let h = &h_prev.h;
    let mut z_r = cmatvec(&p.w_r, h)?;
    z_r.axpy(Complex64::new(1.0, 0.0), &cmatvec(&p.v_r, x)?);
    z_r.axpy(Complex64::new(1.0, 0.0), &p.b_r);
    let g_r = modsigmoid_capped(&z_r, MOD_SIGMOID_ALPHA, GATE_PREACT_CAP);

    let mut z_z = cmatvec(&p.w_z, h)?;
    z_z.axpy(Complex64::new(1.0, 0.0), &cmatvec(&p.v_z, x)?);
    z_z.axpy(Complex64::new(1.0, 0.0), &p.b_z);
    let g_z = modsigmoid_capped(&z_z, MOD_SIGMOID_ALPHA, GATE_PREACT_CAP);

    gru_cell_with_gates(p, h_prev, x, z_r, z_z, g_r, g_z)
}

/// Core of the cell once the gate activations are known. Split out so tests
/// can force gate values directly.
pub(crate) fn gru_cell_with_gates(
    p: &GruParams,
    h_prev: &GruState,
    x: &CVector,
    z_r: CVector,
    z_z: CVector,
    g_r: Vec<f64>,
    g_z: Vec<f64>,
) -> Result<(GruState, GruCache)> {
    let h = &h_prev.h;
    let gated_h = scale_by_real(h, &g_r);
    let mut z_tilde = cmatvec(&p.w, &gated_h)?;
    z_tilde.axpy(Complex64::new(1.0, 0.0), &cmatvec(&p.v, x)?);
    z_tilde.axpy(Complex64::new(1.0, 0.0), &p.b);
    let cand = modrelu(&z_tilde, &p.modrelu_b)?;

    let h_next = CVector::from_vec(
        (0..h.dim())
            .map(|i| g_z[i] * cand.data[i] + (1.0 - g_z[i]) * h.data[i])
            .collect(),
    );
    let cache = GruCache {
        h_prev: h.clone(),
        x: x.clone(),
        z_r,
        z_z,
        g_r,
        g_z,
        gated_h,
        z_tilde,
        cand,
    };
    Ok((GruState { h: h_next }, cache))
}

fn scale_by_real(v: &CVector, s: &[f64]) -> CVector {
    CVector::from_vec(v.data.iter().zip(s).map(|(z, g)| z * g).collect())
}

/// Backward of one GRU step. Accumulates parameter gradients into `grads`
/// and returns `(grad_h_prev, grad_x)`.
pub fn gru_cell_backward(
    p: &GruParams,
    cache: &GruCache,
    grad_h: &CVector,
    grads: &mut GruParams,
) -> Result<(CVector, CVector)> {
    let n = grad_h.dim();
    // h' = g_z ⊙ c + (1 − g_z) ⊙ h
    let mut grad_c = CVector::zeros(n);
    let mut grad_h_prev = CVector::zeros(n);
    let mut grad_gz = vec![0.0; n];
    for i in 0..n {
        let g = grad_h.data[i];
        grad_c.data[i] = cache.g_z[i] * g;
        grad_h_prev.data[i] = (1.0 - cache.g_z[i]) * g;
        let diff = cache.cand.data[i] - cache.h_prev.data[i];
        grad_gz[i] = g.re * diff.re + g.im * diff.im;
    }

    // candidate path
    let grad_ztilde = modrelu_backward(&cache.z_tilde, &p.modrelu_b, &grad_c, &mut grads.modrelu_b);
    accumulate_outer(&mut grads.w, &grad_ztilde, &cache.gated_h);
    accumulate_outer(&mut grads.v, &grad_ztilde, &cache.x);
    grads.b.axpy(Complex64::new(1.0, 0.0), &grad_ztilde);
    let grad_gated = cmatvec_hermitian(&p.w, &grad_ztilde)?;
    let mut grad_x = cmatvec_hermitian(&p.v, &grad_ztilde)?;

    // gated_h = g_r ⊙ h_prev (real gate)
    let mut grad_gr = vec![0.0; n];
    for i in 0..n {
        grad_h_prev.data[i] += cache.g_r[i] * grad_gated.data[i];
        let h = cache.h_prev.data[i];
        grad_gr[i] = grad_gated.data[i].re * h.re + grad_gated.data[i].im * h.im;
    }

    // gate pre-activations
    let grad_zr = modsigmoid_capped_backward(&cache.z_r, MOD_SIGMOID_ALPHA, GATE_PREACT_CAP, &grad_gr);
    accumulate_outer(&mut grads.w_r, &grad_zr, &cache.h_prev);
    accumulate_outer(&mut grads.v_r, &grad_zr, &cache.x);
    grads.b_r.axpy(Complex64::new(1.0, 0.0), &grad_zr);
    grad_h_prev.axpy(Complex64::new(1.0, 0.0), &cmatvec_hermitian(&p.w_r, &grad_zr)?);
    grad_x.axpy(Complex64::new(1.0, 0.0), &cmatvec_hermitian(&p.v_r, &grad_zr)?);

    let grad_zz = modsigmoid_capped_backward(&cache.z_z, MOD_SIGMOID_ALPHA, GATE_PREACT_CAP, &grad_gz);
    accumulate_outer(&mut grads.w_z, &grad_zz, &cache.h_prev);
    accumulate_outer(&mut grads.v_z, &grad_zz, &cache.x);
    grads.b_z.axpy(Complex64::new(1.0, 0.0), &grad_zz);
    grad_h_prev.axpy(Complex64::new(1.0, 0.0), &cmatvec_hermitian(&p.w_z, &grad_zz)?);
    grad_x.axpy(Complex64::new(1.0, 0.0), &cmatvec_hermitian(&p.v_z, &grad_zz)?);

    Ok((grad_h_prev, grad_x))
}

/// Left fold of [`gru_cell`] over a sequence; returns every hidden state.
pub fn gru_sequence(p: &GruParams, h0: &GruState, xs: &[CVector]) -> Result<Vec<GruState>> {
    let (states, _) = gru_sequence_cached(p, h0, xs)?;
    Ok(states)
}

pub fn gru_sequence_cached(
    p: &GruParams,
    h0: &GruState,
    xs: &[CVector],
) -> Result<(Vec<GruState>, Vec<GruCache>)> {
    let mut states = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    let mut h = h0.clone();
    for x in xs {
        let (next, cache) = gru_cell_cached(p, &h, x)?;
        h = next.clone();
        states.push(next);
        caches.push(cache);
    }
    Ok((states, caches))
}

/// Backpropagation through time over the full provided sequence.
/// `grad_states[t]` is the loss gradient at state `t`; returns
/// `(grad_h0, grad_xs)`.
pub fn gru_sequence_backward(
    p: &GruParams,
    caches: &[GruCache],
    grad_states: &[CVector],
    grads: &mut GruParams,
) -> Result<(CVector, Vec<CVector>)> {
    assert_eq!(caches.len(), grad_states.len());
    let n_h = p.hidden_dim();
    let mut grad_h = CVector::zeros(n_h);
    let mut grad_xs = vec![CVector::zeros(0); caches.len()];
    for t in (0..caches.len()).rev() {
        grad_h.axpy(Complex64::new(1.0, 0.0), &grad_states[t]);
        let (gh_prev, gx) = gru_cell_backward(p, &caches[t], &grad_h, grads)?;
        grad_h = gh_prev;
        grad_xs[t] = gx;
    }
    Ok((grad_h, grad_xs))
}

/// Glorot-style uniform initialization on both the real and imaginary plane:
/// entries i.i.d. `U[−A, A]` with `A = √(6/(n_in + n_out))`. Sampling order is
/// row-major, real part before imaginary part, so results are deterministic
/// for a given seeded generator.
pub fn init_glorot_complex(n_in: usize, n_out: usize, rng: &mut impl Rng) -> CMatrix {
    let a = (6.0 / (n_in + n_out) as f64).sqrt();
    let mut m = CMatrix::zeros(n_out, n_in);
    for e in m.data.iter_mut() {
        let re = rng.gen_range(-a..=a);
        let im = rng.gen_range(-a..=a);
        *e = Complex64::new(re, im);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasKind {
    /// Zero initialization, used everywhere except GRU gates.
    Plain,
    /// Gate biases start at 4 so gates open at the beginning of training.
    Gate,
}

pub fn init_biases(kind: BiasKind, dim: usize) -> CVector {
    let v = match kind {
        BiasKind::Plain => Complex64::new(0.0, 0.0),
        BiasKind::Gate => Complex64::new(4.0, 0.0),
    };
    CVector::from_vec(vec![v; dim])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctensor::CMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_cvec(rng: &mut impl Rng, dim: usize) -> CVector {
        CVector::from_vec((0..dim).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
    }

    #[test]
    fn dense_identity() {
        let p = DenseParams { w: CMatrix::identity(2), b: CVector::zeros(2) };
        let x = CVector::from_vec(vec![c(1.0, -2.0), c(0.5, 0.5)]);
        assert_eq!(dense_forward(&p, &x).unwrap(), x);
    }

    #[test]
    fn dense_hand_case() {
        // W=[[1+i]], x=(1), b=(i) → 1+2i
        let p = DenseParams {
            w: CMatrix::from_rows(vec![vec![c(1.0, 1.0)]]),
            b: CVector::from_vec(vec![c(0.0, 1.0)]),
        };
        let x = CVector::from_vec(vec![c(1.0, 0.0)]);
        let o = dense_forward(&p, &x).unwrap();
        assert!((o.data[0] - c(1.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn modrelu_cases() {
        let out = modrelu(&CVector::from_vec(vec![c(1.0, 0.0)]), &[0.0]).unwrap();
        assert!((out.data[0] - c(1.0, 0.0)).norm() < 1e-15);

        // |3+4i| = 5, b=−1 → 4/5 · (3+4i)
        let out = modrelu(&CVector::from_vec(vec![c(3.0, 4.0)]), &[-1.0]).unwrap();
        assert!((out.data[0] - c(2.4, 3.2)).norm() < 1e-12);

        // |0.5i| + (−1) ≤ 0 clamps
        let out = modrelu(&CVector::from_vec(vec![c(0.0, 0.5)]), &[-1.0]).unwrap();
        assert_eq!(out.data[0], c(0.0, 0.0));

        // exact zero input stays zero regardless of b
        let out = modrelu(&CVector::from_vec(vec![c(0.0, 0.0)]), &[1.0]).unwrap();
        assert_eq!(out.data[0], c(0.0, 0.0));
    }

    #[test]
    fn modrelu_preserves_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let z = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let b = rng.gen_range(-0.5..0.5);
            let out = modrelu(&CVector::from_vec(vec![z]), &[b]).unwrap().data[0];
            if out.norm() > 0.0 {
                let d = (out.arg() - z.arg()).abs();
                assert!(d < 1e-12 || (d - 2.0 * std::f64::consts::PI).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn modrelu_zero_offset_is_identity_on_nonzero() {
        let z = CVector::from_vec(vec![c(0.3, -0.7), c(-1.0, 2.0)]);
        let out = modrelu(&z, &[0.0, 0.0]).unwrap();
        for (a, b) in out.data.iter().zip(&z.data) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn modsigmoid_cases() {
        let g = modsigmoid(&CVector::from_vec(vec![c(0.0, 0.0)]), 0.5);
        assert!((g[0] - 0.5).abs() < 1e-15);
        let g = modsigmoid(&CVector::from_vec(vec![c(2.0, 2.0)]), 0.5);
        assert!((g[0] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        // α-symmetry when Re z == Im z
        for x in [-3.0, -0.5, 0.0, 1.7] {
            let g = modsigmoid(&CVector::from_vec(vec![c(x, x)]), 0.5);
            assert!((g[0] - 1.0 / (1.0 + (-x as f64).exp())).abs() < 1e-14);
        }
        // deep saturation stays strictly inside (0, 1) while representable
        let g = modsigmoid(&CVector::from_vec(vec![c(30.0, 30.0), c(-30.0, -30.0)]), 0.5);
        assert!(g.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn gru_forced_gate_zero_is_carry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GruParams::init(3, 2, &mut rng);
        let h = GruState { h: random_cvec(&mut rng, 3) };
        let x = random_cvec(&mut rng, 2);
        let (out, _) = gru_cell_with_gates(
            &p,
            &h,
            &x,
            CVector::zeros(3),
            CVector::zeros(3),
            vec![1.0; 3],
            vec![0.0; 3],
        )
        .unwrap();
        for (a, b) in out.h.data.iter().zip(&h.h.data) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn gru_forced_gates_open_is_gateless_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = GruParams::init(3, 2, &mut rng);
        let h = GruState { h: random_cvec(&mut rng, 3) };
        let x = random_cvec(&mut rng, 2);
        let (out, _) = gru_cell_with_gates(
            &p,
            &h,
            &x,
            CVector::zeros(3),
            CVector::zeros(3),
            vec![1.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        let mut z = cmatvec(&p.w, &h.h).unwrap();
        z.axpy(c(1.0, 0.0), &cmatvec(&p.v, &x).unwrap());
        z.axpy(c(1.0, 0.0), &p.b);
        let expected = modrelu(&z, &p.modrelu_b).unwrap();
        for (a, b) in out.h.data.iter().zip(&expected.data) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn gru_output_bounded_by_carry_and_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let p = GruParams::init(4, 3, &mut rng);
            let h = GruState { h: random_cvec(&mut rng, 4) };
            let x = random_cvec(&mut rng, 3);
            let (out, cache) = gru_cell_cached(&p, &h, &x).unwrap();
            for i in 0..4 {
                let bound = cache.cand.data[i].norm().max(h.h.data[i].norm());
                assert!(out.h.data[i].norm() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn gru_sequence_length_one_equals_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = GruParams::init(3, 2, &mut rng);
        let h0 = GruState::zeros(3);
        let x = random_cvec(&mut rng, 2);
        let seq = gru_sequence(&p, &h0, std::slice::from_ref(&x)).unwrap();
        let single = gru_cell(&p, &h0, &x).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq[0], single);
    }

    #[test]
    fn gru_sequence_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = GruParams::init(3, 2, &mut rng);
        let seq = gru_sequence(&p, &GruState::zeros(3), &[]).unwrap();
        assert!(seq.is_empty());
    }

    #[test]
    fn gru_sequence_matches_step_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = GruParams::init(3, 2, &mut rng);
        let xs: Vec<CVector> = (0..5).map(|_| random_cvec(&mut rng, 2)).collect();
        let states = gru_sequence(&p, &GruState::zeros(3), &xs).unwrap();
        // ten-line oracle: re-fold the cell manually
        let mut h = GruState::zeros(3);
        for (t, x) in xs.iter().enumerate() {
            h = gru_cell(&p, &h, x).unwrap();
            assert_eq!(states[t], h);
        }
    }

    #[test]
    fn glorot_bound_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = init_glorot_complex(3, 3, &mut rng);
        // A = sqrt(6/6) = 1
        for e in &m.data {
            assert!(e.re.abs() <= 1.0 && e.im.abs() <= 1.0);
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        let m2 = init_glorot_complex(3, 3, &mut rng2);
        assert_eq!(m, m2);
    }

    #[test]
    fn glorot_mean_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = init_glorot_complex(100, 100, &mut rng);
        let n = m.data.len() as f64;
        let a = (6.0 / 200.0f64).sqrt();
        let mean_re: f64 = m.data.iter().map(|e| e.re).sum::<f64>() / n;
        // sample-mean std of U[-A,A] is A/sqrt(3 n)
        let sigma = a / (3.0 * n).sqrt();
        assert!(mean_re.abs() < 3.0 * sigma, "mean {mean_re} vs 3σ {}", 3.0 * sigma);
    }

    #[test]
    fn bias_init() {
        assert_eq!(init_biases(BiasKind::Plain, 3), CVector::zeros(3));
        let g = init_biases(BiasKind::Gate, 2);
        assert_eq!(g.data, vec![c(4.0, 0.0); 2]);
        // gates open at start: modsigmoid(4+0i) = σ(2) ≈ 0.88
        let s = modsigmoid(&g, 0.5);
        assert!((s[0] - 0.8807970779778823).abs() < 1e-12);
    }
}
