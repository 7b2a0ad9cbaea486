//! Complex-Gaussian probabilistic machinery: density, KL divergence,
//! reparameterization, and the composite reconstruction loss.
//!
//! The latent posterior is an elementwise complex normal
//! `N_c(μ, Δ(σ), Δ(δ))` with per-element covariance `σ > 0` and
//! pseudo-covariance `δ`, `|δ| < σ`. The prior is the standard circular
//! complex normal `N_c(0, I, 0)`.

use crate::ctensor::{CMatrix, CVector};
use crate::{Error, Result};
use num_complex::Complex64;

/// Diagonal complex-Gaussian posterior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mu: CVector,
    pub sigma: Vec<f64>,
    pub delta: CVector,
}

impl LatentPosterior {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// Prior-equal posterior: μ=0, σ=1, δ=0.
    pub fn standard(dim: usize) -> Self {
        LatentPosterior { mu: CVector::zeros(dim), sigma: vec![1.0; dim], delta: CVector::zeros(dim) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.dim() != self.sigma.len() || self.delta.dim() != self.sigma.len() {
            return Err(Error::Shape("LatentPosterior: inconsistent dims".into()));
        }
        for j in 0..self.sigma.len() {
            let s = self.sigma[j];
            let d = self.delta.data[j].norm();
            if !(s > 0.0) || !(d < s) {
                return Err(Error::Domain(format!(
                    "LatentPosterior: need 0 < |delta| < sigma at index {j} (sigma={s}, |delta|={d})"
                )));
            }
        }
        Ok(())
    }
}

/// Full (non-diagonal) complex normal parameters, used by the density and
/// its Monte Carlo cross-checks.
#[derive(Debug, Clone)]
pub struct ComplexNormalParams {
    pub a: CVector,
    pub gamma: CMatrix,
    pub c: CMatrix,
}

impl ComplexNormalParams {
    /// Circular standard case N_c(0, I, 0).
    pub fn standard(dim: usize) -> Self {
        ComplexNormalParams { a: CVector::zeros(dim), gamma: CMatrix::identity(dim), c: CMatrix::zeros(dim, dim) }
    }

    pub fn diagonal(mu: &CVector, sigma: &[f64], delta: &CVector) -> Self {
        let d = sigma.len();
        let mut gamma = CMatrix::zeros(d, d);
        let mut c = CMatrix::zeros(d, d);
        for j in 0..d {
            gamma.set(j, j, Complex64::new(sigma[j], 0.0));
            c.set(j, j, delta.data[j]);
        }
        ComplexNormalParams { a: mu.clone(), gamma, c }
    }
}

/// Log density of the multivariate complex normal in augmented form:
/// `log p(h) = −D·log π − ½ log det R − ½ vᴴ R⁻¹ v` with
/// `R = [[Γ, C], [Cᴴ, Γᴴ]]` and `v = [h−a; conj(h−a)]`.
pub fn complex_normal_logpdf(h: &CVector, p: &ComplexNormalParams) -> Result<f64> {
    let d = p.a.dim();
    if h.dim() != d || p.gamma.rows != d || p.gamma.cols != d || p.c.rows != d || p.c.cols != d {
        return Err(Error::Shape("complex_normal_logpdf: inconsistent dims".into()));
    }
    let n = 2 * d;
    let mut r = CMatrix::zeros(n, n);
    for i in 0..d {
        for j in 0..d {
            r.set(i, j, p.gamma.get(i, j));
            r.set(i, j + d, p.c.get(i, j));
            r.set(i + d, j, p.c.get(j, i).conj());
            r.set(i + d, j + d, p.gamma.get(j, i).conj());
        }
    }
    let mut v = Vec::with_capacity(n);
    for i in 0..d {
        v.push(h.data[i] - p.a.data[i]);
    }
    for i in 0..d {
        v.push((h.data[i] - p.a.data[i]).conj());
    }
    let (logdet, y) = lu_logdet_solve(&mut r, &v)?;
    let quad: f64 = v.iter().zip(&y).map(|(vi, yi)| (vi.conj() * yi).re).sum();
    Ok(-(d as f64) * std::f64::consts::PI.ln() - 0.5 * logdet - 0.5 * quad)
}

/// LU factorization with partial pivoting; returns `Re(log det A)` and the
/// solution of `A y = b`. Consumes `a` as scratch.
fn lu_logdet_solve(a: &mut CMatrix, b: &[Complex64]) -> Result<(f64, Vec<Complex64>)> {
    let n = a.rows;
    let mut y = b.to_vec();
    let mut logdet = Complex64::new(0.0, 0.0);
    for col in 0..n {
        let mut piv = col;
        let mut best = a.get(col, col).norm();
        for r in (col + 1)..n {
            let m = a.get(r, col).norm();
            if m > best {
                best = m;
                piv = r;
            }
        }
        if best < 1e-300 {
            return Err(Error::Numerical("singular augmented covariance".into()));
        }
        if piv != col {
            for j in 0..n {
                let t = a.get(col, j);
                a.set(col, j, a.get(piv, j));
                a.set(piv, j, t);
            }
            y.swap(col, piv);
            logdet += Complex64::new(0.0, std::f64::consts::PI); // sign flip
        }
        let d = a.get(col, col);
        logdet += d.ln();
        for r in (col + 1)..n {
            let f = a.get(r, col) / d;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in col..n {
                let t = a.get(col, j) * f;
                a.set(r, j, a.get(r, j) - t);
            }
            let t = y[col] * f;
            y[r] -= t;
        }
    }
    // back substitution
    for col in (0..n).rev() {
        y[col] /= a.get(col, col);
        for r in 0..col {
            let t = a.get(r, col) * y[col];
            y[r] -= t;
        }
    }
    Ok((logdet.re, y))
}

/// Closed-form KL from the diagonal posterior to the standard complex normal
/// prior: `μᴴμ + Σ_j [σ_j − 1 − ½·log(σ_j² − |δ_j|²)]`. Every summand is
/// nonnegative, so the ℓ1 norm in the closed form equals the plain sum.
pub fn kl_divergence(q: &LatentPosterior) -> Result<f64> {
    q.validate()?;
    let mut kl: f64 = q.mu.data.iter().map(|m| m.norm_sqr()).sum();
    for j in 0..q.dim() {
        let s = q.sigma[j];
        let det = s * s - q.delta.data[j].norm_sqr();
        if det <= 0.0 {
            return Err(Error::Domain("kl_divergence: sigma^2 <= |delta|^2".into()));
        }
        kl += s - 1.0 - 0.5 * det.ln();
    }
    Ok(kl)
}

/// Packed gradients of [`kl_divergence`] w.r.t. (μ, σ, δ).
pub fn kl_gradients(q: &LatentPosterior) -> (CVector, Vec<f64>, CVector) {
    let d = q.dim();
    let g_mu = CVector::from_vec(q.mu.data.iter().map(|m| 2.0 * m).collect());
    let mut g_sigma = vec![0.0; d];
    let mut g_delta = CVector::zeros(d);
    for j in 0..d {
        let s = q.sigma[j];
        let det = s * s - q.delta.data[j].norm_sqr();
        g_sigma[j] = 1.0 - s / det;
        g_delta.data[j] = q.delta.data[j] / det;
    }
    (g_mu, g_sigma, g_delta)
}

/// Reparameterization factors `k_r = (σ+δ)/√(2σ+2Re δ)` and
/// `k_i = i·√(σ²−|δ|²)/√(2σ+2Re δ)`, elementwise.
pub fn reparam_factors(q: &LatentPosterior) -> Result<(CVector, CVector)> {
    let d = q.dim();
    let mut k_r = CVector::zeros(d);
    let mut k_i = CVector::zeros(d);
    for j in 0..d {
        let s = q.sigma[j];
        let del = q.delta.data[j];
        let den_sq = 2.0 * s + 2.0 * del.re;
        if den_sq <= 0.0 {
            return Err(Error::Domain("reparameterize: 2σ + 2Re δ must be positive".into()));
        }
        let den = den_sq.sqrt();
        k_r.data[j] = (del + s) / den;
        let q2 = s * s - del.norm_sqr();
        k_i.data[j] = Complex64::new(0.0, q2.max(0.0).sqrt() / den);
    }
    Ok((k_r, k_i))
}

/// Draws `z̃ = μ + k_r ⊙ ε_r + k_i ⊙ ε_i` with standard-normal `ε` vectors.
pub fn reparameterize(q: &LatentPosterior, eps_r: &[f64], eps_i: &[f64]) -> Result<CVector> {
    if eps_r.len() != q.dim() || eps_i.len() != q.dim() {
        return Err(Error::Shape("reparameterize: eps dims".into()));
    }
    let (k_r, k_i) = reparam_factors(q)?;
    let mut z = q.mu.clone();
    for j in 0..q.dim() {
        z.data[j] += k_r.data[j] * eps_r[j] + k_i.data[j] * eps_i[j];
    }
    Ok(z)
}

/// Backward of [`reparameterize`] for a packed output gradient `grad_z`.
/// Returns packed gradients w.r.t. (μ, σ, δ).
pub fn reparameterize_backward(
    q: &LatentPosterior,
    eps_r: &[f64],
    eps_i: &[f64],
    grad_z: &CVector,
) -> (CVector, Vec<f64>, CVector) {
    let d = q.dim();
    let g_mu = grad_z.clone();
    let mut g_sigma = vec![0.0; d];
    let mut g_delta = CVector::zeros(d);
    for j in 0..d {
        let s = q.sigma[j];
        let dr = q.delta.data[j].re;
        let di = q.delta.data[j].im;
        let u = s + dr;
        let sq = (2.0 * u).sqrt();
        let w = (s * s - dr * dr - di * di).max(1e-300).sqrt();
        let (gr, gi) = (grad_z.data[j].re, grad_z.data[j].im);
        let (er, ei) = (eps_r[j], eps_i[j]);
        // Re z̃ = μ_re + √(u/2)·ε_r ; Im z̃ = μ_im + (di/√(2u))·ε_r + (w/√(2u))·ε_i
        let dc1_du = 1.0 / (2.0 * sq);
        let dc2_du = -di / (sq * sq * sq);
        let dc3_du = -w / (sq * sq * sq);
        let d_sigma = gr * er * dc1_du + gi * (er * dc2_du + ei * ((s / w) / sq + dc3_du));
        let d_dr = gr * er * dc1_du + gi * (er * dc2_du + ei * ((-dr / w) / sq + dc3_du));
        let d_di = gi * (er / sq + ei * (-di / w) / sq);
        g_sigma[j] = d_sigma;
        g_delta.data[j] = Complex64::new(d_dr, d_di);
    }
    (g_mu, g_sigma, g_delta)
}

/// Component breakdown of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub rec_real: f64,
    pub rec_imag: f64,
    pub rec_mag: f64,
    pub kl: f64,
    pub kl_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.rec_real += other.rec_real;
        self.rec_imag += other.rec_imag;
        self.rec_mag += other.rec_mag;
        self.kl += other.kl;
        self.kl_weight = other.kl_weight;
        self.total += other.total;
    }

    pub fn scale(&mut self, f: f64) {
        self.rec_real *= f;
        self.rec_imag *= f;
        self.rec_mag *= f;
        self.kl *= f;
        self.total *= f;
    }
}

/// Composite L1 reconstruction loss: real, imaginary, and magnitude terms.
pub fn reconstruction_loss(x: &CVector, xhat: &CVector) -> Result<(f64, f64, f64)> {
    if x.dim() != xhat.dim() {
        return Err(Error::Shape("reconstruction_loss: dims".into()));
    }
    let mut rr = 0.0;
    let mut ri = 0.0;
    let mut rm = 0.0;
    for (a, b) in x.data.iter().zip(&xhat.data) {
        rr += (a.re - b.re).abs();
        ri += (a.im - b.im).abs();
        rm += (a.norm() - b.norm()).abs();
    }
    Ok((rr, ri, rm))
}

/// Packed subgradient of the composite L1 loss w.r.t. `xhat`.
/// Ties get subgradient 0; the magnitude term at `x̂ = 0` gets subgradient 0.
pub fn reconstruction_grad(x: &CVector, xhat: &CVector) -> CVector {
    let sgn = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let grad = x
        .data
        .iter()
        .zip(&xhat.data)
        .map(|(a, b)| {
            let mut gre = -sgn(a.re - b.re);
            let mut gim = -sgn(a.im - b.im);
            let bn = b.norm();
            if bn > 0.0 {
                let smag = sgn(a.norm() - bn);
                gre += -smag * b.re / bn;
                gim += -smag * b.im / bn;
            }
            Complex64::new(gre, gim)
        })
        .collect();
    CVector::from_vec(grad)
}

/// Squared-error decoder loss `‖x − x̂‖₂²` split into real/imag parts, the
/// complex-Gaussian likelihood predecessor of the L1 composite.
pub fn reconstruction_loss_l2(x: &CVector, xhat: &CVector) -> Result<(f64, f64, f64)> {
    if x.dim() != xhat.dim() {
        return Err(Error::Shape("reconstruction_loss_l2: dims".into()));
    }
    let mut rr = 0.0;
    let mut ri = 0.0;
    for (a, b) in x.data.iter().zip(&xhat.data) {
        rr += (a.re - b.re) * (a.re - b.re);
        ri += (a.im - b.im) * (a.im - b.im);
    }
    Ok((rr, ri, 0.0))
}

pub fn reconstruction_grad_l2(x: &CVector, xhat: &CVector) -> CVector {
    CVector::from_vec(x.data.iter().zip(&xhat.data).map(|(a, b)| -2.0 * (a - b)).collect())
}

/// Which reconstruction term the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    L1Composite,
    L2Gaussian,
}

/// Full per-step objective: reconstruction terms plus weighted KL.
pub fn elbo_loss(
    x: &CVector,
    xhat: &CVector,
    q: &LatentPosterior,
    kl_weight: f64,
    mode: LossMode,
) -> Result<LossBreakdown> {
    if kl_weight < 0.0 {
        return Err(Error::Domain("elbo_loss: kl_weight must be nonnegative".into()));
    }
    let (rr, ri, rm) = match mode {
        LossMode::L1Composite => reconstruction_loss(x, xhat)?,
        LossMode::L2Gaussian => reconstruction_loss_l2(x, xhat)?,
    };
    let kl = kl_divergence(q)?;
    Ok(LossBreakdown {
        rec_real: rr,
        rec_imag: ri,
        rec_mag: rm,
        kl,
        kl_weight,
        total: rr + ri + rm + kl_weight * kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub(crate) fn random_posterior(rng: &mut impl Rng, dim: usize) -> LatentPosterior {
        let mu = CVector::from_vec(
            (0..dim).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
        );
        let sigma: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.3..2.5)).collect();
        let delta = CVector::from_vec(
            sigma
                .iter()
                .map(|s| {
                    let mag = rng.gen_range(0.0..0.9) * s;
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    Complex64::from_polar(mag, phase)
                })
                .collect(),
        );
        LatentPosterior { mu, sigma, delta }
    }

    #[test]
    fn logpdf_standard_at_origin() {
        let p = ComplexNormalParams::standard(1);
        let h = CVector::zeros(1);
        let lp = complex_normal_logpdf(&h, &p).unwrap();
        assert!((lp - (1.0 / std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn logpdf_circular_reduces_to_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = CVector::from_vec(vec![c(0.3, -0.4), c(1.0, 0.2)]);
        let p = ComplexNormalParams { a: a.clone(), gamma: CMatrix::identity(2), c: CMatrix::zeros(2, 2) };
        for _ in 0..10 {
            let h = CVector::from_vec(
                (0..2).map(|_| c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect(),
            );
            let lp = complex_normal_logpdf(&h, &p).unwrap();
            let expected: f64 = h
                .data
                .iter()
                .zip(&a.data)
                .map(|(hi, ai)| -(hi - ai).norm_sqr() - std::f64::consts::PI.ln())
                .sum();
            assert!((lp - expected).abs() < 1e-10, "{lp} vs {expected}");
        }
    }

    #[test]
    fn logpdf_normalizes_by_monte_carlo() {
        // E_s[p(h)/s(h)] over a wide circular proposal s ≈ 1.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = LatentPosterior {
            mu: CVector::from_vec(vec![c(0.2, -0.1)]),
            sigma: vec![1.3],
            delta: CVector::from_vec(vec![c(0.5, 0.4)]),
        };
        let p = ComplexNormalParams::diagonal(&q.mu, &q.sigma, &q.delta);
        let proposal_var: f64 = 4.0; // per real axis
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let hr: f64 = rng.sample::<f64, _>(StandardNormal) * proposal_var.sqrt();
            let hi: f64 = rng.sample::<f64, _>(StandardNormal) * proposal_var.sqrt();
            let h = CVector::from_vec(vec![c(hr, hi)]);
            let lp = complex_normal_logpdf(&h, &p).unwrap();
            let log_s = -(hr * hr + hi * hi) / (2.0 * proposal_var)
                - (2.0 * std::f64::consts::PI * proposal_var).ln();
            acc += (lp - log_s).exp();
        }
        let integral = acc / n as f64;
        assert!((integral - 1.0).abs() < 0.01, "MC normalization {integral}");
    }

    #[test]
    fn logpdf_singular_errors() {
        let p = ComplexNormalParams {
            a: CVector::zeros(1),
            gamma: CMatrix::zeros(1, 1),
            c: CMatrix::zeros(1, 1),
        };
        assert!(matches!(complex_normal_logpdf(&CVector::zeros(1), &p), Err(Error::Numerical(_))));
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_divergence(&LatentPosterior::standard(3)).unwrap(), 0.0);

        let q = LatentPosterior {
            mu: CVector::from_vec(vec![c(1.0, 1.0)]),
            sigma: vec![1.0],
            delta: CVector::zeros(1),
        };
        assert!((kl_divergence(&q).unwrap() - 2.0).abs() < 1e-14);

        let q = LatentPosterior { mu: CVector::zeros(1), sigma: vec![2.0], delta: CVector::zeros(1) };
        assert!((kl_divergence(&q).unwrap() - (1.0 - 2.0f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn kl_nonnegative_and_zero_only_at_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q = random_posterior(&mut rng, 4);
            let kl = kl_divergence(&q).unwrap();
            assert!(kl >= 0.0, "negative KL {kl}");
            // each summand nonnegative
            for j in 0..4 {
                let s = q.sigma[j];
                let term = s - 1.0 - 0.5 * (s * s - q.delta.data[j].norm_sqr()).ln();
                assert!(term >= -1e-12, "negative summand {term}");
            }
        }
    }

    #[test]
    fn kl_invariant_violation_errors() {
        let q = LatentPosterior {
            mu: CVector::zeros(1),
            sigma: vec![0.5],
            delta: CVector::from_vec(vec![c(0.6, 0.0)]),
        };
        assert!(matches!(kl_divergence(&q), Err(Error::Domain(_))));
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q − log p] with the density itself; modest sample count here,
        // the full-scale version lives in the acceptance suite.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_posterior(&mut rng, 2);
        let qp = ComplexNormalParams::diagonal(&q.mu, &q.sigma, &q.delta);
        let prior = ComplexNormalParams::standard(2);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let er: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let ei: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let z = reparameterize(&q, &er, &ei).unwrap();
            acc += complex_normal_logpdf(&z, &qp).unwrap() - complex_normal_logpdf(&z, &prior).unwrap();
        }
        let mc = acc / n as f64;
        let closed = kl_divergence(&q).unwrap();
        assert!((mc - closed).abs() < 0.05 * closed.max(1.0), "MC {mc} vs closed {closed}");
    }

    #[test]
    fn reparam_circular_case() {
        let q = LatentPosterior { mu: CVector::zeros(2), sigma: vec![0.8, 2.0], delta: CVector::zeros(2) };
        let (k_r, k_i) = reparam_factors(&q).unwrap();
        for j in 0..2 {
            let expect = (q.sigma[j] / 2.0).sqrt();
            assert!((k_r.data[j] - c(expect, 0.0)).norm() < 1e-14);
            assert!((k_i.data[j] - c(0.0, expect)).norm() < 1e-14);
        }
    }

    #[test]
    fn reparam_mean_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_posterior(&mut rng, 3);
        let z = reparameterize(&q, &[0.0; 3], &[0.0; 3]).unwrap();
        for j in 0..3 {
            assert!((z.data[j] - q.mu.data[j]).norm() < 1e-14);
        }
    }

    #[test]
    fn reparam_factor_identities() {
        // |k_r|² + |k_i|² = σ and k_r² + k_i² = δ, exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let q = random_posterior(&mut rng, 4);
            let (k_r, k_i) = reparam_factors(&q).unwrap();
            for j in 0..4 {
                let cov = k_r.data[j].norm_sqr() + k_i.data[j].norm_sqr();
                assert!((cov - q.sigma[j]).abs() < 1e-12 * q.sigma[j].max(1.0));
                let pseudo = k_r.data[j] * k_r.data[j] + k_i.data[j] * k_i.data[j];
                assert!((pseudo - q.delta.data[j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn reparam_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_posterior(&mut rng, 1);
        let n = 100_000;
        let mut mean = c(0.0, 0.0);
        let mut cov = 0.0;
        let mut pseudo = c(0.0, 0.0);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let er = [rng.sample::<f64, _>(StandardNormal)];
            let ei = [rng.sample::<f64, _>(StandardNormal)];
            let z = reparameterize(&q, &er, &ei).unwrap().data[0];
            mean += z;
            samples.push(z);
        }
        mean /= n as f64;
        for z in &samples {
            let d = z - q.mu.data[0];
            cov += d.norm_sqr();
            pseudo += d * d;
        }
        cov /= n as f64;
        pseudo /= n as f64;
        assert!((mean - q.mu.data[0]).norm() < 0.02 * q.sigma[0].sqrt());
        assert!((cov - q.sigma[0]).abs() < 0.05 * q.sigma[0]);
        assert!((pseudo - q.delta.data[0]).norm() < 0.05 * q.sigma[0]);
    }

    #[test]
    fn reconstruction_cases() {
        let x = CVector::from_vec(vec![c(1.0, 0.0)]);
        let (rr, ri, rm) = reconstruction_loss(&x, &x).unwrap();
        assert_eq!((rr, ri, rm), (0.0, 0.0, 0.0));

        let xhat = CVector::from_vec(vec![c(0.0, 1.0)]);
        let (rr, ri, rm) = reconstruction_loss(&x, &xhat).unwrap();
        assert!((rr - 1.0).abs() < 1e-15 && (ri - 1.0).abs() < 1e-15 && rm.abs() < 1e-15);

        let x = CVector::from_vec(vec![c(3.0, 4.0)]);
        let zero = CVector::zeros(1);
        let (rr, ri, rm) = reconstruction_loss(&x, &zero).unwrap();
        assert_eq!((rr, ri, rm), (3.0, 4.0, 5.0));
    }

    #[test]
    fn reconstruction_zero_iff_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = CVector::from_vec(vec![c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))]);
            let mut y = x.clone();
            y.data[0] += c(1e-9, 0.0);
            let (rr, ri, rm) = reconstruction_loss(&x, &y).unwrap();
            assert!(rr + ri + rm > 0.0);
        }
    }

    #[test]
    fn elbo_cases() {
        let x = CVector::from_vec(vec![c(0.5, -0.5)]);
        let q = LatentPosterior::standard(2);
        let l = elbo_loss(&x, &x, &q, 1.0, LossMode::L1Composite).unwrap();
        assert_eq!(l.total, 0.0);

        let xhat = CVector::from_vec(vec![c(0.0, 0.0)]);
        let l = elbo_loss(&x, &xhat, &q, 0.0, LossMode::L1Composite).unwrap();
        let (rr, ri, rm) = reconstruction_loss(&x, &xhat).unwrap();
        assert_eq!(l.total, rr + ri + rm);
        assert!((l.total - (l.rec_real + l.rec_imag + l.rec_mag + l.kl_weight * l.kl)).abs() < 1e-15);
    }

    #[test]
    fn l2_mode_gradient_sign() {
        let x = CVector::from_vec(vec![c(1.0, 2.0)]);
        let xhat = CVector::from_vec(vec![c(0.0, 0.0)]);
        let g = reconstruction_grad_l2(&x, &xhat);
        assert!((g.data[0] - c(-2.0, -4.0)).norm() < 1e-14);
    }
}
