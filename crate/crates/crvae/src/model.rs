//! Encoder/decoder assembly: two complex GRU layers (or dense+modReLU in the
//! feed-forward variant) on each side, posterior heads, reparameterization,
//! and the spectrogram enhancement entry point.
//!
//! The posterior parameterization makes the latent invariants structural:
//! `σ = exp(s)` from a real head output and `δ = σ·tanh(m)·e^{iφ}` from two
//! real head outputs, so `σ > 0` and `|δ| < σ` always hold.

use crate::cnn::{
    dense_backward, dense_forward, gru_sequence_backward, gru_sequence_cached, modrelu,
    modrelu_backward, squash, squash_deriv, DenseParams, GruCache, GruParams, GruState,
};
use crate::ctensor::{project_unitary, unitarity_error, CMatrix, CVector};
use crate::cvae::{
    elbo_loss, kl_gradients, reconstruction_grad, reconstruction_grad_l2, reparameterize,
    reparameterize_backward, LatentPosterior, LossBreakdown, LossMode,
};
use crate::dsp::Spectrogram;
use crate::{Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Cap on |δ|/σ in the posterior head; bounds the determinant σ²−|δ|² away
/// from zero for the KL and reparameterization gradients.
pub const DELTA_RATIO_CAP: f64 = 0.99;

/// Cap on |log σ| from the posterior head, keeping σ in [e⁻ᶜ, eᶜ] so
/// early-training hidden-state excursions cannot blow up the latent scale.
pub const SIGMA_LOG_CAP: f64 = 5.0;

/// Post-init shrink factor applied to every weight matrix so the stacked
/// encoder/decoder starts near-isometric instead of expansive.
pub const INIT_WEIGHT_SCALE: f64 = 0.5;

/// Initial modReLU offset; positive so no unit starts near the zero-gradient
/// dead branch.
pub const MODRELU_BIAS_INIT: f64 = 0.2;

/// Extra shrink on the output projection so the first predictions start at
/// the all-zero baseline. Without it the random output layer emits
/// spectrograms an order of magnitude above the data scale, and the first
/// optimizer steps crush every pathway toward silence — a near-fixed point
/// that stochastic minibatches do not escape.
pub const DEC_OUT_INIT_SCALE: f64 = 0.02;

/// Initial real part of the σ-head bias, starting the posterior scale near
/// exp(squash(·)) ≈ 0.2 instead of 1. With unit-scale σ the sampled latents
/// are dominated by the reparameterization noise for many epochs and the
/// decoder only ever learns a blurred average; a modest starting scale lets
/// the KL term push σ back up where the data supports it.
pub const SIGMA_BIAS_INIT: f64 = -2.35;


#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Recurrent,
    Feedforward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub frames_per_step: usize,
    pub gru_units: usize,
    pub latent_dim: usize,
    pub arch: Arch,
    pub constrain_all_recurrences: bool,
    pub loss_mode: LossMode,
    pub kl_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 200,
            frames_per_step: 2,
            gru_units: 512,
            latent_dim: 512,
            arch: Arch::Recurrent,
            constrain_all_recurrences: false,
            loss_mode: LossMode::L1Composite,
            kl_weight: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn step_dim(&self) -> usize {
        self.input_dim * self.frames_per_step
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.frames_per_step == 0 || self.gru_units == 0 || self.latent_dim == 0 {
            return Err(Error::Config("ModelConfig: all dims must be positive".into()));
        }
        if self.kl_weight < 0.0 {
            return Err(Error::Config("ModelConfig: kl_weight must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Dense layer followed by modReLU, the feed-forward substitute for a GRU
/// layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FfLayer {
    pub dense: DenseParams,
    pub act_b: Vec<f64>,
}

/// Two stacked layers, recurrent or feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub enum Stack {
    Recurrent(Box<[GruParams; 2]>),
    Feedforward(Box<[FfLayer; 2]>),
}

pub enum StackCache {
    Recurrent { caches: [Vec<GruCache>; 2], mid: Vec<CVector> },
    Feedforward { pre: [Vec<CVector>; 2], mid: Vec<CVector> },
}

impl Stack {
    fn init(arch: Arch, n_in: usize, n_h: usize, rng: &mut impl Rng) -> Self {
        match arch {
            Arch::Recurrent => Stack::Recurrent(Box::new([
                GruParams::init(n_h, n_in, rng),
                GruParams::init(n_h, n_h, rng),
            ])),
            Arch::Feedforward => Stack::Feedforward(Box::new([
                FfLayer { dense: DenseParams::init(n_h, n_in, rng), act_b: vec![0.0; n_h] },
                FfLayer { dense: DenseParams::init(n_h, n_h, rng), act_b: vec![0.0; n_h] },
            ])),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Stack::Recurrent(layers) => Stack::Recurrent(Box::new([
                GruParams::zeros(layers[0].hidden_dim(), layers[0].input_dim()),
                GruParams::zeros(layers[1].hidden_dim(), layers[1].input_dim()),
            ])),
            Stack::Feedforward(layers) => Stack::Feedforward(Box::new([
                FfLayer {
                    dense: DenseParams::zeros(layers[0].dense.w.rows, layers[0].dense.w.cols),
                    act_b: vec![0.0; layers[0].act_b.len()],
                },
                FfLayer {
                    dense: DenseParams::zeros(layers[1].dense.w.rows, layers[1].dense.w.cols),
                    act_b: vec![0.0; layers[1].act_b.len()],
                },
            ])),
        }
    }

    fn forward(&self, xs: &[CVector]) -> Result<(Vec<CVector>, StackCache)> {
        match self {
            Stack::Recurrent(layers) => {
                let h0a = GruState::zeros(layers[0].hidden_dim());
                let (s1, c1) = gru_sequence_cached(&layers[0], &h0a, xs)?;
                let mid: Vec<CVector> = s1.into_iter().map(|s| s.h).collect();
                let h0b = GruState::zeros(layers[1].hidden_dim());
                let (s2, c2) = gru_sequence_cached(&layers[1], &h0b, &mid)?;
                let out = s2.into_iter().map(|s| s.h).collect();
                Ok((out, StackCache::Recurrent { caches: [c1, c2], mid }))
            }
            Stack::Feedforward(layers) => {
                let mut pre1 = Vec::with_capacity(xs.len());
                let mut mid = Vec::with_capacity(xs.len());
                let mut pre2 = Vec::with_capacity(xs.len());
                let mut out = Vec::with_capacity(xs.len());
                for x in xs {
                    let z1 = dense_forward(&layers[0].dense, x)?;
                    let a1 = modrelu(&z1, &layers[0].act_b)?;
                    let z2 = dense_forward(&layers[1].dense, &a1)?;
                    let a2 = modrelu(&z2, &layers[1].act_b)?;
                    pre1.push(z1);
                    mid.push(a1);
                    pre2.push(z2);
                    out.push(a2);
                }
                Ok((out, StackCache::Feedforward { pre: [pre1, pre2], mid }))
            }
        }
    }

    /// Backward over the whole sequence; `grad_out[t]` is the loss gradient
    /// at the stack output for step `t`. Returns per-step input gradients.
    fn backward(
        &self,
        xs: &[CVector],
        cache: &StackCache,
        grad_out: &[CVector],
        grads: &mut Stack,
    ) -> Result<Vec<CVector>> {
        match (self, cache, grads) {
            (Stack::Recurrent(layers), StackCache::Recurrent { caches, mid: _ }, Stack::Recurrent(g)) => {
                let (_, grad_mid) = gru_sequence_backward(&layers[1], &caches[1], grad_out, &mut g[1])?;
                let (_, grad_in) = gru_sequence_backward(&layers[0], &caches[0], &grad_mid, &mut g[0])?;
                Ok(grad_in)
            }
            (Stack::Feedforward(layers), StackCache::Feedforward { pre, mid }, Stack::Feedforward(g)) => {
                let mut grad_in = Vec::with_capacity(xs.len());
                for t in 0..xs.len() {
                    let gz2 = modrelu_backward(&pre[1][t], &layers[1].act_b, &grad_out[t], &mut g[1].act_b);
                    let ga1 = dense_backward(&layers[1].dense, &mid[t], &gz2, &mut g[1].dense)?;
                    let gz1 = modrelu_backward(&pre[0][t], &layers[0].act_b, &ga1, &mut g[0].act_b);
                    let gx = dense_backward(&layers[0].dense, &xs[t], &gz1, &mut g[0].dense)?;
                    grad_in.push(gx);
                }
                Ok(grad_in)
            }
            _ => Err(Error::Shape("stack/cache/grads architecture mismatch".into())),
        }
    }
}

/// The full model: encoder stack, posterior heads, decoder stack, output
/// head.
#[derive(Debug, Clone, PartialEq)]
pub struct CrvaeModel {
    pub cfg: ModelConfig,
    pub enc: Stack,
    pub head_mu: DenseParams,
    pub head_s: DenseParams,
    pub head_mphi: DenseParams,
    pub dec: Stack,
    pub dec_out: DenseParams,
}

/// Borrowed view of one named parameter tensor.
pub enum TensorMut<'a> {
    Complex(&'a mut [Complex64]),
    Real(&'a mut [f64]),
}

impl CrvaeModel {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<CrvaeModel> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_h = cfg.gru_units;
        let n_z = cfg.latent_dim;
        let mut model = CrvaeModel {
            cfg,
            enc: Stack::init(cfg.arch, cfg.step_dim(), n_h, &mut rng),
            head_mu: DenseParams::init(n_z, n_h, &mut rng),
            head_s: DenseParams::init(n_z, n_h, &mut rng),
            head_mphi: DenseParams::init(n_z, n_h, &mut rng),
            dec: Stack::init(cfg.arch, n_z, n_h, &mut rng),
            dec_out: DenseParams::init(cfg.step_dim(), n_h, &mut rng),
        };
        // Stabilization pass over the freshly sampled weights. The raw
        // complex-Glorot draw puts uniform mass on both planes, which roughly
        // doubles every stage's operator norm; cascaded through two GRU
        // layers, three heads, and the decoder this explodes activations (and
        // BPTT gradients by many orders of magnitude) before the first
        // optimizer step. Halving the matrices restores near-isometric
        // stages. The positive modReLU offsets keep every unit's
        // pre-activation margin away from the dead branch during the early
        // transient: a unit whose |z|+b goes non-positive passes exactly zero
        // gradient (including to b itself), so at practical learning rates an
        // all-dead layer is an absorbing state the optimizer cannot leave.
        model.visit_tensors_mut(&mut |name, dims, t| {
            if dims.len() == 2 {
                if let TensorMut::Complex(d) = t {
                    let s = if name == "dec_out.w" {
                        INIT_WEIGHT_SCALE * DEC_OUT_INIT_SCALE
                    } else {
                        INIT_WEIGHT_SCALE
                    };
                    d.iter_mut().for_each(|v| *v *= s);
                }
            } else if name.ends_with("modrelu_b") || name.ends_with("act_b") {
                if let TensorMut::Real(d) = t {
                    d.iter_mut().for_each(|v| *v = MODRELU_BIAS_INIT);
                }
            }
        });
        for b in model.head_s.b.data.iter_mut() {
            *b = Complex64::new(SIGMA_BIAS_INIT, b.im);
        }
        model.project_unitary_constraints()?;
        Ok(model)
    }

    pub fn zeros_like(&self) -> CrvaeModel {
        CrvaeModel {
            cfg: self.cfg,
            enc: self.enc.zeros_like(),
            head_mu: DenseParams::zeros(self.head_mu.w.rows, self.head_mu.w.cols),
            head_s: DenseParams::zeros(self.head_s.w.rows, self.head_s.w.cols),
            head_mphi: DenseParams::zeros(self.head_mphi.w.rows, self.head_mphi.w.cols),
            dec: self.dec.zeros_like(),
            dec_out: DenseParams::zeros(self.dec_out.w.rows, self.dec_out.w.cols),
        }
    }

    /// Visits every parameter tensor in a fixed, documented order. The same
    /// order defines the flat real view (real plane then imaginary plane per
    /// complex tensor) used by the optimizer and the checkpoint format.
    pub fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(String, Vec<u64>, TensorMut)) {
        visit_stack(&mut self.enc, "enc", f);
        visit_dense(&mut self.head_mu, "head_mu", f);
        visit_dense(&mut self.head_s, "head_s", f);
        visit_dense(&mut self.head_mphi, "head_mphi", f);
        visit_stack(&mut self.dec, "dec", f);
        visit_dense(&mut self.dec_out, "dec_out", f);
    }

    /// Number of real scalar parameters.
    pub fn param_count(&mut self) -> usize {
        let mut n = 0usize;
        self.visit_tensors_mut(&mut |_, _, t| {
            n += match t {
                TensorMut::Complex(s) => 2 * s.len(),
                TensorMut::Real(s) => s.len(),
            };
        });
        n
    }

    pub fn flatten(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_tensors_mut(&mut |_, _, t| match t {
            TensorMut::Complex(s) => {
                out.extend(s.iter().map(|z| z.re));
                out.extend(s.iter().map(|z| z.im));
            }
            TensorMut::Real(s) => out.extend_from_slice(s),
        });
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let mut pos = 0usize;
        let mut fail = false;
        self.visit_tensors_mut(&mut |_, _, t| match t {
            TensorMut::Complex(s) => {
                if pos + 2 * s.len() > flat.len() {
                    fail = true;
                    return;
                }
                let (re, rest) = flat[pos..].split_at(s.len());
                for ((z, r), i) in s.iter_mut().zip(re).zip(rest) {
                    *z = Complex64::new(*r, *i);
                }
                pos += 2 * s.len();
            }
            TensorMut::Real(s) => {
                if pos + s.len() > flat.len() {
                    fail = true;
                    return;
                }
                s.copy_from_slice(&flat[pos..pos + s.len()]);
                pos += s.len();
            }
        });
        if fail || pos != flat.len() {
            return Err(Error::Shape("unflatten: length mismatch".into()));
        }
        Ok(())
    }

    /// Matrices held unitary during training: the candidate recurrences, plus
    /// the gate recurrences when `constrain_all_recurrences` is set.
    fn constrained_matrices(&mut self) -> Vec<&mut CMatrix> {
        let all = self.cfg.constrain_all_recurrences;
        let mut out = Vec::new();
        for stack in [&mut self.enc, &mut self.dec] {
            if let Stack::Recurrent(layers) = stack {
                for layer in layers.iter_mut() {
                    out.push(&mut layer.w);
                    if all {
                        out.push(&mut layer.w_r);
                        out.push(&mut layer.w_z);
                    }
                }
            }
        }
        out
    }

    pub fn project_unitary_constraints(&mut self) -> Result<()> {
        for m in self.constrained_matrices() {
            *m = project_unitary(m)?;
        }
        Ok(())
    }

    pub fn max_unitarity_error(&mut self) -> f64 {
        self.constrained_matrices().into_iter().map(|m| unitarity_error(m)).fold(0.0, f64::max)
    }

    /// Runs the encoder stack and posterior heads over a step sequence.
    pub fn encode(&self, x_seq: &[CVector]) -> Result<Vec<LatentPosterior>> {
        let (posteriors, _) = self.encode_cached(x_seq)?;
        Ok(posteriors)
    }

    pub(crate) fn encode_cached(&self, x_seq: &[CVector]) -> Result<(Vec<LatentPosterior>, EncodeCache)> {
        for x in x_seq {
            if x.dim() != self.cfg.step_dim() {
                return Err(Error::Shape(format!(
                    "encode: step dim {} != {}",
                    x.dim(),
                    self.cfg.step_dim()
                )));
            }
        }
        let (hidden, stack_cache) = self.enc.forward(x_seq)?;
        let mut posteriors = Vec::with_capacity(x_seq.len());
        let mut head_cache = Vec::with_capacity(x_seq.len());
        for h in &hidden {
            let mu = dense_forward(&self.head_mu, h)?;
            let s_pre = dense_forward(&self.head_s, h)?;
            let mp_pre = dense_forward(&self.head_mphi, h)?;
            let n_z = mu.dim();
            let mut sigma = Vec::with_capacity(n_z);
            let mut delta = CVector::zeros(n_z);
            for j in 0..n_z {
                let sig = squash(s_pre.data[j].re, SIGMA_LOG_CAP).exp();
                let t = DELTA_RATIO_CAP * squash(mp_pre.data[j].re, 1.0);
                let phi = mp_pre.data[j].im;
                sigma.push(sig);
                delta.data[j] = sig * t * Complex64::new(phi.cos(), phi.sin());
            }
            posteriors.push(LatentPosterior { mu, sigma, delta });
            head_cache.push(HeadCache { s_pre, mp_pre });
        }
        Ok((posteriors, EncodeCache { hidden, stack_cache, head_cache }))
    }

    /// Runs the decoder stack and output head over a latent sequence.
    pub fn decode(&self, z_seq: &[CVector]) -> Result<Vec<CVector>> {
        let (out, _) = self.decode_cached(z_seq)?;
        Ok(out)
    }

    pub fn decode_cached(&self, z_seq: &[CVector]) -> Result<(Vec<CVector>, DecodeCache)> {
        for z in z_seq {
            if z.dim() != self.cfg.latent_dim {
                return Err(Error::Shape(format!(
                    "decode: latent dim {} != {}",
                    z.dim(),
                    self.cfg.latent_dim
                )));
            }
        }
        let (hidden, stack_cache) = self.dec.forward(z_seq)?;
        let mut out = Vec::with_capacity(z_seq.len());
        for h in &hidden {
            out.push(dense_forward(&self.dec_out, h)?);
        }
        Ok((out, DecodeCache { hidden, stack_cache }))
    }

    /// Full training-time forward pass: encode → reparameterize (fresh ε per
    /// step) → decode → per-step objective, averaged over steps.
    pub fn forward_step(
        &self,
        x_seq: &[CVector],
        target_seq: &[CVector],
        rng: &mut impl Rng,
    ) -> Result<(Vec<CVector>, Vec<LatentPosterior>, LossBreakdown)> {
        let n_z = self.cfg.latent_dim;
        let eps: Vec<(Vec<f64>, Vec<f64>)> = (0..x_seq.len())
            .map(|_| {
                (
                    (0..n_z).map(|_| rng.sample(StandardNormal)).collect(),
                    (0..n_z).map(|_| rng.sample(StandardNormal)).collect(),
                )
            })
            .collect();
        self.forward_with_eps(x_seq, target_seq, &eps)
    }

    pub fn forward_with_eps(
        &self,
        x_seq: &[CVector],
        target_seq: &[CVector],
        eps: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<(Vec<CVector>, Vec<LatentPosterior>, LossBreakdown)> {
        if x_seq.len() != target_seq.len() || x_seq.len() != eps.len() {
            return Err(Error::Shape("forward_with_eps: sequence length mismatch".into()));
        }
        let (posteriors, _) = self.encode_cached(x_seq)?;
        let mut z_seq = Vec::with_capacity(x_seq.len());
        for (q, (er, ei)) in posteriors.iter().zip(eps) {
            z_seq.push(reparameterize(q, er, ei)?);
        }
        let (xhat, _) = self.decode_cached(&z_seq)?;
        let loss = assemble_loss(target_seq, &xhat, &posteriors, self.cfg.kl_weight, self.cfg.loss_mode)?;
        Ok((xhat, posteriors, loss))
    }

    /// Forward + full backward. Accumulates parameter gradients (packed
    /// convention, already normalized by step count) into `grads`.
    pub fn forward_backward(
        &self,
        x_seq: &[CVector],
        target_seq: &[CVector],
        eps: &[(Vec<f64>, Vec<f64>)],
        grads: &mut CrvaeModel,
    ) -> Result<LossBreakdown> {
        if x_seq.len() != target_seq.len() || x_seq.len() != eps.len() {
            return Err(Error::Shape("forward_backward: sequence length mismatch".into()));
        }
        let steps = x_seq.len();
        if steps == 0 {
            return Ok(LossBreakdown::default());
        }
        let inv_t = 1.0 / steps as f64;
        let (posteriors, enc_cache) = self.encode_cached(x_seq)?;
        let mut z_seq = Vec::with_capacity(steps);
        for (q, (er, ei)) in posteriors.iter().zip(eps) {
            z_seq.push(reparameterize(q, er, ei)?);
        }
        let (xhat, dec_cache) = self.decode_cached(&z_seq)?;
        let loss = assemble_loss(target_seq, &xhat, &posteriors, self.cfg.kl_weight, self.cfg.loss_mode)?;

        // ---- backward ----
        // output head and decoder stack
        let mut grad_dec_hidden = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut g = match self.cfg.loss_mode {
                LossMode::L1Composite => reconstruction_grad(&target_seq[t], &xhat[t]),
                LossMode::L2Gaussian => reconstruction_grad_l2(&target_seq[t], &xhat[t]),
            };
            for v in g.data.iter_mut() {
                *v *= inv_t;
            }
            let gh = dense_backward(&self.dec_out, &dec_cache.hidden[t], &g, &mut grads.dec_out)?;
            grad_dec_hidden.push(gh);
        }
        let grad_z = self.dec.backward(&z_seq, &dec_cache.stack_cache, &grad_dec_hidden, &mut grads.dec)?;

        // reparameterization, KL, and posterior heads
        let mut grad_enc_hidden = Vec::with_capacity(steps);
        for t in 0..steps {
            let q = &posteriors[t];
            let (mut g_mu, mut g_sigma, mut g_delta) =
                reparameterize_backward(q, &eps[t].0, &eps[t].1, &grad_z[t]);
            let (kl_mu, kl_sigma, kl_delta) = kl_gradients(q);
            let w = self.cfg.kl_weight * inv_t;
            g_mu.axpy(Complex64::new(w, 0.0), &kl_mu);
            for j in 0..g_sigma.len() {
                g_sigma[j] += w * kl_sigma[j];
                g_delta.data[j] += w * kl_delta.data[j];
            }
            // chain through σ = exp(s), δ = σ·tanh(m)·e^{iφ}
            let hc = &enc_cache.head_cache[t];
            let n_z = q.dim();
            let mut g_s_pre = CVector::zeros(n_z);
            let mut g_mp_pre = CVector::zeros(n_z);
            for j in 0..n_z {
                let sig = q.sigma[j];
                let m_raw = hc.mp_pre.data[j].re;
                let tm = DELTA_RATIO_CAP * squash(m_raw, 1.0);
                let phi = hc.mp_pre.data[j].im;
                let (gdr, gdi) = (g_delta.data[j].re, g_delta.data[j].im);
                let sigma_total = g_sigma[j] + gdr * tm * phi.cos() + gdi * tm * phi.sin();
                let g_m = (gdr * sig * phi.cos() + gdi * sig * phi.sin())
                    * DELTA_RATIO_CAP
                    * squash_deriv(m_raw, 1.0);
                let g_phi = -gdr * sig * tm * phi.sin() + gdi * sig * tm * phi.cos();
                let s_raw = hc.s_pre.data[j].re;
                g_s_pre.data[j] =
                    Complex64::new(sigma_total * sig * squash_deriv(s_raw, SIGMA_LOG_CAP), 0.0);
                g_mp_pre.data[j] = Complex64::new(g_m, g_phi);
            }
            let h = &enc_cache.hidden[t];
            let mut gh = dense_backward(&self.head_mu, h, &g_mu, &mut grads.head_mu)?;
            gh.axpy(Complex64::new(1.0, 0.0), &dense_backward(&self.head_s, h, &g_s_pre, &mut grads.head_s)?);
            gh.axpy(
                Complex64::new(1.0, 0.0),
                &dense_backward(&self.head_mphi, h, &g_mp_pre, &mut grads.head_mphi)?,
            );
            grad_enc_hidden.push(gh);
        }
        self.enc.backward(x_seq, &enc_cache.stack_cache, &grad_enc_hidden, &mut grads.enc)?;
        Ok(loss)
    }

    /// Denoises a spectrogram: frames are grouped into non-overlapping
    /// blocks of `frames_per_step` (zero-padded tail), the model runs with
    /// ε = 0 (posterior mean), and the output frames are re-emitted in order
    /// with padding trimmed.
    pub fn enhance(&self, noisy: &Spectrogram) -> Result<Spectrogram> {
        if noisy.n_bins != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "enhance: spectrogram has {} bins, model expects {}",
                noisy.n_bins, self.cfg.input_dim
            )));
        }
        let fps = self.cfg.frames_per_step;
        let n_frames = noisy.frames.len();
        let n_blocks = n_frames.div_ceil(fps);
        let mut x_seq = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let mut v = CVector::zeros(self.cfg.step_dim());
            for f in 0..fps {
                let idx = b * fps + f;
                if idx < n_frames {
                    v.data[f * self.cfg.input_dim..(f + 1) * self.cfg.input_dim]
                        .copy_from_slice(&noisy.frames[idx]);
                }
            }
            x_seq.push(v);
        }
        let posteriors = self.encode(&x_seq)?;
        let z_seq: Vec<CVector> = posteriors.into_iter().map(|q| q.mu).collect();
        let xhat = self.decode(&z_seq)?;
        let mut frames = Vec::with_capacity(n_frames);
        'outer: for (b, block) in xhat.iter().enumerate() {
            for f in 0..fps {
                if b * fps + f >= n_frames {
                    break 'outer;
                }
                frames.push(block.data[f * self.cfg.input_dim..(f + 1) * self.cfg.input_dim].to_vec());
            }
        }
        Ok(Spectrogram {
            frames,
            n_bins: noisy.n_bins,
            frame_len: noisy.frame_len,
            hop: noisy.hop,
            window: noisy.window,
        })
    }
}

/// Waveform-level denoising: analysis STFT, input scaling, [`CrvaeModel::enhance`],
/// inverse scaling, and synthesis back to the original length.
pub fn enhance_waveform(
    model: &CrvaeModel,
    w: &crate::dsp::Waveform,
    frame_len: usize,
    hop: usize,
) -> Result<crate::dsp::Waveform> {
    use crate::dsp::{istft, stft, WindowKind, SPEC_SCALE};
    let mut spec = stft(w, frame_len, hop, WindowKind::HannPeriodic)?;
    for f in spec.frames.iter_mut() {
        for b in f.iter_mut() {
            *b *= SPEC_SCALE;
        }
    }
    let mut enh = model.enhance(&spec)?;
    for f in enh.frames.iter_mut() {
        for b in f.iter_mut() {
            *b /= SPEC_SCALE;
        }
    }
    istft(&enh, Some(w.len()))
}

pub(crate) struct HeadCache {
    s_pre: CVector,
    mp_pre: CVector,
}

pub(crate) struct EncodeCache {
    hidden: Vec<CVector>,
    stack_cache: StackCache,
    head_cache: Vec<HeadCache>,
}

pub struct DecodeCache {
    pub hidden: Vec<CVector>,
    pub stack_cache: StackCache,
}

/// Per-sequence objective: per-step ELBO terms summed and normalized by the
/// step count.
pub(crate) fn assemble_loss(
    targets: &[CVector],
    xhats: &[CVector],
    posteriors: &[LatentPosterior],
    kl_weight: f64,
    mode: LossMode,
) -> Result<LossBreakdown> {
    let mut total = LossBreakdown { kl_weight, ..Default::default() };
    for ((x, xhat), q) in targets.iter().zip(xhats).zip(posteriors) {
        total.accumulate(&elbo_loss(x, xhat, q, kl_weight, mode)?);
    }
    if !targets.is_empty() {
        total.scale(1.0 / targets.len() as f64);
    }
    Ok(total)
}

fn visit_dense(p: &mut DenseParams, prefix: &str, f: &mut dyn FnMut(String, Vec<u64>, TensorMut)) {
    f(
        format!("{prefix}.w"),
        vec![p.w.rows as u64, p.w.cols as u64],
        TensorMut::Complex(&mut p.w.data),
    );
    f(format!("{prefix}.b"), vec![p.b.dim() as u64], TensorMut::Complex(&mut p.b.data));
}

fn visit_gru(p: &mut GruParams, prefix: &str, f: &mut dyn FnMut(String, Vec<u64>, TensorMut)) {
    let nh = p.w.rows as u64;
    let nx = p.v.cols as u64;
    f(format!("{prefix}.w"), vec![nh, nh], TensorMut::Complex(&mut p.w.data));
    f(format!("{prefix}.v"), vec![nh, nx], TensorMut::Complex(&mut p.v.data));
    f(format!("{prefix}.b"), vec![nh], TensorMut::Complex(&mut p.b.data));
    f(format!("{prefix}.w_r"), vec![nh, nh], TensorMut::Complex(&mut p.w_r.data));
    f(format!("{prefix}.v_r"), vec![nh, nx], TensorMut::Complex(&mut p.v_r.data));
    f(format!("{prefix}.b_r"), vec![nh], TensorMut::Complex(&mut p.b_r.data));
    f(format!("{prefix}.w_z"), vec![nh, nh], TensorMut::Complex(&mut p.w_z.data));
    f(format!("{prefix}.v_z"), vec![nh, nx], TensorMut::Complex(&mut p.v_z.data));
    f(format!("{prefix}.b_z"), vec![nh], TensorMut::Complex(&mut p.b_z.data));
    f(format!("{prefix}.modrelu_b"), vec![nh], TensorMut::Real(&mut p.modrelu_b));
}

fn visit_stack(s: &mut Stack, prefix: &str, f: &mut dyn FnMut(String, Vec<u64>, TensorMut)) {
    match s {
        Stack::Recurrent(layers) => {
            for (i, layer) in layers.iter_mut().enumerate() {
                visit_gru(layer, &format!("{prefix}.gru{}", i + 1), f);
            }
        }
        Stack::Feedforward(layers) => {
            for (i, layer) in layers.iter_mut().enumerate() {
                visit_dense(&mut layer.dense, &format!("{prefix}.ff{}", i + 1), f);
                f(
                    format!("{prefix}.ff{}.act_b", i + 1),
                    vec![layer.act_b.len() as u64],
                    TensorMut::Real(&mut layer.act_b),
                );
            }
        }
    }
}
