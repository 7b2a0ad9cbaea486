//! Training loop: Adam over the flat real parameter view, re-projection of
//! the unitary recurrences after every step, dev-loss early stopping, and a
//! binary checkpoint format (`CRVAE001`) supporting exact resume.

use crate::ctensor::CVector;
use crate::cvae::{LossBreakdown, LossMode};
use crate::model::{Arch, CrvaeModel, ModelConfig, TensorMut};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRVAE001";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub segment_len: usize,
    /// Global L2 clip on the averaged gradient; 0 disables clipping.
    ///
    /// BPTT through the recurrent stacks produces occasional gradient spikes
    /// that destabilise Adam at the default learning rate; clipping the flat
    /// gradient norm keeps the step direction while bounding its raw scale.
    pub grad_clip: f64,
    pub seed: u64,
}

/// Rescales `grads` in place so its L2 norm is at most `clip`. No-op when
/// `clip <= 0` or the norm is already within bounds.
pub fn clip_grad_norm(grads: &mut [f64], clip: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if clip > 0.0 && norm > clip {
        let s = clip / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 100,
            patience: 10,
            batch_size: 8,
            segment_len: 50,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("TrainConfig: lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("TrainConfig: betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.segment_len == 0 || self.max_epochs == 0 {
            return Err(Error::Config("TrainConfig: sizes must be positive".into()));
        }
        Ok(())
    }
}

/// First/second-moment state for Adam, aligned with the flat parameter view.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], st: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != st.m.len() {
        return Err(Error::Shape("adam_step: length mismatch".into()));
    }
    st.t += 1;
    let b1t = 1.0 - cfg.beta1.powi(st.t as i32);
    let b2t = 1.0 - cfg.beta2.powi(st.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = st.m[i] / b1t;
        let vhat = st.v[i] / b2t;
        params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

/// One supervised training sequence: noisy input steps and clean targets.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub input: Vec<CVector>,
    pub target: Vec<CVector>,
}

/// Mutable loop state, carried inside checkpoints so a resumed run continues
/// bit-for-bit where it left off.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: AdamState,
    pub epoch: usize,
    pub best_dev_loss: f64,
    pub epochs_since_improve: usize,
    pub best_params: Vec<f64>,
}

impl TrainState {
    pub fn new(param_count: usize) -> Self {
        TrainState {
            adam: AdamState::new(param_count),
            epoch: 0,
            best_dev_loss: f64::INFINITY,
            epochs_since_improve: 0,
            best_params: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub rec_real: f64,
    pub rec_imag: f64,
    pub rec_mag: f64,
    pub kl: f64,
    pub total_train: f64,
    pub total_dev: f64,
}

pub const METRICS_HEADER: &str = "epoch\trec_real\trec_imag\trec_mag\tkl\ttotal_train\ttotal_dev";

impl EpochMetrics {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.rec_real, self.rec_imag, self.rec_mag, self.kl, self.total_train, self.total_dev
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_dev_loss: f64,
    pub history: Vec<EpochMetrics>,
}

fn item_rng(seed: u64, epoch: usize, item: usize) -> ChaCha8Rng {
    // stateless derivation so results do not depend on scheduling
    let mut x = seed
        ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (item as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 31;
    ChaCha8Rng::seed_from_u64(x)
}

fn draw_eps(rng: &mut impl Rng, steps: usize, n_z: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..steps)
        .map(|_| {
            (
                (0..n_z).map(|_| rng.sample(StandardNormal)).collect(),
                (0..n_z).map(|_| rng.sample(StandardNormal)).collect(),
            )
        })
        .collect()
}

/// Mean dev-set loss with ε frozen to zero (posterior mean), so the value is
/// a deterministic function of the parameters.
pub fn dev_loss(model: &CrvaeModel, dev: &[TrainItem]) -> Result<f64> {
    let n_z = model.cfg.latent_dim;
    let losses: Vec<Result<f64>> = dev
        .par_iter()
        .map(|item| {
            let eps = vec![(vec![0.0; n_z], vec![0.0; n_z]); item.input.len()];
            let (_, _, l) = model.forward_with_eps(&item.input, &item.target, &eps)?;
            Ok(l.total)
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / dev.len().max(1) as f64)
}

/// Runs epochs `state.epoch..cfg.max_epochs` with early stopping. The model
/// keeps its live (last-step) weights so a checkpoint resumes exactly;
/// `state.best_params` holds the best-dev weights for inference — restore
/// them with [`restore_best`] once training is finished for good.
pub fn train_loop(
    model: &mut CrvaeModel,
    train: &[TrainItem],
    dev: &[TrainItem],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::DegenerateInput("train_loop: empty training set".into()));
    }
    let n_params = model.param_count();
    if state.adam.m.len() != n_params {
        return Err(Error::Shape("train_loop: optimizer state does not match model".into()));
    }
    let n_z = model.cfg.latent_dim;
    let mut history = Vec::new();
    if let Some(w) = log.as_deref_mut() {
        if state.epoch == 0 {
            writeln!(w, "{METRICS_HEADER}")?;
        }
    }

    while state.epoch < cfg.max_epochs {
        let epoch = state.epoch;
        // seeded shuffle, independent of the parameter state
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x2545_f491_4f6c_dd1d) ^ 0x5eed);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut train_total = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(Vec<f64>, LossBreakdown)>> = batch
                .par_iter()
                .map(|&idx| {
                    let item = &train[idx];
                    let mut rng = item_rng(cfg.seed, epoch, idx);
                    let eps = draw_eps(&mut rng, item.input.len(), n_z);
                    let mut grads = model.zeros_like();
                    let loss = model.forward_backward(&item.input, &item.target, &eps, &mut grads)?;
                    Ok((grads.flatten(), loss))
                })
                .collect();
            let mut grad_sum = vec![0.0; n_params];
            let mut n_ok = 0usize;
            for r in results {
                let (g, l) = r?;
                for (a, b) in grad_sum.iter_mut().zip(&g) {
                    *a += b;
                }
                train_total.accumulate(&l);
                n_ok += 1;
            }
            let inv = 1.0 / n_ok as f64;
            for g in grad_sum.iter_mut() {
                *g *= inv;
            }
            clip_grad_norm(&mut grad_sum, cfg.grad_clip);
            let mut flat = model.flatten();
            adam_step(&mut flat, &grad_sum, &mut state.adam, cfg)?;
            model.unflatten(&flat)?;
            model.project_unitary_constraints()?;
        }
        train_total.scale(1.0 / train.len() as f64);

        let dl = if dev.is_empty() { train_total.total } else { dev_loss(model, dev)? };
        if !dl.is_finite() {
            return Err(Error::Numerical(format!("train_loop: dev loss diverged at epoch {epoch}")));
        }
        state.epoch += 1;
        let metrics = EpochMetrics {
            epoch: state.epoch,
            rec_real: train_total.rec_real,
            rec_imag: train_total.rec_imag,
            rec_mag: train_total.rec_mag,
            kl: train_total.kl,
            total_train: train_total.total,
            total_dev: dl,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", metrics.to_tsv())?;
        }
        history.push(metrics);

        if dl < state.best_dev_loss {
            state.best_dev_loss = dl;
            state.epochs_since_improve = 0;
            state.best_params = model.flatten();
        } else {
            state.epochs_since_improve += 1;
        }
        if state.epochs_since_improve >= cfg.patience {
            break;
        }
    }

    Ok(TrainOutcome { epochs_run: state.epoch, best_dev_loss: state.best_dev_loss, history })
}

/// Loads the best-dev weights recorded during training into the model.
pub fn restore_best(model: &mut CrvaeModel, state: &TrainState) -> Result<()> {
    if state.best_params.is_empty() {
        return Err(Error::Domain("restore_best: no completed epoch recorded".into()));
    }
    model.unflatten(&state.best_params)
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

pub struct Checkpoint {
    pub model: CrvaeModel,
    pub train_cfg: TrainConfig,
    pub state: TrainState,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint: truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        put_f64(out, *v);
    }
}

impl Checkpoint {
    pub fn to_bytes(&mut self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let mc = &self.model.cfg;
        put_u64(&mut out, mc.input_dim as u64);
        put_u64(&mut out, mc.frames_per_step as u64);
        put_u64(&mut out, mc.gru_units as u64);
        put_u64(&mut out, mc.latent_dim as u64);
        out.push(match mc.arch {
            Arch::Recurrent => 0,
            Arch::Feedforward => 1,
        });
        out.push(mc.constrain_all_recurrences as u8);
        out.push(match mc.loss_mode {
            LossMode::L1Composite => 0,
            LossMode::L2Gaussian => 1,
        });
        put_f64(&mut out, mc.kl_weight);

        let tc = &self.train_cfg;
        put_f64(&mut out, tc.lr);
        put_f64(&mut out, tc.beta1);
        put_f64(&mut out, tc.beta2);
        put_f64(&mut out, tc.adam_eps);
        put_u64(&mut out, tc.max_epochs as u64);
        put_u64(&mut out, tc.patience as u64);
        put_u64(&mut out, tc.batch_size as u64);
        put_u64(&mut out, tc.segment_len as u64);
        put_f64(&mut out, tc.grad_clip);
        put_u64(&mut out, tc.seed);

        put_u64(&mut out, self.state.epoch as u64);
        put_f64(&mut out, self.state.best_dev_loss);
        put_u64(&mut out, self.state.epochs_since_improve as u64);

        // named tensor records
        let mut records: Vec<(String, Vec<u64>, bool, Vec<f64>)> = Vec::new();
        self.model.visit_tensors_mut(&mut |name, dims, t| {
            let (complex, data) = match t {
                TensorMut::Complex(s) => {
                    let mut d: Vec<f64> = s.iter().map(|z| z.re).collect();
                    d.extend(s.iter().map(|z| z.im));
                    (true, d)
                }
                TensorMut::Real(s) => (false, s.to_vec()),
            };
            records.push((name, dims, complex, data));
        });
        put_u64(&mut out, records.len() as u64);
        for (name, dims, complex, data) in records {
            put_u64(&mut out, name.len() as u64);
            out.extend_from_slice(name.as_bytes());
            out.push(complex as u8);
            put_u64(&mut out, dims.len() as u64);
            for d in &dims {
                put_u64(&mut out, *d);
            }
            put_f64s(&mut out, &data);
        }

        put_u64(&mut out, self.state.adam.t);
        put_u64(&mut out, self.state.adam.m.len() as u64);
        put_f64s(&mut out, &self.state.adam.m);
        put_f64s(&mut out, &self.state.adam.v);
        put_u64(&mut out, self.state.best_params.len() as u64);
        put_f64s(&mut out, &self.state.best_params);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("checkpoint: bad magic".into()));
        }
        let model_cfg = ModelConfig {
            input_dim: c.u64()? as usize,
            frames_per_step: c.u64()? as usize,
            gru_units: c.u64()? as usize,
            latent_dim: c.u64()? as usize,
            arch: match c.u8()? {
                0 => Arch::Recurrent,
                1 => Arch::Feedforward,
                v => return Err(Error::Format(format!("checkpoint: unknown arch tag {v}"))),
            },
            constrain_all_recurrences: c.u8()? != 0,
            loss_mode: match c.u8()? {
                0 => LossMode::L1Composite,
                1 => LossMode::L2Gaussian,
                v => return Err(Error::Format(format!("checkpoint: unknown loss tag {v}"))),
            },
            kl_weight: c.f64()?,
        };
        let train_cfg = TrainConfig {
            lr: c.f64()?,
            beta1: c.f64()?,
            beta2: c.f64()?,
            adam_eps: c.f64()?,
            max_epochs: c.u64()? as usize,
            patience: c.u64()? as usize,
            batch_size: c.u64()? as usize,
            segment_len: c.u64()? as usize,
            grad_clip: c.f64()?,
            seed: c.u64()?,
        };
        let epoch = c.u64()? as usize;
        let best_dev_loss = c.f64()?;
        let epochs_since_improve = c.u64()? as usize;

        let mut model = CrvaeModel::init(model_cfg, 0)?;
        let n_records = c.u64()? as usize;
        let mut records = std::collections::HashMap::new();
        for _ in 0..n_records {
            let name_len = c.u64()? as usize;
            let name = String::from_utf8(c.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("checkpoint: non-utf8 tensor name".into()))?;
            let complex = c.u8()? != 0;
            let ndim = c.u64()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(c.u64()?);
            }
            let n: u64 = dims.iter().product();
            let len = if complex { 2 * n as usize } else { n as usize };
            records.insert(name, (dims, complex, c.f64_vec(len)?));
        }
        let mut load_err: Option<Error> = None;
        model.visit_tensors_mut(&mut |name, dims, t| {
            if load_err.is_some() {
                return;
            }
            let Some((rdims, complex, data)) = records.get(&name) else {
                load_err = Some(Error::Format(format!("checkpoint: missing tensor {name}")));
                return;
            };
            match t {
                TensorMut::Complex(s) => {
                    if !complex || *rdims != dims || data.len() != 2 * s.len() {
                        load_err = Some(Error::Format(format!("checkpoint: shape mismatch for {name}")));
                        return;
                    }
                    let (re, im) = data.split_at(s.len());
                    for ((z, r), i) in s.iter_mut().zip(re).zip(im) {
                        *z = num_complex::Complex64::new(*r, *i);
                    }
                }
                TensorMut::Real(s) => {
                    if *complex || *rdims != dims || data.len() != s.len() {
                        load_err = Some(Error::Format(format!("checkpoint: shape mismatch for {name}")));
                        return;
                    }
                    s.copy_from_slice(data);
                }
            }
        });
        if let Some(e) = load_err {
            return Err(e);
        }

        let t = c.u64()?;
        let m_len = c.u64()? as usize;
        let m = c.f64_vec(m_len)?;
        let v = c.f64_vec(m_len)?;
        let bp_len = c.u64()? as usize;
        let best_params = c.f64_vec(bp_len)?;
        if c.pos != buf.len() {
            return Err(Error::Format("checkpoint: trailing bytes".into()));
        }
        Ok(Checkpoint {
            model,
            train_cfg,
            state: TrainState {
                adam: AdamState { t, m, v },
                epoch,
                best_dev_loss,
                epochs_since_improve,
                best_params,
            },
        })
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        crate::data::atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
