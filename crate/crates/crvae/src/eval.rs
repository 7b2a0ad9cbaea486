//! Objective metrics: SI-SDR and ESTOI, plus corpus-level report assembly.

use crate::dsp::Waveform;
use crate::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;

/// SI-SDR cap applied when the residual is numerically zero.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio in dB: the estimate is
/// projected onto the reference before computing the energy ratio.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!("si_sdr: lengths {} vs {}", reference.len(), estimate.len())));
    }
    let ref_energy: f64 = reference.samples.iter().map(|v| v * v).sum();
    if ref_energy <= 0.0 {
        return Err(Error::Domain("si_sdr: zero reference".into()));
    }
    let dot: f64 = estimate.samples.iter().zip(&reference.samples).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let residual_energy: f64 = estimate
        .samples
        .iter()
        .zip(&reference.samples)
        .map(|(e, r)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    if residual_energy <= f64::EPSILON * target_energy {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok(10.0 * (target_energy / residual_energy).log10())
}

// ---------------------------------------------------------------------------
// ESTOI
// ---------------------------------------------------------------------------

const ESTOI_RATE: u32 = 10_000;
const ESTOI_FRAME: usize = 256;
const ESTOI_HOP: usize = 128;
const ESTOI_FFT: usize = 512;
const ESTOI_BANDS: usize = 15;
const ESTOI_BAND_START_HZ: f64 = 150.0;
const ESTOI_SEG: usize = 30; // 384 ms at 10 kHz / 128 hop
const ESTOI_DYN_RANGE_DB: f64 = 40.0;

/// Rational polyphase resampler (windowed-sinc lowpass).
pub fn resample(w: &Waveform, target_rate: u32) -> Waveform {
    if w.sample_rate == target_rate {
        return w.clone();
    }
    let g = gcd(w.sample_rate as usize, target_rate as usize);
    let up = target_rate as usize / g;
    let down = w.sample_rate as usize / g;
    // lowpass at π/max(up, down) in the upsampled domain
    let half_taps = 12 * up.max(down);
    let cutoff = 1.0 / up.max(down) as f64;
    let out_len = w.len() * up / down;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n * down; // position in the upsampled grid
        let mut acc = 0.0;
        let lo = center.saturating_sub(half_taps);
        let hi = (center + half_taps).min(w.len() * up - 1);
        // only multiples of `up` carry input samples
        let mut k = lo + (up - lo % up) % up;
        while k <= hi {
            let t = center as f64 - k as f64;
            let x = std::f64::consts::PI * t * cutoff;
            let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
            // Hann taper over the kernel support
            let win = 0.5 + 0.5 * (std::f64::consts::PI * t / half_taps as f64).cos();
            acc += w.samples[k / up] * sinc * win * cutoff * up as f64;
            k += up;
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / len as f64).cos()).collect()
}

/// Drops frames where the reference is more than 40 dB below its loudest
/// frame; both signals are rebuilt by overlap-add of the kept frames.
fn remove_silent_frames(x: &[f64], y: &[f64], framelen: usize, hop: usize) -> (Vec<f64>, Vec<f64>) {
    let win = hann(framelen);
    if x.len() < framelen {
        return (x.to_vec(), y.to_vec());
    }
    let n_frames = 1 + (x.len() - framelen) / hop;
    let energies: Vec<f64> = (0..n_frames)
        .map(|f| {
            let e: f64 = (0..framelen).map(|n| (x[f * hop + n] * win[n]).powi(2)).sum();
            10.0 * e.max(1e-300).log10()
        })
        .collect();
    let max = energies.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let keep: Vec<usize> = (0..n_frames).filter(|f| energies[*f] > max - ESTOI_DYN_RANGE_DB).collect();
    let out_len = if keep.is_empty() { 0 } else { (keep.len() - 1) * hop + framelen };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (i, f) in keep.iter().enumerate() {
        for n in 0..framelen {
            xs[i * hop + n] += x[f * hop + n] * win[n];
            ys[i * hop + n] += y[f * hop + n] * win[n];
        }
    }
    (xs, ys)
}

/// One-third-octave band envelope matrix (bands × frames).
fn band_envelopes(samples: &[f64]) -> Vec<Vec<f64>> {
    let win = hann(ESTOI_FRAME);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(ESTOI_FFT);
    let n_frames = if samples.len() < ESTOI_FRAME { 0 } else { 1 + (samples.len() - ESTOI_FRAME) / ESTOI_HOP };
    let bin_hz = ESTOI_RATE as f64 / ESTOI_FFT as f64;
    let edge = 2f64.powf(1.0 / 6.0);
    let bands: Vec<(usize, usize)> = (0..ESTOI_BANDS)
        .map(|j| {
            let cf = ESTOI_BAND_START_HZ * 2f64.powf(j as f64 / 3.0);
            let lo = (cf / edge / bin_hz).round() as usize;
            let hi = ((cf * edge / bin_hz).round() as usize).min(ESTOI_FFT / 2);
            (lo, hi.max(lo + 1))
        })
        .collect();
    let mut env = vec![vec![0.0; n_frames]; ESTOI_BANDS];
    let mut buf = vec![Complex64::new(0.0, 0.0); ESTOI_FFT];
    for f in 0..n_frames {
        for b in buf.iter_mut() {
            *b = Complex64::new(0.0, 0.0);
        }
        for n in 0..ESTOI_FRAME {
            buf[n] = Complex64::new(samples[f * ESTOI_HOP + n] * win[n], 0.0);
        }
        fft.process(&mut buf);
        for (j, (lo, hi)) in bands.iter().enumerate() {
            let e: f64 = buf[*lo..*hi].iter().map(|b| b.norm_sqr()).sum();
            env[j][f] = e.sqrt();
        }
    }
    env
}

/// Zero-mean, unit-norm normalization of a vector (in place).
fn normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Extended short-time objective intelligibility.
///
/// Pipeline: resample to 10 kHz, drop reference-silent frames (40 dB range),
/// 256-sample frames zero-padded to a 512-point FFT, 15 one-third-octave
/// band envelopes from 150 Hz, then per 30-frame segment a column-wise and
/// row-wise mean/variance normalization of the band matrices; the score is
/// the average over segments and bands of the row inner products.
pub fn estoi(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!("estoi: lengths {} vs {}", reference.len(), estimate.len())));
    }
    let r = resample(reference, ESTOI_RATE);
    let e = resample(estimate, ESTOI_RATE);
    let (rs, es) = remove_silent_frames(&r.samples, &e.samples, ESTOI_FRAME, ESTOI_HOP);
    let renv = band_envelopes(&rs);
    let eenv = band_envelopes(&es);
    let n_frames = renv[0].len();
    if n_frames < ESTOI_SEG {
        return Err(Error::Domain(format!(
            "estoi: need >= {ESTOI_SEG} frames ({} ms) of active speech, got {n_frames}",
            ESTOI_SEG * ESTOI_HOP * 1000 / ESTOI_RATE as usize
        )));
    }
    let mut total = 0.0;
    let n_segments = n_frames - ESTOI_SEG + 1;
    for m in 0..n_segments {
        // segment matrices, bands × ESTOI_SEG
        let mut xs: Vec<Vec<f64>> =
            (0..ESTOI_BANDS).map(|j| renv[j][m..m + ESTOI_SEG].to_vec()).collect();
        let mut ys: Vec<Vec<f64>> =
            (0..ESTOI_BANDS).map(|j| eenv[j][m..m + ESTOI_SEG].to_vec()).collect();
        // column (per-frame spectral) normalization
        for t in 0..ESTOI_SEG {
            let mut cx: Vec<f64> = (0..ESTOI_BANDS).map(|j| xs[j][t]).collect();
            let mut cy: Vec<f64> = (0..ESTOI_BANDS).map(|j| ys[j][t]).collect();
            normalize(&mut cx);
            normalize(&mut cy);
            for j in 0..ESTOI_BANDS {
                xs[j][t] = cx[j];
                ys[j][t] = cy[j];
            }
        }
        // row (per-band temporal) normalization and correlation
        let mut seg_score = 0.0;
        for j in 0..ESTOI_BANDS {
            normalize(&mut xs[j]);
            normalize(&mut ys[j]);
            seg_score += xs[j].iter().zip(&ys[j]).map(|(a, b)| a * b).sum::<f64>();
        }
        total += seg_score / ESTOI_BANDS as f64;
    }
    Ok(total / n_segments as f64)
}

// ---------------------------------------------------------------------------
// Corpus-level reports
// ---------------------------------------------------------------------------

/// Per-item metric scores.
#[derive(Debug, Clone)]
pub struct ItemScore {
    pub id: String,
    pub noise_type: String,
    pub si_sdr_db: f64,
    pub estoi: f64,
}

/// Per-noise-type aggregate over all SNRs.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub noise_type: String,
    pub n: usize,
    pub si_sdr_mean: f64,
    pub si_sdr_std: f64,
    pub estoi_mean: f64,
    pub estoi_std: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub items: Vec<ItemScore>,
    pub aggregates: Vec<Aggregate>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Item ids follow `<utt>__<noise>__snr<k>`; the noise type is the middle
/// field, or "unknown" when the id does not follow the convention.
pub fn noise_type_of(id: &str) -> String {
    let parts: Vec<&str> = id.split("__").collect();
    if parts.len() >= 2 {
        parts[1].to_string()
    } else {
        "unknown".to_string()
    }
}

/// Scores every (reference, estimate) pair and aggregates per noise type,
/// appending an AVE row over all items.
pub fn evaluate_items(pairs: &[(String, Waveform, Waveform)]) -> Result<MetricReport> {
    let mut items = Vec::with_capacity(pairs.len());
    for (id, reference, estimate) in pairs {
        items.push(ItemScore {
            id: id.clone(),
            noise_type: noise_type_of(id),
            si_sdr_db: si_sdr(reference, estimate)?,
            estoi: estoi(reference, estimate)?,
        });
    }
    let mut noise_types: Vec<String> = items.iter().map(|i| i.noise_type.clone()).collect();
    noise_types.sort();
    noise_types.dedup();
    let mut aggregates = Vec::new();
    for nt in &noise_types {
        let sdr: Vec<f64> = items.iter().filter(|i| &i.noise_type == nt).map(|i| i.si_sdr_db).collect();
        let st: Vec<f64> = items.iter().filter(|i| &i.noise_type == nt).map(|i| i.estoi).collect();
        let (sm, ss) = mean_std(&sdr);
        let (em, es) = mean_std(&st);
        aggregates.push(Aggregate {
            noise_type: nt.clone(),
            n: sdr.len(),
            si_sdr_mean: sm,
            si_sdr_std: ss,
            estoi_mean: em,
            estoi_std: es,
        });
    }
    let sdr: Vec<f64> = items.iter().map(|i| i.si_sdr_db).collect();
    let st: Vec<f64> = items.iter().map(|i| i.estoi).collect();
    let (sm, ss) = mean_std(&sdr);
    let (em, es) = mean_std(&st);
    aggregates.push(Aggregate {
        noise_type: "AVE".into(),
        n: sdr.len(),
        si_sdr_mean: sm,
        si_sdr_std: ss,
        estoi_mean: em,
        estoi_std: es,
    });
    Ok(MetricReport { items, aggregates })
}

pub const REPORT_HEADER: &str = "noise_type\tn\tsi_sdr_mean\tsi_sdr_std\testoi_mean\testoi_std";

impl MetricReport {
    /// Tab-separated report, 2-decimal formatting, one row per noise type
    /// plus the AVE row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for a in &self.aggregates {
            out.push_str(&format!(
                "{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\n",
                a.noise_type, a.n, a.si_sdr_mean, a.si_sdr_std, a.estoi_mean, a.estoi_std
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_utterance;
    use crate::dsp::SAMPLE_RATE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, len: usize) -> Waveform {
        Waveform::new(
            (0..len).map(|n| (std::f64::consts::TAU * freq * n as f64 / SAMPLE_RATE as f64).sin()).collect(),
            SAMPLE_RATE,
        )
    }

    #[test]
    fn si_sdr_identity_and_scale_capped() {
        let r = tone(440.0, 16000);
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        let doubled = Waveform::new(r.samples.iter().map(|v| 2.0 * v).collect(), SAMPLE_RATE);
        assert_eq!(si_sdr(&r, &doubled).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn si_sdr_orthogonal_noise_closed_form() {
        // reference: sine; noise: cosine at the same frequency over whole
        // periods is orthogonal to it
        let n = 16000;
        let r = tone(400.0, n);
        let ref_energy: f64 = r.samples.iter().map(|v| v * v).sum();
        let noise: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * 400.0 * i as f64 / SAMPLE_RATE as f64).cos())
            .collect();
        let noise_energy: f64 = noise.iter().map(|v| v * v).sum();
        let scale = (ref_energy / (10.0 * noise_energy)).sqrt(); // ‖n‖² = ‖r‖²/10
        let est = Waveform::new(
            r.samples.iter().zip(&noise).map(|(a, b)| a + scale * b).collect(),
            SAMPLE_RATE,
        );
        let got = si_sdr(&r, &est).unwrap();
        assert!((got - 10.0).abs() < 1e-6, "{got}");
    }

    #[test]
    fn si_sdr_scale_invariance_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Waveform::new((0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE);
        let e = Waveform::new(
            r.samples.iter().map(|v| v + 0.1 * rng.gen_range(-1.0..1.0)).collect(),
            SAMPLE_RATE,
        );
        let base = si_sdr(&r, &e).unwrap();
        for a in [0.1, 2.0, 17.5] {
            let scaled = Waveform::new(e.samples.iter().map(|v| a * v).collect(), SAMPLE_RATE);
            assert!((si_sdr(&r, &scaled).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn si_sdr_errors() {
        let r = tone(440.0, 100);
        assert!(si_sdr(&r, &Waveform::new(vec![0.0; 50], SAMPLE_RATE)).is_err());
        let zero = Waveform::new(vec![0.0; 100], SAMPLE_RATE);
        assert!(si_sdr(&zero, &r).is_err());
    }

    #[test]
    fn resample_preserves_tone_frequency() {
        let w = tone(1000.0, 16000);
        let r = resample(&w, 10_000);
        assert_eq!(r.sample_rate, 10_000);
        assert_eq!(r.len(), 10_000);
        // count zero crossings in the middle portion: 1 kHz → ~2000/s
        let mid = &r.samples[1000..9000];
        let crossings = mid.windows(2).filter(|p| p[0].signum() != p[1].signum()).count();
        let freq = crossings as f64 / 2.0 / 0.8;
        assert!((freq - 1000.0).abs() < 20.0, "freq {freq}");
    }

    #[test]
    fn estoi_self_score_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = synth_utterance(&mut rng, 2.0, SAMPLE_RATE);
        let s = estoi(&w, &w).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "self score {s}");
    }

    #[test]
    fn estoi_white_noise_scores_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = synth_utterance(&mut rng, 2.0, SAMPLE_RATE);
        let noise = Waveform::new((0..w.len()).map(|_| rng.gen_range(-0.5..0.5)).collect(), SAMPLE_RATE);
        let s = estoi(&w, &noise).unwrap();
        assert!(s < 0.2, "noise score {s}");
    }

    #[test]
    fn estoi_positive_scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = synth_utterance(&mut rng, 2.0, SAMPLE_RATE);
        let est = Waveform::new(
            w.samples.iter().map(|v| v + 0.05 * rng.gen_range(-1.0..1.0)).collect(),
            SAMPLE_RATE,
        );
        let base = estoi(&w, &est).unwrap();
        let scaled = Waveform::new(est.samples.iter().map(|v| 3.7 * v).collect(), SAMPLE_RATE);
        assert!((estoi(&w, &scaled).unwrap() - base).abs() < 1e-8);
    }

    #[test]
    fn estoi_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = synth_utterance(&mut rng, 1.5, SAMPLE_RATE);
        let inv = Waveform::new(w.samples.iter().map(|v| -v).collect(), SAMPLE_RATE);
        let s = estoi(&w, &inv).unwrap();
        assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn estoi_too_short_errors() {
        let w = tone(440.0, 1600);
        assert!(matches!(estoi(&w, &w), Err(Error::Domain(_))));
    }

    #[test]
    fn report_single_item_aggregates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = synth_utterance(&mut rng, 2.0, SAMPLE_RATE);
        let e = Waveform::new(
            w.samples.iter().map(|v| v + 0.1 * rng.gen_range(-1.0..1.0)).collect(),
            SAMPLE_RATE,
        );
        let rep = evaluate_items(&[("utt0__white__snr0".into(), w, e)]).unwrap();
        assert_eq!(rep.items.len(), 1);
        let white = rep.aggregates.iter().find(|a| a.noise_type == "white").unwrap();
        assert_eq!(white.n, 1);
        assert_eq!(white.si_sdr_std, 0.0);
        assert!((white.si_sdr_mean - rep.items[0].si_sdr_db).abs() < 1e-12);
        let ave = rep.aggregates.last().unwrap();
        assert_eq!(ave.noise_type, "AVE");
    }

    #[test]
    fn report_aggregation_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pairs = Vec::new();
        for i in 0..3 {
            let w = synth_utterance(&mut rng, 2.0, SAMPLE_RATE);
            let e = Waveform::new(
                w.samples.iter().map(|v| v + 0.2 * rng.gen_range(-1.0..1.0)).collect(),
                SAMPLE_RATE,
            );
            pairs.push((format!("utt{i}__white__snr0"), w, e));
        }
        let rep = evaluate_items(&pairs).unwrap();
        let scores: Vec<f64> = rep.items.iter().map(|i| i.si_sdr_db).collect();
        let mean = scores.iter().sum::<f64>() / 3.0;
        let std = (scores.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2.0).sqrt();
        let agg = rep.aggregates.iter().find(|a| a.noise_type == "white").unwrap();
        assert!((agg.si_sdr_mean - mean).abs() < 1e-12);
        assert!((agg.si_sdr_std - std).abs() < 1e-12);
        assert!(rep.to_tsv().starts_with(REPORT_HEADER));
    }
}
