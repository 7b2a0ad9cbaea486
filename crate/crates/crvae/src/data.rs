//! Corpus handling: WAV I/O, RMS normalization, energy VAD, SNR-controlled
//! mixing, manifests, and the synthetic desk-scale corpus generator.

use crate::dsp::Waveform;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// VAD framing: 20 ms frames, 10 ms hop at 16 kHz.
pub const VAD_FRAME: usize = 320;
pub const VAD_HOP: usize = 160;
/// Relative energy threshold below the loudest frame.
pub const VAD_THRESHOLD_DB: f64 = 40.0;

/// One mixing job: clean/noise identifiers, target SNR, noise placement.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub clean_id: String,
    pub noise_id: String,
    pub snr_db: f64,
    pub noise_offset: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split '{other}'"))),
        }
    }
}

/// Corpus layout: speech utterances with splits plus seen/unseen noise files.
#[derive(Debug, Clone, Default)]
pub struct CorpusManifest {
    pub speech: Vec<(PathBuf, Split)>,
    pub noise: Vec<(PathBuf, bool)>, // (path, seen)
}

impl CorpusManifest {
    pub fn speech_in(&self, split: Split) -> Vec<&PathBuf> {
        self.speech.iter().filter(|(_, s)| *s == split).map(|(p, _)| p).collect()
    }

    pub fn seen_noise(&self) -> Vec<&PathBuf> {
        self.noise.iter().filter(|(_, seen)| *seen).map(|(p, _)| p).collect()
    }

    pub fn unseen_noise(&self) -> Vec<&PathBuf> {
        self.noise.iter().filter(|(_, seen)| !seen).map(|(p, _)| p).collect()
    }

    /// Serializes as one `<split>\t<role>\t<path>` line per entry.
    pub fn to_string(&self) -> String {
        let mut out = String::new();
        for (path, split) in &self.speech {
            out.push_str(&format!("{}\tspeech\t{}\n", split.as_str(), path.display()));
        }
        for (path, seen) in &self.noise {
            let role = if *seen { "noise-seen" } else { "noise-unseen" };
            out.push_str(&format!("all\t{}\t{}\n", role, path.display()));
        }
        out
    }

    pub fn parse(text: &str) -> Result<CorpusManifest> {
        let mut m = CorpusManifest::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (split, role, path) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(Error::Format(format!("manifest line {}: expected 3 fields", lineno + 1))),
            };
            match role {
                "speech" => m.speech.push((PathBuf::from(path), Split::parse(split)?)),
                "noise-seen" => m.noise.push((PathBuf::from(path), true)),
                "noise-unseen" => m.noise.push((PathBuf::from(path), false)),
                other => return Err(Error::Format(format!("manifest line {}: unknown role '{other}'", lineno + 1))),
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<CorpusManifest> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        CorpusManifest::parse(&text)
    }
}

/// Scales the waveform to unit RMS power.
pub fn rms_normalize(w: &Waveform) -> Result<Waveform> {
    let rms = w.rms();
    if rms <= 0.0 {
        return Err(Error::DegenerateInput("rms_normalize: silent input".into()));
    }
    Ok(Waveform::new(w.samples.iter().map(|s| s / rms).collect(), w.sample_rate))
}

/// Energy VAD: one boolean per 20 ms frame (10 ms hop); a frame is active iff
/// its RMS exceeds the loudest frame's RMS by less than 40 dB.
pub fn active_region_mask(w: &Waveform) -> Result<Vec<bool>> {
    if w.len() < VAD_FRAME {
        return Err(Error::DegenerateInput("active_region_mask: signal shorter than one frame".into()));
    }
    let n_frames = 1 + (w.len() - VAD_FRAME) / VAD_HOP;
    let rms: Vec<f64> = (0..n_frames)
        .map(|f| {
            let s = &w.samples[f * VAD_HOP..f * VAD_HOP + VAD_FRAME];
            (s.iter().map(|v| v * v).sum::<f64>() / VAD_FRAME as f64).sqrt()
        })
        .collect();
    let max = rms.iter().fold(0.0f64, |a, b| a.max(*b));
    if max <= 0.0 {
        return Err(Error::DegenerateInput("active_region_mask: all-silent input".into()));
    }
    let thresh = max * 10f64.powf(-VAD_THRESHOLD_DB / 20.0);
    Ok(rms.iter().map(|r| *r > thresh).collect())
}

/// Mean power of the samples covered by active VAD frames.
fn active_power(w: &Waveform, mask: &[bool]) -> f64 {
    let mut covered = vec![false; w.len()];
    for (f, active) in mask.iter().enumerate() {
        if *active {
            for c in covered.iter_mut().skip(f * VAD_HOP).take(VAD_FRAME) {
                *c = true;
            }
        }
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for (s, c) in w.samples.iter().zip(&covered) {
        if *c {
            acc += s * s;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// Extracts a clean-length noise excerpt starting at `offset`, tiling the
/// noise file if necessary.
fn noise_excerpt(noise: &Waveform, offset: usize, len: usize) -> Vec<f64> {
    (0..len).map(|i| noise.samples[(offset + i) % noise.samples.len()]).collect()
}

/// Adds noise scaled so the speech-active power of `clean` over the VAD mask
/// stands `spec.snr_db` above the noise excerpt's power.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, spec: &MixSpec) -> Result<Waveform> {
    if noise.is_empty() {
        return Err(Error::DegenerateInput("mix_at_snr: empty noise".into()));
    }
    let mask = active_region_mask(clean)?;
    if !mask.iter().any(|m| *m) {
        return Err(Error::DegenerateInput("mix_at_snr: degenerate VAD mask".into()));
    }
    let p_clean = active_power(clean, &mask);
    let excerpt = noise_excerpt(noise, spec.noise_offset, clean.len());
    let p_noise = excerpt.iter().map(|v| v * v).sum::<f64>() / excerpt.len() as f64;
    if p_noise <= 0.0 {
        return Err(Error::DegenerateInput("mix_at_snr: silent noise excerpt".into()));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    let samples = clean.samples.iter().zip(&excerpt).map(|(c, n)| c + gain * n).collect();
    Ok(Waveform::new(samples, clean.sample_rate))
}

/// Training-time SNR draw: discrete uniform over the 21 integers −10..=10.
pub fn draw_snr_db(rng: &mut impl Rng) -> f64 {
    rng.gen_range(-10i32..=10) as f64
}

/// Evaluation SNR grid.
pub const EVAL_SNRS_DB: [f64; 5] = [-6.0, -3.0, 0.0, 3.0, 6.0];

// ---------------------------------------------------------------------------
// WAV I/O (PCM16 mono little-endian RIFF)
// ---------------------------------------------------------------------------

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}

fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(Error::Format("truncated chunk".into()));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format("short fmt chunk".into()));
                }
                let audio_format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((audio_format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1); // chunks are word-aligned
    }
    let (audio_format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    if audio_format != 1 || channels != 1 || bits != 16 {
        return Err(Error::Format(format!(
            "unsupported encoding: format={audio_format} channels={channels} bits={bits} (need PCM16 mono)"
        )));
    }
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform::new(samples, rate))
}

/// Writes PCM16 mono; returns the number of samples clipped to full scale.
/// The file is written atomically (temp file + rename).
pub fn write_wav(path: &Path, w: &Waveform) -> Result<usize> {
    let mut clipped = 0usize;
    let mut pcm = Vec::with_capacity(w.len() * 2);
    for s in &w.samples {
        let scaled = s * 32768.0;
        let v = if scaled > i16::MAX as f64 {
            clipped += 1;
            i16::MAX
        } else if scaled < i16::MIN as f64 {
            clipped += 1;
            i16::MIN
        } else {
            scaled.round() as i16
        };
        pcm.extend_from_slice(&v.to_le_bytes());
    }
    let data_len = pcm.len() as u32;
    let mut bytes = Vec::with_capacity(44 + pcm.len());
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&w.sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    bytes.extend_from_slice(&pcm);
    atomic_write(path, &bytes)?;
    Ok(clipped)
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::File::create(&tmp)?.write_all(bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Toy corpus
// ---------------------------------------------------------------------------

/// Synthesizes one speech-like utterance: alternating voiced segments (a sum
/// of 3–5 harmonically related AM tones) and silent pauses.
pub fn synth_utterance(rng: &mut impl Rng, duration_s: f64, sample_rate: u32) -> Waveform {
    let total = (duration_s * sample_rate as f64) as usize;
    let mut samples = vec![0.0f64; total];
    let mut pos = 0usize;
    let mut voiced = true;
    while pos < total {
        let seg_s = if voiced { rng.gen_range(0.3..0.6) } else { rng.gen_range(0.15..0.3) };
        let seg = ((seg_s * sample_rate as f64) as usize).min(total - pos);
        if voiced {
            let f0 = rng.gen_range(90.0..250.0);
            let n_harm = rng.gen_range(3..=5usize);
            let am_rate = rng.gen_range(2.0..6.0);
            let amps: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.3..1.0)).collect();
            for n in 0..seg {
                let t = n as f64 / sample_rate as f64;
                let am = 0.6 + 0.4 * (std::f64::consts::TAU * am_rate * t).sin();
                // raised-cosine fade at segment edges avoids clicks
                let fade_len = (0.01 * sample_rate as f64) as usize;
                let fade = if n < fade_len {
                    0.5 - 0.5 * (std::f64::consts::PI * n as f64 / fade_len as f64).cos()
                } else if n + fade_len > seg {
                    0.5 - 0.5 * (std::f64::consts::PI * (seg - n) as f64 / fade_len as f64).cos()
                } else {
                    1.0
                };
                let mut v = 0.0;
                for (h, a) in amps.iter().enumerate() {
                    v += a * (std::f64::consts::TAU * f0 * (h + 1) as f64 * t).sin();
                }
                samples[pos + n] = 0.25 * am * fade * v;
            }
        }
        pos += seg;
        voiced = !voiced;
    }
    Waveform::new(samples, sample_rate)
}

/// White Gaussian noise.
pub fn synth_white_noise(rng: &mut impl Rng, len: usize, sample_rate: u32) -> Waveform {
    Waveform::new((0..len).map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)).collect(), sample_rate)
}

/// Pink noise via 1/√f spectral shaping of white noise.
pub fn synth_pink_noise(rng: &mut impl Rng, len: usize, sample_rate: u32) -> Waveform {
    use rustfft::FftPlanner;
    let n = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<num_complex::Complex64> = (0..n)
        .map(|_| num_complex::Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 { k } else { n - k } as f64;
        *b *= if f > 0.0 { 1.0 / f.sqrt() } else { 0.0 };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let raw: Vec<f64> = buf[..len].iter().map(|b| b.re * scale).collect();
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    Waveform::new(raw.iter().map(|v| 0.2 * v / rms).collect(), sample_rate)
}

/// Babble surrogate: sum of many independent toy utterances, dense enough
/// that no single voice dominates.
pub fn synth_babble_noise(rng: &mut impl Rng, len: usize, sample_rate: u32) -> Waveform {
    let dur = len as f64 / sample_rate as f64;
    let mut acc = vec![0.0f64; len];
    for _ in 0..48 {
        let u = synth_utterance(rng, dur, sample_rate);
        for (a, s) in acc.iter_mut().zip(&u.samples) {
            *a += s;
        }
    }
    let rms = (acc.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    Waveform::new(acc.iter().map(|v| 0.2 * v / rms.max(1e-12)).collect(), sample_rate)
}

/// Writes a deterministic toy corpus (speech + white/pink seen noise +
/// babble-surrogate unseen noise) under `out_dir` and returns its manifest.
pub fn generate_toy_corpus(
    out_dir: &Path,
    seed: u64,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    duration_s: f64,
) -> Result<CorpusManifest> {
    if n_train + n_dev + n_test == 0 {
        return Err(Error::Config("generate_toy_corpus: need at least one utterance".into()));
    }
    let sample_rate = crate::dsp::SAMPLE_RATE;
    let mut manifest = CorpusManifest::default();
    let splits = [(Split::Train, n_train), (Split::Dev, n_dev), (Split::Test, n_test)];
    let mut utt_index = 0usize;
    for (split, count) in splits {
        for _ in 0..count {
            // one rng stream per utterance keeps the corpus stable if counts change
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5eec_0000 + utt_index as u64));
            let w = synth_utterance(&mut rng, duration_s, sample_rate);
            let path = out_dir.join(format!("utts/{}_{utt_index:03}.wav", split.as_str()));
            write_wav(&path, &w)?;
            manifest.speech.push((path, split));
            utt_index += 1;
        }
    }
    let noise_len = (30.0 * sample_rate as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0015_e000);
    let white = synth_white_noise(&mut rng, noise_len, sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0015_e001);
    let pink = synth_pink_noise(&mut rng, noise_len, sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0015_e002);
    let babble = synth_babble_noise(&mut rng, noise_len, sample_rate);
    for (name, w, seen) in [("white", &white, true), ("pink", &pink, true), ("babble", &babble, false)] {
        let path = out_dir.join(format!("noise/{name}.wav"));
        write_wav(&path, w)?;
        manifest.noise.push((path, seen));
    }
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Mixture assembly and spectrogram step sequences
// ---------------------------------------------------------------------------

/// One mixed utterance with its clean reference.
#[derive(Debug, Clone)]
pub struct MixturePair {
    pub id: String,
    pub noise_type: String,
    pub seen: bool,
    pub snr_db: f64,
    pub clean: Waveform,
    pub noisy: Waveform,
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "unknown".into())
}

fn load_noises(entries: &[&PathBuf]) -> Result<Vec<(String, Waveform)>> {
    entries.iter().map(|p| Ok((file_stem(p), read_wav(p)?))).collect()
}

/// Builds one mixture per utterance in `split`: a seen noise, an integer SNR
/// drawn uniformly from −10..10 dB, and a random noise offset, all derived
/// deterministically from `seed`.
pub fn build_training_mixtures(
    manifest: &CorpusManifest,
    split: Split,
    seed: u64,
) -> Result<Vec<MixturePair>> {
    let noises = load_noises(&manifest.seen_noise())?;
    if noises.is_empty() {
        return Err(Error::DegenerateInput("build_training_mixtures: no seen noise".into()));
    }
    let mut out = Vec::new();
    for (i, utt) in manifest.speech_in(split).into_iter().enumerate() {
        let clean = rms_normalize(&read_wav(utt)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x31f7,
        );
        for (noise_type, noise) in &noises {
            let snr_db = draw_snr_db(&mut rng);
            let spec = MixSpec {
                clean_id: file_stem(utt),
                noise_id: noise_type.clone(),
                snr_db,
                noise_offset: rng.gen_range(0..noise.len()),
                seed,
            };
            let noisy = mix_at_snr(&clean, noise, &spec)?;
            out.push(MixturePair {
                id: format!("{}__{}__snr{}", spec.clean_id, noise_type, snr_db as i64),
                noise_type: noise_type.clone(),
                seen: true,
                snr_db,
                clean: clean.clone(),
                noisy,
            });
        }
    }
    Ok(out)
}

/// Builds the full evaluation grid for `split`: every utterance × every noise
/// file (seen and unseen) × every SNR in [`EVAL_SNRS_DB`].
pub fn build_eval_mixtures(manifest: &CorpusManifest, split: Split, seed: u64) -> Result<Vec<MixturePair>> {
    let mut noises: Vec<(String, Waveform, bool)> = Vec::new();
    for p in manifest.seen_noise() {
        noises.push((file_stem(p), read_wav(p)?, true));
    }
    for p in manifest.unseen_noise() {
        noises.push((file_stem(p), read_wav(p)?, false));
    }
    if noises.is_empty() {
        return Err(Error::DegenerateInput("build_eval_mixtures: no noise files".into()));
    }
    let mut out = Vec::new();
    for (i, utt) in manifest.speech_in(split).into_iter().enumerate() {
        let clean = rms_normalize(&read_wav(utt)?)?;
        for (j, (noise_type, noise, seen)) in noises.iter().enumerate() {
            for (k, snr_db) in EVAL_SNRS_DB.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ ((i * 1009 + j * 131 + k) as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9),
                );
                let spec = MixSpec {
                    clean_id: file_stem(utt),
                    noise_id: noise_type.clone(),
                    snr_db: *snr_db,
                    noise_offset: rng.gen_range(0..noise.len()),
                    seed,
                };
                let noisy = mix_at_snr(&clean, noise, &spec)?;
                out.push(MixturePair {
                    id: format!("{}__{}__snr{}", spec.clean_id, noise_type, *snr_db as i64),
                    noise_type: noise_type.clone(),
                    seen: *seen,
                    snr_db: *snr_db,
                    clean: clean.clone(),
                    noisy,
                });
            }
        }
    }
    Ok(out)
}

/// STFT, global scaling by [`crate::dsp::SPEC_SCALE`], and packing of
/// consecutive frame blocks into model step vectors (zero-padded tail).
pub fn steps_from_waveform(
    w: &Waveform,
    frame_len: usize,
    hop: usize,
    frames_per_step: usize,
) -> Result<Vec<crate::ctensor::CVector>> {
    use crate::dsp::{stft, WindowKind, SPEC_SCALE};
    let spec = stft(w, frame_len, hop, WindowKind::HannPeriodic)?;
    let n_bins = spec.n_bins;
    let n_blocks = spec.frames.len().div_ceil(frames_per_step);
    let mut steps = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let mut v = crate::ctensor::CVector::zeros(n_bins * frames_per_step);
        for f in 0..frames_per_step {
            let idx = b * frames_per_step + f;
            if idx < spec.frames.len() {
                for (dst, src) in v.data[f * n_bins..(f + 1) * n_bins].iter_mut().zip(&spec.frames[idx]) {
                    *dst = src * SPEC_SCALE;
                }
            }
        }
        steps.push(v);
    }
    Ok(steps)
}

/// Splits aligned step sequences into consecutive segments of at most
/// `segment_len` steps (the tail segment may be shorter).
pub fn segment_pairs(
    noisy: &[crate::ctensor::CVector],
    clean: &[crate::ctensor::CVector],
    segment_len: usize,
) -> Result<Vec<(Vec<crate::ctensor::CVector>, Vec<crate::ctensor::CVector>)>> {
    if noisy.len() != clean.len() {
        return Err(Error::DataAlignment(format!(
            "segment_pairs: {} noisy vs {} clean steps",
            noisy.len(),
            clean.len()
        )));
    }
    Ok(noisy
        .chunks(segment_len)
        .zip(clean.chunks(segment_len))
        .map(|(n, c)| (n.to_vec(), c.to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;

    fn tone(freq: f64, len: usize) -> Waveform {
        Waveform::new(
            (0..len).map(|n| (std::f64::consts::TAU * freq * n as f64 / SAMPLE_RATE as f64).sin()).collect(),
            SAMPLE_RATE,
        )
    }

    #[test]
    fn rms_normalize_cases() {
        let w = Waveform::new(vec![0.5; 1000], SAMPLE_RATE);
        let n = rms_normalize(&w).unwrap();
        assert!(n.samples.iter().all(|s| (s - 1.0).abs() < 1e-12));
        let again = rms_normalize(&n).unwrap();
        assert_eq!(again.samples, n.samples);
        assert!((rms_normalize(&tone(440.0, 16000)).unwrap().rms() - 1.0).abs() < 1e-9);
        assert!(rms_normalize(&Waveform::new(vec![0.0; 100], SAMPLE_RATE)).is_err());
    }

    #[test]
    fn vad_pure_tone_all_active() {
        let mask = active_region_mask(&tone(440.0, 16000)).unwrap();
        assert!(mask.iter().all(|m| *m));
    }

    #[test]
    fn vad_tone_then_silence() {
        let mut s = tone(440.0, 8000).samples;
        s.extend(vec![0.0; 8000]);
        let mask = active_region_mask(&Waveform::new(s, SAMPLE_RATE)).unwrap();
        let n = mask.len();
        assert!(mask[..n / 2 - 2].iter().all(|m| *m));
        assert!(mask[n / 2 + 2..].iter().all(|m| !m));
    }

    #[test]
    fn vad_burst_boundaries() {
        // 0.5 s silence, 0.5 s burst, 0.5 s silence
        let mut s = vec![0.0; 8000];
        s.extend(tone(300.0, 8000).samples);
        s.extend(vec![0.0; 8000]);
        let mask = active_region_mask(&Waveform::new(s, SAMPLE_RATE)).unwrap();
        // frame f covers samples [160f, 160f+320): burst spans samples 8000..16000
        let first_active = mask.iter().position(|m| *m).unwrap();
        let last_active = mask.iter().rposition(|m| *m).unwrap();
        let expect_first = (8000 - VAD_FRAME) / VAD_HOP + 1;
        let expect_last = 16000 / VAD_HOP - 1;
        assert!((first_active as i64 - expect_first as i64).abs() <= 1);
        assert!((last_active as i64 - expect_last as i64).abs() <= 1);
    }

    #[test]
    fn vad_silent_errors() {
        assert!(active_region_mask(&Waveform::new(vec![0.0; 16000], SAMPLE_RATE)).is_err());
    }

    fn measured_snr(clean: &Waveform, mixed: &Waveform) -> f64 {
        let mask = active_region_mask(clean).unwrap();
        let p_clean = active_power(clean, &mask);
        let noise: Vec<f64> = mixed.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect();
        let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        10.0 * (p_clean / p_noise).log10()
    }

    #[test]
    fn mix_hits_target_snr() {
        let clean = rms_normalize(&tone(440.0, 32000)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = synth_white_noise(&mut rng, 48000, SAMPLE_RATE);
        for snr in [-10.0, -3.0, 0.0, 5.0, 10.0] {
            let spec = MixSpec {
                clean_id: "c".into(),
                noise_id: "n".into(),
                snr_db: snr,
                noise_offset: 123,
                seed: 0,
            };
            let mixed = mix_at_snr(&clean, &noise, &spec).unwrap();
            assert!((measured_snr(&clean, &mixed) - snr).abs() < 0.01, "snr {snr}");
        }
    }

    #[test]
    fn mix_high_snr_approaches_clean() {
        let clean = rms_normalize(&tone(440.0, 32000)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = synth_white_noise(&mut rng, 48000, SAMPLE_RATE);
        let spec = MixSpec { clean_id: "c".into(), noise_id: "n".into(), snr_db: 60.0, noise_offset: 0, seed: 0 };
        let mixed = mix_at_snr(&clean, &noise, &spec).unwrap();
        let err: f64 = mixed.samples.iter().zip(&clean.samples).map(|(m, c)| (m - c) * (m - c)).sum();
        let sig: f64 = clean.samples.iter().map(|v| v * v).sum();
        assert!(10.0 * (sig / err).log10() >= 59.0);
    }

    #[test]
    fn mix_deterministic() {
        let clean = rms_normalize(&tone(200.0, 32000)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = synth_pink_noise(&mut rng, 48000, SAMPLE_RATE);
        let spec = MixSpec { clean_id: "c".into(), noise_id: "n".into(), snr_db: 0.0, noise_offset: 777, seed: 9 };
        let a = mix_at_snr(&clean, &noise, &spec).unwrap();
        let b = mix_at_snr(&clean, &noise, &spec).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn snr_draws_uniform_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut counts = [0usize; 21];
        for _ in 0..n {
            let s = draw_snr_db(&mut rng);
            counts[(s as i32 + 10) as usize] += 1;
        }
        let expected = n as f64 / 21.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        // dof 20, p > 0.001 ⇔ chi2 < 45.31
        assert!(chi2 < 45.31, "chi2 {chi2}");
    }

    #[test]
    fn wav_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = Waveform::new((0..1000).map(|i| ((i % 100) as f64 - 50.0) / 64.0).collect(), SAMPLE_RATE);
        let clipped = write_wav(&path, &w).unwrap();
        assert_eq!(clipped, 0);
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, SAMPLE_RATE);
        // write∘read is bit-exact for in-range quantized samples
        let clipped = write_wav(&path, &r).unwrap();
        assert_eq!(clipped, 0);
        let r2 = read_wav(&path).unwrap();
        assert_eq!(r.samples, r2.samples);
    }

    #[test]
    fn wav_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.wav");
        write_wav(&path, &Waveform::new(vec![0.1; 10], 16000)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        assert_eq!(u16::from_le_bytes([bytes[22], bytes[23]]), 1); // channels
        assert_eq!(u32::from_le_bytes([bytes[24], bytes[25], bytes[26], bytes[27]]), 16000);
    }

    #[test]
    fn wav_clipping_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let w = Waveform::new(vec![2.0, -2.0, 0.5], SAMPLE_RATE);
        assert_eq!(write_wav(&path, &w).unwrap(), 2);
    }

    #[test]
    fn wav_malformed_rejected() {
        assert!(matches!(parse_wav(b"not a wav at all"), Err(Error::Format(_))));
    }

    #[test]
    fn toy_corpus_deterministic_and_structured() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let m_a = generate_toy_corpus(dir_a.path(), 42, 3, 1, 1, 1.5).unwrap();
        generate_toy_corpus(dir_b.path(), 42, 3, 1, 1, 1.5).unwrap();
        for (path, _) in &m_a.speech {
            let rel = path.strip_prefix(dir_a.path()).unwrap();
            let a = std::fs::read(path).unwrap();
            let b = std::fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "corpus bytes differ for {rel:?}");
        }
        // utterances contain detectable silent gaps
        let w = read_wav(&m_a.speech[0].0).unwrap();
        let mask = active_region_mask(&w).unwrap();
        assert!(mask.iter().any(|m| *m) && mask.iter().any(|m| !m));
    }

    #[test]
    fn pink_noise_slope_near_minus_3db_per_octave() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = synth_pink_noise(&mut rng, 1 << 17, SAMPLE_RATE);
        use rustfft::FftPlanner;
        let n = w.len();
        let mut buf: Vec<num_complex::Complex64> =
            w.samples.iter().map(|s| num_complex::Complex64::new(*s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        // octave-band powers between 100 Hz and 6.4 kHz
        let bin_hz = SAMPLE_RATE as f64 / n as f64;
        let mut band_db = Vec::new();
        let mut f = 100.0;
        while f * 2.0 <= 6400.0 {
            let lo = (f / bin_hz) as usize;
            let hi = (f * 2.0 / bin_hz) as usize;
            let p: f64 = buf[lo..hi].iter().map(|b| b.norm_sqr()).sum();
            band_db.push(10.0 * p.log10());
            f *= 2.0;
        }
        // per-octave power drop ≈ 3 dB (equal energy per octave would be 0 dB
        // for white noise since the band widens by 2x: white gives +3 dB here)
        for pair in band_db.windows(2) {
            let drop = pair[0] - pair[1];
            assert!((drop - 0.0).abs() < 1.5, "octave drop {drop}");
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let mut m = CorpusManifest::default();
        m.speech.push((PathBuf::from("a/b.wav"), Split::Train));
        m.speech.push((PathBuf::from("a/c.wav"), Split::Test));
        m.noise.push((PathBuf::from("n/w.wav"), true));
        m.noise.push((PathBuf::from("n/u.wav"), false));
        let text = m.to_string();
        let p = CorpusManifest::parse(&text).unwrap();
        assert_eq!(p.speech, m.speech);
        assert_eq!(p.noise, m.noise);
        assert!(CorpusManifest::parse("bad line no tabs").is_err());
    }
}
