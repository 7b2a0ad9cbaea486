//! Command-line entry points: toy corpus generation, training, enhancement,
//! evaluation, and the gradient-check suite.

use clap::{Parser, Subcommand};
use crvae::config::RunConfig;
use crvae::data::{
    build_eval_mixtures, build_training_mixtures, read_wav, segment_pairs, steps_from_waveform,
    write_wav, CorpusManifest, MixturePair, Split,
};
use crvae::dsp::SAMPLE_RATE;
use crvae::eval::evaluate_items;
use crvae::gradsuite::run_full_suite;
use crvae::model::{enhance_waveform, CrvaeModel};
use crvae::train::{restore_best, train_loop, Checkpoint, TrainItem, TrainState};
use crvae::{Error, Result};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "crvae", about = "Complex recurrent VAE speech enhancement", version)]
struct Cli {
    /// Print progress details to stderr.
    #[arg(long, global = true)]
    verbose: bool,
    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration file (`key = value` lines); defaults apply if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic speech/noise corpus with a manifest.
    GenCorpus {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated corpus.
    Train {
        /// Corpus directory containing manifest.tsv.
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint path to write (and resume from).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional per-epoch metrics log (TSV).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Resume from an existing checkpoint at `--checkpoint`.
        #[arg(long)]
        resume: bool,
    },
    /// Denoise a single WAV file.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Noisy input WAV (16 kHz mono PCM16).
        #[arg(long)]
        input: PathBuf,
        /// Enhanced output WAV.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score enhanced audio against clean references over the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Report output path (TSV).
        #[arg(long)]
        out: PathBuf,
        /// Score pre-enhanced files named `<id>.wav` from this directory
        /// instead of running the model.
        #[arg(long)]
        enhanced_dir: Option<PathBuf>,
    },
    /// Verify every analytic gradient against finite differences.
    Gradcheck,
}

fn main() {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("CRVAE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn prepare_items(cfg: &RunConfig, mixtures: &[MixturePair]) -> Result<Vec<TrainItem>> {
    let mut items = Vec::new();
    for m in mixtures {
        let noisy = steps_from_waveform(&m.noisy, cfg.dsp.frame_len, cfg.dsp.hop, cfg.model.frames_per_step)?;
        let clean = steps_from_waveform(&m.clean, cfg.dsp.frame_len, cfg.dsp.hop, cfg.model.frames_per_step)?;
        for (input, target) in segment_pairs(&noisy, &clean, cfg.train.segment_len)? {
            items.push(TrainItem { input, target });
        }
    }
    Ok(items)
}

fn run(cli: Cli) -> Result<i32> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenCorpus { out } => {
            let manifest = crvae::data::generate_toy_corpus(
                out,
                cfg.train.seed,
                cfg.corpus.n_train,
                cfg.corpus.n_dev,
                cfg.corpus.n_test,
                cfg.corpus.duration_s,
            )?;
            println!(
                "wrote {} utterances and {} noise files under {}",
                manifest.speech.len(),
                manifest.noise.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Train { corpus, checkpoint, metrics, resume } => {
            let manifest = CorpusManifest::load(&corpus.join("manifest.tsv"))?;
            if cli.verbose {
                eprintln!("preparing mixtures...");
            }
            let train_mix = build_training_mixtures(&manifest, Split::Train, cfg.train.seed)?;
            let dev_mix = build_training_mixtures(&manifest, Split::Dev, cfg.train.seed ^ 0xdeb)?;
            let train_items = prepare_items(&cfg, &train_mix)?;
            let dev_items = prepare_items(&cfg, &dev_mix)?;
            if cli.verbose {
                eprintln!("{} train segments, {} dev segments", train_items.len(), dev_items.len());
            }

            let (mut model, mut state, train_cfg) = if *resume && checkpoint.exists() {
                let ckpt = Checkpoint::load(checkpoint)?;
                let mut tc = ckpt.train_cfg;
                tc.max_epochs = cfg.train.max_epochs;
                (ckpt.model, ckpt.state, tc)
            } else {
                let mut model = CrvaeModel::init(cfg.model, cfg.train.seed)?;
                let state = TrainState::new(model.param_count());
                (model, state, cfg.train)
            };

            let mut log_file: Option<std::fs::File> = match metrics {
                Some(p) => {
                    if let Some(parent) = p.parent() {
                        std::fs::create_dir_all(parent)?;
                    }
                    Some(if state.epoch > 0 && p.exists() {
                        std::fs::OpenOptions::new().append(true).open(p)?
                    } else {
                        std::fs::File::create(p)?
                    })
                }
                None => None,
            };
            let log: Option<&mut dyn std::io::Write> =
                log_file.as_mut().map(|f| f as &mut dyn std::io::Write);
            let outcome = train_loop(&mut model, &train_items, &dev_items, &train_cfg, &mut state, log)?;

            let mut ckpt = Checkpoint { model, train_cfg, state };
            ckpt.save(checkpoint)?;
            println!(
                "trained {} epochs, best dev loss {:.6}, checkpoint {}",
                outcome.epochs_run,
                outcome.best_dev_loss,
                checkpoint.display()
            );
            Ok(0)
        }
        Command::Enhance { checkpoint, input, output } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let mut model = ckpt.model;
            if !ckpt.state.best_params.is_empty() {
                restore_best(&mut model, &ckpt.state)?;
            }
            let noisy = read_wav(input)?;
            if noisy.sample_rate != SAMPLE_RATE {
                return Err(Error::DegenerateInput(format!(
                    "enhance: expected {SAMPLE_RATE} Hz input, got {}",
                    noisy.sample_rate
                )));
            }
            let frame_len = model.cfg.input_dim * 2;
            let hop = frame_len / 4;
            let enhanced = enhance_waveform(&model, &noisy, frame_len, hop)?;
            let clipped = write_wav(output, &enhanced)?;
            if clipped > 0 && cli.verbose {
                eprintln!("warning: {clipped} samples clipped on write");
            }
            println!("enhanced {} -> {}", input.display(), output.display());
            Ok(0)
        }
        Command::Evaluate { checkpoint, corpus, out, enhanced_dir } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let mut model = ckpt.model;
            if !ckpt.state.best_params.is_empty() {
                restore_best(&mut model, &ckpt.state)?;
            }
            let manifest = CorpusManifest::load(&corpus.join("manifest.tsv"))?;
            let mixtures = build_eval_mixtures(&manifest, Split::Test, cfg.train.seed)?;
            let frame_len = model.cfg.input_dim * 2;
            let hop = frame_len / 4;

            let enhanced: Vec<(String, crvae::dsp::Waveform, crvae::dsp::Waveform)> = match enhanced_dir {
                Some(dir) => {
                    let missing: Vec<String> = mixtures
                        .iter()
                        .filter(|m| !dir.join(format!("{}.wav", m.id)).exists())
                        .map(|m| m.id.clone())
                        .collect();
                    if !missing.is_empty() {
                        return Err(Error::DataAlignment(format!(
                            "evaluate: missing enhanced files for: {}",
                            missing.join(", ")
                        )));
                    }
                    mixtures
                        .iter()
                        .map(|m| {
                            Ok((m.id.clone(), m.clean.clone(), read_wav(&dir.join(format!("{}.wav", m.id)))?))
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                None => mixtures
                    .par_iter()
                    .map(|m| Ok((m.id.clone(), m.clean.clone(), enhance_waveform(&model, &m.noisy, frame_len, hop)?)))
                    .collect::<Result<Vec<_>>>()?,
            };

            let report = evaluate_items(&enhanced)?;
            let noisy_pairs: Vec<(String, crvae::dsp::Waveform, crvae::dsp::Waveform)> =
                mixtures.iter().map(|m| (m.id.clone(), m.clean.clone(), m.noisy.clone())).collect();
            let baseline = evaluate_items(&noisy_pairs)?;

            let mut text = String::from("# enhanced\n");
            text.push_str(&report.to_tsv());
            text.push_str("# noisy baseline\n");
            text.push_str(&baseline.to_tsv());
            write_text(out, &text)?;
            print!("{text}");
            Ok(0)
        }
        Command::Gradcheck => {
            let reports = run_full_suite(cli.seed.unwrap_or(0))?;
            let mut failed = false;
            for r in &reports {
                println!("{r}");
                failed |= !r.passed;
            }
            if failed {
                Err(Error::Numerical("gradcheck: at least one check failed".into()))
            } else {
                Ok(0)
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
