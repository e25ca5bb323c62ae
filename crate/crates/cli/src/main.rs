//! `dyad`: synthesize data, train the VQ-VAE and listener model, generate
//! listener motion and evaluate it against baselines.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dyad_core::baselines::Baseline;
use dyad_core::config::{ExperimentConfig, CONFIG_ENV};
use dyad_core::data::{read_dyad_file, write_dyad_file, DyadDataset, DyadSample, DyadSynth, SynthConfig};
use dyad_core::fusion::FusionMode;
use dyad_core::metrics::{variation, Part};
use dyad_core::pipeline::{
    ablation_mode, evaluate, generate, load_listener, load_vqvae, split_samples, train_listener_stage,
    train_vqvae_stage, EvalRequest,
};
use dyad_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dyad", version, about = "Listener facial-motion synthesis experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; defaults to $LISTENER_CONFIG, then the built-in defaults.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set vq.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset of synthetic dyads.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        samples: usize,
        #[arg(long, default_value_t = 512)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        modes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed listener lag in frames; random per sample when absent.
        #[arg(long)]
        lag: Option<usize>,
        #[arg(long, default_value_t = 0.02)]
        noise: f32,
        /// Weight of the listener response carried only by the audio.
        #[arg(long, default_value_t = 0.0)]
        audio_informative: f32,
        #[arg(long, default_value_t = 53)]
        expression_dim: usize,
        #[arg(long, default_value_t = 128)]
        audio_dim: usize,
    },
    /// Train the motion VQ-VAE on listener windows.
    TrainVqvae {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss curves and codebook usage; defaults to `<out-checkpoint>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the speaker encoder and token predictor against a frozen VQ-VAE.
    TrainPredictor {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vqvae: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        no_audio: bool,
        #[arg(long)]
        no_motion: bool,
        /// cross, concat, motion-only or audio-only.
        #[arg(long)]
        fusion: Option<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Roll out listener motion for every speaker in a dataset.
    Generate {
        #[arg(long)]
        speaker_data: PathBuf,
        /// VQ-VAE and listener checkpoints.
        #[arg(long, num_args = 2, value_names = ["VQVAE", "LISTENER"])]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long)]
        nucleus_p: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Frames per rollout; all whole tokens of each speaker when absent.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions and baselines against ground truth.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        gt_split: SplitArg,
        #[arg(long)]
        train_bank: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        bank_split: SplitArg,
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Comma-separated baselines, or `all`.
        #[arg(long, default_value = "")]
        methods: String,
        /// Needed by the random-walk baseline.
        #[arg(long)]
        vqvae: Option<PathBuf>,
        #[arg(long)]
        multi_sample: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_report: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(path: &Path, cfg: &ExperimentConfig) -> Result<DyadDataset> {
    let ds = read_dyad_file(path, None)?;
    for (what, want, got) in [
        ("expression", cfg.expression_dim, ds.expression_dim),
        ("audio", cfg.audio_dim, ds.audio_dim),
    ] {
        if want != 0 && want != got {
            return Err(Error::format(0, format!("{} has {what} dim {got}, config expects {want}", path.display())));
        }
    }
    Ok(ds)
}

fn select(ds: &DyadDataset, cfg: &ExperimentConfig, split: SplitArg) -> Result<Vec<DyadSample>> {
    if let SplitArg::All = split {
        return Ok(ds.samples.clone());
    }
    let s = split_samples(&ds.samples, cfg)?;
    Ok(match split {
        SplitArg::Train => s.train,
        SplitArg::Val => s.val,
        SplitArg::Test => s.test,
        SplitArg::All => unreachable!(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn default_report(ckpt: &Path, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| {
        let mut s = ckpt.as_os_str().to_owned();
        s.push(".report.json");
        PathBuf::from(s)
    })
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::contract(e.to_string()))
}

fn parse_methods(list: &str, have_vq: bool) -> Result<Vec<Baseline>> {
    match list.trim() {
        "" => Ok(Vec::new()),
        "all" => Ok(Baseline::ALL.into_iter().filter(|b| have_vq || !b.needs_vqvae()).collect()),
        s => s.split(',').map(|m| m.trim().parse()).collect(),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData {
            out,
            samples,
            length,
            modes,
            seed,
            lag,
            noise,
            audio_informative,
            expression_dim,
            audio_dim,
        } => {
            let synth = DyadSynth::new(SynthConfig {
                expression_dim,
                audio_dim,
                mode_count: modes,
                noise,
                lag,
                audio_informative,
                ..SynthConfig::default()
            });
            let ds = DyadDataset::new(synth.generate(seed, samples, length)?, None)?;
            write_dyad_file(&ds, &out)?;
            let listeners: Vec<_> = ds.samples.iter().map(|s| s.listener_motion.clone()).collect();
            println!(
                "wrote {} samples x {length} frames (d_m={expression_dim}, d_a={audio_dim}, modes={modes}) to {}",
                ds.samples.len(),
                out.display()
            );
            println!(
                "listener variation: expression {:.4}, rotation {:.6}",
                variation(&listeners, Part::Expression)?,
                variation(&listeners, Part::Rotation)?
            );
        }
        Command::TrainVqvae {
            data,
            cfg,
            out_checkpoint,
            resume,
            report,
        } => {
            let cfg = load_config(&cfg)?;
            let ds = load_data(&data, &cfg)?;
            let resume = resume.map(load_vqvae).transpose()?;
            if let Some(m) = &resume {
                if m.config.expression_dim != ds.expression_dim {
                    return Err(Error::format(0, "checkpoint and data disagree on the expression dim"));
                }
            }
            let splits = split_samples(&ds.samples, &cfg)?;
            let (vq, rep) = train_vqvae_stage(&cfg, &ds, &splits, resume)?;
            vq.to_checkpoint()?.save(&out_checkpoint)?;
            for e in &rep.epochs {
                println!(
                    "epoch {:>5} total {:.5} recon {:.5} codebook {:.5} commit {:.5}",
                    e.epoch, e.total, e.reconstruction, e.codebook, e.commitment
                );
            }
            println!("codes used: {} of {}", rep.codes_used, rep.usage.len());
            let mut top: Vec<(usize, usize)> = rep.usage.iter().copied().enumerate().filter(|&(_, c)| c > 0).collect();
            top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let shown: Vec<String> = top.iter().take(10).map(|(k, c)| format!("{k}:{c}")).collect();
            println!("most used codes: {}", shown.join(" "));
            write_text(&default_report(&out_checkpoint, report), &json(&rep)?)?;
        }
        Command::TrainPredictor {
            data,
            vqvae,
            cfg,
            out_checkpoint,
            no_audio,
            no_motion,
            fusion,
            report,
        } => {
            let mut cfg = load_config(&cfg)?;
            let base = match fusion {
                Some(f) => f.parse::<FusionMode>()?,
                None => cfg.fusion,
            };
            cfg.fusion = ablation_mode(base, no_audio, no_motion)?;
            let ds = load_data(&data, &cfg)?;
            let mut vq = load_vqvae(&vqvae)?;
            if vq.config.expression_dim != ds.expression_dim {
                return Err(Error::format(0, "VQ-VAE checkpoint and data disagree on the expression dim"));
            }
            vq.freeze();
            let splits = split_samples(&ds.samples, &cfg)?;
            let (model, rep) = train_listener_stage(&cfg, &ds, &vq, &splits)?;
            model.to_checkpoint()?.save(&out_checkpoint)?;
            println!("fusion {} initial cross-entropy {:.4}", cfg.fusion, rep.initial_loss);
            for e in &rep.epochs {
                let held = match (e.held_out_accuracy, e.held_out_loss) {
                    (Some(a), Some(l)) => format!(" held-out acc {a:.4} ce {l:.4}"),
                    _ => String::new(),
                };
                println!("epoch {:>5} loss {:.5} train acc {:.4}{held}", e.epoch, e.loss, e.train_accuracy);
            }
            write_text(&default_report(&out_checkpoint, report), &json(&rep)?)?;
        }
        Command::Generate {
            speaker_data,
            checkpoints,
            samples,
            nucleus_p,
            seed,
            frames,
            split,
            cfg,
            out,
        } => {
            let cfg = load_config(&cfg)?;
            let ds = load_data(&speaker_data, &cfg)?;
            let vq = load_vqvae(&checkpoints[0])?;
            let model = load_listener(&checkpoints[1])?;
            let speakers = select(&ds, &cfg, split)?;
            let p = nucleus_p.unwrap_or(cfg.nucleus_p);
            let generated = generate(&model, &vq, &speakers, frames, samples, p, seed.unwrap_or(cfg.seed))?;
            let n = generated.len();
            write_dyad_file(&DyadDataset::new(generated, None)?, &out)?;
            println!("wrote {n} rollouts to {}", out.display());
        }
        Command::Evaluate {
            gt,
            gt_split,
            train_bank,
            bank_split,
            pred,
            methods,
            vqvae,
            multi_sample,
            cfg,
            out_report,
        } => {
            let cfg = load_config(&cfg)?;
            let gt_ds = load_data(&gt, &cfg)?;
            let bank_ds = load_data(&train_bank, &cfg)?;
            let vq = vqvae.map(load_vqvae).transpose()?.map(|mut v| {
                v.freeze();
                v
            });
            let methods = parse_methods(&methods, vq.is_some())?;
            let pred = pred.map(|p| load_data(&p, &cfg)).transpose()?;
            let gt_samples = select(&gt_ds, &cfg, gt_split)?;
            let bank_samples = select(&bank_ds, &cfg, bank_split)?;
            let report = evaluate(
                &cfg,
                &EvalRequest {
                    gt: &gt_samples,
                    train: &bank_samples,
                    pred: pred.as_ref().map(|d| d.samples.as_slice()),
                    methods: &methods,
                    vq: vq.as_ref(),
                    multi_sample,
                },
            )?;
            print!("{}", report.to_text());
            if let Some(path) = out_report {
                write_text(&path, &report.to_json()?)?;
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) | Error::DegenerateInput(_) => 4,
        _ => 3,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: kind=usage {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} {}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(exit_code(&e))
        }
    }
}
