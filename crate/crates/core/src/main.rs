use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hairsynth::imagecore::{load_mask_png, load_png, save_png};
use hairsynth::metrics::{evaluate, MetricReport};
use hairsynth::pipeline::ablation::{ablation_variants, AblationData, Variant};
use hairsynth::pipeline::eval::{compositing_deviation, full_image_l1, stage1_masked_l1};
use hairsynth::pipeline::{region_mean, PipelineState, RunLedger, TrainingConfig};
use hairsynth::serve::{serve, SessionStore};
use hairsynth::strokes::{annotate, StrokeSet};
use hairsynth::synthdata::{generate_dataset, ingest_real, load_dataset, DatasetSample, Domain, Split, GRID_SIZE};

#[derive(Parser)]
#[command(name = "hairsynth", version, about = "Stroke-guided hair synthesis")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

/// Options every subcommand accepts.
#[derive(Args, Clone)]
struct Common {
    /// Training/annotation config (TOML). Defaults to the desk preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<TrainingConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainingConfig::load(p)?,
            None => TrainingConfig::desk(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Procedural generation or photo ingestion.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Extracts guide strokes (and the orientation field) from an image and mask.
    Annotate {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Also write the orientation field container here.
        #[arg(long)]
        field: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Training phases; each writes a run directory with config, loss curve and checkpoint.
    Train {
        #[command(subcommand)]
        cmd: TrainCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Held-out metrics of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Trains every ablation variant and writes the comparison table.
    Ablate {
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        real: PathBuf,
        /// Held-out samples; defaults to the test/val rows of `--real`.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<VariantArg>>,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesizes hair for one image.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Guide strokes (JSON). Without them the initialization network is used.
        #[arg(long)]
        strokes: Option<PathBuf>,
        /// Conditioning colour for initialization, `r,g,b` in [0, 1].
        #[arg(long, value_delimiter = ',')]
        color: Option<Vec<f32>>,
        #[command(flatten)]
        common: Common,
    },
    /// Local editing service.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    Gen {
        /// Number of samples; `--full-grid` renders every parameter combination.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        full_grid: bool,
        #[arg(long, value_enum, default_value = "synthetic")]
        domain: DomainArg,
    },
    /// Annotates a directory of `name.png` + `name_mask.png` photos.
    Ingest {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Separate pretraining of both stages on procedural data.
    Stage1 {
        #[arg(long)]
        data: PathBuf,
    },
    /// Stage-1 refinement and joint training on photos, from a pretrained checkpoint.
    E2e {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// The stroke-free initialization network.
    Init {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Synthetic,
    Shifted,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Baseline,
    SingleNetwork,
    NoGan,
    NoPerceptual,
    NoSynthetic,
    SyntheticOnly,
    Full,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Baseline => Variant::Baseline,
            VariantArg::SingleNetwork => Variant::SingleNetwork,
            VariantArg::NoGan => Variant::NoGan,
            VariantArg::NoPerceptual => Variant::NoPerceptual,
            VariantArg::NoSynthetic => Variant::NoSynthetic,
            VariantArg::SyntheticOnly => Variant::SyntheticOnly,
            VariantArg::Full => Variant::Full,
        }
    }
}

fn load(path: &Path) -> Result<Vec<DatasetSample>> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn split(samples: &[DatasetSample], train: bool) -> Vec<DatasetSample> {
    samples.iter().filter(|s| (s.split == Split::Train) == train).cloned().collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_train(cmd: TrainCmd, common: &Common) -> Result<()> {
    let out = common.out("runs/latest");
    let state = match cmd {
        TrainCmd::Stage1 { data } => {
            let cfg = common.config()?;
            let samples = split(&load(&data)?, true);
            let mut s = PipelineState::new(cfg)?;
            s.pretrain(&samples)?;
            s
        }
        TrainCmd::E2e { checkpoint, data } => {
            let mut s = PipelineState::load(&checkpoint)?;
            let samples = split(&load(&data)?, true);
            if s.cfg.refine.epochs > 0 {
                s.refine_real(&samples)?;
            }
            s.train_end_to_end(&samples)?;
            s
        }
        TrainCmd::Init { checkpoint, data } => {
            let mut s = PipelineState::load(&checkpoint)?;
            s.train_init(&split(&load(&data)?, true))?;
            s
        }
    };
    let ledger = RunLedger::create(&out, &state.cfg)?;
    let ck = ledger.record(&state)?;
    println!("phase {} checkpoint {} digest {}", state.phase, ck.display(), state.digest());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Dataset { cmd, common } => {
            let cfg = common.config()?;
            let out = common.out("data");
            match cmd {
                DatasetCmd::Gen { count, full_grid, domain } => {
                    let count = if full_grid { GRID_SIZE } else { count.unwrap_or(cfg.samples) };
                    let domain = match domain {
                        DomainArg::Synthetic => Domain::Synthetic,
                        DomainArg::Shifted => Domain::Shifted,
                    };
                    let m = generate_dataset(count, cfg.size, cfg.seed, &out, domain, &cfg.annotation)?;
                    println!("wrote {} samples to {}", m.rows.len(), out.display());
                }
                DatasetCmd::Ingest { input } => {
                    let r = ingest_real(&input, &out, &cfg.annotation, cfg.seed)?;
                    for (p, e) in &r.errors {
                        eprintln!("skipped {}: {e}", p.display());
                    }
                    println!("ingested {} photos into {} ({} skipped)", r.manifest.rows.len(), out.display(), r.errors.len());
                }
            }
        }
        Command::Annotate { image, mask, field, common } => {
            let cfg = common.config()?;
            let img = load_png(&image)?;
            let m = load_mask_png(&mask)?;
            let a = annotate(&img, &m, &cfg.annotation.strokes, &cfg.annotation.field, cfg.seed)?;
            let out = common.out("strokes.json");
            a.strokes.save(&out)?;
            if let Some(f) = field {
                std::fs::write(&f, a.field.to_bytes()).with_context(|| format!("writing {}", f.display()))?;
            }
            println!("{} strokes -> {}", a.strokes.len(), out.display());
        }
        Command::Train { cmd, common } => run_train(cmd, &common)?,
        Command::Eval { checkpoint, data, common } => {
            let state = PipelineState::load(&checkpoint)?;
            let held = split(&load(&data)?, false);
            let mut report = MetricReport::new(common.seed.unwrap_or(state.cfg.seed), held.len());
            report.push(evaluate(&state.phase.to_string(), state.perceptual_net(), &held, |s| &s.image, |s| {
                state.synthesize(&s.image, &s.mask, &s.strokes)
            })?);
            let out = common.out("eval.csv");
            write(&out, &report.to_csv())?;
            print!("{}", report.to_table());
            println!("stage-1 masked L1 {:.4}", stage1_masked_l1(&state, &held, false)?);
            println!("full-image L1 {:.4}", full_image_l1(&state, &held)?);
            println!("outside-band deviation {:.4}", compositing_deviation(&state, &held)?);
        }
        Command::Ablate { synthetic, real, eval, variants, common } => {
            let cfg = common.config()?;
            let syn = load(&synthetic)?;
            let real_all = load(&real)?;
            let held = match &eval {
                Some(p) => load(p)?,
                None => split(&real_all, false),
            };
            let (syn, real) = (split(&syn, true), split(&real_all, true));
            let variants: Vec<Variant> = match variants {
                Some(v) => v.into_iter().map(Variant::from).collect(),
                None => Variant::ALL.to_vec(),
            };
            let out = ablation_variants(&cfg, &AblationData { synthetic: &syn, real: &real, eval: &held }, &variants)?;
            let dir = common.out("ablation");
            write(&dir.join("report.csv"), &out.report.to_csv())?;
            write(&dir.join("report.txt"), &out.report.to_table())?;
            print!("{}", out.report.to_table());
            let u = &out.untrained.0;
            println!("untrained: l1 {:.4} psnr {:.2} ssim {:.4} fid {:.4}", u.l1, u.psnr_db, u.ssim, u.fid_proxy);
        }
        Command::Synth { checkpoint, image, mask, strokes, color, common } => {
            let state = PipelineState::load(&checkpoint)?;
            let img = load_png(&image)?;
            let m = load_mask_png(&mask)?;
            let out = match strokes {
                Some(p) => state.synthesize_timed(&img, &m, &StrokeSet::load(&p)?)?,
                None => {
                    let c = match color.as_deref() {
                        Some([r, g, b]) => [*r, *g, *b],
                        Some(_) => bail!("--color takes three values"),
                        None => region_mean(&img, &m)?,
                    };
                    state.synthesize_init_timed(&img, &m, c)?
                }
            };
            let path = common.out("synth.png");
            save_png(&out.image, &path)?;
            println!("{} ({:.0} ms)", path.display(), out.timings.total_ms);
        }
        Command::Serve { checkpoint, addr, common } => {
            let cfg = common.config()?;
            let pipeline = checkpoint.as_deref().map(PipelineState::load).transpose()?;
            let annotation = pipeline.as_ref().map(|p| p.cfg.annotation).unwrap_or(cfg.annotation);
            let store = Arc::new(SessionStore::new(pipeline, annotation, cfg.seed));
            tokio::runtime::Runtime::new()?.block_on(serve(store, addr, |a| println!("listening on http://{a}")))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
