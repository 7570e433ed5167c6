use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use poco::config::{Overrides, RunConfig, SEED_ENV};
use poco::dataset;
use poco::error::{Error, Result};
use poco::formats::{pcf, pck, pdb, write_atomic};
use poco::pipeline::{self, Plans, RunDir};
use poco::report;
use poco_core::diffcore::GradCheckConfig;
use poco_core::selfcheck;

const RESOLVED_CONFIG: &str = "config.resolved.toml";
const DEFAULT_CONFIG: &str = "poco.toml";

/// Indoor RGB-D place recognition: synthetic data, training, indexing and
/// Recall@K evaluation.
#[derive(Parser, Debug)]
#[command(name = "poco", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// TOML run configuration (default: poco.toml in the workdir, if present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for frame processing (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for generation and training; overrides the config and POCO_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic room dataset.
    Gen,
    /// Train a model; writes checkpoints and the metrics log.
    Train,
    /// Describe the database frames of a split and write a PDB1 index.
    BuildDb {
        /// Checkpoint (default: <run>/model.pck).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index file (default: <run>/index.pdb).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank an index against one PCF1 frame.
    Query {
        /// Frame file; its file stem is the query id.
        frame: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of results (default: eval.top_k).
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Recall@K on the evaluation split; writes recall.txt and recall.csv.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every learnable block.
    Gradcheck {
        /// Check a single block.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(selfcheck::BLOCKS))]
        block: Option<String>,
    },
}

struct Ctx {
    workdir: PathBuf,
    cfg: RunConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn dataset_dir(&self) -> PathBuf {
        self.path(&self.cfg.paths.dataset)
    }

    fn run_dir(&self) -> PathBuf {
        self.path(&self.cfg.paths.run)
    }

    fn or_run(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        match p {
            Some(p) => self.path(p),
            None => self.run_dir().join(name),
        }
    }

    fn echo_config(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(RESOLVED_CONFIG), self.cfg.to_toml()?.as_bytes())
    }
}

fn context(g: &Global) -> Result<Ctx> {
    let config = match &g.config {
        Some(p) => Some(g.workdir.join(p)),
        None => Some(g.workdir.join(DEFAULT_CONFIG)).filter(|p| p.is_file()),
    };
    let ov = Overrides {
        seed: g.seed,
        jobs: g.jobs,
        env_seed: std::env::var(SEED_ENV).ok(),
    };
    let cfg = RunConfig::load(config.as_deref(), &ov)?;
    if let Some(n) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    Ok(Ctx {
        workdir: g.workdir.clone(),
        cfg,
    })
}

fn cmd_gen(ctx: &Ctx) -> Result<()> {
    let dir = ctx.dataset_dir();
    let ds = pipeline::generate(&ctx.cfg.dataset, &dir)?;
    ctx.echo_config(&dir)?;
    println!(
        "generated {} frames in {} scenes under {}",
        ds.frames.len(),
        ds.manifest.scenes.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let ds = dataset::load(&ctx.dataset_dir())?;
    let run = RunDir(ctx.run_dir());
    std::fs::create_dir_all(&run.0).map_err(|e| Error::io(&run.0, e))?;
    ctx.echo_config(&run.0)?;
    let mut print = |e: &pipeline::EpochSummary| {
        let val = e
            .val_recall1
            .map(|r| format!(" val_recall@1={r:.4}"))
            .unwrap_or_default();
        eprintln!(
            "epoch {} steps {} mean_loss {:.4}{val}",
            e.epoch, e.steps, e.mean_loss
        );
    };
    let rep = pipeline::train(&ds, &ctx.cfg.train, &ctx.cfg.eval, Some(&run), &mut print)?;
    println!(
        "trained {} steps; checkpoint {}",
        rep.steps,
        run.path(pipeline::MODEL_CHECKPOINT).display()
    );
    Ok(())
}

fn cmd_build_db(ctx: &Ctx, checkpoint: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    let (model, _) = pck::load_model(&ctx.or_run(checkpoint, pipeline::MODEL_CHECKPOINT))?;
    let ds = dataset::load(&ctx.dataset_dir())?;
    let split = ctx.cfg.eval.split;
    let plans = Plans::new(&ds, &[split], &model.config)?;
    let g = pipeline::build_gallery(&model, &ds, &plans, split, ctx.cfg.eval.db_spacing)?;
    let path = ctx.or_run(out, pipeline::INDEX_FILE);
    pdb::save(&g.index, &path)?;
    if let Some(dir) = path.parent() {
        ctx.echo_config(dir)?;
    }
    println!(
        "indexed {} {} frames into {}",
        g.index.len(),
        split.as_str(),
        path.display()
    );
    Ok(())
}

fn cmd_query(
    ctx: &Ctx,
    frame: &Path,
    index: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    top_k: Option<usize>,
) -> Result<()> {
    let (model, _) = pck::load_model(&ctx.or_run(checkpoint, pipeline::MODEL_CHECKPOINT))?;
    let idx = pdb::load(&ctx.or_run(index, pipeline::INDEX_FILE))?;
    let path = ctx.path(frame);
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let frame = pipeline::prepare_frame(pcf::load(&path, &id, "")?)?;
    let r = pipeline::query_frame(&model, &idx, &frame, top_k.unwrap_or(ctx.cfg.eval.top_k))?;
    let scene_of = |fid: &str| idx.get(fid).map(|e| e.scene_id.clone()).unwrap_or_default();
    print!("{}", report::ranking_text(&r, scene_of));
    Ok(())
}

fn cmd_eval(ctx: &Ctx, checkpoint: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    let (model, _) = pck::load_model(&ctx.or_run(checkpoint, pipeline::MODEL_CHECKPOINT))?;
    let ds = dataset::load(&ctx.dataset_dir())?;
    let table = pipeline::evaluate(&model, &ds, &ctx.cfg.eval)?;
    let dir = out
        .as_ref()
        .map(|p| ctx.path(p))
        .unwrap_or_else(|| ctx.run_dir());
    let text = report::recall_text(&table);
    write_atomic(&dir.join("recall.txt"), text.as_bytes())?;
    write_atomic(
        &dir.join("recall.csv"),
        report::recall_csv(&table).as_bytes(),
    )?;
    ctx.echo_config(&dir)?;
    print!("{text}");
    Ok(())
}

fn cmd_gradcheck(ctx: &Ctx, block: &Option<String>) -> Result<()> {
    let seed = ctx.cfg.seed.unwrap_or(ctx.cfg.train.seed);
    let gc = GradCheckConfig::default();
    let checks = match block {
        Some(b) => selfcheck::check_block(b, seed, gc).into_iter().collect(),
        None => selfcheck::check_all(seed, gc),
    };
    let mut text = String::from("block         coords  max_rel_error  result\n");
    for c in &checks {
        let coords: usize = c.report.params.iter().map(|p| p.coords_checked).sum();
        let verdict = if c.passed() { "pass" } else { "FAIL" };
        text.push_str(&format!(
            "{:<12}  {:>6}  {:>13.3e}  {verdict}\n",
            c.block,
            coords,
            c.report.max_rel_error()
        ));
    }
    let dir = ctx.run_dir();
    write_atomic(&dir.join("gradcheck.txt"), text.as_bytes())?;
    ctx.echo_config(&dir)?;
    print!("{text}");
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.block)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Core(poco_core::Error::Contract(format!(
            "gradient check failed for {}",
            failed.join(", ")
        ))))
    }
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = context(&cli.global)?;
    match &cli.command {
        Command::Gen => cmd_gen(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::BuildDb { checkpoint, out } => cmd_build_db(&ctx, checkpoint, out),
        Command::Query {
            frame,
            index,
            checkpoint,
            top_k,
        } => cmd_query(&ctx, frame, index, checkpoint, *top_k),
        Command::Eval { checkpoint, out } => cmd_eval(&ctx, checkpoint, out),
        Command::Gradcheck { block } => cmd_gradcheck(&ctx, block),
    }
}

/// `error kind=<kind> message=<text>` on one line.
fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={kind} message={message}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "), 2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}
