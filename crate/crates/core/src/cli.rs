//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    load_responses, sample_dag, simulate_students, write_responses, PlantedWorld, SkillIndex,
    RESPONSES_FILE, SKILL_INDEX_FILE, WORLD_FILE,
};
use crate::error::{Error, Result};
use crate::export::{
    align, edge_list_csv, to_dot, write_text, LabeledGraph, OrderingFile, DOT_FILE, EDGES_FILE,
    ORDERING_FILE,
};
use crate::mask::StructureMode;
use crate::metrics::structural_f1;
use crate::pipeline::{
    parse_grid, prepare_data, sweep_csv, sweep_kappa, Checkpoint, Extraction, CHECKPOINT_FILE,
    HISTORY_FILE,
};
use crate::trainer::{evaluate_prediction, history_csv, train, ScheduleMode, TrainConfig};

pub const METRICS_FILE: &str = "metrics.json";

#[derive(Parser, Debug)]
#[command(name = "causal-kt", version, about = "Causal knowledge tracing and prerequisite discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Simulate students on a random planted prerequisite DAG.
    Generate(GenerateArgs),
    /// Train a model on a response log.
    Train(TrainArgs),
    /// Threshold a trained model into a prerequisite graph.
    Extract(ExtractArgs),
    /// Score a predicted graph against a reference graph.
    Evaluate(EvaluateArgs),
    /// Score extracted graphs over a grid of cutoffs.
    SweepKappa(SweepArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    skills: usize,
    #[arg(long)]
    students: usize,
    #[arg(long)]
    steps: usize,
    /// Probability of each forward edge; ignored with --chain.
    #[arg(long, default_value_t = 0.2)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plant the chain 0 → 1 → … instead of a random DAG.
    #[arg(long)]
    chain: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory holding responses.csv and optionally skill_index.json.
    #[arg(long)]
    data: PathBuf,
    /// JSON config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args, Debug, Default)]
struct ConfigOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    init_temperature: Option<f64>,
    #[arg(long)]
    init_unroll: Option<usize>,
    #[arg(long)]
    temperature_increment: Option<f64>,
    #[arg(long)]
    unroll_increment: Option<usize>,
    #[arg(long)]
    schedule_period_epochs: Option<usize>,
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<ScheduleMode>,
    #[arg(long)]
    alpha_start: Option<f64>,
    #[arg(long)]
    alpha_increment: Option<f64>,
    #[arg(long)]
    alpha_cap: Option<f64>,
    #[arg(long, value_parser = parse_structure)]
    structure_mode: Option<StructureMode>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, conflicts_with = "no_embedding")]
    embedding_dim: Option<usize>,
    /// Use one-hot inputs instead of skill embeddings.
    #[arg(long)]
    no_embedding: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    heldout_fraction: Option<f64>,
}

fn parse_schedule(s: &str) -> std::result::Result<ScheduleMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| "expected additive, multiplicative or fixed".to_string())
}

fn parse_structure(s: &str) -> std::result::Result<StructureMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| "expected learnable or fixed-dense".to_string())
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(
            epochs,
            batch_size,
            learning_rate,
            init_temperature,
            init_unroll,
            temperature_increment,
            unroll_increment,
            schedule_period_epochs,
            schedule,
            alpha_start,
            alpha_increment,
            alpha_cap,
            structure_mode,
            kappa,
            seed,
            grad_clip,
            heldout_fraction
        );
        if let Some(d) = self.embedding_dim {
            cfg.embedding_dim = Some(d);
        }
        if self.no_embedding {
            cfg.embedding_dim = None;
        }
    }
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the cutoff stored in the checkpoint's config.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Edge-list CSV or world JSON.
    #[arg(long)]
    pred: PathBuf,
    /// Edge-list CSV or world JSON.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Inclusive `start:stop:step`.
    #[arg(long, default_value = "0.40:0.55:0.005")]
    grid: String,
    /// Also write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI and returns the process exit code; output goes to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_output(args, &mut std::io::stdout())
}

/// Like [`run`] but writes standard output to `out`.
pub fn run_with_output<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Extract(a) => extract(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::SweepKappa(a) => sweep(a, out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let world = if a.chain {
        PlantedWorld::chain(a.skills, a.seed)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        PlantedWorld {
            seed: a.seed,
            ..sample_dag(a.skills, a.density, &mut rng)?
        }
    };
    let sequences = simulate_students(&world, a.students, a.steps)?;
    create_dir(&a.out)?;
    world.save(&a.out.join(WORLD_FILE))?;
    write_responses(&a.out.join(RESPONSES_FILE), &sequences)?;
    SkillIndex::numeric(a.skills).save(&a.out.join(SKILL_INDEX_FILE))?;
    emit(
        out,
        &format!(
            "wrote {} students, {} skills, {} planted edges to {}\n",
            a.students,
            a.skills,
            world.edges.len(),
            a.out.display()
        ),
    )
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    a.overrides.apply(&mut config);
    config.validate()?;

    let sequences = load_responses(&a.data.join(RESPONSES_FILE))?;
    let sidecar = a.data.join(SKILL_INDEX_FILE);
    let index = if sidecar.exists() {
        Some(SkillIndex::load(&sidecar)?)
    } else {
        None
    };
    let data = prepare_data(&sequences, index, config.heldout_fraction, config.seed)?;
    log::info!(
        "{} training and {} held-out students over {} skills",
        data.train.len(),
        data.heldout.len(),
        data.index.len()
    );
    let outcome = train(&data.train, data.index.len(), &config)?;

    create_dir(&a.out)?;
    let checkpoint = Checkpoint::new(&outcome, &config, &data.index);
    checkpoint.save(&a.out.join(CHECKPOINT_FILE))?;
    write_text(&a.out.join(HISTORY_FILE), &history_csv(&outcome.history))?;
    if !data.heldout.is_empty() {
        let metrics = evaluate_prediction(&outcome.model, &checkpoint.settings, &data.heldout)?;
        let json = serde_json::to_string_pretty(&metrics)?;
        write_text(&a.out.join(METRICS_FILE), &json)?;
        emit(out, &format!("{json}\n"))?;
    }
    Ok(())
}

fn extract(a: ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let kappa = a.kappa.unwrap_or(checkpoint.config.kappa);
    let extraction = Extraction::new(&checkpoint.model()?, &checkpoint.settings)?;
    let adj = extraction.adjacency(kappa)?;
    let index = &checkpoint.skill_index;
    create_dir(&a.out)?;
    write_text(&a.out.join(EDGES_FILE), &edge_list_csv(&adj, index))?;
    write_text(&a.out.join(DOT_FILE), &to_dot(&adj, index))?;
    let ordering = OrderingFile::new(&extraction.ordering, index);
    write_text(&a.out.join(ORDERING_FILE), &serde_json::to_string_pretty(&ordering)?)?;
    emit(
        out,
        &format!("{} edges at kappa {kappa} written to {}\n", adj.num_edges(), a.out.display()),
    )
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let pred = LabeledGraph::load(&a.pred)?;
    let truth = LabeledGraph::load(&a.truth)?;
    let (p, t) = align(&pred, &truth)?;
    let score = structural_f1(&p, &t)?;
    emit(out, &format!("{}\n", serde_json::to_string(&score)?))
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let truth = LabeledGraph::load(&a.truth)?;
    let extraction = Extraction::new(&checkpoint.model()?, &checkpoint.settings)?;
    let rows = sweep_kappa(&extraction, &checkpoint.skill_index, &truth, &grid)?;
    let csv = sweep_csv(&rows);
    if let Some(p) = &a.out {
        write_text(p, &csv)?;
    }
    emit(out, &csv)
}
