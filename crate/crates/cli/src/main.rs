//! `april`: train, evaluate and inspect attention-privileged agents.
//!
//! Every run lives in `OUT/<variant>/seed<k>/` with `config.txt`, `log.csv`,
//! `eval.csv`, `checkpoints/` and `attention/`. Seed-aggregated reports go to
//! `OUT/<variant>/eval.csv`, figures to `OUT/plots/`.

mod runs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use april::agents::ArchConfig;
use april::env::DomainClass;
use april::eval::{self, Curve, EvalReport};
use april::trainer::{self, AlgorithmVariant, TrainConfig};
use april::{Error, Result};

use runs::RunDir;

#[derive(Parser, Debug)]
#[command(name = "april", version, about = "Attention-privileged RL on NavWorld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run per seed.
    Train(TrainArgs),
    /// Evaluate the latest checkpoint of every seed on held-out domains.
    Evaluate(EvalArgs),
    /// Write attention maps, masked frames and state-attention CSVs.
    ExportAttention(ExportArgs),
    /// Render learning curves and evaluation bar charts from the CSV outputs.
    Plot(PlotArgs),
    /// Finite-difference check of every training loss.
    GradCheck(GradArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ClassArg {
    Train,
    Interp,
    Ext4,
    Ext8,
}

impl From<ClassArg> for DomainClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Train => DomainClass::Train,
            ClassArg::Interp => DomainClass::Interpolation,
            ClassArg::Ext4 => DomainClass::Ext4,
            ClassArg::Ext8 => DomainClass::Ext8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    Navworld,
    Desk,
}

fn parse_variant(s: &str) -> std::result::Result<AlgorithmVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_resolution(s: &str) -> std::result::Result<usize, String> {
    match s {
        "60" => Ok(60),
        "24" => Ok(24),
        _ => Err(format!("resolution must be 60 or 24, got {s}")),
    }
}

#[derive(Args, Debug)]
struct Common {
    /// Root output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Rollout and evaluation worker threads.
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_variant, default_value = "april")]
    variant: AlgorithmVariant,
    /// Number of seeded runs; run i uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// First seed.
    #[arg(long, env = "APRIL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    episodes: u64,
    /// Stop each run after this many environment steps.
    #[arg(long)]
    env_steps: Option<u64>,
    #[arg(long, value_parser = parse_resolution, default_value = "60")]
    resolution: usize,
    /// Network sizes; defaults to `navworld` at 60 px and `desk` at 24 px.
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    /// Entropy weight of the state attention loss.
    #[arg(long)]
    beta: Option<f64>,
    /// Weight of the Q term in the image attention loss.
    #[arg(long)]
    nu: Option<f64>,
    /// Bootstrap through terminal transitions.
    #[arg(long)]
    no_terminal_mask: bool,
    /// Greedy evaluation cadence in episodes.
    #[arg(long)]
    eval_every: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_parser = parse_variant, default_value = "april")]
    variant: AlgorithmVariant,
    /// Class to evaluate alongside the training class; all classes if omitted.
    #[arg(long, value_enum)]
    class: Option<ClassArg>,
    /// Domains per class.
    #[arg(long, default_value_t = eval::EVAL_COUNT)]
    count: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long, value_parser = parse_variant, default_value = "april")]
    variant: AlgorithmVariant,
    #[arg(long, value_enum, default_value = "train")]
    class: ClassArg,
    /// Episodes to roll out per seed.
    #[arg(long, default_value_t = 3)]
    episodes: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Variants to include; every variant found under `--out` if omitted.
    #[arg(long, value_parser = parse_variant)]
    variant: Vec<AlgorithmVariant>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 400)]
    height: u32,
}

#[derive(Args, Debug)]
struct GradArgs {
    /// Maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ExportAttention(a) => export(a),
        Command::Plot(a) => plot(a),
        Command::GradCheck(a) => grad_check(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn train_config(a: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let mut c = TrainConfig::new(a.variant, seed, a.resolution);
    c.arch = match a.arch.unwrap_or(if a.resolution == 24 { ArchArg::Desk } else { ArchArg::Navworld }) {
        ArchArg::Navworld => ArchConfig::navworld(),
        ArchArg::Desk => ArchConfig::desk(),
    };
    let h = &mut c.hyper;
    h.max_episodes = a.episodes;
    h.max_env_steps = a.env_steps;
    h.workers = a.common.workers;
    h.terminal_mask = !a.no_terminal_mask;
    if let Some(b) = a.beta {
        h.beta = b;
    }
    if let Some(n) = a.nu {
        h.nu = n;
    }
    if let Some(e) = a.eval_every {
        h.eval_every = e;
    }
    c.validate()?;
    Ok(c)
}

fn train(a: TrainArgs) -> Result<bool> {
    if a.seeds == 0 {
        return Err(Error::Usage("--seeds must be at least 1".into()));
    }
    for seed in a.seed..a.seed + a.seeds {
        let config = train_config(&a, seed)?;
        let dir = RunDir::new(&a.common.out, a.variant, seed);
        println!("training {} seed {seed} -> {}", a.variant, dir.path.display());
        let out = trainer::run(&config, Some(&dir.path))?;
        let last = out.eval_curve().last().map_or(f64::NAN, |p| p.1);
        println!(
            "  {} episodes, {} env steps, final eval return {last:.3}",
            out.episodes, out.env_steps
        );
    }
    Ok(true)
}

fn classes(class: Option<ClassArg>) -> Vec<DomainClass> {
    match class.map(DomainClass::from) {
        None => DomainClass::ALL.to_vec(),
        Some(DomainClass::Train) => vec![DomainClass::Train],
        Some(c) => vec![DomainClass::Train, c],
    }
}

fn evaluate(a: EvalArgs) -> Result<bool> {
    let runs = RunDir::discover(&a.common.out, a.variant)?;
    let classes = classes(a.class);
    let mut seeds = Vec::new();
    let mut results = Vec::new();
    for run in &runs {
        let (config, ckpt) = run.latest()?;
        let r = eval::evaluate_run(&config, &ckpt, &classes, a.count, a.common.workers)?;
        let seed_report = EvalReport::from_runs(a.variant.label(), &[run.seed], a.count, std::slice::from_ref(&r))?;
        seed_report.write_csv(std::fs::File::create(run.path.join("eval.csv"))?)?;
        seeds.push(run.seed);
        results.push(r);
    }
    let report = EvalReport::from_runs(a.variant.label(), &seeds, a.count, &results)?;
    let path = a.common.out.join(a.variant.label()).join("eval.csv");
    report.write_csv(std::fs::File::create(&path)?)?;
    println!("{} over seeds {seeds:?}, {} domains per class", a.variant, a.count);
    println!("{:<8} {:>8} {:>8} {:>8} {:>10}", "class", "mean", "2sigma", "random", "%decrease");
    for row in report.rows() {
        let pd = row
            .percent_decrease
            .map_or_else(|| "undefined".to_string(), |v| format!("{v:.1}"));
        println!(
            "{:<8} {:>8.3} {:>8.3} {:>8.3} {:>10}",
            row.class.label(),
            row.mean,
            row.two_sigma,
            row.random,
            pd
        );
    }
    println!("wrote {}", path.display());
    Ok(true)
}

fn export(a: ExportArgs) -> Result<bool> {
    let class = DomainClass::from(a.class);
    for run in RunDir::discover(&a.common.out, a.variant)? {
        let (config, ckpt) = run.latest()?;
        let nets = eval::load_networks(&config, &ckpt)?;
        let scenes = eval::class_scenes(&config, class, a.episodes)?;
        let dir = run.path.join("attention").join(class.label());
        let out = eval::export_attention(&nets, &scenes, &dir, true)?;
        println!(
            "seed {}: {} frames, attention localised on {:.1}% -> {}",
            run.seed,
            out.frames,
            100.0 * out.localised_fraction(),
            dir.display()
        );
    }
    Ok(true)
}

fn plot(a: PlotArgs) -> Result<bool> {
    let variants = if a.variant.is_empty() {
        RunDir::variants(&a.out)?
    } else {
        a.variant.clone()
    };
    let dir = a.out.join("plots");
    std::fs::create_dir_all(&dir)?;
    let mut curves = Vec::new();
    let mut rows = Vec::new();
    for v in &variants {
        let runs = RunDir::discover(&a.out, *v)?;
        let seeds = runs
            .iter()
            .map(|r| eval::read_log_curve(std::fs::File::open(r.path.join("log.csv"))?))
            .collect::<Result<Vec<_>>>()?;
        curves.push(Curve { label: v.label().to_string(), seeds });
        let report = a.out.join(v.label()).join("eval.csv");
        if report.exists() {
            rows.extend(eval::load_rows(&report)?);
        }
    }
    let curve = eval::learning_curve(&curves, a.width, a.height)?;
    curve.canvas.save(&dir.join("learning_curve.png"))?;
    curve.write_csv(std::fs::File::create(dir.join("learning_curve.csv"))?)?;
    println!("wrote {}", dir.join("learning_curve.png").display());
    if !rows.is_empty() {
        let chart = eval::bar_chart(&rows, a.width, a.height)?;
        chart.canvas.save(&dir.join("evaluation.png"))?;
        eval::write_rows(std::fs::File::create(dir.join("evaluation.csv"))?, &rows)?;
        println!("wrote {}", dir.join("evaluation.png").display());
    }
    for (k, v) in variants.iter().enumerate() {
        println!("  colour {:?}: {v}", eval::CurvePlot::colour(k));
    }
    Ok(true)
}

fn grad_check(a: GradArgs) -> Result<bool> {
    let start = std::time::Instant::now();
    let mut ok = true;
    for r in trainer::loss_gradient_suite(a.tolerance)? {
        let status = if r.report.passed { "ok" } else { "FAIL" };
        println!(
            "{status:<4} {:<36} max rel err {:.2e} over {} parameters",
            r.name, r.report.max_rel_error, r.report.checked
        );
        ok &= r.report.passed;
    }
    println!("finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(ok)
}
