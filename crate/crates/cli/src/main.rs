//! `funcreg`: generate data, train, sweep, compute bounds, run the finite-class
//! Monte Carlo and embed functional vectors.
//!
//! Exit codes: 0 success, 1 failure, 2 usage error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use funcreg_lab::bounds::{compute_bounds, BoundQuery, BoundResult, Capacity, ClassSizes, Entropies, Variant, VcDims};
use funcreg_lab::experiment::embedding::{embed_vectors, functional_vectors, read_vectors_csv, write_embedding_outputs};
use funcreg_lab::experiment::output::{bounds_csv, manifest, versioned_csv, write_atomic};
use funcreg_lab::experiment::sweep::architecture_for;
use funcreg_lab::experiment::{parse_config, run_sweep, with_jobs, write_sweep_outputs, ExperimentConfig, RunData};
use funcreg_lab::funcspace::{dispersion_by_tag, EmbedMethod};
use funcreg_lab::numkit::RngStream;
use funcreg_lab::pacmc::{coin_flip_world, near_miss_world, random_world, trivial_world, RandomWorldSpec, VerifyReport};
use funcreg_lab::synthgen::format_float;
use funcreg_lab::trainer::{train_pipeline, Pipeline, TrainConfig};

#[derive(Parser)]
#[command(name = "funcreg", version, about = "Functional regularization experiments", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the unlabeled, labeled and test sets of run 0.
    Gen(ExperimentArgs),
    /// Train one pipeline once on run 0 data.
    Train(TrainArgs),
    /// Seeded sweep of both pipelines along the configured axis.
    Sweep(ExperimentArgs),
    /// Sample-complexity bounds.
    Bounds(BoundsArgs),
    /// Monte Carlo check of the finite-class guarantee.
    Pacmc(PacmcArgs),
    /// Functional vectors, their dispersion and a 2-D embedding.
    Embed(EmbedArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available CPUs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Pipeline to train (overrides `train.pipeline`).
    #[arg(long)]
    pipeline: Option<String>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Experiment configuration file; the desk profile when omitted with --vectors.
    #[arg(long, required_unless_present = "vectors")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Embed an existing functional-vector CSV instead of training.
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
#[allow(non_snake_case)]
struct BoundsArgs {
    /// File of `flag = value` lines; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accepted for interface uniformity; bounds are deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `bounds.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// thm1 .. thm6.
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 0.1)]
    eps0: f64,
    #[arg(long, default_value_t = 0.1)]
    eps1: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long = "epsR", default_value_t = 0.0)]
    eps_r: f64,
    #[arg(long = "epsC", default_value_t = 0.0)]
    eps_c: f64,
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
    #[arg(long = "L", default_value_t = 1.0)]
    l: f64,
    #[arg(long = "lnH")]
    lnH: Option<f64>,
    #[arg(long = "lnF")]
    lnF: Option<f64>,
    #[arg(long = "lnG")]
    lnG: Option<f64>,
    #[arg(long = "lnHtau")]
    lnHtau: Option<f64>,
    #[arg(long = "lnNG")]
    lnNG: Option<f64>,
    #[arg(long = "lnNH")]
    lnNH: Option<f64>,
    #[arg(long = "lnNF")]
    lnNF: Option<f64>,
    #[arg(long = "lnNHpruned")]
    lnNHpruned: Option<f64>,
    #[arg(long = "lnNHlabeled")]
    lnNHlabeled: Option<f64>,
    #[arg(long = "vcGH")]
    vcGH: Option<f64>,
    #[arg(long = "vcFHpruned")]
    vcFHpruned: Option<f64>,
    #[arg(long = "vcFH")]
    vcFH: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WorldChoice {
    Random,
    CoinFlip,
    NearMiss,
    Trivial,
}

#[derive(Args)]
struct PacmcArgs {
    /// File of `flag = value` lines; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `pacmc.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t = WorldChoice::Random)]
    world: WorldChoice,
    /// Number of random worlds.
    #[arg(long, default_value_t = 1)]
    worlds: usize,
    #[arg(long, default_value_t = 0.1)]
    eps0: f64,
    #[arg(long, default_value_t = 0.1)]
    eps1: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 2000)]
    trials: u64,
    /// Near-miss world: mass of the point the bad predictor gets wrong.
    #[arg(long, default_value_t = 0.12)]
    p: f64,
    /// Near-miss world: mass of the point the bad representation cannot reconstruct.
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    #[arg(long = "domain-size", default_value_t = 12)]
    domain_size: usize,
    #[arg(long = "h-count", default_value_t = 24)]
    h_count: usize,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<funcreg_lab::Error> for Failure {
    fn from(e: funcreg_lab::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

type CliResult<T = ()> = Result<T, Failure>;

/// For `bounds` and `pacmc`, splice `flag = value` lines of `--config FILE`
/// in front of the explicit flags, which then override them.
fn expand_flag_file(argv: Vec<String>) -> CliResult<Vec<String>> {
    let Some(sub) = argv.get(1) else { return Ok(argv) };
    if sub != "bounds" && sub != "pacmc" {
        return Ok(argv);
    }
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| Failure::Run(format!("{path}: {e}")))?;
    let mut spliced = argv[..2].to_vec();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("{path}: line {}: expected 'flag = value'", n + 1)))?;
        spliced.push(format!("--{}", k.trim()));
        spliced.push(v.trim().to_string());
    }
    spliced.extend_from_slice(&argv[2..]);
    Ok(spliced)
}

fn load_config(path: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| cfg.out_dir.clone())
}

fn write_file(dir: &Path, name: &str, body: &str) -> CliResult {
    write_atomic(&dir.join(name), body.as_bytes())?;
    Ok(())
}

fn run_data(cfg: &ExperimentConfig) -> CliResult<(RunData, (usize, usize, usize))> {
    let points = cfg.axis_points();
    let (d, r, _) = points[0];
    let max_labeled = points.iter().map(|p| p.2).max().unwrap_or(1);
    let rng = RngStream::for_run(cfg.seed, 0);
    let data = RunData::generate(
        cfg.world,
        d,
        r,
        cfg.zero_mean,
        cfg.noise_variance,
        (cfg.unlabeled, max_labeled, cfg.test),
        &rng,
    )?;
    Ok((data, points[0]))
}

fn cmd_gen(a: ExperimentArgs) -> CliResult {
    let cfg = load_config(&a.config, a.seed)?;
    let dir = out_dir(&cfg, &a.out);
    let (data, (d, r, _)) = run_data(&cfg)?;
    let files = [
        ("unlabeled.csv", data.unlabeled.to_csv_string()),
        ("labeled.csv", data.labeled.to_csv_string()),
        ("test.csv", data.test.to_csv_string()),
        ("config.txt", cfg.to_text()),
    ];
    for (name, body) in &files {
        write_file(&dir, name, body)?;
    }
    let listing: Vec<(&str, &str)> = files.iter().map(|(n, _)| (*n, "-")).collect();
    let extra = [("d", d.to_string()), ("r", r.to_string())];
    write_file(&dir, "manifest.txt", &manifest(&cfg, "gen", &listing, &extra))?;
    out!("unlabeled={}", data.unlabeled.len());
    out!("labeled={}", data.labeled.len());
    out!("test={}", data.test.len());
    out!("out={}", dir.display());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, format_float)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let mut cfg = load_config(&a.common.config, a.common.seed)?;
    if let Some(p) = &a.pipeline {
        cfg.train.pipeline = p.parse::<Pipeline>().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let dir = out_dir(&cfg, &a.common.out);
    let (data, (d, r, n)) = run_data(&cfg)?;
    let labeled = data.labeled.head(n);
    let tc = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let res = with_jobs(a.common.jobs, || {
        train_pipeline(architecture_for(cfg.world), r, &labeled, Some(&data.unlabeled), Some(&data.test), &tc)
    })??;
    let pipeline = cfg.train.pipeline.name();
    let (l1, l2) = res.chosen_lambdas.map_or((None, None), |(a, b)| (Some(a), Some(b)));
    let result = versioned_csv(
        "train",
        &[
            "pipeline", "d", "r", "labeled", "trainMSE", "testMSE", "lr", "pretrainLr", "lambda1", "lambda2",
            "pretrainRegLoss",
        ],
        &[vec![
            pipeline.to_string(),
            d.to_string(),
            r.to_string(),
            n.to_string(),
            format_float(res.train_loss),
            opt(res.test_loss),
            format_float(res.chosen_lr),
            opt(res.chosen_pretrain_lr),
            opt(l1),
            opt(l2),
            opt(res.pretrain_reg_loss),
        ]],
    )?;
    let mut trace_rows = Vec::new();
    for (stage, trace) in [("pretrain", &res.pretrain_trace), ("finetune", &res.loss_trace)] {
        for (e, v) in trace.iter().enumerate() {
            trace_rows.push(vec![stage.to_string(), (e + 1).to_string(), format_float(*v)]);
        }
    }
    let trace = versioned_csv("trace", &["stage", "epoch", "loss"], &trace_rows)?;
    let mut model = Vec::new();
    res.model.write_checkpoint(&mut model)?;
    let model = String::from_utf8(model).map_err(|e| Failure::Run(e.to_string()))?;
    let files = [
        ("result.csv", result),
        ("trace.csv", trace),
        ("model.txt", model),
        ("config.txt", cfg.to_text()),
    ];
    for (name, body) in &files {
        write_file(&dir, name, body)?;
    }
    let listing: Vec<(&str, &str)> = files.iter().map(|(n, _)| (*n, "-")).collect();
    write_file(&dir, "manifest.txt", &manifest(&cfg, "train", &listing, &[("pipeline", pipeline.to_string())]))?;
    out!("pipeline={pipeline}");
    out!("trainMSE={}", res.train_loss);
    if let Some(t) = res.test_loss {
        out!("testMSE={t}");
    }
    out!("lr={}", res.chosen_lr);
    out!("out={}", dir.display());
    Ok(())
}

fn cmd_sweep(a: ExperimentArgs) -> CliResult {
    let cfg = load_config(&a.config, a.seed)?;
    let dir = out_dir(&cfg, &a.out);
    let out = with_jobs(a.jobs, || run_sweep(&cfg))??;
    write_sweep_outputs(&cfg, &out, &dir)?;
    for r in &out.rows {
        out!(
            "{}={} method={} meanTestMSE={} stdTestMSE={} runs={} failed={}",
            r.axis.name(),
            r.axis_value,
            r.method.name(),
            r.mean,
            r.std,
            r.runs,
            r.failed
        );
    }
    for r in &out.reductions {
        out!("{}={} reduction={}", r.axis.name(), r.axis_value, r.reduction);
    }
    out!("out={}", dir.display());
    Ok(())
}

fn need(v: Option<f64>, flag: &str, variant: Variant) -> CliResult<f64> {
    v.ok_or_else(|| Failure::Usage(format!("{variant} needs --{flag}")))
}

fn bound_query(a: &BoundsArgs) -> CliResult<BoundQuery> {
    let variant: Variant = a.variant.parse().map_err(|e: funcreg_lab::Error| Failure::Usage(e.to_string()))?;
    let capacity = match variant {
        Variant::Thm1 => Capacity::Sizes(ClassSizes {
            ln_h: need(a.lnH, "lnH", variant)?,
            ln_f: need(a.lnF, "lnF", variant)?,
            ln_g: need(a.lnG, "lnG", variant)?,
            ln_htau: need(a.lnHtau, "lnHtau", variant)?,
        }),
        Variant::Thm6 => Capacity::Vc(VcDims {
            g_h: need(a.vcGH, "vcGH", variant)?,
            f_hpruned: need(a.vcFHpruned, "vcFHpruned", variant)?,
            f_h: a.vcFH,
        }),
        _ => Capacity::Entropies(Entropies {
            ln_n_g: need(a.lnNG, "lnNG", variant)?,
            ln_n_h: need(a.lnNH, "lnNH", variant)?,
            ln_n_f: need(a.lnNF, "lnNF", variant)?,
            ln_n_hpruned: need(a.lnNHpruned, "lnNHpruned", variant)?,
            ln_n_h_labeled: a.lnNHlabeled,
        }),
    };
    Ok(BoundQuery {
        eps_r: a.eps_r,
        eps_c: a.eps_c,
        c: a.c,
        l: a.l,
        ..BoundQuery::new(variant, a.eps0, a.eps1, a.delta, capacity)
    })
}

fn bounds_report(b: &BoundResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "variant={}", b.variant);
    let _ = writeln!(s, "mU={}", b.m_u_ceil);
    let _ = writeln!(s, "mL={}", b.m_l_ceil);
    let _ = writeln!(s, "mU_exact={}", b.m_u);
    let _ = writeln!(s, "mL_exact={}", b.m_l);
    let _ = writeln!(s, "mL_unregularized={}", b.m_l_unregularized);
    let _ = writeln!(s, "reduction={}", b.reduction);
    if let Some(r) = b.radius_u {
        let _ = writeln!(s, "radiusU={r}");
    }
    if let Some(r) = b.radius_l {
        let _ = writeln!(s, "radiusL={r}");
    }
    let _ = writeln!(s, "pruneThreshold={}", b.prune_threshold);
    let _ = writeln!(s, "errorTarget={}", b.error_target);
    let _ = writeln!(s, "C={}", b.c);
    let _ = write!(s, "L={}", b.l);
    s
}

fn cmd_bounds(a: BoundsArgs) -> CliResult {
    let q = bound_query(&a)?;
    let b = compute_bounds(&q)?;
    out!("{}", bounds_report(&b));
    if let Some(dir) = &a.out {
        write_file(dir, "bounds.csv", &bounds_csv(&[b])?)?;
    }
    Ok(())
}

fn cmd_pacmc(a: PacmcArgs) -> CliResult {
    let rng = RngStream::new(a.seed);
    let mut world_rng = rng.substream(1);
    let worlds = match a.world {
        WorldChoice::Random => {
            let spec = RandomWorldSpec {
                domain_size: a.domain_size,
                h_count: a.h_count,
                ..RandomWorldSpec::default()
            };
            (0..a.worlds)
                .map(|_| random_world(spec, &mut world_rng))
                .collect::<Result<Vec<_>, _>>()?
        }
        WorldChoice::CoinFlip => vec![coin_flip_world()?],
        WorldChoice::NearMiss => vec![near_miss_world(a.p, a.q)?],
        WorldChoice::Trivial => vec![trivial_world()?],
    };
    let reports = with_jobs(a.jobs, || {
        worlds
            .iter()
            .enumerate()
            .map(|(k, w)| w.verify_theorem1(a.eps0, a.eps1, a.delta, a.trials, &rng.substream(100 + k as u64)))
            .collect::<Result<Vec<_>, _>>()
    })??;
    for (k, rep) in reports.iter().enumerate() {
        if reports.len() > 1 {
            out!("world={k}");
        }
        out!("{rep}");
    }
    if let Some(dir) = &a.out {
        let header: Vec<&str> = VerifyReport::csv_header().split(',').collect();
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| r.csv_row().split(',').map(str::to_string).collect())
            .collect();
        write_file(dir, "pacmc.csv", &versioned_csv("pacmc", &header, &rows)?)?;
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::Run(format!("{failed} of {} worlds exceeded the failure threshold", reports.len())));
    }
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => load_config(p, a.seed)?,
        None => {
            let mut c = ExperimentConfig::desk();
            if let Some(s) = a.seed {
                c.seed = s;
            }
            c
        }
    };
    if let Some(m) = &a.method {
        cfg.embed.method = m.parse::<EmbedMethod>().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let dir = out_dir(&cfg, &a.out);
    let vectors = match &a.vectors {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))?;
            read_vectors_csv(f)?
        }
        None => with_jobs(a.jobs, || functional_vectors(&cfg))??.0,
    };
    let dispersion = dispersion_by_tag(&vectors)?;
    let coords = with_jobs(a.jobs, || embed_vectors(&vectors, &cfg))??;
    write_embedding_outputs(&cfg, &vectors, &coords, &dispersion, &dir)?;
    for (tag, d) in &dispersion {
        out!("tag={} dispersion={d}", tag.name());
    }
    out!("vectors={}", vectors.len());
    out!("out={}", dir.display());
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let result = expand_flag_file(argv).and_then(|argv| {
        let cli = Cli::try_parse_from(argv).map_err(|e| {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            let text = e.to_string();
            let head = text.split("Usage:").next().unwrap_or("");
            Failure::Usage(head.trim().trim_start_matches("error: ").to_string())
        })?;
        match cli.command {
            Command::Gen(a) => cmd_gen(a),
            Command::Train(a) => cmd_train(a),
            Command::Sweep(a) => cmd_sweep(a),
            Command::Bounds(a) => cmd_bounds(a),
            Command::Pacmc(a) => cmd_pacmc(a),
            Command::Embed(a) => cmd_embed(a),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {}", one_line(&m));
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {}", one_line(&m));
            ExitCode::from(1)
        }
    }
}
