//! Command-line surface for the evaluation harness.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flipbench_core::builder::{
    build_benchmark_capped, build_finetune, stratify, BenchmarkManifest, FinetuneStrategy,
    MisledMatrix, StratifyMode, Stratum, StratumLevel,
};
use flipbench_core::dataset::{load_items, ItemCollection};
use flipbench_core::instruction::EXPLICIT_TEMPLATES;
use flipbench_core::model_client::{Cassette, CassetteMode, ChatClient, Endpoint};
use flipbench_core::pipeline::{PlanFile, RunStore, Runner};
use flipbench_core::report::{
    render_report, simulate_sweep, GroupDim, ReportFormat, ReportSpec,
};

#[derive(Parser)]
#[command(name = "flipbench", version, about = "Two-stage misleading-instruction evaluation harness")]
struct Cli {
    /// Override the plan's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run store path.
    #[arg(long, global = true, default_value = "runstore.jsonl")]
    store: PathBuf,
    /// Plan file (TOML).
    #[arg(long, global = true)]
    plan: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an item file and print a summary.
    Ingest {
        /// Item JSONL file.
        items: PathBuf,
        /// Write the normalized collection here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect the embedded instruction catalog.
    Templates {
        #[command(subcommand)]
        command: TemplatesCommand,
    },
    /// Execute a plan stage.
    Run {
        #[command(subcommand)]
        stage: RunStage,
    },
    /// Grouped metrics over stored runs.
    Metrics(ReportArgs),
    /// Full report with scatter exports.
    Report(ReportArgs),
    /// Partition items into difficulty strata from multi-run flip results.
    Stratify {
        /// Runs to treat as model columns (repeatable).
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        /// Condition id for the stage-2 records; defaults to the headline
        /// explicit condition.
        #[arg(long)]
        condition: Option<String>,
        #[arg(long, default_value_t = 12)]
        total_models: usize,
        #[arg(long, default_value = "exact")]
        mode: String,
        /// Write strata JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the benchmark manifest from strata.
    BuildBenchmark {
        /// Strata JSON from `stratify`.
        #[arg(long)]
        strata: PathBuf,
        /// Item JSONL file.
        #[arg(long)]
        items: PathBuf,
        /// Cap per stratum (seeded sample).
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the fine-tune conversation dataset.
    BuildFinetune {
        #[arg(long)]
        strata: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        items: PathBuf,
        /// Pull implicit guidance from this run in the store.
        #[arg(long)]
        guidance_run: Option<String>,
        /// Use masked guidance texts.
        #[arg(long)]
        masked: bool,
        #[arg(long, default_value_t = 1000)]
        n_explicit: usize,
        #[arg(long, default_value_t = 1000)]
        n_implicit: usize,
        #[arg(long, default_value = "mixed_default")]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Susceptibility sweep on the simulated model.
    SimulateSweep {
        /// Comma-separated susceptibility levels.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1.0")]
        susceptibilities: String,
        #[arg(long, default_value_t = 2000)]
        items: usize,
        #[arg(long, default_value_t = 20)]
        samples: u64,
        /// Directory for the sweep's store files.
        #[arg(long, default_value = "sweep-work")]
        work_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TemplatesCommand {
    /// Print every explicit template: key, family, text.
    List,
}

#[derive(Subcommand)]
enum RunStage {
    /// Stage 1: unmanipulated responses.
    Baseline(CassetteArgs),
    /// Stage 2: responses under injected instructions.
    Mislead(CassetteArgs),
    /// Repeated stage-1 sampling for consistency rates.
    Consistency(CassetteArgs),
    /// Generate implicit guidance variants with a generator endpoint.
    ImplicitGen {
        #[command(flatten)]
        cassette: CassetteArgs,
        #[arg(long)]
        generator_url: String,
        #[arg(long)]
        generator_model: String,
        /// Environment variable holding the generator API key.
        #[arg(long)]
        generator_key_env: Option<String>,
        #[arg(long, default_value_t = 5)]
        n_variants: u32,
        /// Omit image references from generation requests.
        #[arg(long)]
        text_only: bool,
    },
}

#[derive(Args)]
struct CassetteArgs {
    /// Record live responses into this cassette.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Replay from this cassette; any miss is an error and no live calls
    /// are made.
    #[arg(long, conflicts_with = "record")]
    replay: Option<PathBuf>,
}

impl CassetteArgs {
    fn open(&self) -> Result<Option<Arc<Cassette>>> {
        let (path, mode) = match (&self.record, &self.replay) {
            (Some(p), None) => (p, CassetteMode::Record),
            (None, Some(p)) => (p, CassetteMode::Replay),
            _ => return Ok(None),
        };
        Ok(Some(Arc::new(Cassette::open(path, mode)?)))
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Runs to include (repeatable).
    #[arg(long = "run", required = true)]
    runs: Vec<String>,
    /// Grouping dimensions: model, difficulty, task, sub_ability,
    /// question_type, condition (repeatable).
    #[arg(long = "group-by")]
    group_by: Vec<String>,
    /// Output formats: json, csv, text, svg (repeatable; default text).
    #[arg(long = "format")]
    formats: Vec<String>,
    /// Item JSONL file backing the runs.
    #[arg(long)]
    items: PathBuf,
    /// Benchmark manifest for difficulty grouping.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory to write report files into; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { items, out } => ingest(&items, out.as_deref()),
        Command::Templates { command: TemplatesCommand::List } => {
            for t in EXPLICIT_TEMPLATES {
                println!("{:?}\t{}\t{}", t.key, t.family, t.text);
            }
            Ok(())
        }
        Command::Run { stage } => run_stage(&cli.store, cli.plan.as_deref(), cli.seed, stage),
        Command::Metrics(args) | Command::Report(args) => report(&cli.store, args),
        Command::Stratify { runs, condition, total_models, mode, out } => {
            run_stratify(&cli.store, &runs, condition, total_models, &mode, out.as_deref())
        }
        Command::BuildBenchmark { strata, items, cap, out } => {
            let strata = read_strata(&strata)?;
            let items = load_items(&items)?;
            let manifest =
                build_benchmark_capped(&strata, &items, cap, cli.seed.unwrap_or(0));
            emit(out.as_deref(), &manifest.to_json())
        }
        Command::BuildFinetune {
            strata,
            manifest,
            items,
            guidance_run,
            masked,
            n_explicit,
            n_implicit,
            strategy,
            out,
        } => {
            let strata = read_strata(&strata)?;
            let manifest: BenchmarkManifest =
                serde_json::from_str(&std::fs::read_to_string(&manifest)?)
                    .context("parsing benchmark manifest")?;
            let items = load_items(&items)?;
            let pool = strata
                .iter()
                .find(|s| s.level == StratumLevel::FinetunePool)
                .cloned()
                .unwrap_or(Stratum { level: StratumLevel::FinetunePool, item_ids: vec![] });
            let strategy = match strategy.as_str() {
                "s5" => FinetuneStrategy::S5,
                "c5" => FinetuneStrategy::C5,
                "c10" => FinetuneStrategy::C10,
                "mixed_default" => FinetuneStrategy::MixedDefault,
                other => bail!("unknown strategy {other:?} (s5, c5, c10, mixed_default)"),
            };
            let guidance = match guidance_run {
                Some(run_id) => {
                    let store = RunStore::open(&cli.store)?;
                    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
                    for id in &pool.item_ids {
                        let texts: Vec<String> = store
                            .guidance_for_item(&run_id, id)
                            .into_iter()
                            .map(|g| {
                                if masked {
                                    g.masked_text.clone()
                                } else {
                                    g.text.clone()
                                }
                            })
                            .collect();
                        if !texts.is_empty() {
                            map.insert(id.clone(), texts);
                        }
                    }
                    map
                }
                None => BTreeMap::new(),
            };
            let dataset = build_finetune(
                &pool,
                &manifest,
                &items,
                &guidance,
                n_explicit,
                n_implicit,
                strategy,
                cli.seed.unwrap_or(0),
            )?;
            std::fs::write(&out, dataset.to_jsonl())?;
            eprintln!(
                "wrote {} training lines over {} items to {}",
                dataset.lines.len(),
                dataset.item_ids.len(),
                out.display()
            );
            Ok(())
        }
        Command::SimulateSweep { susceptibilities, items, samples, work_dir, out } => {
            let levels: Vec<f64> = susceptibilities
                .split(',')
                .map(|s| s.trim().parse::<f64>().context("parsing susceptibility list"))
                .collect::<Result<_>>()?;
            std::fs::create_dir_all(&work_dir)?;
            let report = simulate_sweep(
                &levels,
                items,
                samples,
                cli.seed.unwrap_or(0),
                &work_dir,
            )?;
            let json = serde_json::to_string_pretty(&report)?;
            for point in &report.points {
                println!(
                    "susceptibility {:.2}  MR(T>F) {}  mean CR {:.4}",
                    point.susceptibility,
                    point
                        .mr_true_to_false
                        .map(|v| format!("{:.4}", v))
                        .unwrap_or_else(|| "N/A".into()),
                    point.mean_cr
                );
            }
            match report.spearman {
                Some(rho) => println!("spearman(MR, CR) = {rho:.4}"),
                None => println!("spearman(MR, CR) undefined"),
            }
            emit(out.as_deref(), &json)
        }
    }
}

fn ingest(path: &Path, out: Option<&Path>) -> Result<()> {
    let items = load_items(path)?;
    let mut mc = 0;
    let mut yn = 0;
    let mut with_image = 0;
    for item in items.iter() {
        match item.task_type {
            flipbench_core::dataset::TaskType::MultipleChoice => mc += 1,
            flipbench_core::dataset::TaskType::YesNo => yn += 1,
        }
        if item.image_ref.is_some() {
            with_image += 1;
        }
    }
    println!(
        "{} items ({mc} multiple-choice, {yn} yes/no, {with_image} with images)",
        items.len()
    );
    if let Some(out) = out {
        let mut buf = Vec::new();
        items.write_jsonl(&mut buf)?;
        std::fs::write(out, buf)?;
        eprintln!("wrote normalized items to {}", out.display());
    }
    Ok(())
}

fn load_plan(path: Option<&Path>, seed: Option<u64>) -> Result<(PlanFile, ItemCollection)> {
    let path = path.context("--plan is required for run commands")?;
    let mut plan_file = PlanFile::load(path)?;
    if let Some(seed) = seed {
        plan_file.plan.seed = seed;
    }
    let items_path = if Path::new(&plan_file.items).is_absolute() {
        PathBuf::from(&plan_file.items)
    } else {
        path.parent().unwrap_or(Path::new(".")).join(&plan_file.items)
    };
    let items = load_items(&items_path)
        .with_context(|| format!("loading items from {}", items_path.display()))?;
    Ok((plan_file, items))
}

fn run_stage(
    store_path: &Path,
    plan_path: Option<&Path>,
    seed: Option<u64>,
    stage: RunStage,
) -> Result<()> {
    let (plan_file, items) = load_plan(plan_path, seed)?;
    let mut store = RunStore::open(store_path)?;
    let summary = match stage {
        RunStage::Baseline(cassette) => {
            let runner = runner_with(plan_file.plan, cassette)?;
            runner.run_baseline(&items, &mut store)?
        }
        RunStage::Mislead(cassette) => {
            let runner = runner_with(plan_file.plan, cassette)?;
            runner.run_misled(&items, &mut store)?
        }
        RunStage::Consistency(cassette) => {
            let runner = runner_with(plan_file.plan, cassette)?;
            runner.run_consistency(&items, &mut store)?
        }
        RunStage::ImplicitGen {
            cassette,
            generator_url,
            generator_model,
            generator_key_env,
            n_variants,
            text_only,
        } => {
            let runner = Runner::new(plan_file.plan)?;
            let mut endpoint = Endpoint::new(generator_url, generator_model);
            endpoint.api_key_env = generator_key_env;
            let mut generator = ChatClient::new(endpoint)?;
            if let Some(cassette) = cassette.open()? {
                generator = generator.with_cassette(cassette);
            }
            runner.generate_implicit_variants(&items, &mut store, &generator, n_variants, text_only)?
        }
    };
    println!(
        "run {}: requested {}, completed {}, skipped {}, failed {}, unparseable {}",
        summary.run_id,
        summary.requested,
        summary.completed,
        summary.skipped,
        summary.failed,
        summary.unparseable
    );
    Ok(())
}

fn runner_with(plan: flipbench_core::pipeline::RunPlan, cassette: CassetteArgs) -> Result<Runner> {
    let mut runner = Runner::new(plan)?;
    if let Some(cassette) = cassette.open()? {
        runner = runner.with_cassette(cassette);
    }
    Ok(runner)
}

fn report(store_path: &Path, args: ReportArgs) -> Result<()> {
    let store = RunStore::open(store_path)?;
    let items = load_items(&args.items)?;
    let mut spec = ReportSpec::new(args.runs.clone());
    for dim in &args.group_by {
        let parsed = GroupDim::parse(dim)
            .with_context(|| format!("unknown group-by dimension {dim:?}"))?;
        spec.group_by.push(parsed);
    }
    if !args.formats.is_empty() {
        spec.formats = BTreeSet::new();
        for format in &args.formats {
            let parsed = match format.as_str() {
                "json" => ReportFormat::Json,
                "csv" => ReportFormat::Csv,
                "text" => ReportFormat::Text,
                "svg" => ReportFormat::Svg,
                other => bail!("unknown format {other:?} (json, csv, text, svg)"),
            };
            spec.formats.insert(parsed);
        }
    }
    if let Some(manifest) = &args.manifest {
        spec.manifest = Some(
            serde_json::from_str(&std::fs::read_to_string(manifest)?)
                .context("parsing benchmark manifest")?,
        );
    }
    let rendered = render_report(&spec, &store, &items)?;
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut written = Vec::new();
            for (name, content) in [
                ("report.json", &rendered.json),
                ("report.csv", &rendered.csv),
                ("report.txt", &rendered.text),
                ("scatter.csv", &rendered.scatter_csv),
                ("scatter.svg", &rendered.scatter_svg),
            ] {
                if let Some(content) = content {
                    std::fs::write(dir.join(name), content)?;
                    written.push(name);
                }
            }
            eprintln!("wrote {} into {}", written.join(", "), dir.display());
        }
        None => {
            if let Some(text) = &rendered.text {
                print!("{text}");
            }
            if let Some(json) = &rendered.json {
                println!("{json}");
            }
            if let Some(csv) = &rendered.csv {
                print!("{csv}");
            }
        }
    }
    Ok(())
}

fn run_stratify(
    store_path: &Path,
    runs: &[String],
    condition: Option<String>,
    total_models: usize,
    mode: &str,
    out: Option<&Path>,
) -> Result<()> {
    let store = RunStore::open(store_path)?;
    let condition = condition
        .unwrap_or_else(|| flipbench_core::instruction::Condition::headline().id());
    let matrix = MisledMatrix::from_store(&store, runs, &condition)?;
    let mode = match mode {
        "exact" => StratifyMode::Exact,
        "at_least" => StratifyMode::AtLeast,
        other => bail!("unknown stratify mode {other:?} (exact, at_least)"),
    };
    let strata = stratify(&matrix, total_models, mode);
    for stratum in &strata {
        println!("{:>13}: {} items", stratum.level.as_str(), stratum.item_ids.len());
    }
    let json = serde_json::to_string_pretty(&strata)?;
    emit(out, &json)
}

fn read_strata(path: &Path) -> Result<Vec<Stratum>> {
    serde_json::from_str(&std::fs::read_to_string(path)?).context("parsing strata JSON")
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{content}"),
    }
    Ok(())
}
