use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use catanneal::anneal::{anneal, AnnealConfig, CenterSampling, Criterion};
use catanneal::density::DensityMetric;
use catanneal::em::{self, EmConfig};
use catanneal::io::{self, ColumnRef, FitOutputs, IngestConfig, LoadedData, MissingPolicy, ModelDocument};
use catanneal::model::{ClusterAssignment, Dataset};
use catanneal::report::{Contingency, SummaryRow};
use catanneal::scaling::{self, ScalingConfig};
use catanneal::selection::{aic, bic, category_utility, degrees_of_freedom, mean_entropy};
use catanneal::synth::{self, SynthSpec};

#[derive(Parser)]
#[command(name = "catanneal", version, about = "Cluster categorical data with a density-annealed mixture model")]
struct Cli {
    /// Worker threads for EM (defaults to all cores; 1 gives reproducible timings).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a mixture and write model, assignment and trace files.
    Fit(FitArgs),
    /// Generate a rule-based synthetic dataset.
    Gen(GenArgs),
    /// Time annealing runs on synthetic data of increasing size.
    Scaling(ScalingArgs),
    /// Cluster-by-label tables and a summary row for a fitted model.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Aic,
    Bic,
    Density,
}

#[derive(Clone, Copy, ValueEnum)]
enum PruneArg {
    Entropy,
    Cartesian,
}

#[derive(Clone, Copy, ValueEnum)]
enum MissingArg {
    Category,
    Drop,
}

#[derive(Clone, Copy, ValueEnum)]
enum CentersArg {
    Marginal,
    Row,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Column kept aside for evaluation (name or zero-based index).
    #[arg(long)]
    label_col: Option<String>,
    /// Column left out entirely (repeatable).
    #[arg(long = "ignore-col")]
    ignore_cols: Vec<String>,
    /// How `?` cells are treated.
    #[arg(long, value_enum, default_value_t = MissingArg::Category)]
    missing: MissingArg,
    /// Equal-frequency bins for numeric columns.
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    bins: Option<u32>,
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// The first row holds data, not column names.
    #[arg(long)]
    no_header: bool,
}

impl DataArgs {
    fn ingest(&self) -> Result<IngestConfig> {
        if !self.delimiter.is_ascii() {
            bail!("delimiter must be a single ASCII character");
        }
        Ok(IngestConfig {
            delimiter: self.delimiter as u8,
            header_row: !self.no_header,
            label_column: self.label_col.as_deref().map(ColumnRef::parse),
            ignore_columns: self.ignore_cols.iter().map(|c| ColumnRef::parse(c)).collect(),
            missing_policy: match self.missing {
                MissingArg::Category => MissingPolicy::AsCategory,
                MissingArg::Drop => MissingPolicy::DropRecord,
            },
            numeric_bins: self.bins.map(|b| b as usize),
        })
    }

    fn load(&self) -> Result<LoadedData> {
        let cfg = self.ingest()?;
        io::load_csv(&self.data, &cfg).with_context(|| format!("cannot load {}", self.data.display()))
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    kmax: u32,
    /// Step root of the component schedule (1 visits every k).
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, value_enum, default_value_t = CriterionArg::Bic)]
    criterion: CriterionArg,
    #[arg(long, value_enum, default_value_t = PruneArg::Entropy)]
    prune_metric: PruneArg,
    #[arg(long, value_enum, default_value_t = CentersArg::Marginal)]
    centers: CentersArg,
    /// Relative pseudo-count added to every value at read time.
    #[arg(long, default_value_t = 1e-9)]
    smoothing: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Relative log-likelihood change that ends EM.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where model.json, assignment.csv and trace.csv are written.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

impl FitArgs {
    fn config(&self) -> AnnealConfig {
        AnnealConfig {
            k_max: self.kmax as usize,
            beta: self.beta,
            prune_metric: match self.prune_metric {
                PruneArg::Entropy => DensityMetric::Entropy,
                PruneArg::Cartesian => DensityMetric::Cartesian,
            },
            criterion: match self.criterion {
                CriterionArg::Aic => Criterion::Aic,
                CriterionArg::Bic => Criterion::Bic,
                CriterionArg::Density => Criterion::Density,
            },
            seed: self.seed,
            center_sampling: match self.centers {
                CentersArg::Marginal => CenterSampling::Marginal,
                CentersArg::Row => CenterSampling::Row,
            },
            em: EmConfig {
                max_iterations: self.max_iters,
                rel_tolerance: self.tol,
                smoothing: self.smoothing,
            },
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    attributes: usize,
    #[arg(long, default_value_t = 20)]
    cardinality: usize,
    #[arg(long, default_value_t = 5)]
    rules: usize,
    /// Probability that a ruled attribute takes the rule's value.
    #[arg(long, default_value_t = 0.97)]
    conformance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; true rule labels go to `<out>.labels` unless --labels-out is set.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Args)]
struct ScalingArgs {
    /// Dataset sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1_000usize, 10_000, 100_000, 1_000_000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    repeats: u32,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    kmax: u32,
    /// EM iterations per level (run in full, no early stop).
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    /// Smallest size included in the slope fit.
    #[arg(long, default_value_t = 1_000)]
    fit_from: usize,
    #[arg(long, default_value_t = 10)]
    attributes: usize,
    #[arg(long, default_value_t = 20)]
    cardinality: usize,
    #[arg(long, default_value_t = 5)]
    rules: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timing CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model document written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Assignment CSV written by `fit`; recomputed from the model when omitted.
    #[arg(long)]
    assignment: Option<PathBuf>,
    /// Name used in the summary row (defaults to the data file stem).
    #[arg(long)]
    name: Option<String>,
    /// Write contingency.csv, contingency.txt and summary.csv here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = match threads {
        Some(0) => Err(anyhow::anyhow!("--threads must be at least 1")),
        Some(n) => em::with_threads(n, move || run(cli.command)),
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(args) => fit(&args),
        Command::Gen(args) => gen(&args),
        Command::Scaling(args) => run_scaling(&args),
        Command::Report(args) => report(&args),
    }
}

fn fit(args: &FitArgs) -> Result<()> {
    let config = args.config();
    config.validate()?;
    let loaded = args.data.load()?;
    let data = &loaded.dataset;

    let start = Instant::now();
    let outcome = anneal(data, &config)?;
    let elapsed = start.elapsed();

    let level = outcome.trace.selected();
    let mut doc = ModelDocument::new(&outcome.model, data.schema(), config.em.smoothing);
    doc.trace = Some(outcome.trace.clone());
    doc.config = Some(config.clone());

    fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let out = FitOutputs::in_dir(&args.out_dir);
    io::save_model(&out.model, &doc)?;
    io::write_assignment(&out.assignment, &outcome.assignment)?;
    io::write_trace(&out.trace, &outcome.trace)?;

    println!("records       {}", data.num_records());
    println!("attributes    {}", data.num_attributes());
    println!("k*            {}", level.k);
    println!("log-lik       {:.4}", level.log_likelihood);
    println!("AIC           {:.4}", level.aic);
    println!("BIC           {:.4}", level.bic);
    println!("mean density  {:.6}", level.mean_density);
    if let Some(labels) = &loaded.labels {
        println!("CU            {:.4}", category_utility(&outcome.assignment, data));
        let table = Contingency::new(&outcome.assignment.labels, outcome.assignment.num_clusters, labels);
        println!("label match   {:.4}", table.matched_agreement());
    }
    println!("wall time     {:.3}s", elapsed.as_secs_f64());
    println!("wrote         {}", args.out_dir.display());
    Ok(())
}

fn gen(args: &GenArgs) -> Result<()> {
    let spec = SynthSpec {
        num_records: args.n,
        num_attributes: args.attributes,
        cardinality: args.cardinality,
        num_rules: args.rules,
        rule_conformance: args.conformance,
        seed: args.seed,
    };
    let (data, labels) = synth::generate(&spec)?;
    let labels_out = args.labels_out.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".labels");
        PathBuf::from(p)
    });
    io::write_dataset(&args.out, &data, None)?;
    io::write_labels(&labels_out, &labels)?;
    println!("wrote {} records to {} (labels in {})", data.num_records(), args.out.display(), labels_out.display());
    Ok(())
}

fn run_scaling(args: &ScalingArgs) -> Result<()> {
    if args.sizes.is_empty() {
        bail!("--sizes needs at least one value");
    }
    let mut config = ScalingConfig {
        sizes: args.sizes.clone(),
        repeats: args.repeats as usize,
        min_fit_size: args.fit_from,
        synth: SynthSpec {
            num_attributes: args.attributes,
            cardinality: args.cardinality,
            num_rules: args.rules,
            seed: args.seed,
            ..SynthSpec::default()
        },
        ..ScalingConfig::default()
    };
    config.anneal.k_max = args.kmax as usize;
    config.anneal.seed = args.seed;
    config.anneal.em.max_iterations = args.max_iters;
    let report = scaling::run(&config, |p| {
        eprintln!("N={:<9} median {:.4}s  spread {:.1}%  k*={}", p.n, p.median_seconds, 100.0 * p.relative_spread(), p.selected_k)
    })?;
    match &args.out {
        Some(path) => fs::write(path, report.to_csv()).with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{}", report.to_csv()),
    }
    eprintln!("log-log slope {:.3}", report.slope);
    Ok(())
}

fn assignment_for(args: &ReportArgs, data: &Dataset, doc: &ModelDocument) -> Result<ClusterAssignment> {
    let k = doc.components.len();
    match &args.assignment {
        Some(path) => {
            let labels = io::read_assignment(path)?;
            if labels.len() != data.num_records() {
                bail!("{} has {} rows but the data has {} records", path.display(), labels.len(), data.num_records());
            }
            if let Some(bad) = labels.iter().find(|&&c| c >= k) {
                bail!("cluster id {bad} is out of range for a {k}-component model");
            }
            Ok(ClusterAssignment::from_labels(labels, k))
        }
        None => {
            let (post, _) = em::e_step(&doc.model()?, data, doc.smoothing);
            Ok(ClusterAssignment::from_posteriors(post, false))
        }
    }
}

fn report(args: &ReportArgs) -> Result<()> {
    let loaded = args.data.load()?;
    let data = &loaded.dataset;
    let doc = io::load_model(&args.model).with_context(|| format!("cannot load {}", args.model.display()))?;
    if doc.schema != *data.schema() {
        bail!("model schema does not match the columns of {}", args.data.data.display());
    }
    let model = doc.model()?;
    let assignment = assignment_for(args, data, &doc)?;

    let table = match &loaded.labels {
        Some(labels) => Contingency::new(&assignment.labels, assignment.num_clusters, labels),
        None => Contingency::sizes_only(&assignment.labels, assignment.num_clusters),
    };
    let (_, log_lik) = em::e_step(&model, data, doc.smoothing);
    let dof = degrees_of_freedom(data.schema(), model.k());
    let summary = SummaryRow {
        dataset: args.name.clone().unwrap_or_else(|| stem(&args.data.data)),
        k: model.k(),
        category_utility: category_utility(&assignment, data),
        mean_density: catanneal::density::weighted_average_density(&model),
        mean_entropy: mean_entropy(&model),
    };

    print!("{}", table.to_text());
    println!();
    println!("{}", summary.to_text());
    println!(
        "log-lik {:.4}  AIC {:.4}  BIC {:.4}",
        log_lik,
        aic(log_lik, dof),
        bic(log_lik, dof, data.total_weight())
    );
    if loaded.labels.is_some() {
        println!("label match {:.4}", table.matched_agreement());
    }

    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))
        };
        write("contingency.csv", table.to_csv())?;
        write("contingency.txt", table.to_text())?;
        write("summary.csv", format!("{}\n{}\n", SummaryRow::CSV_HEADER, summary.to_csv()))?;
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
