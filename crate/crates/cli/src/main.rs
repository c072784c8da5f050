use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ldwr_core::eval::{paired_comparison, report_read, report_write, with_cn_params_file};
use ldwr_core::io::{load_synthetic_spec, read_dataset, write_dataset};
use ldwr_core::{
    generate_synthetic, run, ClassifierConfig, DataSource, EpisodeSpec, FilterConfig, FilterMode,
    NeighborhoodConfig, NormalizeMode, PipelineConfig, QueryStats, RunConfig, RunReport,
    SyntheticSpec,
};

#[derive(Parser)]
#[command(
    name = "ldwr",
    version,
    about = "Few-shot classification over local descriptors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the pipeline over sampled episodes.
    Eval(EvalArgs),
    /// Write a synthetic dataset as a descriptor file.
    Synth(SynthArgs),
    /// Print the header and class counts of a descriptor file.
    Inspect { path: PathBuf },
    /// Paired comparison of two reports over the same episode seeds.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Descriptor file.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Synthetic spec file (TOML).
    #[arg(long, value_name = "PATH")]
    synthetic: Option<PathBuf>,
    /// Synthetic benchmark with default parameters.
    #[arg(long)]
    synthetic_defaults: bool,
}

#[derive(Args)]
struct SynOverrides {
    #[arg(long, value_name = "X")]
    syn_snr: Option<f64>,
    #[arg(long, value_name = "X")]
    syn_foreground: Option<f64>,
    #[arg(long, value_name = "N")]
    syn_modes: Option<usize>,
    #[arg(long, value_name = "X")]
    syn_similarity: Option<f64>,
    #[arg(long, value_name = "N")]
    syn_classes: Option<usize>,
    #[arg(long, value_name = "N")]
    syn_samples: Option<usize>,
    #[arg(long, value_name = "N")]
    syn_channels: Option<usize>,
    /// Grid side; images are SIDE x SIDE.
    #[arg(long, value_name = "SIDE")]
    syn_size: Option<usize>,
    #[arg(long, value_name = "SEED")]
    syn_seed: Option<u64>,
}

impl SynOverrides {
    fn any(&self) -> bool {
        self.syn_snr.is_some()
            || self.syn_foreground.is_some()
            || self.syn_modes.is_some()
            || self.syn_similarity.is_some()
            || self.syn_classes.is_some()
            || self.syn_samples.is_some()
            || self.syn_channels.is_some()
            || self.syn_size.is_some()
            || self.syn_seed.is_some()
    }

    fn apply(&self, mut s: SyntheticSpec) -> SyntheticSpec {
        if let Some(v) = self.syn_snr {
            s.signal_to_noise = v;
        }
        if let Some(v) = self.syn_foreground {
            s.foreground_fraction = v;
        }
        if let Some(v) = self.syn_modes {
            s.background_modes = v;
        }
        if let Some(v) = self.syn_similarity {
            s.class_similarity = v;
        }
        if let Some(v) = self.syn_classes {
            s.n_classes = v;
        }
        if let Some(v) = self.syn_samples {
            s.samples_per_class = v;
        }
        if let Some(v) = self.syn_channels {
            s.channels = v;
        }
        if let Some(v) = self.syn_size {
            s.height = v;
            s.width = v;
        }
        if let Some(v) = self.syn_seed {
            s.seed = v;
        }
        s
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Normalize {
    Cn,
    L2,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Averaged,
    PerClass,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stats {
    Own,
    Support,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    syn: SynOverrides,

    #[arg(long, default_value_t = 5)]
    n_way: usize,
    #[arg(long, default_value_t = 1)]
    k_shot: usize,
    /// Query samples per class.
    #[arg(long, default_value_t = 15)]
    n_query: usize,
    #[arg(long, default_value_t = 600)]
    episodes: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,

    #[arg(long, value_enum, default_value = "cn")]
    normalize: Normalize,
    /// Cross-normalization parameter file (TOML); requires --normalize cn.
    #[arg(long, value_name = "PATH")]
    cn_params: Option<PathBuf>,

    /// Weight raw descriptors instead of neighborhood representations.
    #[arg(long)]
    no_nr: bool,
    #[arg(long, default_value_t = 10, conflicts_with = "no_nr")]
    nr_k: usize,
    #[arg(long, conflicts_with = "no_nr")]
    nr_include_self: bool,

    #[arg(long)]
    no_filter: bool,
    #[arg(long, default_value_t = 2.0, conflicts_with = "no_filter")]
    c_stop: f64,
    #[arg(long, default_value_t = 10, conflicts_with = "no_filter")]
    max_filter_iters: usize,
    #[arg(long, default_value_t = 0.1, conflicts_with = "no_filter")]
    min_keep_fraction: f64,
    #[arg(
        long,
        value_enum,
        default_value = "averaged",
        conflicts_with = "no_filter"
    )]
    filter_mode: Mode,
    #[arg(long, value_enum, default_value = "own", conflicts_with = "no_filter")]
    query_stats: Stats,

    /// Nearest support descriptors summed per query descriptor.
    #[arg(long, default_value_t = 3)]
    knn_k: usize,

    /// Write the full report here (JSON).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Evaluate episodes on one thread.
    #[arg(long)]
    serial: bool,
    /// Include wall-clock time in the report.
    #[arg(long)]
    record_timing: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec file (TOML); defaults when absent.
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,
    #[command(flatten)]
    syn: SynOverrides,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn synthetic_spec(file: Option<&PathBuf>, syn: &SynOverrides) -> Result<SyntheticSpec> {
    let base = match file {
        Some(p) => load_synthetic_spec(p)?,
        None => SyntheticSpec::default(),
    };
    let spec = syn.apply(base);
    spec.validate()?;
    Ok(spec)
}

fn pipeline(a: &EvalArgs) -> Result<PipelineConfig> {
    let mut p = PipelineConfig {
        normalize: match a.normalize {
            Normalize::Cn => NormalizeMode::Cn,
            Normalize::L2 => NormalizeMode::L2,
            Normalize::None => NormalizeMode::None,
        },
        cn_params: None,
        neighborhood: (!a.no_nr).then_some(NeighborhoodConfig {
            k_neighbors: a.nr_k,
            include_self: a.nr_include_self,
        }),
        filter: (!a.no_filter).then_some(FilterConfig {
            c_stop: a.c_stop,
            max_iterations: a.max_filter_iters,
            min_keep_fraction: a.min_keep_fraction,
            mode: match a.filter_mode {
                Mode::Averaged => FilterMode::Averaged,
                Mode::PerClass => FilterMode::PerClass,
            },
            query_stats: match a.query_stats {
                Stats::Own => QueryStats::Own,
                Stats::Support => QueryStats::Support,
            },
        }),
        classifier: ClassifierConfig { k_bar: a.knn_k },
    };
    if let Some(path) = &a.cn_params {
        if !matches!(a.normalize, Normalize::Cn) {
            bail!("--cn-params requires --normalize cn");
        }
        p = with_cn_params_file(p, path)?;
    }
    Ok(p)
}

fn eval(a: EvalArgs) -> Result<()> {
    let data = match (&a.source.data, &a.source.synthetic) {
        (Some(path), _) => {
            if a.syn.any() {
                bail!("--syn-* overrides apply only to synthetic data");
            }
            DataSource::File(path.clone())
        }
        (None, file) => DataSource::Synthetic(synthetic_spec(file.as_ref(), &a.syn)?),
    };
    let cfg = RunConfig {
        pipeline: pipeline(&a)?,
        episodes: EpisodeSpec {
            n_way: a.n_way,
            k_shot: a.k_shot,
            n_query_per_class: a.n_query,
            episode_count: a.episodes,
            seed: a.seed,
        },
        data,
        parallel: !a.serial,
        record_timing: a.record_timing,
    };
    let report = run(&cfg)?;
    print_summary(&report);
    if let Some(out) = &a.out {
        report_write(&report, out)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn print_summary(r: &RunReport) {
    let e = &r.config.episodes;
    println!(
        "{}-way {}-shot, {} episodes: accuracy {:.2}% +- {:.2}%",
        e.n_way,
        e.k_shot,
        r.episode_count,
        100.0 * r.mean_accuracy,
        100.0 * r.ci95_half_width
    );
    let kept: Vec<f64> = r
        .episodes
        .iter()
        .filter_map(|e| e.filter.as_ref().map(|f| f.support_kept_fraction))
        .collect();
    if !kept.is_empty() {
        println!(
            "support descriptors kept: {:.1}%",
            100.0 * kept.iter().sum::<f64>() / kept.len() as f64
        );
    }
    if let Some(recall) = r.background_recall {
        println!("background recall: {:.1}%", 100.0 * recall);
    }
    if let Some(t) = r.wall_time_secs {
        println!("wall time: {t:.2}s");
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = synthetic_spec(a.spec.as_ref(), &a.syn)?;
    let s = generate_synthetic(&spec)?;
    write_dataset(&s.dataset, &a.out)?;
    println!(
        "wrote {} samples of {} classes ({}x{}x{}) to {}",
        s.dataset.samples.len(),
        s.dataset.classes.len(),
        spec.channels,
        spec.height,
        spec.width,
        a.out.display()
    );
    Ok(())
}

fn inspect(path: PathBuf) -> Result<()> {
    let ds = read_dataset(&path)?;
    println!("{}", path.display());
    println!(
        "descriptors: C={} H={} W={} ({} per image)",
        ds.channels,
        ds.height,
        ds.width,
        ds.height * ds.width
    );
    println!("samples: {}", ds.samples.len());
    println!("classes: {}", ds.classes.len());
    let by_class = ds.by_class();
    for (i, name) in ds.classes.iter().enumerate() {
        let n = by_class
            .get(&ldwr_core::ClassId(i as u32))
            .map_or(0, Vec::len);
        println!("  {i:>4}  {n:>6}  {name}");
    }
    Ok(())
}

fn compare(a: PathBuf, b: PathBuf) -> Result<()> {
    let ra = report_read(&a).with_context(|| format!("reading {}", a.display()))?;
    let rb = report_read(&b).with_context(|| format!("reading {}", b.display()))?;
    let p = paired_comparison(&ra, &rb)?;
    println!(
        "{} episodes: {:.2}% vs {:.2}%, difference {:+.2}% (SE {:.2}%, z {:.2})",
        p.episodes,
        100.0 * ra.mean_accuracy,
        100.0 * rb.mean_accuracy,
        100.0 * p.mean_difference,
        100.0 * p.std_error,
        p.z()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Inspect { path } => inspect(path),
        Command::Compare { a, b } => compare(a, b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already embed their source in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let cause = cause.to_string();
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
