use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use memprobe_core::harness::{
    bench_insert_latency, flexible_inference_eval, gen_synthetic, plan_scenario, run_scenario_with, transfer_avg_last,
    LatencyConfig, Protocol, RunReport, RunSpec, ScenarioKind, StageReport, SynthConfig,
};
use memprobe_core::io::{assemble, fit_snapshot, load_manifest, save_snapshot, write_atomic, write_dataset};
use memprobe_core::{Error, FusionMode, KnnVariant, Method, Result, RngSeed};

#[derive(Debug, Parser)]
#[command(
    name = "memprobe",
    version,
    about = "Continual open-vocabulary classification over embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (manifest plus embedding and label files).
    GenSynth(GenSynthArgs),
    /// Run a continual-learning scenario and write a JSON report.
    Run(RunArgs),
    /// Measure single-exemplar incorporation time and print CSV.
    Bench(BenchArgs),
    /// Convert a report into long-format CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Output directory.
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[arg(long, default_value = "synth")]
    name: String,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Training samples per class.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Test samples per class.
    #[arg(long, default_value_t = 20)]
    per_class_test: usize,
    /// Per-coordinate image noise.
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    /// Per-coordinate text noise.
    #[arg(long, default_value_t = 0.2)]
    text_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    scenario: ScenarioKind,
    #[arg(long)]
    method: Method,
    #[arg(long, default_value = "aim-emb")]
    fusion: FusionMode,
    /// Target task manifests, in training order.
    #[arg(long, value_delimiter = ',', required = true)]
    tasks: Vec<PathBuf>,
    /// Zero-shot task manifests.
    #[arg(long, value_delimiter = ',')]
    zs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 9)]
    k: usize,
    /// Leaf capacity of the cluster tree.
    #[arg(long, default_value_t = 50_000)]
    psi: usize,
    /// Inverse regularization strength of the linear probes.
    #[arg(long, default_value_t = 0.316)]
    c: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Zero-shot softmax temperature.
    #[arg(long, default_value_t = 100.0)]
    tau: f64,
    /// Blend weight of the averaging fusion modes.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value = "wavg")]
    knn_variant: KnnVariant,
    /// Also save the model trained on all target tasks.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Also run the flexible-inference protocols on the final model.
    #[arg(long)]
    flexible: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    method: Method,
    #[arg(long, default_value_t = 1000)]
    psi: usize,
    /// Store sizes to measure.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Timed incorporations per repeat.
    #[arg(long, default_value_t = 5)]
    samples: usize,
    /// Optimizer iteration cap per retraining.
    #[arg(long, default_value_t = 30)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    report: PathBuf,
    /// Metrics to export: accuracy, seen, unseen.
    #[arg(long, value_delimiter = ',', default_value = "accuracy")]
    metrics: Vec<String>,
    /// CSV path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Export(a) => export(a),
    }
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        name: a.name.clone(),
        dim: a.dim,
        classes: a.classes,
        per_class_train: a.per_class,
        per_class_test: a.per_class_test,
        intra_class_sigma: a.sigma,
        text_offset_sigma: a.text_sigma,
        label_offset: 0,
        seed: RngSeed(a.seed),
    };
    let synth = gen_synthetic(&cfg)?;
    let manifest = write_dataset(&a.out, &a.name, &synth.labels, &synth.task.train, &synth.task.test)?;
    println!(
        "{}: {} labels, {} train, {} test",
        manifest.display(),
        synth.labels.len(),
        synth.task.train.len(),
        synth.task.test.len()
    );
    Ok(())
}

fn run_spec(a: &RunArgs) -> RunSpec {
    let mut spec = RunSpec::new(a.method, a.fusion);
    spec.fusion.alpha = a.alpha;
    spec.zero_shot.temperature = a.tau;
    spec.knn.k = a.k;
    spec.knn.variant = a.knn_variant;
    spec.tree.node_capacity = a.psi;
    spec.tree.seed = RngSeed(a.seed);
    spec.train.regularization_c = a.c;
    spec.train.max_iterations = a.max_iter;
    spec.train.seed = RngSeed(a.seed);
    spec
}

fn config_echo(a: &RunArgs) -> serde_json::Value {
    let paths = |ps: &[PathBuf]| ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>();
    json!({
        "scenario": a.scenario.to_string(),
        "method": a.method.to_string(),
        "fusion": a.fusion.to_string(),
        "k": a.k,
        "psi": a.psi,
        "regularization_c": a.c,
        "max_iterations": a.max_iter,
        "tau": a.tau,
        "alpha": a.alpha,
        "knn_variant": a.knn_variant,
        "seed": a.seed,
        "tasks": paths(&a.tasks),
        "zeroshot_tasks": paths(&a.zs),
    })
}

fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn run(a: RunArgs) -> Result<()> {
    let spec = run_spec(&a);
    spec.validate()?;
    let seed = RngSeed(a.seed);

    let loaded = a
        .tasks
        .iter()
        .chain(&a.zs)
        .map(|p| load_manifest(p))
        .collect::<Result<Vec<_>>>()?;
    let (labels, mut all) = assemble(loaded)?;
    let zs_tasks = all.split_off(a.tasks.len());
    let tasks = all;

    let plan = plan_scenario(&tasks, a.scenario, seed)?;
    let mut report = RunReport {
        config: config_echo(&a),
        stages: Vec::new(),
        transfer_avg_last: None,
        flexible: Vec::new(),
        error: None,
    };

    let mut completed: Vec<StageReport> = Vec::new();
    let mut flush_err = None;
    let outcome = run_scenario_with(&plan, &tasks, &zs_tasks, &labels, &spec, &mut |stage| {
        eprintln!(
            "stage {}: {} exemplars, target {:.4}",
            stage.stage_index, stage.exemplars, stage.target_avg
        );
        completed.push(stage.clone());
        report.stages = completed.clone();
        if flush_err.is_none() {
            flush_err = write_report(&a.out, &report).err();
        }
    });
    if let Some(e) = flush_err {
        return Err(e);
    }
    let stages = match outcome {
        Ok(stages) => stages,
        Err(e) => {
            report.stages = completed;
            report.error = Some(e.to_string());
            write_report(&a.out, &report)?;
            return Err(e);
        }
    };

    if a.scenario == ScenarioKind::TaskIncremental {
        let order: Vec<usize> = (0..tasks.len()).collect();
        report.transfer_avg_last = Some(transfer_avg_last(&stages, &order)?);
    }
    report.stages = stages;

    if a.flexible || a.snapshot.is_some() {
        let model = fit_snapshot(&tasks, &spec)?;
        if a.flexible {
            for protocol in [Protocol::ZeroShot, Protocol::UnionZeroShot, Protocol::MixZeroShot] {
                let r = flexible_inference_eval(
                    &tasks,
                    &zs_tasks,
                    &labels,
                    model.as_ref().map(|m| m.as_model()),
                    &spec,
                    protocol,
                    seed,
                )?;
                report.flexible.push(r);
            }
        }
        if let Some(path) = &a.snapshot {
            let model = model.ok_or_else(|| Error::InvalidConfig("zero-shot runs have no model to snapshot".into()))?;
            save_snapshot(path, model)?;
        }
    }

    write_report(&a.out, &report)
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn csv_error(e: csv::Error, out: Option<&Path>) -> Error {
    let path = out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    Error::Io {
        path,
        source: std::io::Error::other(e),
    }
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = LatencyConfig {
        method: a.method,
        sizes: a.sizes,
        psi: a.psi,
        repeats: a.repeats,
        samples_per_repeat: a.samples,
        dim: a.dim,
        classes: a.classes,
        max_iterations: a.max_iter,
        seed: RngSeed(a.seed),
    };
    let rows = bench_insert_latency(&cfg)?;
    let out = a.out.as_deref();
    let mut w = csv::Writer::from_writer(open_output(out)?);
    for row in &rows {
        w.serialize(row).map_err(|e| csv_error(e, out))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
        source: e,
    })
}

fn export(a: ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).map_err(|e| Error::Io {
        path: a.report.clone(),
        source: e,
    })?;
    let report = RunReport::from_json(&text)?;
    let metrics: Vec<&str> = a.metrics.iter().map(String::as_str).collect();
    let rows = report.export_rows(&metrics)?;
    let out = a.out.as_deref();
    let mut w = csv::Writer::from_writer(open_output(out)?);
    for row in &rows {
        w.serialize(row).map_err(|e| csv_error(e, out))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
        source: e,
    })
}
