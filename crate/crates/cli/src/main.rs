mod manifest;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use normsample::bench::{rate_rows, scaling_curve, scaling_rows, write_csv, write_plot_data, ScalingSpec, DEFAULT_M_CAP, DEFAULT_TRIALS};
use normsample::hardness::{check_failure, generate, GenParams};
use normsample::io::{self, load_hard, read_instance, read_queries, read_samples, save_hard, write_samples};
use normsample::objective::{estimate_opt, max_relative_error, QuerySet, RelError};
use normsample::sampler::draw_iid_with;
use normsample::{
    Convention, CountedSample, Error, HardKind, Instance, LossKind, ObjectiveSpec, RegKind, Result,
    ScoreKind,
};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "normsample", version, about = "Importance sampling for regularized linear classification losses")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads for parallel trials.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a hard instance with its adversarial queries.
    Gen(GenArgs),
    /// Draw an importance-weighted sample from an instance.
    Sample(SampleArgs),
    /// Relative error of a sample at a set of queries.
    Eval(EvalArgs),
    /// Estimate the optimum of the regularized objective.
    Opt(OptArgs),
    /// Failure rates and sample-size scaling on hard instances.
    Bench(BenchArgs),
    /// Check a stored hard instance, optionally against a sample.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    kind: HardKind,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    reg: Option<RegKind>,
    /// Atom count (moment curve).
    #[arg(long)]
    n: Option<usize>,
    /// Dimension (coupon, moment curve).
    #[arg(long)]
    d: Option<usize>,
    /// Curve parameters, comma separated (moment curve).
    #[arg(long, value_delimiter = ',')]
    t_values: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Instance JSONL, or a directory holding `instance.jsonl`.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value = "norm")]
    score: ScoreKind,
    #[arg(long)]
    m: usize,
    /// Defaults to the hard instance's own law when `--instance` is a hard
    /// instance directory, and to the mixture law otherwise.
    #[arg(long)]
    convention: Option<Convention>,
}

#[derive(Args, Debug)]
struct ObjectiveArgs {
    /// Hard instance directory or `hard.json`; supplies instance, queries and objective.
    #[arg(long, conflicts_with_all = ["instance", "queries"])]
    hard: Option<PathBuf>,
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    reg: Option<RegKind>,
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    obj: ObjectiveArgs,
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    eps: f64,
}

#[derive(Args, Debug)]
struct OptArgs {
    #[command(flatten)]
    obj: ObjectiveArgs,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Scaling configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<HardKind>,
    #[arg(long)]
    reg: Option<RegKind>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<f64>>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    score: Option<ScoreKind>,
    #[arg(long)]
    m_cap: Option<usize>,
    /// Identifier written to the `run_id` column.
    #[arg(long, default_value = "run")]
    run_id: String,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    hard: PathBuf,
    /// Sample to run the failure predicate on, drawn under the instance's convention.
    #[arg(long, requires = "eps")]
    sample: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Budget { .. } => 3,
        Error::InvalidInput(_)
        | Error::Configuration(_)
        | Error::Precondition(_)
        | Error::Applicability(_)
        | Error::UnsupportedNormalization(_)
        | Error::DimensionMismatch { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)?;
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Gen(a) => cmd_gen(&cli.out, seed, a),
        Command::Sample(a) => cmd_sample(&cli.out, seed, a),
        Command::Eval(a) => cmd_eval(&cli.out, seed, a),
        Command::Opt(a) => cmd_opt(&cli.out, seed, a),
        Command::Bench(a) => cmd_bench(&cli.out, cli.seed, a),
        Command::Verify(a) => cmd_verify(&cli.out, seed, a),
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_gen(out: &Path, seed: u64, a: &GenArgs) -> Result<()> {
    let mut params = GenParams {
        kind: a.kind,
        k: a.k,
        eps: a.eps,
        reg: a.reg,
        n: a.n,
        d: a.d,
        t_values: a.t_values.clone(),
    };
    let hard = generate(&params)?;
    params.reg = Some(hard.spec.reg);
    params.k = Some(hard.spec.k);
    let files = save_hard(out, &hard)?;
    manifest::write(out, "gen", seed, &params, &files)?;
    eprintln!(
        "{}: {} atoms, {} queries in {}",
        hard.kind,
        hard.instance.len(),
        hard.adversarial().count(),
        out.display()
    );
    Ok(())
}

fn instance_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(io::INSTANCE_FILE)
    } else {
        p.to_path_buf()
    }
}

#[derive(Serialize)]
struct SampleConfig {
    instance: String,
    score: ScoreKind,
    m: usize,
    convention: Convention,
}

fn cmd_sample(out: &Path, seed: u64, a: &SampleArgs) -> Result<()> {
    let instance = read_instance(io::open(&instance_path(&a.instance))?)?;
    let convention = match a.convention {
        Some(c) => c,
        None if a.instance.join(io::HARD_FILE).is_file() => {
            let doc: io::HardDoc = serde_json::from_reader(io::open(&a.instance.join(io::HARD_FILE))?)?;
            doc.kind.convention()
        }
        None => Convention::Mixture,
    };
    let samples = draw_iid_with(&instance, a.score, convention, a.m, seed)?;
    let path = out.join("samples.jsonl");
    let mut w = create(&path)?;
    write_samples(&mut w, &samples)?;
    w.flush()?;
    let config = SampleConfig {
        instance: path_str(&a.instance),
        score: a.score,
        m: a.m,
        convention,
    };
    manifest::write(out, "sample", seed, config, &[path])?;
    Ok(())
}

#[derive(Serialize)]
struct ResolvedObjective {
    #[serde(skip_serializing_if = "Option::is_none")]
    hard: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    instance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    queries: Option<String>,
    spec: ObjectiveSpec,
}

struct Loaded {
    instance: Instance,
    spec: ObjectiveSpec,
    queries: QuerySet,
    resolved: ResolvedObjective,
}

fn load_objective(o: &ObjectiveArgs, need_queries: bool) -> Result<Loaded> {
    if let Some(h) = &o.hard {
        let hard = load_hard(h)?;
        let mut spec = hard.spec;
        if let Some(k) = o.k {
            spec = ObjectiveSpec::new(spec.loss.kind, spec.reg, k)?;
        }
        if o.loss.is_some() || o.reg.is_some() {
            return Err(Error::Configuration(
                "--loss and --reg come from the hard instance".into(),
            ));
        }
        return Ok(Loaded {
            instance: hard.instance,
            spec,
            queries: hard.queries,
            resolved: ResolvedObjective {
                hard: Some(path_str(h)),
                instance: None,
                queries: None,
                spec,
            },
        });
    }
    let inst_path = o
        .instance
        .as_ref()
        .ok_or_else(|| Error::Configuration("either --hard or --instance is required".into()))?;
    let missing = |f: &str| Error::Configuration(format!("--{f} is required without --hard"));
    let spec = ObjectiveSpec::new(
        o.loss.ok_or_else(|| missing("loss"))?,
        o.reg.ok_or_else(|| missing("reg"))?,
        o.k.ok_or_else(|| missing("k"))?,
    )?;
    let instance = read_instance(io::open(&instance_path(inst_path))?)?;
    let queries = match &o.queries {
        Some(q) => read_queries(io::open(q)?, instance.dim())?.0,
        None if need_queries => return Err(missing("queries")),
        None => QuerySet::origin(instance.dim()),
    };
    Ok(Loaded {
        instance,
        spec,
        queries,
        resolved: ResolvedObjective {
            hard: None,
            instance: Some(path_str(inst_path)),
            queries: o.queries.as_deref().map(path_str),
            spec,
        },
    })
}

#[derive(Serialize)]
struct EvalConfig {
    #[serde(flatten)]
    objective: ResolvedObjective,
    sample: String,
    eps: f64,
}

#[derive(Serialize)]
struct EvalReport {
    eps: f64,
    max_error: f64,
    argmax: usize,
    pass: bool,
    errors: Vec<RelError>,
    zero_objective: Vec<usize>,
}

fn cmd_eval(out: &Path, seed: u64, a: &EvalArgs) -> Result<()> {
    let l = load_objective(&a.obj, true)?;
    let samples = read_samples(io::open(&a.sample)?)?;
    if let Some(s) = samples.iter().find(|s| s.a.len() != l.instance.dim()) {
        return Err(Error::DimensionMismatch {
            expected: l.instance.dim(),
            got: s.a.len(),
        });
    }
    let me = max_relative_error(&l.instance, &l.spec, &samples, &l.queries)?;
    let report = EvalReport {
        eps: a.eps,
        max_error: me.max,
        argmax: me.argmax,
        pass: me.max <= a.eps,
        errors: me.errors,
        zero_objective: me.zero_objective,
    };
    let path = out.join("eval.json");
    write_json(&path, &report)?;
    let config = EvalConfig {
        objective: l.resolved,
        sample: path_str(&a.sample),
        eps: a.eps,
    };
    manifest::write(out, "eval", seed, config, &[path])?;
    eprintln!(
        "max relative error {:.6} at query {}: {}",
        report.max_error,
        report.argmax,
        if report.pass { "pass" } else { "fail" }
    );
    Ok(())
}

#[derive(Serialize)]
struct OptConfig {
    #[serde(flatten)]
    objective: ResolvedObjective,
    restarts: usize,
}

fn cmd_opt(out: &Path, seed: u64, a: &OptArgs) -> Result<()> {
    let l = load_objective(&a.obj, false)?;
    let report = estimate_opt(&l.instance, &l.spec, a.restarts, seed)?;
    let path = out.join("opt.json");
    write_json(&path, &report)?;
    let config = OptConfig {
        objective: l.resolved,
        restarts: a.restarts,
    };
    manifest::write(out, "opt", seed, config, &[path])?;
    Ok(())
}

fn bench_spec(seed: Option<u64>, a: &BenchArgs) -> Result<ScalingSpec> {
    let mut spec = match &a.config {
        Some(p) => serde_json::from_reader(io::open(p)?)?,
        None => {
            let missing = |f: &str| Error::Configuration(format!("--{f} is required without --config"));
            ScalingSpec {
                kind: a.kind.ok_or_else(|| missing("kind"))?,
                reg: None,
                k_list: a.k_list.clone().ok_or_else(|| missing("k-list"))?,
                eps: a.eps.ok_or_else(|| missing("eps"))?,
                delta: a.delta.ok_or_else(|| missing("delta"))?,
                trials: DEFAULT_TRIALS,
                seed: 0,
                score: ScoreKind::NormPlus1,
                m_cap: DEFAULT_M_CAP,
            }
        }
    };
    if let Some(v) = a.kind {
        spec.kind = v;
    }
    if let Some(v) = a.reg {
        spec.reg = Some(v);
    }
    if let Some(v) = &a.k_list {
        spec.k_list = v.clone();
    }
    if let Some(v) = a.eps {
        spec.eps = v;
    }
    if let Some(v) = a.delta {
        spec.delta = v;
    }
    if let Some(v) = a.trials {
        spec.trials = v;
    }
    if let Some(v) = a.score {
        spec.score = v;
    }
    if let Some(v) = a.m_cap {
        spec.m_cap = v;
    }
    if let Some(v) = seed {
        spec.seed = v;
    }
    Ok(spec)
}

#[derive(Serialize)]
struct BenchConfig<'a> {
    run_id: &'a str,
    #[serde(flatten)]
    spec: &'a ScalingSpec,
}

#[derive(Serialize)]
struct WideRate {
    k: f64,
    m: usize,
    ci_lo: f64,
    ci_hi: f64,
}

#[derive(Serialize)]
struct BenchReport<'a> {
    curve: &'a normsample::bench::ScalingCurve,
    wide: Vec<WideRate>,
    warnings: Vec<String>,
}

fn cmd_bench(out: &Path, seed: Option<u64>, a: &BenchArgs) -> Result<()> {
    let spec = bench_spec(seed, a)?;
    let curve = scaling_curve(&spec)?;
    let rates = rate_rows(&a.run_id, &spec, &curve)?;
    let wide: Vec<WideRate> = rates
        .iter()
        .filter(|r| r.ci_hi - r.ci_lo > 0.5)
        .map(|r| WideRate {
            k: r.k,
            m: r.m,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
        })
        .collect();
    let mut warnings: Vec<String> = curve
        .failed
        .iter()
        .map(|f| format!("k = {}: {}", f.k, f.reason))
        .collect();
    if !wide.is_empty() {
        warnings.push(format!("{} failure rates have confidence intervals wider than 0.5", wide.len()));
    }
    if curve.fitted_slope.is_none() {
        warnings.push("fewer than two points reached m*; no slope fitted".into());
    }

    let rates_path = out.join("rates.csv");
    write_csv(create(&rates_path)?, &rates)?;
    let scaling_path = out.join("scaling.csv");
    write_csv(create(&scaling_path)?, &scaling_rows(&curve))?;
    let plot_path = out.join("plot.dat");
    let mut w = create(&plot_path)?;
    write_plot_data(&mut w, &curve)?;
    w.flush()?;
    let report_path = out.join("bench.json");
    let report = BenchReport {
        curve: &curve,
        wide,
        warnings,
    };
    write_json(&report_path, &report)?;
    let config = BenchConfig {
        run_id: &a.run_id,
        spec: &spec,
    };
    manifest::write(
        out,
        "bench",
        spec.seed,
        config,
        &[rates_path, scaling_path, plot_path, report_path],
    )?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyConfig {
    hard: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    sample: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
}

#[derive(Serialize)]
struct VerifyReport {
    kind: HardKind,
    atoms: usize,
    queries: usize,
    verified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<normsample::hardness::FailureVerdict>,
}

fn cmd_verify(out: &Path, seed: u64, a: &VerifyArgs) -> Result<()> {
    let hard = load_hard(&a.hard)?;
    let verdict = match (&a.sample, a.eps) {
        (Some(p), Some(eps)) => {
            let samples = read_samples(io::open(p)?)?;
            let counted = CountedSample::from_samples(hard.instance.len(), &samples, hard.convention())?;
            Some(check_failure(&hard, &counted, eps)?)
        }
        _ => None,
    };
    let report = VerifyReport {
        kind: hard.kind,
        atoms: hard.instance.len(),
        queries: hard.adversarial().count(),
        verified: true,
        verdict,
    };
    let path = out.join("verify.json");
    write_json(&path, &report)?;
    let config = VerifyConfig {
        hard: path_str(&a.hard),
        sample: a.sample.as_deref().map(path_str),
        eps: a.eps,
    };
    manifest::write(out, "verify", seed, config, &[path])?;
    if let Some(v) = &report.verdict {
        eprintln!(
            "failure predicate: {} (max error {:.6})",
            if v.failed { "fired" } else { "not fired" },
            v.max_error
        );
    }
    Ok(())
}
