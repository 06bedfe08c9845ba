use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use werm_core::attacks::{
    read_confidence_csv, run_attack, write_confidence_csv, AttackInput, AttackKind, AttackReport, SplitTag,
    TargetSplit,
};
use werm_core::datasets::{load_tabular, split, synthesize, LabeledDataset, SplitSpec, Splits, SyntheticParams, TabularFormat};
use werm_core::defenses::{read_model_file, train, write_model_file, DefenseKind, DefenseSpec, DpParams};
use werm_core::fmt::{full, sig6};
use werm_core::harness::{self, confidences, rerender, ExperimentConfig};
use werm_core::numeric::OptimizerKind;
use werm_core::plot;
use werm_core::theory::{curves_panel, theory_curve, uniform_grid, DpConstants};
use werm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "werm-bench", version, about = "Train defended models, attack them and sweep privacy/utility tradeoffs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one defended model and save it.
    Train(TrainArgs),
    /// Run membership attacks on a model file or a confidence CSV.
    Attack(AttackArgs),
    /// Run an experiment config and write the report bundle.
    Sweep(SweepArgs),
    /// Evaluate the theoretical tradeoff curve.
    Theory(TheoryArgs),
    /// Re-render selections, correlations and curves from results.csv.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Label-first CSV dataset.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Value of the smallest label in the file.
    #[arg(long, default_value_t = 0)]
    label_base: usize,
    /// Require 0/1 features.
    #[arg(long)]
    binary: bool,
    /// Generate clustered binary data instead of loading a file.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 100)]
    classes: usize,
    #[arg(long, default_value_t = 150)]
    per_class: usize,
    #[arg(long, default_value_t = 600)]
    dim: usize,
    #[arg(long, default_value_t = 0.98)]
    cluster_tightness: f64,
    #[arg(long, default_value_t = 0.1)]
    flip_prob: f64,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<LabeledDataset> {
        match (&self.data, self.synthetic) {
            (Some(p), false) => load_tabular(
                p,
                TabularFormat {
                    label_base: self.label_base,
                    binary: self.binary,
                },
            ),
            (None, true) => synthesize(
                &SyntheticParams {
                    classes: self.classes,
                    per_class: self.per_class,
                    dim: self.dim,
                    cluster_tightness: self.cluster_tightness,
                    flip_prob: self.flip_prob,
                },
                self.data_seed,
            ),
            _ => Err(Error::Config("pass exactly one of --data or --synthetic".into())),
        }
    }
}

#[derive(Args, Clone, Copy)]
struct SplitArgs {
    #[arg(long, default_value_t = 5000)]
    n_train: usize,
    #[arg(long, default_value_t = 5000)]
    n_reference: usize,
    #[arg(long, default_value_t = 5000)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    n_attacker: usize,
}

impl SplitArgs {
    fn split(&self, data: &LabeledDataset, seed: u64) -> Result<Splits> {
        split(
            data,
            &SplitSpec {
                n_train: self.n_train,
                n_reference: self.n_reference,
                n_test: self.n_test,
                n_attacker: self.n_attacker,
                seed,
            },
        )
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value = "werm")]
    defense: DefenseKind,
    #[arg(long, default_value_t = 0.0)]
    w: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// `adam` or `sgd`.
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    /// Hidden layer sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    dp_clip: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    dp_noise: f64,
    #[arg(long, default_value_t = 0.01)]
    dp_sampling: f64,
    #[arg(long, default_value_t = 1e-5)]
    dp_delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Write the full dataset as CSV.
    #[arg(long)]
    dump_dataset: Option<PathBuf>,
    /// Write train/reference/test(/attacker).csv into this directory.
    #[arg(long)]
    dump_splits: Option<PathBuf>,
    /// Write the trained model's confidence vectors as CSV.
    #[arg(long)]
    dump_confidences: Option<PathBuf>,
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("unknown optimizer {s:?}")),
    }
}

#[derive(Args)]
struct AttackArgs {
    /// Model file from `train`; requires the same data and split flags.
    #[arg(long, conflicts_with = "confidences")]
    model: Option<PathBuf>,
    /// Confidence CSV (`split,label,p0,...`).
    #[arg(long)]
    confidences: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, value_delimiter = ',', default_value = "gap,confidence,entropy,modified_entropy")]
    attacks: Vec<AttackKind>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 10000.0)]
    n_train: f64,
    #[arg(long, default_value_t = 10000.0)]
    n_reference: f64,
    #[arg(long, default_value_t = 1000.0)]
    epsilon0: f64,
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 100.0)]
    vc_dim: f64,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    #[arg(long, default_value_t = 1.0)]
    sampling: f64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Extra N_T/N_R ratios drawn in the SVG at the same total size.
    #[arg(long, value_delimiter = ',')]
    ratios: Vec<f64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
    /// Defaults to the directory holding results.csv.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn build_spec(a: &TrainArgs) -> DefenseSpec {
    let mut spec = DefenseSpec::new(a.defense);
    spec.w = a.w;
    spec.lambda = a.lambda;
    if let Some(v) = a.epochs {
        spec.epochs = v;
    }
    if let Some(v) = a.batch_size {
        spec.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        spec.learning_rate = v;
    }
    if let Some(v) = a.optimizer {
        spec.optimizer = v;
    }
    if let Some(v) = &a.hidden {
        spec.hidden_layers = v.clone();
    }
    if a.defense == DefenseKind::DpSgdWerm {
        spec.dp = Some(DpParams {
            clip_norm: a.dp_clip.unwrap_or(1.0),
            noise_scale: a.dp_noise,
            sampling_ratio: a.dp_sampling,
            delta: a.dp_delta,
            steps: 0,
        });
    }
    spec
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let spec = build_spec(&a);
    spec.validate()?;
    let data = a.data.load()?;
    if let Some(p) = &a.dump_dataset {
        data.write_csv(p)?;
    }
    let splits = a.split.split(&data, a.seed)?;
    if let Some(dir) = &a.dump_splits {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        splits.train.write_csv(&dir.join("train.csv"))?;
        splits.reference.write_csv(&dir.join("reference.csv"))?;
        splits.test.write_csv(&dir.join("test.csv"))?;
        if !splits.attacker.is_empty() {
            splits.attacker.write_csv(&dir.join("attacker.csv"))?;
        }
    }
    let inst = train(&spec, &splits.train, &splits.reference, Some(&splits.test), a.seed)?;
    write_model_file(&a.out, &inst)?;
    if let Some(p) = &a.dump_confidences {
        let (tr, rf, te) = (
            confidences(&inst.model, &splits.train)?,
            confidences(&inst.model, &splits.reference)?,
            confidences(&inst.model, &splits.test)?,
        );
        write_confidence_csv(p, &[(SplitTag::Train, &tr), (SplitTag::Reference, &rf), (SplitTag::Test, &te)])?;
    }
    println!("model      {}", a.out.display());
    println!("defense    {}", spec.label());
    println!("epochs     {}", inst.epochs_run);
    println!("train acc  {}", sig6(inst.train.accuracy));
    if let Some(r) = inst.reference {
        println!("ref acc    {}", sig6(r.accuracy));
    }
    if let Some(t) = inst.test {
        println!("test acc   {}", sig6(t.accuracy));
    }
    println!("sec/epoch  {}", sig6(inst.mean_epoch_seconds()));
    Ok(())
}

fn attack_csv(reports: &[AttackReport]) -> String {
    let mut out = String::from(
        "attack,target,member_hits,members,nonmember_rejects,nonmembers,accuracy,threshold,accuracy_full,threshold_full\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.kind,
            r.target.name(),
            r.member_hits,
            r.members,
            r.nonmember_rejects,
            r.nonmembers,
            sig6(r.accuracy()),
            r.threshold.map(sig6).unwrap_or_default(),
            full(r.accuracy()),
            r.threshold.map(full).unwrap_or_default(),
        ));
    }
    out
}

fn cmd_attack(a: AttackArgs) -> Result<()> {
    if a.attacks.contains(&AttackKind::NeuralNetwork) {
        return Err(Error::Config(
            "the nn attack needs a shadow model; run it through `sweep` with split.n_attacker".into(),
        ));
    }
    let (tr, rf, te) = match (&a.model, &a.confidences) {
        (Some(model), None) => {
            let inst = read_model_file(model)?;
            let data = a.data.load()?;
            let splits = a.split.split(&data, inst.seed)?;
            (
                confidences(&inst.model, &splits.train)?,
                confidences(&inst.model, &splits.reference)?,
                confidences(&inst.model, &splits.test)?,
            )
        }
        (None, Some(path)) => {
            let d = read_confidence_csv(path)?;
            (d.train, d.reference, d.test)
        }
        _ => return Err(Error::Config("pass exactly one of --model or --confidences".into())),
    };
    if te.is_empty() {
        return Err(Error::Validation("no test (non-member) confidences".into()));
    }
    let mut inputs = Vec::new();
    if !tr.is_empty() {
        inputs.push((TargetSplit::Training, AttackInput::new(tr, te.clone())?.balanced()));
    }
    if !rf.is_empty() {
        inputs.push((TargetSplit::Reference, AttackInput::new(rf, te)?.balanced()));
    }
    let mut reports = Vec::new();
    for &kind in &a.attacks {
        for (target, input) in &inputs {
            reports.push(run_attack(kind, input, *target)?);
        }
    }
    let text = attack_csv(&reports);
    match &a.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(d) = a.output_dir {
        config.output_dir = d;
    }
    if let Some(w) = a.workers {
        config.workers = w;
    }
    config.validate()?;
    let data = config.dataset.load()?;
    let total = config.defenses.len() * config.seeds;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let quiet = a.quiet;
    let progress = |spec: &DefenseSpec, r: &harness::RunRecord| {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
        if quiet {
            return;
        }
        let status = match &r.outcome {
            Ok(m) => format!("test acc {}", sig6(m.test_accuracy())),
            Err(d) => format!("failed: {d}"),
        };
        eprintln!("[{n}/{total}] {} seed {}: {status}", spec.label(), r.seed_index);
    };
    let result = harness::run_sweep_on(&config, &data, &progress)?;
    let bundle = harness::report_sweep(&config, &result)?;
    println!("{:<28} {:>9} {:>9} {:>9}", "point", "test_acc", "mia_train", "mia_ref");
    for p in &result.points {
        println!(
            "{:<28} {:>9} {:>9} {:>9}",
            p.label,
            sig6(p.test_accuracy.mean),
            sig6(p.mia_train.mean),
            sig6(p.mia_ref.mean)
        );
    }
    for r in &bundle.pcc {
        println!("pcc {}: {}", r.defense, r.pearson.map(sig6).unwrap_or_else(|| r.note.clone()));
    }
    println!("report written to {}", bundle.dir.display());
    Ok(())
}

fn cmd_theory(a: TheoryArgs) -> Result<()> {
    let dp = DpConstants {
        delta: a.delta,
        steps: a.steps,
        clip_norm: a.clip,
        sampling_ratio: a.sampling,
        vc_dim: a.vc_dim,
    };
    let grid = uniform_grid(a.grid);
    let curve = theory_curve(a.n_train, a.n_reference, a.epsilon0, &grid, &dp)?;
    match &a.csv {
        Some(p) => curve.save_csv(p)?,
        None => {
            let mut out = std::io::stdout().lock();
            curve
                .write_csv(&mut out)
                .and_then(|_| out.flush())
                .map_err(|e| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                })?;
        }
    }
    if let Some(p) = &a.svg {
        let total = a.n_train + a.n_reference;
        let mut curves = vec![curve];
        for &r in &a.ratios {
            if !(r > 0.0) {
                return Err(Error::Config(format!("ratio must be positive, got {r}")));
            }
            let nt = total * r / (1.0 + r);
            curves.push(theory_curve(nt, total - nt, a.epsilon0, &grid, &dp)?);
        }
        plot::write_svg(p, &[curves_panel(&curves)])?;
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let dir = a
        .output_dir
        .unwrap_or_else(|| a.results.parent().map(Path::to_path_buf).unwrap_or_default());
    let bundle = rerender(&a.results, &dir)?;
    for f in &bundle.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Theory(a) => cmd_theory(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
