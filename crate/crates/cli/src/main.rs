//! weightsel: checkpoint surgery from the command line.
//!
//! Subcommands: `inspect`, `select`, `apply`, `init`, `verify`, `diag`.
//! Exit code 0 on success, 1 on failure (including a FAIL verdict from
//! `verify`); flag misuse exits 2. Output files are written atomically via a
//! temp file in the destination directory, so interrupted runs never leave a
//! partial checkpoint behind.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use weightsel_core::arch::ArchDescriptor;
use weightsel_core::baselines::{
    init_l1_prune, init_magnitude_prune, init_random, InitSpec, RandomInit, DEFAULT_TRUNC_STD,
};
use weightsel_core::diag::attn_products;
use weightsel_core::execute_plan;
use weightsel_core::plan::{build_plan, ElementMethod, LayerStrategy, SelectionPlan};
use weightsel_core::store::{read_checkpoint, write_checkpoint, Checkpoint};
use weightsel_core::verify::verify;

#[derive(Parser)]
#[command(
    name = "weightsel",
    version,
    about = "Initialize small models by selecting weights from larger pretrained ones"
)]
struct Cli {
    /// Verbosity of progress messages on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,

    /// Worker threads for tensor slicing; 0 = one per core. Output bytes do
    /// not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Seed for all randomized operations.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
#[value(rename_all = "snake_case")]
enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Subcommand)]
enum Command {
    /// List tensors, shapes, dtypes, and metadata of a checkpoint.
    Inspect {
        ckpt: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Select a student checkpoint out of a teacher checkpoint.
    Select(SelectArgs),
    /// Re-execute a previously emitted selection plan.
    Apply {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill a student checkpoint with a classic random initialization.
    Init(InitArgs),
    /// Generate a random checkpoint conforming to a descriptor (for
    /// pipeline testing; real teachers come from converted checkpoints).
    Synth {
        #[arg(long)]
        arch: String,
        #[arg(long, value_enum, default_value_t = CliDtype::F32)]
        dtype: CliDtype,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit a student checkpoint against teacher and plan; exit 0 iff PASS.
    Verify {
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Numerical diagnostics.
    #[command(subcommand)]
    Diag(DiagCommand),
}

#[derive(Args)]
struct SelectArgs {
    /// Teacher checkpoint (.wsck).
    #[arg(long)]
    teacher: PathBuf,
    /// Teacher architecture: bundled name or descriptor JSON path.
    #[arg(long)]
    teacher_arch: String,
    /// Student architecture: bundled name or descriptor JSON path.
    #[arg(long)]
    student_arch: String,
    #[arg(long, value_enum, default_value_t = CliLayerStrategy::FirstN)]
    layer_strategy: CliLayerStrategy,
    #[arg(long, value_enum, default_value_t = CliElementMethod::Uniform)]
    element_method: CliElementMethod,
    /// Output student checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the selection plan JSON here.
    #[arg(long)]
    emit_plan: Option<PathBuf>,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    student_arch: String,
    #[arg(long, value_enum)]
    method: CliInitMethod,
    /// Standard deviation for trunc_normal.
    #[arg(long, default_value_t = DEFAULT_TRUNC_STD)]
    std: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DiagCommand {
    /// Per-head attention products W_q·W_k^T and W_v·W_proj with their
    /// diagonal-dominance scores.
    Attn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        arch: String,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        head: usize,
        #[arg(long)]
        json: bool,
        /// Write the product matrices as CSV files into this directory.
        #[arg(long)]
        dump_csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum CliLayerStrategy {
    FirstN,
    Uniform,
    MidN,
    LastN,
}

impl From<CliLayerStrategy> for LayerStrategy {
    fn from(v: CliLayerStrategy) -> Self {
        match v {
            CliLayerStrategy::FirstN => LayerStrategy::FirstN,
            CliLayerStrategy::Uniform => LayerStrategy::Uniform,
            CliLayerStrategy::MidN => LayerStrategy::MidN,
            CliLayerStrategy::LastN => LayerStrategy::LastN,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum CliElementMethod {
    Uniform,
    Consecutive,
    RandomConsistent,
    RandomInconsistent,
    L1,
    Magnitude,
}

impl CliElementMethod {
    fn name(self) -> &'static str {
        match self {
            CliElementMethod::Uniform => "uniform",
            CliElementMethod::Consecutive => "consecutive",
            CliElementMethod::RandomConsistent => "random_consistent",
            CliElementMethod::RandomInconsistent => "random_inconsistent",
            CliElementMethod::L1 => "l1",
            CliElementMethod::Magnitude => "magnitude",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum CliInitMethod {
    TruncNormal,
    Xavier,
    Kaiming,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum CliDtype {
    F32,
    F16,
    F64,
}

impl From<CliDtype> for weightsel_core::DType {
    fn from(v: CliDtype) -> Self {
        match v {
            CliDtype::F32 => weightsel_core::DType::F32,
            CliDtype::F16 => weightsel_core::DType::F16,
            CliDtype::F64 => weightsel_core::DType::F64,
        }
    }
}

struct Logger {
    level: LogLevel,
}

impl Logger {
    fn info(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Info {
            eprintln!("[info] {}", msg.as_ref());
        }
    }

    fn warn(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Warn {
            eprintln!("[warn] {}", msg.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let log = Logger {
        level: cli.log_level,
    };
    match run(cli, &log) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli, log: &Logger) -> Result<ExitCode> {
    match cli.command {
        Command::Inspect { ckpt, json } => cmd_inspect(&ckpt, json),
        Command::Select(args) => cmd_select(args, cli.seed, log),
        Command::Apply { teacher, plan, out } => cmd_apply(&teacher, &plan, &out, log),
        Command::Init(args) => cmd_init(args, cli.seed, log),
        Command::Synth { arch, dtype, out } => cmd_synth(&arch, dtype, &out, cli.seed, log),
        Command::Verify {
            student,
            teacher,
            plan,
            json,
        } => cmd_verify(&student, &teacher, &plan, json),
        Command::Diag(DiagCommand::Attn {
            ckpt,
            arch,
            layer,
            head,
            json,
            dump_csv,
        }) => cmd_diag_attn(&ckpt, &arch, layer, head, json, dump_csv.as_deref()),
    }
}

/// Write a checkpoint atomically: temp file in the target directory, then
/// rename over the destination.
fn write_atomic(ckpt: &Checkpoint, out: &Path) -> Result<()> {
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    write_checkpoint(ckpt, tmp.path())?;
    tmp.persist(out)
        .with_context(|| format!("moving output into place at {}", out.display()))?;
    Ok(())
}

fn write_plan_atomic(plan: &SelectionPlan, out: &Path) -> Result<()> {
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    std::fs::write(tmp.path(), plan.to_json()?)?;
    tmp.persist(out)
        .with_context(|| format!("moving plan into place at {}", out.display()))?;
    Ok(())
}

fn cmd_inspect(path: &Path, json: bool) -> Result<ExitCode> {
    let ckpt = read_checkpoint(path)?;
    if json {
        let tensors: Vec<serde_json::Value> = ckpt
            .iter()
            .map(|t| {
                serde_json::json!({
                    "name": t.name(),
                    "dtype": t.dtype().tag(),
                    "shape": t.shape(),
                    "bytes": t.data().len(),
                })
            })
            .collect();
        let out = serde_json::json!({
            "path": path.display().to_string(),
            "tensors": tensors,
            "metadata": ckpt.metadata(),
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("{}: {} tensors", path.display(), ckpt.len());
        for t in ckpt.iter() {
            println!(
                "  {}  {}  {:?}  {} bytes",
                t.name(),
                t.dtype(),
                t.shape(),
                t.data().len()
            );
        }
        if !ckpt.metadata().is_empty() {
            println!("metadata:");
            for (k, v) in ckpt.metadata() {
                println!("  {k} = {v}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_select(args: SelectArgs, seed: Option<u64>, log: &Logger) -> Result<ExitCode> {
    let needs_seed = matches!(
        args.element_method,
        CliElementMethod::RandomConsistent | CliElementMethod::RandomInconsistent
    );
    if needs_seed && seed.is_none() {
        eprintln!(
            "error: --element-method {} requires --seed",
            args.element_method.name()
        );
        return Ok(ExitCode::from(2));
    }
    if !needs_seed && seed.is_some() {
        log.warn(format!(
            "--seed is ignored by --element-method {}",
            args.element_method.name()
        ));
    }
    if args.emit_plan.is_some() && args.element_method == CliElementMethod::Magnitude {
        eprintln!("error: magnitude selection reshapes elements and has no slice plan to emit");
        return Ok(ExitCode::from(2));
    }

    let teacher_desc = ArchDescriptor::resolve(&args.teacher_arch)?;
    let student_desc = ArchDescriptor::resolve(&args.student_arch)?;
    let teacher = read_checkpoint(&args.teacher)?;
    let strategy: LayerStrategy = args.layer_strategy.into();

    let (student, plan) = match args.element_method {
        CliElementMethod::Magnitude => {
            let student = init_magnitude_prune(&teacher, &teacher_desc, &student_desc, strategy)?;
            (student, None)
        }
        CliElementMethod::L1 => {
            let (student, plan) = init_l1_prune(&teacher, &teacher_desc, &student_desc, strategy)?;
            (student, Some(plan))
        }
        other => {
            let method = match other {
                CliElementMethod::Uniform => ElementMethod::Uniform,
                CliElementMethod::Consecutive => ElementMethod::Consecutive,
                CliElementMethod::RandomConsistent => ElementMethod::RandomConsistent,
                CliElementMethod::RandomInconsistent => ElementMethod::RandomInconsistent,
                _ => unreachable!(),
            };
            let plan = build_plan(&teacher_desc, &student_desc, strategy, method, seed)?;
            let student = execute_plan(&teacher, &plan)?;
            (student, Some(plan))
        }
    };

    if let (Some(path), Some(plan)) = (&args.emit_plan, &plan) {
        write_plan_atomic(plan, path)?;
        log.info(format!("wrote plan to {}", path.display()));
    }
    write_atomic(&student, &args.out)?;
    log.info(format!(
        "wrote student checkpoint ({} tensors) to {}",
        student.len(),
        args.out.display()
    ));
    Ok(ExitCode::SUCCESS)
}

fn cmd_apply(teacher_path: &Path, plan_path: &Path, out: &Path, log: &Logger) -> Result<ExitCode> {
    let plan = SelectionPlan::load(plan_path)?;
    let teacher = read_checkpoint(teacher_path)?;
    let student = execute_plan(&teacher, &plan)?;
    write_atomic(&student, out)?;
    log.info(format!(
        "re-executed plan {} onto {}",
        plan.digest(),
        out.display()
    ));
    Ok(ExitCode::SUCCESS)
}

fn cmd_init(args: InitArgs, seed: Option<u64>, log: &Logger) -> Result<ExitCode> {
    if args.std <= 0.0 {
        eprintln!("error: --std must be > 0, got {}", args.std);
        return Ok(ExitCode::from(2));
    }
    let desc = ArchDescriptor::resolve(&args.student_arch)?;
    let method = match args.method {
        CliInitMethod::TruncNormal => RandomInit::TruncNormal { std: args.std },
        CliInitMethod::Xavier => RandomInit::XavierUniform,
        CliInitMethod::Kaiming => RandomInit::KaimingNormal,
    };
    let ckpt = init_random(
        &desc,
        &InitSpec {
            method,
            seed: seed.unwrap_or(0),
        },
    )?;
    write_atomic(&ckpt, &args.out)?;
    log.info(format!(
        "wrote {} initialized checkpoint to {}",
        method.name(),
        args.out.display()
    ));
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(
    arch: &str,
    dtype: CliDtype,
    out: &Path,
    seed: Option<u64>,
    log: &Logger,
) -> Result<ExitCode> {
    let desc = ArchDescriptor::resolve(arch)?;
    let ckpt = desc.synthesize(seed.unwrap_or(0), dtype.into());
    write_atomic(&ckpt, out)?;
    log.info(format!(
        "wrote synthetic checkpoint ({} tensors, {} parameters) to {}",
        ckpt.len(),
        desc.num_parameters(),
        out.display()
    ));
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(student: &Path, teacher: &Path, plan_path: &Path, json: bool) -> Result<ExitCode> {
    let plan = SelectionPlan::load(plan_path)?;
    let student_ckpt = read_checkpoint(student)?;
    let teacher_ckpt = read_checkpoint(teacher)?;
    let report = verify(&student_ckpt, &teacher_ckpt, &plan)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        for line in report.summary_lines() {
            println!("{line}");
        }
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

/// JSON-safe representation of a possibly infinite score.
fn score_value(score: f64) -> serde_json::Value {
    if score.is_finite() {
        serde_json::json!(score)
    } else {
        serde_json::json!("inf")
    }
}

fn cmd_diag_attn(
    ckpt_path: &Path,
    arch: &str,
    layer: usize,
    head: usize,
    json: bool,
    dump_csv: Option<&Path>,
) -> Result<ExitCode> {
    let desc = ArchDescriptor::resolve(arch)?;
    let ckpt = read_checkpoint(ckpt_path)?;
    let products = attn_products(&ckpt, &desc, layer, head)?;

    if let Some(dir) = dump_csv {
        std::fs::create_dir_all(dir)?;
        for (tag, matrix) in [("qk", &products.qk), ("vproj", &products.vproj)] {
            let path = dir.join(format!("layer{layer}_head{head}_{tag}.csv"));
            let mut text = String::new();
            for row in 0..products.head_dim {
                let cells: Vec<String> = (0..products.head_dim)
                    .map(|col| format!("{}", matrix[row * products.head_dim + col]))
                    .collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            std::fs::write(&path, text)?;
        }
    }

    if json {
        let out = serde_json::json!({
            "layer": layer,
            "head": head,
            "head_dim": products.head_dim,
            "diag_score_qk": score_value(products.diag_score_qk),
            "diag_score_vproj": score_value(products.diag_score_vproj),
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("layer {layer} head {head} (head_dim {})", products.head_dim);
        println!("  diag_score_qk    = {}", products.diag_score_qk);
        println!("  diag_score_vproj = {}", products.diag_score_vproj);
    }
    Ok(ExitCode::SUCCESS)
}
