//! `xqd` subcommands. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 finished with a warning (budget exhausted above target, or refinement
//! short of its target).

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use xqd_core::codec;
use xqd_core::fitting::{fit_xqd, FitStrategy, SingularPoints, StrategyName};
use xqd_core::ingest::{field_to_marks, read_of_grid, write_of_grid};
use xqd_core::refine::{ratio_field, refine_until, DEFAULT_MAX_OUTER};
use xqd_core::render::render_svg;
use xqd_core::synth::{synthesize, Preset, SynthConfig};
use xqd_core::{
    evaluate_xqd_field, field_deviation, FieldExtent, GridSpec, OrientationField, XqdModel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_WARNING: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "xqd",
    version,
    about = "Fit, evaluate, encode and render XQD orientation-field models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model to an orientation grid.
    Fit(FitArgs),
    /// Print the mean deviation in degrees between a model and a grid.
    Eval(EvalArgs),
    /// Generate a random model and its field.
    Synth(SynthArgs),
    /// Refine a model's ratio field towards a grid and write the error trace.
    Refine(RefineArgs),
    /// Draw a field as SVG line segments.
    Render(RenderArgs),
    /// Encode a JSON model description into .xqd bytes.
    Encode(CodecArgs),
    /// Decode .xqd bytes into a JSON model description.
    Decode(CodecArgs),
    /// Run the marking HTTP service.
    Serve(ServeArgs),
}

/// A pixel position written `x,y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point(pub f64, pub f64);

impl FromStr for Point {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (x, y) = s
            .split_once(',')
            .ok_or_else(|| format!("expected x,y, got {s:?}"))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("{t:?} is not a finite number"))
        };
        Ok(Point(parse(x)?, parse(y)?))
    }
}

/// Grid written `CxR@P`: columns, rows and spacing in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridArg(pub GridSpec);

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected CxR@P such as 40x40@12, got {s:?}");
        let (dims, p) = s.split_once('@').ok_or_else(bad)?;
        let (c, r) = dims.split_once(['x', 'X']).ok_or_else(bad)?;
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let spacing = u32::try_from(num(p)?).map_err(|_| bad())?;
        GridSpec::new(num(c)?, num(r)?, spacing)
            .map(GridArg)
            .map_err(|e| e.to_string())
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub truth: PathBuf,
    /// Core positions, `x,y` each.
    #[arg(long, num_args = 1.., value_name = "X,Y")]
    pub cores: Vec<Point>,
    /// Delta positions, `x,y` each.
    #[arg(long, num_args = 1.., value_name = "X,Y")]
    pub deltas: Vec<Point>,
    #[arg(long)]
    pub strategy: StrategyName,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Recorded in the report; fitting itself draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub target_deg: Option<f64>,
    #[arg(long)]
    pub max_seconds: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub anchors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "40x40@12")]
    pub grid: GridArg,
    #[arg(long)]
    pub out_truth: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_OUTER)]
    pub max_outer: usize,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).multiple(false)))]
pub struct RenderArgs {
    #[arg(long, group = "source")]
    pub model: Option<PathBuf>,
    #[arg(long, group = "source")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub stride: u32,
}

#[derive(Args, Debug)]
pub struct CodecArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Only this origin may call the API from a browser; any origin when absent.
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Session snapshot loaded at startup and written on shutdown.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn data(message: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }
    fn usage(message: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }
}

type CmdResult = Result<i32, Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn read_truth(path: &Path) -> Result<OrientationField, Failure> {
    read_of_grid(&read_text(path)?).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn read_model(path: &Path) -> Result<XqdModel, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    codec::decode(&bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

/// Mean deviation of `model` over the foreground of `truth`.
fn deviation(model: &XqdModel, truth: &OrientationField) -> Result<f64, Failure> {
    let fitted = evaluate_xqd_field(model, truth.grid(), truth.mask());
    field_deviation(&fitted, truth).map_err(Failure::data)
}

fn cmd_fit(a: &FitArgs) -> CmdResult {
    for (name, v) in [
        ("--target-deg", a.target_deg),
        ("--max-seconds", a.max_seconds),
    ] {
        if v.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
            return Err(Failure::usage(format!(
                "{name} must be a finite non-negative number"
            )));
        }
    }
    let truth = read_truth(&a.truth)?;
    let marks = field_to_marks(&truth);
    let singular = SingularPoints::new(
        a.cores.iter().map(|p| (p.0, p.1)).collect(),
        a.deltas.iter().map(|p| (p.0, p.1)).collect(),
    );
    let mut strategy = FitStrategy::preset(a.strategy);
    if let Some(t) = a.target_deg {
        strategy = strategy.with_target(t);
    }
    if let Some(t) = a.max_seconds {
        strategy = strategy.with_budget(t);
    }
    let (mut model, report) = fit_xqd(&marks, &singular, &strategy).map_err(Failure::data)?;
    model.extent = FieldExtent::from_grid(truth.grid());
    let bytes = codec::encode(&model).map_err(Failure::data)?;
    // The report describes the stored model, so re-evaluating the file
    // reproduces it.
    let stored = codec::decode(&bytes).map_err(Failure::data)?;
    let stored_dev = deviation(&stored, &truth)?;

    let mut out = serde_json::to_value(&report).expect("reports serialize");
    out["fit_deviation_deg"] = json!(report.deviation_deg);
    out["deviation_deg"] = json!(stored_dev);
    out["seed"] = json!(a.seed);
    out["encoded_bytes"] = json!(bytes.len());
    write(&a.out, &bytes)?;
    write(
        &a.report,
        serde_json::to_string_pretty(&out).expect("json") + "\n",
    )?;
    println!(
        "deviation {stored_dev:.4} deg, {} anchors, {} bytes, {:.2} s",
        report.anchors_used,
        bytes.len(),
        report.wall_time_s
    );
    let above_target = a.target_deg.is_none_or(|t| stored_dev > t);
    if report.budget_exhausted && above_target {
        eprintln!("warning: time budget exhausted before reaching the target");
        return Ok(EXIT_WARNING);
    }
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let model = read_model(&a.model)?;
    let truth = read_truth(&a.truth)?;
    if let Some(g) = model.extent.grid() {
        let t = truth.grid();
        if (g.cols, g.rows, g.spacing_px) != (t.cols, t.rows, t.spacing_px) {
            return Err(Failure::data(format!(
                "model grid {}x{}@{} does not match field grid {}x{}@{}",
                g.cols, g.rows, g.spacing_px, t.cols, t.rows, t.spacing_px
            )));
        }
    }
    println!("{}", deviation(&model, &truth)?);
    Ok(EXIT_OK)
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let s = synthesize(&SynthConfig {
        preset: a.preset,
        anchors: a.anchors,
        seed: a.seed,
        grid: a.grid.0,
    })
    .map_err(Failure::usage)?;
    let bytes = codec::encode(&s.model).map_err(Failure::data)?;
    write(&a.out_truth, write_of_grid(&s.field))?;
    write(&a.out_model, &bytes)?;
    println!(
        "{} cores, {} deltas, {} anchors, {} bytes",
        s.model.qd.cores.len(),
        s.model.qd.deltas.len(),
        s.model.anchors.len(),
        bytes.len()
    );
    Ok(EXIT_OK)
}

fn cmd_refine(a: &RefineArgs) -> CmdResult {
    if !(a.eps.is_finite() && a.eps > 0.0) {
        return Err(Failure::usage("--eps must be positive"));
    }
    let model = read_model(&a.model)?;
    let truth = read_truth(&a.truth)?;
    let model_field = evaluate_xqd_field(&model, truth.grid(), truth.mask());
    let f0 = ratio_field(&model_field, &model.qd).map_err(Failure::data)?;
    let f_true = ratio_field(&truth, &model.qd).map_err(Failure::data)?;
    let (_, trace) = refine_until(&f0, &f_true, a.eps, a.max_outer).map_err(Failure::data)?;
    write(&a.trace, trace.to_csv())?;
    let last = trace.final_epsilon();
    println!(
        "epsilon {:.6} -> {last:.6} in {} iterations",
        trace.epsilons[0],
        trace.iterations()
    );
    if last > a.eps {
        eprintln!("warning: error target {} not reached", a.eps);
        return Ok(EXIT_WARNING);
    }
    Ok(EXIT_OK)
}

fn cmd_render(a: &RenderArgs) -> CmdResult {
    let (field, cores, deltas) = match (&a.model, &a.truth) {
        (Some(path), _) => {
            let model = read_model(path)?;
            let grid = model
                .extent
                .grid()
                .ok_or_else(|| Failure::data("model has no sampling grid in its header"))?;
            let field = evaluate_xqd_field(&model, &grid, &vec![true; grid.len()]);
            (field, model.qd.cores_world(), model.qd.deltas_world())
        }
        (None, Some(path)) => (read_truth(path)?, vec![], vec![]),
        (None, None) => return Err(Failure::usage("one of --model or --truth is required")),
    };
    let svg = render_svg(&field, &cores, &deltas, a.stride as usize).map_err(Failure::usage)?;
    write(&a.out, svg)?;
    Ok(EXIT_OK)
}

fn cmd_encode(a: &CodecArgs) -> CmdResult {
    let model: XqdModel = serde_json::from_str(&read_text(&a.input)?)
        .map_err(|e| Failure::data(format!("{}: {e}", a.input.display())))?;
    let bytes = codec::encode(&model).map_err(Failure::data)?;
    write(&a.out, &bytes)?;
    println!("{} bytes", bytes.len());
    Ok(EXIT_OK)
}

fn cmd_decode(a: &CodecArgs) -> CmdResult {
    let model = read_model(&a.input)?;
    write(
        &a.out,
        serde_json::to_string_pretty(&model).expect("json") + "\n",
    )?;
    println!(
        "{} parameters, {} bytes",
        model.parameter_count(),
        codec::encoded_len(model.qd.singular_count(), model.anchors.len())
    );
    Ok(EXIT_OK)
}

fn cmd_serve(a: &ServeArgs) -> CmdResult {
    let rt = tokio::runtime::Runtime::new().map_err(Failure::data)?;
    let opts = xqd_service::ServeOptions {
        cors_origin: a.cors_origin.clone(),
        snapshot: a.snapshot.clone(),
    };
    rt.block_on(xqd_service::serve(a.addr, opts))
        .map_err(Failure::data)?;
    Ok(EXIT_OK)
}

pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Render(a) => cmd_render(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Serve(a) => cmd_serve(a),
    };
    result.unwrap_or_else(|f| {
        eprintln!("error: {}", f.message);
        f.code
    })
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
