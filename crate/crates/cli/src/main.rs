use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use torsionlab::calibration::{Calibration, Family};
use torsionlab::domain::length_scale;
use torsionlab::experiments::{self as exp, ExperimentReport, Settings};
use torsionlab::kernel::{approx_green, f_n, poisson_identity_residual, KernelContext};
use torsionlab::output::{atomic_write, write_field_csv};
use torsionlab::probe::locate_max;
use torsionlab::solver::{solve_ground_state, solve_torsion};
use torsionlab::{ConvexDomain, DomainSpec, Error};

const DEFAULT_OUT: &str = "torsionlab-out";
const DEFAULT_H: &str = "1/64";

#[derive(Parser, Debug)]
#[command(name = "torsionlab", version, about = "Torsion functions and ground states on long convex domains")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Flags {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// rectangle, ellipse, omega1, omega2 or piecewise_linear.
    #[arg(long, global = true)]
    domain: Option<String>,
    /// Domain length.
    #[arg(long = "N", global = true)]
    n: Option<f64>,
    /// Grid spacing, e.g. `1/64` (parsed exactly) or `0.015625`.
    #[arg(long = "h", global = true)]
    h: Option<String>,
    /// Output directory [default: $TORSIONLAB_OUT or ./torsionlab-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated lengths for scaling runs, e.g. `16,32,64`.
    #[arg(long = "N-list", global = true, value_delimiter = ',')]
    n_list: Option<Vec<f64>>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Half-width of the flatness window for certificate searches.
    #[arg(long = "M", global = true)]
    m: Option<f64>,
    /// Calibration file replacing the built-in one.
    #[arg(long, global = true)]
    calibration: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the torsion problem and locate its maximum.
    Solve,
    /// Compute the Dirichlet ground state.
    Eigen,
    /// Kernel probes.
    #[command(subcommand)]
    Kernel(KernelCommand),
    /// Run a verification suite; exit 1 if any criterion fails.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Run one experiment; exit 1 if any criterion fails.
    Experiment {
        #[arg(value_enum)]
        which: Experiment,
    },
}

#[derive(Subcommand, Debug)]
enum KernelCommand {
    /// Evaluate the approximate Green's function and its first modes.
    Eval {
        /// Centre of the slice (defaults to the thickest point).
        #[arg(long)]
        x_tilde: Option<f64>,
        /// Field point `x,y`.
        #[arg(long, value_parser = parse_point)]
        p: [f64; 2],
        /// Source point `x,y`.
        #[arg(long, value_parser = parse_point)]
        q: [f64; 2],
        #[arg(long, default_value_t = 5)]
        modes: usize,
    },
    /// Compare both sides of the Poisson summation identity.
    CheckPoisson {
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 5.0])]
        a: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        xi: f64,
        #[arg(long, default_value_t = 1000)]
        m_cutoff: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Suite {
    Kernel,
    Approx,
    Hessian,
    Maxima,
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Experiment {
    /// Separation of the torsion and eigenfunction maxima.
    Cons1,
    /// Torsion function near the eigenfunction maximum.
    Cons2,
    /// Hessian scaling at the torsion maximum.
    Cons3,
    Sandwich,
    Directional,
}

/// Configuration file layout; also the shape of the echoed merged config.
#[derive(Serialize, Deserialize, Debug, Clone, Default, PartialEq)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vertices: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalize: Option<bool>,
    /// Number or rational string such as `"1/64"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_h: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(rename = "N_list", default, skip_serializing_if = "Option::is_none")]
    n_list: Option<Vec<f64>>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<PathBuf>,
}

/// Failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::OutOfRange { .. } | Error::InvalidDomain(_) | Error::HypothesisViolated(_) => 2,
            Error::Io(_) => 4,
            Error::Prerequisite(_) => 1,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

type Outcome = Result<bool, Failure>;

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => Ok([x.parse().map_err(|e| format!("{e}"))?, y.parse().map_err(|e| format!("{e}"))?]),
        _ => Err(format!("expected `x,y`, got `{s}`")),
    }
}

/// Parses `p/q` as the correctly rounded quotient of two integers, or a decimal.
fn parse_spacing(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((p, q)) => {
            let p: u64 = p.trim().parse().map_err(|_| format!("bad numerator in `{s}`"))?;
            let q: u64 = q.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?;
            if q == 0 || p > 1 << 53 || q > 1 << 53 {
                return Err(format!("`{s}` is not a representable spacing"));
            }
            p as f64 / q as f64
        }
        None => s.parse::<f64>().map_err(|_| format!("bad spacing `{s}`"))?,
    };
    if !(value > 0.0 && value <= 1.0 / 16.0) {
        return Err(format!("spacing {s} must lie in (0, 1/16]"));
    }
    Ok(value)
}

fn spacing_text(v: &Value) -> Result<String, Failure> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Failure::config(format!("target_h must be a number or a string, got {other}"))),
    }
}

/// Everything a command needs after merging flags, config file and environment.
struct Run {
    merged: RunConfig,
    out: PathBuf,
    target_h: Option<f64>,
    settings: Settings,
}

impl Run {
    fn new(flags: &Flags) -> Result<Self, Failure> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| Failure::config(format!("config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        let merged = RunConfig {
            kind: flags.domain.clone().or(file.kind),
            n: flags.n.or(file.n),
            vertices: file.vertices,
            normalize: file.normalize,
            target_h: flags.h.clone().map(Value::String).or(file.target_h),
            out: flags.out.clone().or(file.out),
            n_list: flags.n_list.clone().or(file.n_list),
            m: flags.m.or(file.m),
            threads: flags.threads.or(file.threads),
            calibration: flags.calibration.clone().or(file.calibration),
        };
        let out = merged
            .out
            .clone()
            .or_else(|| std::env::var_os("TORSIONLAB_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let target_h = match &merged.target_h {
            Some(v) => Some(parse_spacing(&spacing_text(v)?).map_err(Failure::config)?),
            None => None,
        };
        if let Some(list) = &merged.n_list {
            if list.is_empty() || list.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
                return Err(Failure::config("N-list must hold positive numbers"));
            }
        }
        let calibration = match &merged.calibration {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::config(format!("cannot read calibration {}: {e}", path.display())))?;
                Calibration::from_json(&text)?
            }
            None => Calibration::builtin(),
        };
        if let Some(t) = merged.threads {
            if t == 0 {
                return Err(Failure::config("--threads must be at least 1"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
        }
        let mut settings = Settings { calibration, ..Settings::default() };
        if let Some(h) = target_h {
            settings.target_h = h;
            settings.hessian_target_h = h;
        }
        Ok(Self { merged, out, target_h, settings })
    }

    /// Creates the output directory and echoes the merged configuration.
    fn prepare_out(&self) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| Failure::io(format!("cannot create output directory {}: {e}", self.out.display())))?;
        let mut echo = self.merged.clone();
        echo.out = Some(self.out.clone());
        echo.target_h.get_or_insert_with(|| Value::String(DEFAULT_H.into()));
        let text = serde_json::to_string_pretty(&echo).expect("config serializes");
        self.write("config.json", text.as_bytes())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.out.join(name);
        atomic_write(&path, bytes).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        self.write(name, text.as_bytes())
    }

    fn h(&self) -> f64 {
        self.target_h.unwrap_or(1.0 / 64.0)
    }

    fn kind(&self) -> Result<&str, Failure> {
        self.merged.kind.as_deref().ok_or_else(|| usage_failure("--domain is required"))
    }

    fn domain(&self) -> Result<ConvexDomain, Failure> {
        let kind = self.kind()?;
        if kind != "piecewise_linear" && self.merged.n.is_none() {
            return Err(usage_failure(&format!("--N is required for domain `{kind}`")));
        }
        let spec = DomainSpec {
            kind: kind.to_string(),
            n: self.merged.n,
            vertices: self.merged.vertices.clone(),
            normalize: self.merged.normalize,
        };
        Ok(spec.build()?)
    }

    fn family(&self, default: Family) -> Result<Family, Failure> {
        match &self.merged.kind {
            Some(k) => Ok(k.parse::<Family>()?),
            None => Ok(default),
        }
    }

    fn n_or(&self, default: f64) -> f64 {
        self.merged.n.unwrap_or(default)
    }

    fn n_list_or(&self, default: &[f64]) -> Vec<f64> {
        self.merged.n_list.clone().unwrap_or_else(|| default.to_vec())
    }

    fn report(&self, mut r: ExperimentReport) -> Outcome {
        r.write(&self.out).map_err(|e| Failure::io(e.to_string()))?;
        print!("{}", r.summary());
        Ok(r.passed())
    }
}

fn usage_failure(message: &str) -> Failure {
    let usage = Cli::command().render_usage();
    Failure::config(format!("{message}\n\n{usage}"))
}

fn cmd_solve(run: &Run) -> Outcome {
    let domain = run.domain()?;
    run.prepare_out()?;
    let field = solve_torsion(&domain, run.h())?;
    let max = locate_max(&field)?;
    write_field_csv(&field, &run.out.join("torsion_field.csv")).map_err(|e| Failure::io(e.to_string()))?;
    run.write_json(
        "torsion_max.json",
        &json!({ "domain": domain.kind(), "target_h": run.h(), "solver": field.meta, "max": max }),
    )?;
    println!(
        "{}: v* = {:.8} at ({:.6}, {:.6}); {} unknowns, {} iterations",
        domain.label(),
        max.v_star,
        max.x_star,
        max.y_star,
        field.meta.unknowns,
        field.meta.iterations
    );
    Ok(true)
}

fn cmd_eigen(run: &Run) -> Outcome {
    let domain = run.domain()?;
    run.prepare_out()?;
    let (field, report) = solve_ground_state(&domain, run.h())?;
    let ls = length_scale(&domain);
    let inside = report.x1 >= ls.interval_half[0] && report.x1 <= ls.interval_half[1];
    write_field_csv(&field, &run.out.join("eigen_field.csv")).map_err(|e| Failure::io(e.to_string()))?;
    run.write_json(
        "eigen_report.json",
        &json!({
            "domain": domain.kind(),
            "target_h": run.h(),
            "eigen": report,
            "length_scale": ls,
            "x1_in_half_interval": inside,
        }),
    )?;
    println!(
        "{}: lambda = {:.10}, maximum at ({:.6}, {:.6}), x1 in I' = {inside}",
        domain.label(),
        report.lambda,
        report.x1,
        report.y1
    );
    Ok(true)
}

fn cmd_kernel(run: &Run, cmd: &KernelCommand) -> Outcome {
    match cmd {
        KernelCommand::Eval { x_tilde, p, q, modes } => {
            let domain = run.domain()?;
            run.prepare_out()?;
            let ctx = KernelContext::new(&domain, x_tilde.unwrap_or_else(|| domain.x_bar()))?;
            let green = approx_green(&domain, &ctx, *p, *q)?;
            let (xp, xq) = (ctx.translate(p[0]), ctx.translate(q[0]));
            let f: Vec<f64> = (1..=*modes).map(|n| f_n(&ctx, n, xp, xq)).collect();
            run.write_json("kernel_eval.json", &json!({ "context": ctx, "p": p, "q": q, "green": green, "f_n": f }))?;
            println!("G({}, {}; {}, {}) = {green:.12e}", p[0], p[1], q[0], q[1]);
            Ok(true)
        }
        KernelCommand::CheckPoisson { a, xi, m_cutoff } => {
            run.prepare_out()?;
            let mut rows = Vec::new();
            let mut ok = true;
            for &a in a {
                let r = poisson_identity_residual(a, *xi, *m_cutoff)?;
                let bound = r.lhs_tail_bound + r.rhs_tail_bound;
                let pass = r.residual <= bound;
                ok &= pass;
                println!(
                    "{} a={a} xi={xi}: |lhs - rhs| = {:.3e} (tail bound {bound:.3e})",
                    if pass { "PASS" } else { "FAIL" },
                    r.residual
                );
                rows.push(json!({ "result": r, "bound": bound, "passed": pass }));
            }
            run.write_json("poisson_check.json", &rows)?;
            Ok(ok)
        }
    }
}

fn cmd_verify(run: &Run, suite: Suite) -> Outcome {
    run.prepare_out()?;
    let s = &run.settings;
    let mut ok = true;
    if matches!(suite, Suite::Kernel | Suite::All) {
        ok &= run.report(exp::verify_kernel(s)?)?;
    }
    if matches!(suite, Suite::Approx | Suite::All) {
        let family = run.family(Family::Omega2)?;
        ok &= run.report(exp::verify_approx(family, &run.n_list_or(&[16.0, 32.0, 64.0]), s)?)?;
    }
    if matches!(suite, Suite::Hessian | Suite::All) {
        let family = run.family(Family::Omega2)?;
        let mut s = s.clone();
        if run.target_h.is_none() {
            s.target_h = s.hessian_target_h;
        }
        ok &= run.report(exp::verify_hessian(family, &run.n_list_or(&[32.0, 64.0, 128.0]), &s)?)?;
    }
    if matches!(suite, Suite::Maxima | Suite::All) {
        let family = run.family(Family::Omega1)?;
        ok &= run.report(exp::verify_maxima(family, &run.n_list_or(&[16.0, 32.0, 64.0]), s)?)?;
    }
    Ok(ok)
}

fn cmd_experiment(run: &Run, which: Experiment) -> Outcome {
    run.prepare_out()?;
    let s = &run.settings;
    let report = match which {
        Experiment::Cons1 => {
            exp::exp_maxima_separation(run.family(Family::Omega1)?, &run.n_list_or(&[16.0, 32.0, 64.0]), s)?
        }
        Experiment::Cons2 => exp::exp_torsion_near_eigenmax(run.family(Family::Omega2)?, run.n_or(64.0), s)?,
        Experiment::Cons3 => {
            exp::exp_hessian_scaling(run.family(Family::Omega2)?, &run.n_list_or(&[32.0, 64.0, 128.0]), s)?
        }
        Experiment::Sandwich => {
            exp::exp_max_value_sandwich(run.family(Family::Omega2)?, run.n_or(64.0), run.merged.m, s)?
        }
        Experiment::Directional => {
            exp::exp_directional_hessian(run.family(Family::Omega2)?, run.n_or(64.0), run.merged.m, s)?
        }
    };
    run.report(report)
}

fn execute(cli: &Cli) -> Outcome {
    let run = Run::new(&cli.flags)?;
    match &cli.command {
        Command::Solve => cmd_solve(&run),
        Command::Eigen => cmd_eigen(&run),
        Command::Kernel(k) => cmd_kernel(&run, k),
        Command::Verify { suite } => cmd_verify(&run, *suite),
        Command::Experiment { which } => cmd_experiment(&run, *which),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacings_parse_exactly() {
        assert_eq!(parse_spacing("1/64").unwrap(), 0.015625);
        assert_eq!(parse_spacing(" 1 / 128 ").unwrap(), 1.0 / 128.0);
        assert_eq!(parse_spacing("0.03125").unwrap(), 1.0 / 32.0);
        assert_eq!(parse_spacing("1/3").unwrap_err(), "spacing 1/3 must lie in (0, 1/16]");
        assert!(parse_spacing("1/0").is_err());
        assert!(parse_spacing("abc").is_err());
    }

    #[test]
    fn flags_override_config_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        std::fs::write(&cfg, r#"{"kind": "rectangle", "N": 4, "target_h": "1/32"}"#).unwrap();
        let flags = Flags { config: Some(cfg), n: Some(8.0), ..Flags::default() };
        let run = Run::new(&flags).unwrap();
        assert_eq!(run.merged.kind.as_deref(), Some("rectangle"));
        assert_eq!(run.merged.n, Some(8.0));
        assert_eq!(run.h(), 1.0 / 32.0);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        std::fs::write(&cfg, r#"{"kind": "rectangle", "length": 4}"#).unwrap();
        let err = Run::new(&Flags { config: Some(cfg), ..Flags::default() }).err().unwrap();
        assert_eq!(err.code, 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
