//! Command-line front end. Every command prints one JSON report on stdout.
//!
//! Exit codes: 0 certified/pass, 1 refuted/fail, 2 usage or input error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::demo::{self, MsdParams, RlcParams};
use crate::error::Error;
use crate::generator::lh_linear;
use crate::interconnect::{interconnect, InterconnectSpec};
use crate::linalg::TolerancePolicy;
use crate::model::{
    matrix_to_rows, parse_q, parse_system, serialize_phs, serialize_q, serialize_sltis,
    validate_storage, ControlSpec, Model, PhsForm, QuadraticStorage, Sltis,
};
use crate::observability::unobservable_subspace;
use crate::passivity::{certify, compile_phs, extract_phs, normalize_q};
use crate::simulate::{
    decreasing_test, increasing_segment, one_step_drift, simulate_paths, SimConfig,
};
use crate::storage::{max_trace_increase, value_iteration, RiccatiConfig};

pub const FORMAT_VERSION: &str = "1";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "sphs", version, about = "Passivity certificates for stochastic linear systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct TolArgs {
    /// Relative tolerance of every eigenvalue and rank cut-off.
    #[arg(long = "tol", default_value_t = 1e-9, global = true)]
    pub rel_tol: f64,
    /// Absolute floor of the tolerance.
    #[arg(long = "abs-floor", default_value_t = 1e-12, global = true)]
    pub abs_floor: f64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Certify the four passivity notions for a system and storage matrix.
    Check {
        system: PathBuf,
        /// Storage matrix file; defaults to the "Q" embedded in the system file.
        #[arg(long)]
        q: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Port-Hamiltonian extraction, compilation and normalization.
    Phs {
        #[command(subcommand)]
        action: PhsAction,
    },
    /// Decide observability.
    Observability {
        system: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Compute the minimal quadratic storage by value iteration.
    Storage {
        system: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 200.0)]
        horizon: f64,
        #[arg(long = "conv-tol", default_value_t = 1e-8)]
        conv_tol: f64,
        #[arg(long = "eps-reg", default_value_t = 0.0)]
        eps_reg: f64,
        /// Where to write `{"Q": ...}`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Monte Carlo ensemble of the storage balance `Z`, written as CSV.
    Simulate {
        system: PathBuf,
        #[arg(long)]
        q: Option<PathBuf>,
        #[arg(long = "t", default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Initial state, comma separated (default: all ones).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        /// Control as JSON, e.g. '{"constant":[0.5]}', or @file.
        #[arg(long)]
        control: Option<String>,
        /// Confidence multiplier of the decreasing test.
        #[arg(long, default_value_t = 3.0)]
        multiplier: f64,
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Couple two systems through `u^c = K Y^c`.
    Interconnect {
        first: PathBuf,
        second: PathBuf,
        /// Coupling file `{"K": [[...]], "n_hat": 1}`.
        #[arg(long = "k")]
        coupling: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Write one of the built-in example systems.
    Demo {
        #[command(subcommand)]
        which: DemoKind,
    },
}

#[derive(Subcommand, Debug)]
pub enum PhsAction {
    /// Port-Hamiltonian parameters of a system for its storage matrix.
    Extract {
        system: PathBuf,
        #[arg(long)]
        q: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// System matrices of a port-Hamiltonian parameter file.
    Compile {
        phs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Change coordinates so that the storage matrix becomes the identity.
    Normalize {
        phs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
}

#[derive(Args, Debug, Clone, Copy)]
pub struct MsdArgs {
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub sigma: f64,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct RlcArgs {
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub l: f64,
    #[arg(long, default_value_t = 1.0)]
    pub cap: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub s1: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub s2: f64,
}

#[derive(Subcommand, Debug)]
pub enum DemoKind {
    /// Stochastic mass-spring-damper.
    Msd {
        #[command(flatten)]
        p: MsdArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stochastic series RLC circuit.
    Rlc {
        #[command(flatten)]
        p: RlcArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The two examples coupled through a gyrator.
    Coupled {
        #[arg(long = "m", default_value_t = 1.0)]
        m: f64,
        #[arg(long = "c", default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        l: f64,
        #[arg(long, default_value_t = 1.0)]
        cap: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        s1: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        s2: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A finished command: the JSON report and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub report: Value,
    pub code: i32,
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Parse(_)
        | Error::Shape(_)
        | Error::Structure { .. }
        | Error::NotPsd { .. }
        | Error::PreconditionFailed(_)
        | Error::Io(_) => EXIT_INPUT,
        Error::Infeasible(_) => EXIT_FAIL,
        Error::NonFinite(_)
        | Error::NumericalDivergence(_)
        | Error::Callback(_)
        | Error::ResourceLimit(_)
        | Error::SingularCoupling { .. } => EXIT_NUMERICAL,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Parse(_) => "parse",
        Error::Shape(_) => "shape",
        Error::Structure { .. } => "structure",
        Error::NotPsd { .. } => "not_psd",
        Error::NonFinite(_) => "non_finite",
        Error::PreconditionFailed(_) => "precondition_failed",
        Error::Infeasible(_) => "infeasible",
        Error::NumericalDivergence(_) => "numerical_divergence",
        Error::Callback(_) => "callback",
        Error::ResourceLimit(_) => "resource_limit",
        Error::SingularCoupling { .. } => "singular_coupling",
        Error::Io(_) => "io",
    }
}

fn error_report(command: &str, err: &Error) -> Value {
    json!({
        "format_version": FORMAT_VERSION,
        "command": command,
        "error": { "kind": error_kind(err), "message": err.to_string() },
    })
}

fn tolerance(t: &TolArgs) -> crate::Result<TolerancePolicy> {
    TolerancePolicy::new(t.rel_tol, t.abs_floor)
}

fn tol_json(t: &TolerancePolicy) -> Value {
    json!({ "rel_tol": t.rel_tol, "abs_floor": t.abs_floor })
}

fn read(path: &Path) -> crate::Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write_or_embed(out: &Option<PathBuf>, text: &str) -> crate::Result<Value> {
    match out {
        Some(p) => {
            fs::write(p, text)?;
            Ok(json!(p.display().to_string()))
        }
        None => Ok(serde_json::from_str(text).unwrap_or(Value::String(text.to_string()))),
    }
}

/// Loads a system file; port-Hamiltonian files are compiled and carry their Q.
fn load_system(path: &Path) -> crate::Result<(Sltis, Option<DMatrix<f64>>)> {
    let doc = parse_system(&read(path)?)?;
    match doc.model {
        Model::Sltis(s) => Ok((s, doc.q)),
        Model::Phs(p) => {
            let q = p.parts().q.clone();
            Ok((compile_phs(&p)?, Some(q)))
        }
    }
}

fn load_phs(path: &Path) -> crate::Result<PhsForm> {
    match parse_system(&read(path)?)?.model {
        Model::Phs(p) => Ok(p),
        Model::Sltis(_) => Err(Error::Parse(format!(
            "{} is not a port-Hamiltonian file (expected a top-level \"phs\" object)",
            path.display()
        ))),
    }
}

fn resolve_storage(
    sys: &Sltis,
    embedded: Option<DMatrix<f64>>,
    q_file: &Option<PathBuf>,
    tol: TolerancePolicy,
) -> crate::Result<QuadraticStorage> {
    let q = match q_file {
        Some(p) => parse_q(&read(p)?)?,
        None => embedded.ok_or_else(|| {
            Error::PreconditionFailed(
                "no storage matrix: pass --q or embed \"Q\" in the system file (the `storage` command computes one)"
                    .into(),
            )
        })?,
    };
    validate_storage(sys, &q, tol)
}

fn rows(m: &DMatrix<f64>) -> Value {
    json!(matrix_to_rows(m))
}

fn cmd_check(system: &Path, q: &Option<PathBuf>, t: &TolArgs) -> crate::Result<Outcome> {
    let tol = tolerance(t)?;
    let (sys, embedded) = load_system(system)?;
    let storage = resolve_storage(&sys, embedded, q, tol)?;
    let report = certify(&sys, &storage)?;
    let code = if report.lmi_ok { EXIT_PASS } else { EXIT_FAIL };
    Ok(Outcome {
        report: json!({
            "format_version": FORMAT_VERSION,
            "command": "check",
            "system": system.display().to_string(),
            "tolerance": tol_json(&tol),
            "dims": { "d": sys.state_dim(), "n": sys.input_dim(), "k": sys.noise_dim() },
            "report": report,
        }),
        code,
    })
}

fn cmd_phs(action: &PhsAction) -> crate::Result<Outcome> {
    match action {
        PhsAction::Extract { system, q, out, tol } => {
            let tol = tolerance(tol)?;
            let (sys, embedded) = load_system(system)?;
            let storage = resolve_storage(&sys, embedded, q, tol)?;
            match extract_phs(&sys, &storage) {
                Ok(phs) => {
                    let back = compile_phs(&phs)?;
                    let err = back.max_abs_diff(&sys)?;
                    Ok(Outcome {
                        report: json!({
                            "format_version": FORMAT_VERSION,
                            "command": "phs extract",
                            "tolerance": tol_json(&tol),
                            "round_trip_max_abs_error": err,
                            "phs": write_or_embed(out, &serialize_phs(&phs))?,
                        }),
                        code: EXIT_PASS,
                    })
                }
                Err(Error::PreconditionFailed(msg)) => Ok(Outcome {
                    report: json!({
                        "format_version": FORMAT_VERSION,
                        "command": "phs extract",
                        "tolerance": tol_json(&tol),
                        "refuted": msg,
                    }),
                    code: EXIT_FAIL,
                }),
                Err(e) => Err(e),
            }
        }
        PhsAction::Compile { phs, out } => {
            let p = load_phs(phs)?;
            let sys = compile_phs(&p)?;
            Ok(Outcome {
                report: json!({
                    "format_version": FORMAT_VERSION,
                    "command": "phs compile",
                    "system": write_or_embed(out, &serialize_sltis(&sys, Some(&p.parts().q)))?,
                }),
                code: EXIT_PASS,
            })
        }
        PhsAction::Normalize { phs, out, tol } => {
            let tol = tolerance(tol)?;
            let p = load_phs(phs)?;
            let n = normalize_q(&p, &tol)?;
            Ok(Outcome {
                report: json!({
                    "format_version": FORMAT_VERSION,
                    "command": "phs normalize",
                    "tolerance": tol_json(&tol),
                    "phs": write_or_embed(out, &serialize_phs(&n))?,
                }),
                code: EXIT_PASS,
            })
        }
    }
}

fn cmd_observability(system: &Path, t: &TolArgs) -> crate::Result<Outcome> {
    let tol = tolerance(t)?;
    let (sys, _) = load_system(system)?;
    let r = unobservable_subspace(&sys, &tol)?;
    let code = if r.observable { EXIT_PASS } else { EXIT_FAIL };
    Ok(Outcome {
        report: json!({
            "format_version": FORMAT_VERSION,
            "command": "observability",
            "tolerance": tol_json(&tol),
            "report": r,
        }),
        code,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_storage(
    system: &Path,
    step: f64,
    horizon: f64,
    conv_tol: f64,
    eps_reg: f64,
    out: &Option<PathBuf>,
    t: &TolArgs,
) -> crate::Result<Outcome> {
    let tol = tolerance(t)?;
    let (sys, _) = load_system(system)?;
    let cfg = RiccatiConfig {
        step,
        max_horizon: horizon,
        convergence_tol: conv_tol,
        eps_reg,
    };
    let cfg_json = json!(cfg);
    let res = match value_iteration(&sys, &cfg, &tol) {
        Ok(r) => r,
        Err(Error::Infeasible(msg)) => {
            return Ok(Outcome {
                report: json!({
                    "format_version": FORMAT_VERSION,
                    "command": "storage",
                    "tolerance": tol_json(&tol),
                    "config": cfg_json,
                    "infeasible": msg,
                }),
                code: EXIT_FAIL,
            })
        }
        Err(e) => return Err(e),
    };
    let q_text = serialize_q(res.q_min.matrix());
    let q_out = match out {
        Some(p) => {
            fs::write(p, &q_text)?;
            json!(p.display().to_string())
        }
        None => Value::Null,
    };
    Ok(Outcome {
        report: json!({
            "format_version": FORMAT_VERSION,
            "command": "storage",
            "tolerance": tol_json(&tol),
            "config": cfg_json,
            "Q_min": rows(res.q_min.matrix()),
            "riccati_residual": res.riccati_residual,
            "lmi_margin": res.lmi_margin,
            "positive_definite": res.positive_definite,
            "converged": res.converged,
            "horizon": res.horizon,
            "steps": res.steps,
            "last_relative_change": res.last_relative_change,
            "k_trace_max_increase": max_trace_increase(&res.k_trace)?,
            "q_file": q_out,
        }),
        code: EXIT_PASS,
    })
}

fn parse_control(arg: &Option<String>) -> crate::Result<ControlSpec> {
    match arg {
        None => Ok(ControlSpec::Zero),
        Some(s) => {
            let text = match s.strip_prefix('@') {
                Some(path) => read(Path::new(path))?,
                None => s.clone(),
            };
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("control: {e}")))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    system: &Path,
    q: &Option<PathBuf>,
    t_end: f64,
    dt: f64,
    paths: usize,
    seed: u64,
    x0: &Option<Vec<f64>>,
    control: &Option<String>,
    multiplier: f64,
    serial: bool,
    out: &Option<PathBuf>,
    t: &TolArgs,
) -> crate::Result<Outcome> {
    let tol = tolerance(t)?;
    let (sys, embedded) = load_system(system)?;
    let storage = resolve_storage(&sys, embedded, q, tol)?;
    let x0 = x0.clone().unwrap_or_else(|| vec![1.0; sys.state_dim()]);
    let mut cfg = SimConfig::new(t_end, dt, paths, seed, x0);
    cfg.control = parse_control(control)?;
    cfg.parallel = !serial;
    let ens = simulate_paths(&sys, &storage, &cfg)?;
    let csv = ens.to_csv();
    let csv_out = match out {
        Some(p) => {
            fs::write(p, &csv)?;
            json!(p.display().to_string())
        }
        None => Value::Null,
    };
    let dec = decreasing_test(&ens, multiplier)?;
    let rising_h = increasing_segment(&ens.mean_h, &ens.se_h, multiplier);
    let mut u0 = vec![0.0; sys.input_dim()];
    cfg.control.eval_into(0.0, &cfg.x0, &mut u0);
    let lh0 = lh_linear(
        &sys,
        &storage,
        &DVector::from_vec(cfg.x0.clone()),
        &DVector::from_vec(u0),
    )?;
    let drift = one_step_drift(&ens).map(|(m, se)| json!({ "estimate": m, "se": se }));
    let code = if dec.pass { EXIT_PASS } else { EXIT_FAIL };
    Ok(Outcome {
        report: json!({
            "format_version": FORMAT_VERSION,
            "command": "simulate",
            "tolerance": tol_json(&tol),
            "config": cfg,
            "seed": seed,
            "decreasing_test": dec,
            "increasing_mean_h_segment": rising_h,
            "one_step_drift": drift,
            "generator_at_x0": lh0,
            "final": {
                "t": ens.times.last(),
                "mean_Z": ens.mean_z.last(),
                "se_Z": ens.se_z.last(),
                "mean_H": ens.mean_h.last(),
                "se_H": ens.se_h.last(),
            },
            "csv": csv_out,
        }),
        code,
    })
}

fn cmd_interconnect(
    first: &Path,
    second: &Path,
    coupling: &Path,
    out: &Option<PathBuf>,
    t: &TolArgs,
) -> crate::Result<Outcome> {
    let tol = tolerance(t)?;
    let (s1, q1) = load_system(first)?;
    let (s2, q2) = load_system(second)?;
    let spec = InterconnectSpec::from_json(&read(coupling)?)?;
    let sys = interconnect(&s1, &s2, &spec, &tol)?;
    let q = match (q1, q2) {
        (Some(a), Some(b)) => Some(crate::linalg::block_diag(&a, &b)),
        _ => None,
    };
    Ok(Outcome {
        report: json!({
            "format_version": FORMAT_VERSION,
            "command": "interconnect",
            "tolerance": tol_json(&tol),
            "dims": { "d": sys.state_dim(), "n": sys.input_dim(), "k": sys.noise_dim() },
            "system": write_or_embed(out, &serialize_sltis(&sys, q.as_ref()))?,
        }),
        code: EXIT_PASS,
    })
}

fn cmd_demo(which: &DemoKind) -> crate::Result<Outcome> {
    let (name, sys, q, out, params) = match which {
        DemoKind::Msd { p, out } => {
            let mp = MsdParams {
                m: p.m,
                c: p.c,
                kappa: p.kappa,
                sigma: p.sigma,
            };
            (
                "msd",
                demo::msd(&mp)?,
                demo::msd_q(&mp)?,
                out,
                json!({ "m": p.m, "c": p.c, "kappa": p.kappa, "sigma": p.sigma }),
            )
        }
        DemoKind::Rlc { p, out } => {
            let rp = RlcParams {
                r: p.r,
                l: p.l,
                cap: p.cap,
                s1: p.s1,
                s2: p.s2,
            };
            (
                "rlc",
                demo::rlc(&rp)?,
                demo::rlc_q(&rp)?,
                out,
                json!({ "r": p.r, "l": p.l, "cap": p.cap, "s1": p.s1, "s2": p.s2 }),
            )
        }
        DemoKind::Coupled {
            m,
            c,
            kappa,
            sigma,
            r,
            l,
            cap,
            s1,
            s2,
            out,
        } => {
            let mp = MsdParams {
                m: *m,
                c: *c,
                kappa: *kappa,
                sigma: *sigma,
            };
            let rp = RlcParams {
                r: *r,
                l: *l,
                cap: *cap,
                s1: *s1,
                s2: *s2,
            };
            (
                "coupled",
                demo::coupled(&mp, &rp)?,
                demo::coupled_q(&mp, &rp)?,
                out,
                json!({ "m": m, "c": c, "kappa": kappa, "sigma": sigma,
                        "r": r, "l": l, "cap": cap, "s1": s1, "s2": s2 }),
            )
        }
    };
    Ok(Outcome {
        report: json!({
            "format_version": FORMAT_VERSION,
            "command": format!("demo {name}"),
            "parameters": params,
            "system": write_or_embed(out, &serialize_sltis(&sys, Some(&q)))?,
        }),
        code: EXIT_PASS,
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Check { .. } => "check",
        Command::Phs { .. } => "phs",
        Command::Observability { .. } => "observability",
        Command::Storage { .. } => "storage",
        Command::Simulate { .. } => "simulate",
        Command::Interconnect { .. } => "interconnect",
        Command::Demo { .. } => "demo",
    }
}

/// Runs a parsed command, mapping library errors to exit codes.
pub fn execute(cli: &Cli) -> Outcome {
    let result = match &cli.command {
        Command::Check { system, q, tol } => cmd_check(system, q, tol),
        Command::Phs { action } => cmd_phs(action),
        Command::Observability { system, tol } => cmd_observability(system, tol),
        Command::Storage {
            system,
            step,
            horizon,
            conv_tol,
            eps_reg,
            out,
            tol,
        } => cmd_storage(system, *step, *horizon, *conv_tol, *eps_reg, out, tol),
        Command::Simulate {
            system,
            q,
            t_end,
            dt,
            paths,
            seed,
            x0,
            control,
            multiplier,
            serial,
            out,
            tol,
        } => cmd_simulate(
            system,
            q,
            *t_end,
            *dt,
            *paths,
            *seed,
            x0,
            control,
            *multiplier,
            *serial,
            out,
            tol,
        ),
        Command::Interconnect {
            first,
            second,
            coupling,
            out,
            tol,
        } => cmd_interconnect(first, second, coupling, out, tol),
        Command::Demo { which } => cmd_demo(which),
    };
    match result {
        Ok(o) => o,
        Err(e) => Outcome {
            report: error_report(command_name(&cli.command), &e),
            code: exit_code_for(&e),
        },
    }
}

/// Parses `args`, runs the command, prints the report and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
        }
    };
    let outcome = execute(&cli);
    // A closed stdout (e.g. piped into `head`) is not an error of the command.
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "{}",
        serde_json::to_string_pretty(&outcome.report).expect("report serializes")
    );
    if let Some(err) = outcome.report.get("error") {
        eprintln!("error: {}", err["message"].as_str().unwrap_or("unknown"));
    }
    outcome.code
}
