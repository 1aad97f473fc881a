//! Command-line frontend for the expansion library.
//!
//! Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 invariant
//! violation. `selftest` encodes the first failing suite: exit `10 + k` for
//! suite index `k` (1-based).

use clap::{Args, Parser, Subcommand};
use flowexp::coords::{cbhd_coeffs, coord_first_kind, coord_pseudo_first_kind, coord_second_kind};
use flowexp::expansions::{
    cbh_divergence, cbhd_eval, chen_fliess_eval, formal_zm_cbh_identity, interaction_magnus_eval,
    magnus_control_counterexample, magnus_eval, multi_input_failure_oracle, order_fit,
    run_standard_sweep, scalar_refined_eval, sussmann_eval, sweep_base_control, CfTruncation,
    ErrorReport, SussmannFilter, SweepMethod, SweepPoint,
};
use flowexp::fields::VectorField;
use flowexp::fixtures;
use flowexp::hall::{build_hall_basis, OrderPolicy};
use flowexp::rat::{parse_q, q, qi, qpow, to_f64, Q};
use flowexp::report::{error_report_to_json, order_fit_to_json, sweep_to_csv};
use flowexp::rng::SplitMix64;
use flowexp::signals::{control_from_json, Control, ControlTuple, Poly1, PwPoly};
use std::fs;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "flowexp",
    about = "Truncated flow expansions with exact rational formal algebra",
    version
)]
struct Cli {
    /// Cap on solver steps per solve (default 40 million).
    #[arg(long, global = true)]
    max_steps: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export a generalized Hall basis as JSON.
    Hall(HallArgs),
    /// Print a CBHD coefficient table.
    Cbhd(CbhdArgs),
    /// Print a coordinate table (first, second or pseudo-first kind).
    Coords(CoordsArgs),
    /// Evaluate one expansion at one point against the oracle.
    Eval(EvalArgs),
    /// Run an order sweep and fit the error slope.
    Sweep(SweepArgs),
    /// Print the exact word series of a control tuple in canonical text form.
    Wordseries(WordseriesArgs),
    /// Reproduce a named counter-example.
    Counterexample(CounterArgs),
    /// Check the formal interaction-picture/CBHD identity exactly.
    Identity(IdentityArgs),
    /// Run all invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct HallArgs {
    /// Alphabet size.
    #[arg(long, default_value_t = 2)]
    q: usize,
    /// Maximum bracket length.
    #[arg(long, default_value_t = 4)]
    maxlen: usize,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct CbhdArgs {
    /// Number of exponents in the product.
    #[arg(long, default_value_t = 2)]
    args: usize,
    /// Truncation order.
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Output format: csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct CoordsArgs {
    /// first | second | pseudo.
    #[arg(long)]
    kind: String,
    /// Evaluation time (rational, e.g. 3/4).
    #[arg(long, default_value = "1")]
    t: String,
    /// Degree cap M.
    #[arg(long, default_value_t = 4)]
    m: usize,
    /// Drift-power cap for the pseudo-first kind.
    #[arg(long, default_value_t = 4)]
    n0cap: usize,
    /// JSON control file (single channel); constant 1 when absent.
    #[arg(long)]
    control: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// chen-fliess | magnus | cbhd | interaction | sussmann | scalar-refined.
    #[arg(long)]
    method: String,
    /// normal-form-3d | optimal-pair.
    #[arg(long, default_value = "normal-form-3d")]
    fixture: String,
    /// JSON field file overriding the fixture drift.
    #[arg(long)]
    drift_file: Option<String>,
    /// JSON field file overriding the fixture input field.
    #[arg(long)]
    input_file: Option<String>,
    /// Start point as comma-separated rationals (fixture default otherwise).
    #[arg(long)]
    start: Option<String>,
    /// Evaluation time.
    #[arg(long, default_value = "1/4")]
    t: String,
    /// Truncation order M.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Drift cap for interaction/sussmann filters.
    #[arg(long, default_value_t = 8)]
    n0cap: usize,
    /// Oracle tolerance (env FLOWEXP_TOL overrides the default 1e-12).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    method: String,
    #[arg(long, default_value = "normal-form-3d")]
    fixture: String,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 8)]
    n0cap: usize,
    /// Scales 2^-from .. 2^-to.
    #[arg(long, default_value_t = 3)]
    from: u32,
    #[arg(long, default_value_t = 8)]
    to: u32,
    #[arg(long)]
    tol: Option<f64>,
    /// Write the sweep table as CSV here.
    #[arg(long)]
    csv: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct WordseriesArgs {
    /// Evaluation time (rational).
    #[arg(long, default_value = "1")]
    t: String,
    /// Truncation degree.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// JSON control file (single channel); constant 1 when absent.
    #[arg(long)]
    control: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct CounterArgs {
    /// cbh-divergence | magnus-control | matrix-sussmann | multi-input-failure.
    name: String,
}

#[derive(Args)]
struct IdentityArgs {
    #[arg(long, default_value_t = 2)]
    r: usize,
    #[arg(long, default_value_t = 3)]
    nu: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0xf10e)]
    seed: u64,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0xf10e)]
    seed: u64,
}

fn default_tol(cli: Option<f64>) -> f64 {
    cli.or_else(|| {
        std::env::var("FLOWEXP_TOL")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1e-12)
}

fn write_out(path: &Option<String>, content: &str) -> Result<(), String> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| format!("writing {p}: {e}")),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn parse_time(s: &str) -> Result<Q, String> {
    parse_q(s).ok_or_else(|| format!("cannot parse rational time {s:?}"))
}

/// Fixture systems: drift field, input field, start point.
fn fixture(name: &str) -> Result<(VectorField, VectorField, Vec<Q>), String> {
    match name {
        "normal-form-3d" => {
            let (f0, f1) = fixtures::normal_form_3d();
            Ok((f0, f1, vec![q(1, 4), q(-1, 8), q(1, 12)]))
        }
        "optimal-pair" => {
            let (f0, f1) = fixtures::optimal_pair();
            Ok((f0, f1, vec![q(1, 8), q(-1, 8)]))
        }
        other => Err(format!("unknown fixture {other:?}")),
    }
}

fn load_field(path: &str) -> Result<VectorField, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("reading {path}: {e}"))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("parsing {path}: {e}"))?;
    flowexp::fields::field_from_json(&v).ok_or_else(|| format!("bad field file {path}"))
}

fn standard_control(horizon: &Q) -> Control {
    Control::new(
        1,
        PwPoly::from_poly(Poly1::from_coeffs(vec![qi(1), q(-1, 2)]), horizon.clone()),
    )
}

fn run() -> Result<i32, String> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap renders its own message; keep it verbatim.
        e.to_string()
    })?;
    if let Some(cap) = cli.max_steps {
        flowexp::flows::set_max_steps(cap);
    }
    match cli.command {
        Command::Hall(a) => {
            let basis = build_hall_basis(a.q, a.maxlen, OrderPolicy::LengthThenLex);
            let json = serde_json::to_string_pretty(&basis.to_json()).unwrap();
            write_out(&a.out, &(json + "\n"))?;
            Ok(0)
        }
        Command::Cbhd(a) => {
            let basis = build_hall_basis(a.args, a.order, OrderPolicy::LengthThenLex);
            let table = cbhd_coeffs(a.args, &basis, a.order).map_err(|e| format!("cbhd: {e}"))?;
            let content = match a.format.as_str() {
                "csv" => table.to_csv(),
                "json" => {
                    let rows: Vec<serde_json::Value> = table
                        .entries()
                        .iter()
                        .map(|(b, v)| {
                            serde_json::json!({
                                "bracket": b.to_nested(),
                                "value": flowexp::rat::format_q(v),
                            })
                        })
                        .collect();
                    serde_json::to_string_pretty(&rows).unwrap() + "\n"
                }
                other => return Err(format!("unknown format {other:?}")),
            };
            write_out(&a.out, &content)?;
            Ok(0)
        }
        Command::Coords(a) => {
            let t = parse_time(&a.t)?;
            let control = match &a.control {
                Some(path) => {
                    let text =
                        fs::read_to_string(path).map_err(|e| format!("reading {path}: {e}"))?;
                    let v: serde_json::Value =
                        serde_json::from_str(&text).map_err(|e| format!("parsing {path}: {e}"))?;
                    control_from_json(&v).ok_or_else(|| format!("bad control file {path}"))?
                }
                None => {
                    let horizon = if t > qi(1) { t.clone() } else { qi(1) };
                    Control::constant(1, qi(1), horizon)
                }
            };
            let tuple = ControlTuple::with_drift(vec![control]);
            let table = match a.kind.as_str() {
                "first" => {
                    let basis = build_hall_basis(2, a.m, OrderPolicy::LengthThenLex);
                    coord_first_kind(&basis, &tuple, &t, a.m).map_err(|e| format!("ζ: {e}"))?
                }
                "second" => {
                    let basis = build_hall_basis(2, a.m, OrderPolicy::LengthThenLex);
                    coord_second_kind(&basis, &tuple, &t)
                }
                "pseudo" => {
                    let basis = build_hall_basis(2, a.m + a.n0cap, OrderPolicy::LengthThenLex);
                    coord_pseudo_first_kind(&basis, &tuple, &t, a.m, a.n0cap)
                        .map_err(|e| format!("η: {e}"))?
                }
                other => return Err(format!("unknown coordinate kind {other:?}")),
            };
            write_out(&a.out, &table.to_csv())?;
            Ok(0)
        }
        Command::Eval(a) => {
            let tol = default_tol(a.tol);
            let t = parse_time(&a.t)?;
            let (mut f0, mut f1, mut p) = fixture(&a.fixture)?;
            if let Some(path) = &a.drift_file {
                f0 = load_field(path)?;
            }
            if let Some(path) = &a.input_file {
                f1 = load_field(path)?;
            }
            if let Some(text) = &a.start {
                p = text
                    .split(',')
                    .map(|v| parse_q(v.trim()).ok_or_else(|| format!("bad start entry {v:?}")))
                    .collect::<Result<Vec<_>, _>>()?;
            }
            if f0.dim() != f1.dim() || f0.dim() != p.len() {
                return Err("drift, input field and start point dimensions differ".into());
            }
            let horizon = if t > qi(1) { t.clone() } else { qi(1) };
            let u = standard_control(&horizon);
            let (method, outcome) = match a.method.as_str() {
                "chen-fliess" => {
                    let approx = chen_fliess_eval(
                        Some(&f0),
                        &[(u.clone(), f1.clone())],
                        &p,
                        &t,
                        &CfTruncation::TotalLength(a.m),
                    )
                    .map_err(|e| format!("chen-fliess: {e}"))?;
                    let prob = flowexp::flows::OdeProblem {
                        drift: Some(f0.clone()),
                        controlled: vec![(u.clone(), f1.clone())],
                        start: p.clone(),
                        horizon: t.clone(),
                        tol,
                    };
                    let oracle = flowexp::flows::solve_reference(&prob)
                        .map_err(|e| format!("oracle: {e}"))?
                        .endpoint;
                    let approx64: Vec<f64> = approx.iter().map(to_f64).collect();
                    let error = approx64
                        .iter()
                        .zip(&oracle)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max);
                    (
                        "chen-fliess",
                        flowexp::expansions::EvalOutcome {
                            approx: approx64,
                            oracle,
                            error,
                        },
                    )
                }
                "magnus" => {
                    let (_, o) = magnus_eval(Some(&f0), &[(u, f1)], &p, &t, a.m, tol)
                        .map_err(|e| format!("magnus: {e}"))?;
                    ("magnus", o)
                }
                "cbhd" => {
                    let p64: Vec<f64> = p.iter().map(to_f64).collect();
                    let eps = t.clone();
                    let o = cbhd_eval(&[f0.scale(&eps), f1.scale(&eps)], &p64, a.m, tol)
                        .map_err(|e| format!("cbhd: {e}"))?;
                    ("cbhd", o)
                }
                "interaction" => {
                    let (_, o) =
                        interaction_magnus_eval(&f0, &[(u, f1)], &p, &t, a.m, a.n0cap, tol)
                            .map_err(|e| format!("interaction: {e}"))?;
                    ("interaction", o)
                }
                "sussmann" => {
                    let basis = build_hall_basis(2, a.m + a.n0cap, OrderPolicy::LengthThenLex);
                    let (o, _) = sussmann_eval(
                        &basis,
                        Some(&f0),
                        &[(u, f1)],
                        &p,
                        &t,
                        &SussmannFilter::Sm {
                            m: a.m,
                            n0_cap: a.n0cap,
                        },
                        tol,
                    )
                    .map_err(|e| format!("sussmann: {e}"))?;
                    ("sussmann", o)
                }
                "scalar-refined" => {
                    let o = scalar_refined_eval(&f0, &f1, &u, &p, &t, a.m, a.n0cap, tol)
                        .map_err(|e| format!("scalar-refined: {e}"))?;
                    ("scalar-refined", o)
                }
                other => return Err(format!("unknown method {other:?}")),
            };
            let report = ErrorReport {
                method: method.to_string(),
                params: serde_json::json!({
                    "m": a.m, "n0cap": a.n0cap, "fixture": a.fixture, "tol": tol
                }),
                scale_name: "t".to_string(),
                points: vec![SweepPoint {
                    scale: to_f64(&t),
                    approx: outcome.approx.clone(),
                    oracle: outcome.oracle.clone(),
                    error: outcome.error,
                }],
            };
            let json = serde_json::to_string_pretty(&error_report_to_json(&report)).unwrap();
            write_out(&a.out, &(json + "\n"))?;
            Ok(0)
        }
        Command::Sweep(a) => {
            let tol = default_tol(a.tol);
            let report = run_sweep(&a, tol)?;
            if let Some(path) = &a.csv {
                fs::write(path, sweep_to_csv(&report)).map_err(|e| format!("writing: {e}"))?;
            }
            let fit = order_fit(&report.pairs(), 100.0 * tol).map_err(|e| format!("fit: {e}"))?;
            let json = serde_json::json!({
                "report": error_report_to_json(&report),
                "fit": order_fit_to_json(&fit),
            });
            write_out(
                &a.out,
                &(serde_json::to_string_pretty(&json).unwrap() + "\n"),
            )?;
            eprintln!("fitted slope: {:.4}", fit.slope);
            Ok(0)
        }
        Command::Wordseries(a) => {
            let t = parse_time(&a.t)?;
            let control = match &a.control {
                Some(path) => {
                    let text =
                        fs::read_to_string(path).map_err(|e| format!("reading {path}: {e}"))?;
                    let v: serde_json::Value =
                        serde_json::from_str(&text).map_err(|e| format!("parsing {path}: {e}"))?;
                    control_from_json(&v).ok_or_else(|| format!("bad control file {path}"))?
                }
                None => {
                    let horizon = if t > qi(1) { t.clone() } else { qi(1) };
                    Control::constant(1, qi(1), horizon)
                }
            };
            let tuple = ControlTuple::with_drift(vec![control]);
            let series = flowexp::signals::word_series(&tuple, &t, a.n);
            write_out(&a.out, &series.to_text())?;
            Ok(0)
        }
        Command::Counterexample(a) => {
            run_counterexample(&a.name)?;
            Ok(0)
        }
        Command::Identity(a) => {
            println!("seed: {}", a.seed);
            let mut rng = SplitMix64::new(a.seed);
            let mut all_ok = true;
            for trial in 0..a.trials {
                let pw = PwPoly::new(
                    vec![qi(0), q(1, 2), qi(1)],
                    vec![
                        Poly1::from_coeffs(vec![rng.rational(3, 2), rng.rational(3, 2)]),
                        Poly1::from_coeffs(vec![rng.rational(3, 2), rng.rational(3, 2)]),
                    ],
                );
                let u = Control::new(1, pw);
                for r in 1..=a.r {
                    for nu in 0..=a.nu {
                        let ok = formal_zm_cbh_identity(&u, &qi(1), r, nu)
                            .map_err(|e| format!("identity: {e}"))?;
                        if !ok {
                            all_ok = false;
                            println!("trial {trial}: MISMATCH at (r, ν) = ({r}, {nu})");
                        }
                    }
                }
            }
            if all_ok {
                println!(
                    "identity holds exactly for all (r ≤ {}, ν ≤ {}) over {} controls",
                    a.r, a.nu, a.trials
                );
                Ok(0)
            } else {
                Ok(3)
            }
        }
        Command::Selftest(a) => {
            println!("seed: {}", a.seed);
            let results = flowexp::selftest::run_all(a.seed);
            let mut first_failure = None;
            for (i, suite) in results.iter().enumerate() {
                let status = if suite.passed { "PASS" } else { "FAIL" };
                println!("[{status}] suite {}: {}", i + 1, suite.name);
                for note in &suite.notes {
                    println!("       note: {note}");
                }
                for failure in &suite.failures {
                    println!("       failed: {failure}");
                }
                if !suite.passed && first_failure.is_none() {
                    first_failure = Some(i + 1);
                }
            }
            match first_failure {
                None => Ok(0),
                Some(k) => Ok(10 + k as i32),
            }
        }
    }
}

fn run_sweep(a: &SweepArgs, tol: f64) -> Result<ErrorReport, String> {
    let (f0, f1, p) = fixture(&a.fixture)?;
    let method = match a.method.as_str() {
        "chen-fliess" => SweepMethod::ChenFliess,
        "magnus" => SweepMethod::Magnus,
        "cbhd" => SweepMethod::Cbhd,
        "interaction" => SweepMethod::Interaction,
        "sussmann" => SweepMethod::Sussmann,
        other => return Err(format!("unknown sweep method {other:?}")),
    };
    let lambdas: Vec<Q> = (a.from..=a.to).map(|e| qpow(&q(1, 2), e as i64)).collect();
    let base = sweep_base_control();
    run_standard_sweep(method, &f0, &f1, &p, &base, a.m, a.n0cap, &lambdas, tol)
        .map_err(|e| format!("sweep: {e}"))
}

fn run_counterexample(name: &str) -> Result<(), String> {
    match name {
        "cbh-divergence" => {
            let report = cbh_divergence(&q(1, 10), 110);
            println!("epsilon = 1/10");
            println!(
                "first index with term ratio > 1 onward: k* = {}",
                report.k_star
            );
            for (m, v) in report.theta.iter().step_by(10) {
                println!("Theta at M' = {m:>3}: {:.6e}", to_f64(v));
            }
            let deep = to_f64(&report.theta[110].1);
            let shallow = to_f64(&report.theta[10].1);
            println!(
                "|Theta(110)| / |Theta(10)| = {:.3e}",
                (deep / shallow).abs()
            );
            println!(
                "flow second component at M' = 110: {:.6e}",
                report.flow_values[110].1
            );
            Ok(())
        }
        "magnus-control" => {
            let series = magnus_control_counterexample(&qi(1), 41);
            println!("summand sup-norms at the probe (0, 1/2), u(s) = s, t = 1:");
            for (k, v) in series.iter().filter(|(k, _)| k % 2 == 1 || *k == 0) {
                println!("k = {k:>2}: {:.6e}", to_f64(v));
            }
            Ok(())
        }
        "matrix-sussmann" => {
            let (gamma, norms) = flowexp::expansions::sussmann_divergence_data(4, 2.0);
            println!("fitted gamma with xi_bk(t) >= (t/gamma)^(3^k): {gamma:.4}");
            for (k, n) in norms.iter().enumerate() {
                println!("k = {k}: |exp(xi_bk A_bk) - I| at t = 2 gamma: {n:.6e}");
            }
            println!("the factors do not tend to the identity, so the ordered product diverges");
            Ok(())
        }
        "multi-input-failure" => {
            for n in [4u32, 8, 16] {
                let x = multi_input_failure_oracle(n, 1.0, 1e-10)
                    .map_err(|e| format!("oracle: {e}"))?;
                println!(
                    "n = {n:>2}: x2(1) = {:.6}, primitives bounded by {:.4}",
                    x[1],
                    2.0 / n as f64
                );
            }
            println!("limit of x2(1) is 1/2 while the primitives shrink like 1/n");
            Ok(())
        }
        other => Err(format!("unknown counterexample {other:?}")),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("{msg}");
            // Usage problems exit 1, numeric failures exit 2.
            if msg.contains("solver") || msg.contains("oracle") || msg.contains("fit") {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
