use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use blforge::applications::{hc_report, GaussianMeasureReport};
use blforge::caffarelli::{gaussian_divergence_check, ContractionProblem, Grid1D};
use blforge::linalg::matrix_from_rows;
use blforge::verify::{EqualityReport, RawFunctionInput};
use blforge::{
    brenier_1d, contraction_bound, equality_check, find_critical, finiteness_verdict, forward_check,
    gaussian_brenier_hessian, gaussian_measure_check, gaussian_vector_check, heatflow_monotone,
    is_generalized_geometric, optimize, reduce_to_geometric, reverse_check, structure_report, validate_datum,
    AttainedFlag, BLDatum, DualInput, Error, FunctionInput, HCParams, Method, OptConfig, OptResult, ProbeBudget,
    RawDatum, SymMatrix, VerifyConfig,
};
use blforge_cli::{digest_value, RunReport, Tolerances};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "blforge", version, about = "Regularized Brascamp-Lieb constants")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Optimizer restarts.
    #[arg(long, global = true, default_value_t = 16)]
    starts: usize,
    /// Random probes for `check`, Monte Carlo samples for `--method mc`.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long = "tol-psd", global = true)]
    tol_psd: Option<f64>,
    #[arg(long = "tol-kkt", global = true)]
    tol_kkt: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = MethodArg::Quad)]
    method: MethodArg,
    /// Also write the report to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Closed,
    Quad,
    Mc,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Finiteness verdict and critical subspaces.
    Check { datum: PathBuf },
    /// Maximize the Gaussian ratio and certify the result.
    Opt { datum: PathBuf },
    /// Forward inequality for a list of inputs.
    Verify {
        datum: PathBuf,
        inputs: PathBuf,
        #[arg(long)]
        bl: Option<f64>,
        /// Also require equality up to the quadrature error.
        #[arg(long)]
        equality: bool,
    },
    /// Dual inequality for a list of Gaussian or truncated inputs.
    Reverse {
        datum: PathBuf,
        inputs: PathBuf,
        #[arg(long)]
        bl: Option<f64>,
    },
    /// Reduce to an equivalent generalized geometric datum.
    Reduce { datum: PathBuf },
    /// Equality-case subspaces.
    Structure { datum: PathBuf },
    /// Heat-flow curve on a generalized geometric datum.
    Heatflow {
        datum: PathBuf,
        inputs: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])]
        t: Vec<f64>,
    },
    /// Contraction bound against the Gaussian Brenier map, plus the 1D grid map.
    Caffarelli { problem: PathBuf },
    /// Hypercontractivity threshold, constant and fixed-point scan.
    Hc {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        /// Defaults to `log((q-1)/(p-1))/2`.
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
    },
    /// Gaussian-measure form with maps `C` or a covariance `T`.
    GaussianMeasure { file: PathBuf },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Check { .. } => "check",
            Cmd::Opt { .. } => "opt",
            Cmd::Verify { .. } => "verify",
            Cmd::Reverse { .. } => "reverse",
            Cmd::Reduce { .. } => "reduce",
            Cmd::Structure { .. } => "structure",
            Cmd::Heatflow { .. } => "heatflow",
            Cmd::Caffarelli { .. } => "caffarelli",
            Cmd::Hc { .. } => "hc",
            Cmd::GaussianMeasure { .. } => "gaussian-measure",
        }
    }
}

/// Reason a command stopped early, with its exit code.
struct Abort {
    code: i32,
    message: String,
}

impl Abort {
    fn invalid(message: impl Into<String>) -> Self {
        Abort {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Abort {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::KKTNotPassed | Error::NumericalBreakdown(_) => 1,
            _ => 2,
        };
        Abort {
            code,
            message: e.to_string(),
        }
    }
}

impl From<anyhow::Error> for Abort {
    fn from(e: anyhow::Error) -> Self {
        Abort::invalid(format!("{e:#}"))
    }
}

type Step<T> = std::result::Result<T, Abort>;

struct Ctx<'a> {
    g: &'a Global,
    tol: Tolerances,
    report: RunReport,
    /// Parsed input documents, digested together.
    docs: Vec<Value>,
}

impl Ctx<'_> {
    fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.report
            .timings
            .insert(phase.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn read(&mut self, path: &Path) -> Step<Value> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let v: Value = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        self.docs.push(v.clone());
        Ok(v)
    }

    fn parse<T: for<'de> Deserialize<'de>>(&mut self, path: &Path) -> Step<T> {
        let v = self.read(path)?;
        serde_json::from_value(v).map_err(|e| Abort::invalid(format!("{}: {e}", path.display())))
    }

    fn datum(&mut self, path: &Path) -> Step<BLDatum> {
        let raw: RawDatum = self.parse(path)?;
        validate_datum(&raw).map_err(|errs| {
            let lines: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
            Abort::invalid(format!("{}: {}", path.display(), lines.join("; ")))
        })
    }

    fn fail(&mut self, msg: impl Into<String>) {
        self.report.failures.push(msg.into());
    }

    fn verify_config(&self) -> VerifyConfig {
        let method = match self.g.method {
            MethodArg::Closed => Method::ClosedForm,
            MethodArg::Quad => Method::Quadrature,
            MethodArg::Mc => Method::MonteCarlo,
        };
        let mut cfg = VerifyConfig::with_method(method);
        cfg.seed = self.g.seed;
        cfg.psd_tol = self.tol.psd;
        if let Some(n) = self.g.samples {
            cfg.mc_samples = n;
        }
        cfg
    }

    fn opt_config(&self) -> OptConfig {
        OptConfig {
            starts: self.g.starts,
            seed: self.g.seed,
            kkt_tol: self.tol.kkt,
            ..OptConfig::default()
        }
    }
}

fn function_inputs(raw: &[RawFunctionInput]) -> Step<Vec<FunctionInput>> {
    Ok(raw
        .iter()
        .map(FunctionInput::from_raw)
        .collect::<blforge::Result<Vec<_>>>()?)
}

fn opt_json(r: &OptResult) -> Value {
    json!({
        "ratio": r.ratio,
        "bl_constant": r.bl_constant,
        "attained_flag": r.attained_flag,
        "certificate": r.certificate,
        "B": r.best.b(),
        "best_start": r.best_start,
        "history": r.history,
        "trace": r.trace,
    })
}

fn run_check(ctx: &mut Ctx, path: &Path) -> Step<Value> {
    let d = ctx.datum(path)?;
    let mut budget = ProbeBudget {
        seed: ctx.g.seed,
        ..ProbeBudget::default()
    };
    if let Some(n) = ctx.g.samples {
        budget.samples = n;
    }
    let verdict = ctx.timed("finiteness", || finiteness_verdict(&d, &budget));
    let critical = ctx.timed("critical", || find_critical(&d, &budget));
    Ok(json!({ "verdict": verdict, "critical": critical }))
}

fn run_opt(ctx: &mut Ctx, path: &Path) -> Step<Value> {
    let d = ctx.datum(path)?;
    let cfg = ctx.opt_config();
    let r = ctx.timed("optimize", || optimize(&d, &cfg))?;
    if r.attained_flag == AttainedFlag::Attained && !r.certificate.as_ref().is_some_and(|c| c.passed) {
        ctx.fail("KKT certificate failed at an interior maximizer");
    }
    Ok(opt_json(&r))
}

fn run_verify(ctx: &mut Ctx, datum: &Path, inputs: &Path, bl: Option<f64>, equality: bool) -> Step<Value> {
    let d = ctx.datum(datum)?;
    let raw: Vec<RawFunctionInput> = ctx.parse(inputs)?;
    let fs = function_inputs(&raw)?;
    let cfg = ctx.verify_config();
    if equality {
        let eq: EqualityReport = ctx.timed("verify", || equality_check(&d, &fs, &cfg, bl))?;
        if !eq.report.holds() {
            ctx.fail(format!("forward inequality violated: slack {:e}", eq.report.slack));
        }
        if !eq.equal {
            ctx.fail(format!(
                "equality not reached: |slack| {:e} > {:e}",
                eq.report.slack.abs(),
                eq.tolerance
            ));
        }
        return Ok(serde_json::to_value(eq).expect("report serializes"));
    }
    let r = ctx.timed("verify", || forward_check(&d, &fs, &cfg, bl))?;
    if !r.holds() {
        ctx.fail(format!("forward inequality violated: slack {:e}", r.slack));
    }
    Ok(serde_json::to_value(r).expect("report serializes"))
}

fn run_reverse(ctx: &mut Ctx, datum: &Path, inputs: &Path, bl: Option<f64>) -> Step<Value> {
    let d = ctx.datum(datum)?;
    let ins: Vec<DualInput> = ctx.parse(inputs)?;
    let cfg = ctx.verify_config();
    let r = ctx.timed("reverse", || reverse_check(&d, &ins, &cfg, bl))?;
    if !r.holds() {
        ctx.fail(format!("dual inequality violated: slack {:e}", r.slack));
    }
    Ok(serde_json::to_value(r).expect("report serializes"))
}

fn run_reduce(ctx: &mut Ctx, path: &Path) -> Step<Value> {
    let d = ctx.datum(path)?;
    let cfg = ctx.opt_config();
    let r = ctx.timed("optimize", || optimize(&d, &cfg))?;
    if r.attained_flag != AttainedFlag::Attained {
        ctx.fail(format!("no extremizer to reduce at: {:?}", r.attained_flag));
        return Ok(json!({ "opt": opt_json(&r) }));
    }
    let kkt = ctx.tol.kkt;
    let (geo, map) = ctx.timed("reduce", || reduce_to_geometric(&d, &r.best, kkt))?;
    let g = is_generalized_geometric(&geo, ctx.tol.geometric)?;
    if !g.is_geometric {
        ctx.fail(format!(
            "reduced datum misses the geometric conditions by {:e}",
            g.max_violation()
        ));
    }
    let implied = 1.0 / map.scale;
    let rel = (implied - r.bl_constant).abs() / r.bl_constant;
    if rel > ctx.tol.scaling {
        ctx.fail(format!("BL scaling relation off by {rel:e} relative"));
    }
    Ok(json!({
        "bl_constant": r.bl_constant,
        "implied_bl": implied,
        "scaling_rel_diff": rel,
        "map": map,
        "geometric": g,
        "datum": geo.to_raw(),
    }))
}

fn run_structure(ctx: &mut Ctx, path: &Path) -> Step<Value> {
    let d = ctx.datum(path)?;
    let s = ctx.timed("structure", || structure_report(&d))?;
    Ok(serde_json::to_value(s).expect("report serializes"))
}

fn run_heatflow(ctx: &mut Ctx, datum: &Path, inputs: &Path, t: &[f64]) -> Step<Value> {
    let d = ctx.datum(datum)?;
    let raw: Vec<RawFunctionInput> = ctx.parse(inputs)?;
    let fs = function_inputs(&raw)?;
    if t.iter().any(|&x| !(x.is_finite() && x >= 1.0)) {
        return Err(Abort::invalid("heat-flow times must be finite and >= 1"));
    }
    let cfg = ctx.verify_config();
    let curve = ctx.timed("heatflow", || heatflow_monotone(&d, &fs, t, &cfg))?;
    let tol = ctx.tol.heat;
    for w in curve.windows(2) {
        let floor = w[0].value * (1.0 - tol) - w[0].est_error - w[1].est_error;
        if w[1].value < floor {
            ctx.fail(format!(
                "heat-flow value drops between t = {} and t = {}",
                w[0].t, w[1].t
            ));
        }
    }
    let target: f64 = fs
        .iter()
        .zip(d.factors())
        .map(|(f, fac)| f.mass().powf(fac.p))
        .product();
    Ok(json!({ "curve": curve, "mass_product": target }))
}

fn run_caffarelli(ctx: &mut Ctx, path: &Path) -> Step<Value> {
    let p: ContractionProblem = ctx.parse(path)?;
    let (h, x) = ctx.timed("bound", || {
        Ok::<_, Error>((contraction_bound(&p.a, &p.b)?, gaussian_brenier_hessian(&p.a, &p.b)?))
    })?;
    let slack = h.sub(&x).min_eig();
    if slack < -ctx.tol.contraction {
        ctx.fail(format!(
            "Gaussian Brenier Hessian exceeds the bound: lambda_min {slack:e}"
        ));
    }
    let div = gaussian_divergence_check(&p.a.inverse_spd()?, &p.b.inverse_spd()?, &p.a)?;
    let mut out = json!({ "bound": h, "gaussian_hessian": x, "slack_min_eig": slack, "divergence": div });
    match (p.mu, p.nu) {
        (Some(mu), Some(nu)) => {
            let b = ctx.timed("brenier_1d", || brenier_1d(&mu, &nu, &Grid1D::default()))?;
            if !b.within_bound {
                ctx.fail(format!(
                    "1D map curvature {:e} exceeds the bound {:e}",
                    b.max_second_diff, b.bound
                ));
            }
            if !b.monotone {
                ctx.fail("1D transport map is not monotone on the grid");
            }
            out["brenier_1d"] = serde_json::to_value(b).expect("report serializes");
        }
        (None, None) => {}
        _ => return Err(Abort::invalid("mu and nu must be given together")),
    }
    Ok(out)
}

fn run_hc(ctx: &mut Ctx, p: f64, q: f64, s: Option<f64>, alpha: f64, beta: f64) -> Step<Value> {
    let mut params = HCParams::from_pq(p, q, alpha, beta);
    if let Some(s) = s {
        params.s = s;
    }
    ctx.docs.push(serde_json::to_value(params).expect("params serialize"));
    params.validate()?;
    let r = ctx.timed("hc", || hc_report(&params))?;
    if r.corner_check.rel_diff > ctx.tol.corner {
        ctx.fail(format!(
            "closed-form constant and optimizer corner differ by {:e}",
            r.corner_check.rel_diff
        ));
    }
    Ok(serde_json::to_value(r).expect("report serializes"))
}

/// `{C, p, Q, inputs}` or `{T, dims, p, Q, inputs}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum MeasureProblem {
    Maps {
        #[serde(rename = "C")]
        c: Vec<Vec<Vec<f64>>>,
        p: Vec<f64>,
        #[serde(rename = "Q")]
        q: Vec<SymMatrix>,
        inputs: Vec<RawFunctionInput>,
    },
    Covariance {
        #[serde(rename = "T")]
        t: SymMatrix,
        dims: Vec<usize>,
        p: Vec<f64>,
        #[serde(rename = "Q")]
        q: Vec<SymMatrix>,
        inputs: Vec<RawFunctionInput>,
    },
}

fn run_gaussian_measure(ctx: &mut Ctx, path: &Path) -> Step<Value> {
    let prob: MeasureProblem = ctx.parse(path)?;
    let cfg = ctx.verify_config();
    let r: GaussianMeasureReport = match prob {
        MeasureProblem::Maps { c, p, q, inputs } => {
            let c = c
                .iter()
                .map(|m| matrix_from_rows(m))
                .collect::<blforge::Result<Vec<_>>>()?;
            ctx.timed("check", || gaussian_measure_check(&c, &p, &q, &inputs, &cfg))?
        }
        MeasureProblem::Covariance { t, dims, p, q, inputs } => {
            ctx.timed("check", || gaussian_vector_check(&t, &dims, &p, &q, &inputs, &cfg))?
        }
    };
    if !r.report.holds() {
        ctx.fail(format!(
            "Gaussian-measure inequality violated: slack {:e}",
            r.report.slack
        ));
    }
    Ok(serde_json::to_value(r).expect("report serializes"))
}

fn dispatch(ctx: &mut Ctx, cmd: &Cmd) -> Step<Value> {
    match cmd {
        Cmd::Check { datum } => run_check(ctx, datum),
        Cmd::Opt { datum } => run_opt(ctx, datum),
        Cmd::Verify {
            datum,
            inputs,
            bl,
            equality,
        } => run_verify(ctx, datum, inputs, *bl, *equality),
        Cmd::Reverse { datum, inputs, bl } => run_reverse(ctx, datum, inputs, *bl),
        Cmd::Reduce { datum } => run_reduce(ctx, datum),
        Cmd::Structure { datum } => run_structure(ctx, datum),
        Cmd::Heatflow { datum, inputs, t } => run_heatflow(ctx, datum, inputs, t),
        Cmd::Caffarelli { problem } => run_caffarelli(ctx, problem),
        Cmd::Hc { p, q, s, alpha, beta } => run_hc(ctx, *p, *q, *s, *alpha, *beta),
        Cmd::GaussianMeasure { file } => run_gaussian_measure(ctx, file),
    }
}

fn init_threads() {
    let Ok(v) = std::env::var("BLFORGE_THREADS") else {
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("blforge: could not size thread pool: {e}");
            }
        }
        _ => eprintln!("blforge: ignoring BLFORGE_THREADS={v:?}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();

    let mut tol = Tolerances::default();
    if let Some(t) = cli.global.tol_psd {
        tol.psd = t;
    }
    if let Some(t) = cli.global.tol_kkt {
        tol.kkt = t;
    }
    let mut ctx = Ctx {
        g: &cli.global,
        report: RunReport::new(cli.cmd.name(), cli.global.seed, tol.clone()),
        tol,
        docs: Vec::new(),
    };

    let outcome = dispatch(&mut ctx, &cli.cmd);
    let mut report = ctx.report;
    if !ctx.docs.is_empty() {
        let v = if ctx.docs.len() == 1 {
            ctx.docs.remove(0)
        } else {
            Value::Array(ctx.docs)
        };
        report.datum_digest = digest_value(&v);
    }
    match outcome {
        Ok(results) => {
            report.results = results;
            report.exit_code = if report.failures.is_empty() { 0 } else { 1 };
        }
        Err(abort) => {
            report.results = json!({ "error": abort.message });
            report.failures.push(abort.message);
            report.exit_code = abort.code;
        }
    }
    for f in &report.failures {
        eprintln!("blforge {}: {f}", report.command);
    }

    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(path) = &cli.global.out {
        if let Err(e) = fs::write(path, format!("{text}\n")) {
            eprintln!("blforge: writing {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    ExitCode::from(report.exit_code as u8)
}
