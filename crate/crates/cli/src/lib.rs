//! Problem files and subcommands behind the `bregproj` binary.

use std::fs;
use std::path::{Path, PathBuf};

use bregproj::rates::{self, GreedySearchOptions, RateReport};
use bregproj::{
    estimate_rate, fixed_target, io, ot, run_batch, solve, ControlKind, ControlScheme, DMatrix, DVector,
    FeasibilityProblem, IterationTrace, LegendreSpec, OtAlgorithm, OtProblem, OtSpec, SketchFamily, SketchKind,
    SolveOptions, Status,
};
use bregproj::json::to_string_pretty;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bregproj::Error),
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Dense {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    /// `b` defaults to zero.
    MatrixMarket {
        mm_path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<f64>>,
    },
}

fn parse_error(path: &str, line: usize, e: &serde_json::Error) -> CliError {
    // serde_json appends " at line L column C"; the location is reported separately
    let text = e.to_string();
    let message = match text.rfind(" at line ") {
        Some(cut) => text[..cut].to_string(),
        None => text,
    };
    CliError::Parse { path: path.to_string(), line, column: e.column(), message }
}

/// On-disk problem description. Exactly one of `system` and `ot` is present.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legendre: Option<LegendreSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch: Option<SketchKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ot: Option<OtSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<SolveOptions>,
}

impl ProblemFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| parse_error(origin, e.line(), &e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Command-line overrides shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub control: Option<String>,
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub trace_every: Option<usize>,
    pub dc_trace: bool,
    pub out: Option<PathBuf>,
    pub csv: bool,
    pub sketch: Option<String>,
    pub trace: Option<PathBuf>,
    pub trials: Option<usize>,
    pub algo: Option<String>,
}

/// A problem file resolved into solver inputs.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: FeasibilityProblem,
    pub control: ControlScheme,
    pub options: SolveOptions,
    pub x_star: Option<DVector<f64>>,
    pub family: Option<SketchFamily>,
    pub ot: Option<OtProblem>,
}

fn resolve_control(file: Option<&ControlScheme>, flags: &Flags) -> Result<ControlScheme> {
    let mut scheme = file.cloned().unwrap_or_else(ControlScheme::cyclic);
    if let Some(name) = &flags.control {
        let parsed: ControlScheme = name.parse()?;
        let mu = match &scheme.kind {
            ControlKind::Random { mu } | ControlKind::Adaptive { mu } => mu.clone(),
            _ => None,
        };
        scheme.kind = match parsed.kind {
            ControlKind::Random { .. } => ControlKind::Random { mu },
            ControlKind::Adaptive { .. } => ControlKind::Adaptive { mu },
            other => other,
        };
    }
    if let Some(seed) = flags.seed {
        scheme.seed = seed;
    }
    Ok(scheme)
}

fn resolve_options(file: Option<&SolveOptions>, flags: &Flags) -> SolveOptions {
    let mut o = file.copied().unwrap_or_default();
    if let Some(v) = flags.max_iter {
        o.max_iterations = v;
    }
    if let Some(v) = flags.tol {
        o.stop_residual = v;
    }
    if let Some(v) = flags.trace_every {
        o.trace_every = v;
    }
    if flags.dc_trace || flags.csv {
        o.compute_dc = true;
    }
    o
}

/// Builds the feasibility problem described by `file`; `base` resolves relative `mm_path`s.
pub fn setup(file: &ProblemFile, base: &Path, flags: &Flags) -> Result<Setup> {
    let control = resolve_control(file.control.as_ref(), flags)?;
    let options = resolve_options(file.options.as_ref(), flags);
    let x0 = file.x0.as_ref().map(|x| DVector::from_vec(x.clone()));
    let (problem, family, ot_problem) = match (&file.system, &file.ot) {
        (Some(_), Some(_)) | (None, None) => return Err(usage("problem file needs exactly one of 'system' or 'ot'")),
        (None, Some(spec)) => {
            let p = OtProblem::try_from(spec.clone())?;
            let mut fp = ot::feasibility_problem(&p, false)?;
            if let Some(x0) = x0 {
                fp = fp.with_x0(x0)?;
            }
            (fp, None, Some(p))
        }
        (Some(system), None) => {
            let (a, b) = match system {
                SystemSpec::Dense { a, b } => (bregproj::linalg::matrix_from_rows(a)?, DVector::from_vec(b.clone())),
                SystemSpec::MatrixMarket { mm_path, b } => {
                    let a = io::read_matrix_market(&base.join(mm_path))?;
                    let b = b.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(a.nrows()));
                    (a, b)
                }
            };
            let spec = file.legendre.clone().ok_or_else(|| usage("problem file needs 'legendre'"))?;
            let f = spec.build(a.ncols())?;
            let kind = match &flags.sketch {
                Some(s) => s.parse::<SketchKind>()?.with_seed(control.seed),
                None => file.sketch.unwrap_or(SketchKind::Rows),
            };
            let family = SketchFamily::new(kind, a.clone(), b.clone())?;
            let sets = family.build_sets()?;
            let x0 = match x0 {
                Some(x) => x,
                None => f.gradient_zero_point()?,
            };
            let problem = FeasibilityProblem::new(f, sets, x0)?.with_intersection(family.full_system()?)?;
            (problem, Some(family), None)
        }
    };
    let x_star = file.x_star.as_ref().map(|x| DVector::from_vec(x.clone()));
    Ok(Setup { problem, control, options, x_star, family, ot: ot_problem })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_setup(path: &Path, flags: &Flags) -> Result<Setup> {
    setup(&ProblemFile::load(path)?, &base_dir(path), flags)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn out_dir(flags: &Flags) -> Result<PathBuf> {
    let dir = flags.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn status_code(status: Status) -> i32 {
    match status {
        Status::Converged => 0,
        Status::BudgetExhausted => 2,
    }
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn rates_json(trace: &IterationTrace) -> Value {
    match trace.dc_sequence().map(|dc| estimate_rate(&dc)) {
        Some(Ok((global, tail))) => json!({"global": global, "tail": tail}),
        _ => Value::Null,
    }
}

fn dc_csv(trace: &IterationTrace) -> String {
    let mut out = String::from("k,DC\n");
    if let Some(dc0) = trace.dc0 {
        out.push_str(&format!("0,{dc0:.16e}\n"));
    }
    for r in &trace.records {
        if let Some(dc) = r.dc {
            out.push_str(&format!("{},{dc:.16e}\n", r.k + 1));
        }
    }
    out
}

fn emit_run(trace: &IterationTrace, mut summary: Value, flags: &Flags) -> Result<PathBuf> {
    let dir = out_dir(flags)?;
    write(&dir.join("trace.jsonl"), &trace.to_jsonl())?;
    summary["status"] = json!(trace.status);
    summary["iterations"] = json!(trace.iterations);
    summary["final_residual"] = json!(trace.final_residual);
    summary["rates"] = rates_json(trace);
    write(&dir.join("summary.json"), &(to_string_pretty(&summary) + "\n"))?;
    if flags.csv {
        write(&dir.join("dc.csv"), &dc_csv(trace))?;
    }
    Ok(dir)
}

/// Runs the solver; returns the exit code (0 converged, 2 budget exhausted).
pub fn cmd_solve(path: &Path, flags: &Flags) -> Result<i32> {
    let s = load_setup(path, flags)?;
    let trace = solve(&s.problem, &s.control, &s.options)?;
    let summary = json!({
        "control": s.control,
        "legendre": LegendreSpec::from(&s.problem.f),
        "x_final": vec_json(&trace.x_final),
    });
    emit_run(&trace, summary, flags)?;
    Ok(status_code(trace.status))
}

/// Solves an OT problem file with a named algorithm.
pub fn cmd_ot(path: &Path, flags: &Flags) -> Result<i32> {
    let s = load_setup(path, flags)?;
    let problem = s.ot.ok_or_else(|| usage("the ot subcommand needs an 'ot' section"))?;
    let algo: OtAlgorithm = flags.algo.as_deref().unwrap_or("sinkhorn").parse()?;
    let (pi, trace) = ot::solve_ot_with(&problem, algo, s.control.seed, &s.options)?;
    let summary = json!({
        "algo": algo,
        "shape": problem.shape(),
        "marginal_residual": problem.marginal_residual(&pi),
        "kl_to_kernel": problem.kl_to_kernel(&pi),
        "pi": pi.data(),
    });
    emit_run(&trace, summary, flags)?;
    Ok(status_code(trace.status))
}

fn read_trace_dc(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: Value =
            serde_json::from_str(line).map_err(|e| parse_error(&path.display().to_string(), i + 1, &e))?;
        if let Some(dc) = rec.get("DC").and_then(Value::as_f64) {
            out.push(dc);
        }
    }
    Ok(out)
}

/// Rate constants at `x⋆` (from the file or `P_C(x_0)`), as a JSON report.
pub fn cmd_rates(path: &Path, flags: &Flags) -> Result<String> {
    let s = load_setup(path, flags)?;
    let x_star = match &s.x_star {
        Some(x) => x.clone(),
        None => fixed_target(&s.problem, &s.options.dual)?,
    };
    let weights = s.control.weights(s.problem.m())?;
    let exactness = s.family.as_ref().map(|f| f.is_exact(Some(&weights))).transpose()?;
    let report: RateReport =
        rates::rate_report(&s.problem.f, &s.problem.sets, Some(&weights), &x_star, exactness, &GreedySearchOptions::default())?;
    let mut out = serde_json::to_value(&report).expect("json");
    if let Some(family) = s.family.as_ref().filter(|f| f.kind() == SketchKind::Rows) {
        let (sg, sr) = rates::kaczmarz_rates(&s.problem.f, family.system().0, &x_star)?;
        out["kaczmarz"] = json!({"sigma_greedy": sg, "sigma_random": sr});
    }
    if let Some(trace_path) = &flags.trace {
        let dc = read_trace_dc(trace_path)?;
        let (global, tail) = estimate_rate(&dc)?;
        out["observed"] = json!({"global": global, "tail": tail});
        eprintln!("{:<24}{:>14}", "quantity", "value");
        eprintln!("{:<24}{:>14.6}", "predicted greedy", report.local_greedy_rate);
        eprintln!("{:<24}{:>14.6}", "predicted random", report.local_random_rate);
        eprintln!("{:<24}{:>14.6}", "observed tail", tail);
        eprintln!("{:<24}{:>14.6}", "observed global", global);
    }
    let text = to_string_pretty(&out) + "\n";
    if flags.out.is_some() {
        write(&out_dir(flags)?.join("rates.json"), &text)?;
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlAggregate {
    pub control: String,
    pub trials: usize,
    /// `E[D_C(x_k)]` for `k = 0..=horizon`, converged trials counting as zero.
    pub mean_dc: Vec<f64>,
    /// Pooled mean of `D_C(x_{k+1}) / D_C(x_k)` over all steps with `D_C(x_k) > 0`.
    pub mean_ratio: f64,
    /// Mean of the one-step ratio at `k = 0`.
    pub mean_first_ratio: f64,
    pub ratio_samples: usize,
    pub converged: usize,
}

fn aggregate(name: &str, traces: &[IterationTrace], horizon: usize) -> ControlAggregate {
    let mut mean_dc = vec![0.0; horizon + 1];
    let (mut ratio_sum, mut samples) = (0.0, 0usize);
    let (mut first_sum, mut first_n) = (0.0, 0usize);
    for t in traces {
        let dc = t.dc_sequence().expect("bench traces record D_C");
        for (k, slot) in mean_dc.iter_mut().enumerate() {
            *slot += dc.get(k).copied().unwrap_or(0.0);
        }
        for (k, w) in dc.windows(2).enumerate() {
            if w[0] > 0.0 {
                ratio_sum += w[1] / w[0];
                samples += 1;
                if k == 0 {
                    first_sum += w[1] / w[0];
                    first_n += 1;
                }
            }
        }
    }
    let n = traces.len().max(1) as f64;
    mean_dc.iter_mut().for_each(|v| *v /= n);
    ControlAggregate {
        control: name.to_string(),
        trials: traces.len(),
        mean_dc,
        mean_ratio: if samples > 0 { ratio_sum / samples as f64 } else { f64::NAN },
        mean_first_ratio: if first_n > 0 { first_sum / first_n as f64 } else { f64::NAN },
        ratio_samples: samples,
        converged: traces.iter().filter(|t| t.status == Status::Converged).count(),
    }
}

/// Paired-seed Monte-Carlo comparison of random and adaptive control.
/// Trial `t` of both controls uses random stream `t` of the same seed.
pub fn cmd_bench(path: &Path, flags: &Flags) -> Result<String> {
    let s = load_setup(path, flags)?;
    if !s.problem.all_affine() {
        return Err(usage("bench needs an affine family"));
    }
    let trials = flags.trials.unwrap_or(1000);
    if trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let mu = match &s.control.kind {
        ControlKind::Random { mu } | ControlKind::Adaptive { mu } => mu.clone(),
        _ => None,
    };
    let mut options = s.options;
    options.compute_dc = true;
    options.trace_every = 1;
    if flags.max_iter.is_none() && s.options.max_iterations == SolveOptions::default().max_iterations {
        options.max_iterations = 100;
    }
    let horizon = options.max_iterations;
    let mut results = Vec::new();
    for scheme in [ControlScheme::random(mu.clone(), s.control.seed), ControlScheme::adaptive(mu.clone(), s.control.seed)] {
        let traces = run_batch(&s.problem, &scheme, &options, trials)?;
        results.push(aggregate(scheme.name(), &traces, horizon));
    }
    let out = json!({
        "trials": trials,
        "seed": s.control.seed,
        "horizon": horizon,
        "random": results[0],
        "adaptive": results[1],
        "adaptive_over_random": results[1].mean_ratio / results[0].mean_ratio,
    });
    let text = to_string_pretty(&out) + "\n";
    if flags.out.is_some() {
        write(&out_dir(flags)?.join("bench.json"), &text)?;
    }
    Ok(text)
}

/// Dense system problem file, handy for tests and scripts.
pub fn dense_problem(legendre: LegendreSpec, a: &DMatrix<f64>, b: &DVector<f64>, control: ControlScheme) -> ProblemFile {
    ProblemFile {
        legendre: Some(legendre),
        system: Some(SystemSpec::Dense { a: bregproj::linalg::matrix_to_rows(a), b: b.as_slice().to_vec() }),
        control: Some(control),
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_reports_line() {
        let err = ProblemFile::parse("{\n  \"legendre\": {\"kind\": \"quadratic\"},\n  \"system\": [\n", "p.json").unwrap_err();
        match err {
            CliError::Parse { line, .. } => assert!(line >= 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exactly_one_of_system_or_ot() {
        let f = ProblemFile::default();
        assert!(setup(&f, Path::new("."), &Flags::default()).is_err());
    }

    #[test]
    fn flags_override_control() {
        let file = ControlScheme::random(Some(vec![0.25, 0.75]), 3);
        let flags = Flags { control: Some("adaptive".into()), seed: Some(9), ..Default::default() };
        let s = resolve_control(Some(&file), &flags).unwrap();
        assert_eq!(s, ControlScheme::adaptive(Some(vec![0.25, 0.75]), 9));
    }
}
