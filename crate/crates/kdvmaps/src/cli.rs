//! Command-line entry point: run configuration, commands and file output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::algebra::{re, C};
use crate::error::Error;
use crate::maps::{extract_u, lattice_evolve, lattice_residual, FlowConfig};
use crate::models::{BranchSign, Model, ModelId, PhasePoint};
use crate::riemann::jacobi_linearity_residual;
use crate::spectral::spectral_curve;
use crate::verify::{random_instance, run_suite, Check, Instance, SuiteConfig};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// File names written under the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub u_grid: String,
    pub simulate_sidecar: String,
    pub report: String,
    pub curve: String,
    pub jacobi: String,
    pub jacobi_sidecar: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            u_grid: "u.csv".into(),
            simulate_sidecar: "simulate.json".into(),
            report: "report.json".into(),
            curve: "curve.json".into(),
            jacobi: "jacobi.csv".into(),
            jacobi_sidecar: "jacobi.json".into(),
        }
    }
}

/// A run as read from JSON. Without `alpha`, `p0`, `q0`, `beta1` and `beta2`
/// the instance is drawn from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelId,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<C>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec<C>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<C>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<C>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<C>,
    #[serde(default = "plus_one")]
    pub sigma1: i32,
    #[serde(default = "plus_one")]
    pub sigma2: i32,
    #[serde(rename = "M", default = "default_grid")]
    pub m: usize,
    #[serde(rename = "N_steps", default = "default_grid")]
    pub n_steps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Orbit length for `verify` (default 100) and `jacobi` (default 10).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<Check>>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub outputs: OutputPaths,
    /// Test hook: perturb every map step in `verify`.
    #[serde(default)]
    pub corrupt_map: bool,
}

fn plus_one() -> i32 {
    1
}

fn default_grid() -> usize {
    20
}

fn default_seed() -> u64 {
    42
}

/// `alpha`, `p0`, `q0`, `beta1`, `beta2`.
type Explicit<'a> = (&'a Vec<C>, &'a Vec<C>, &'a Vec<C>, C, C);

/// Built-in configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fixture {
    FixedPoint,
    LpmkdvUnit,
    LskdvUnit,
}

impl RunConfig {
    /// A random instance of `model` with the default settings.
    pub fn random(model: ModelId, n: usize, seed: u64) -> Self {
        RunConfig {
            model,
            n,
            alpha: None,
            p0: None,
            q0: None,
            beta1: None,
            beta2: None,
            sigma1: 1,
            sigma2: 1,
            m: default_grid(),
            n_steps: default_grid(),
            seed,
            steps: None,
            checks: None,
            tolerances: BTreeMap::new(),
            outputs: OutputPaths::default(),
            corrupt_map: false,
        }
    }

    pub fn fixture(f: Fixture) -> Self {
        let (model, beta1, beta2, sigma) = match f {
            Fixture::FixedPoint => (ModelId::LpKdV, re(-1.0), re(-1.0), -1),
            Fixture::LpmkdvUnit => (ModelId::LpmKdV, re(1.5), re(2.5), 1),
            Fixture::LskdvUnit => (ModelId::LSKdV, re(3.0), re(5.0), 1),
        };
        RunConfig {
            alpha: Some(vec![re(2.0)]),
            p0: Some(vec![re(1.0)]),
            q0: Some(vec![re(1.0)]),
            beta1: Some(beta1),
            beta2: Some(beta2),
            sigma1: sigma,
            sigma2: sigma,
            m: 4,
            n_steps: 4,
            ..RunConfig::random(model, 1, default_seed())
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    fn explicit(&self) -> Option<Explicit<'_>> {
        Some((self.alpha.as_ref()?, self.p0.as_ref()?, self.q0.as_ref()?, self.beta1?, self.beta2?))
    }

    /// Checks the schema-level invariants and the spectrum.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        if self.n == 0 {
            return cfg("N must be at least 1".into());
        }
        BranchSign::from_i32(self.sigma1)?;
        BranchSign::from_i32(self.sigma2)?;
        for name in self.tolerances.keys() {
            if !Check::ALL.iter().any(|c| c.name() == *name) {
                return cfg(format!("unknown tolerance name {name:?}"));
            }
        }
        if let Some(&t) = self.tolerances.values().find(|t| !(t.is_finite() && **t > 0.0)) {
            return cfg(format!("tolerance {t} must be positive"));
        }
        let given = [self.alpha.is_some(), self.p0.is_some(), self.q0.is_some(), self.beta1.is_some(), self.beta2.is_some()];
        match self.explicit() {
            Some((alpha, p, q, _, _)) => {
                if alpha.len() != self.n || p.len() != self.n || q.len() != self.n {
                    return cfg(format!("alpha, p0 and q0 must have N = {} entries", self.n));
                }
                Model::new(self.model, alpha.clone())?;
            }
            None if given.iter().any(|&g| g) => {
                return cfg("alpha, p0, q0, beta1 and beta2 must be given together".into());
            }
            None => {}
        }
        Ok(())
    }

    /// The explicit instance, or a random admissible draw from `seed`.
    pub fn instance(&self) -> Result<Instance, CliError> {
        match self.explicit() {
            Some((alpha, p, q, b1, b2)) => Ok(Instance {
                model: Model::new(self.model, alpha.clone())?,
                x: PhasePoint::new(p.clone(), q.clone()),
                flow1: FlowConfig::new(b1, BranchSign::from_i32(self.sigma1)?),
                flow2: FlowConfig::new(b2, BranchSign::from_i32(self.sigma2)?),
            }),
            None => Ok(random_instance(self.model, self.n, self.seed)?),
        }
    }

    pub fn tolerance(&self, check: Check) -> f64 {
        self.tolerances.get(&check.name()).copied().unwrap_or_else(|| check.default_tolerance())
    }

    pub fn suite_config(&self) -> Result<SuiteConfig, CliError> {
        let mut s = SuiteConfig::new(self.model, self.n, self.seed);
        s.instance = self.explicit().map(|_| self.instance()).transpose()?;
        s.checks = self.checks.clone();
        s.tolerances = self.tolerances.clone();
        s.steps = self.steps.unwrap_or(s.steps);
        s.grid = self.m;
        s.corrupt_map = self.corrupt_map;
        Ok(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Engine(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Engine(Error::Config(_)) => EXIT_CONFIG,
            CliError::Engine(_) => EXIT_NUMERICAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kdvmaps", version, about = "Integrable maps and finite-genus solutions of lattice KdV-type equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, global = true, value_enum, conflicts_with = "config")]
    pub fixture: Option<Fixture>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for random instances; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Evolve the lattice and write the u-grid.
    Simulate,
    /// Run the verification suite.
    Verify,
    /// Write the spectral curve.
    Curve,
    /// Write the Abel-Jacobi linearity residuals.
    Jacobi,
}

impl Cli {
    pub fn load_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, self.fixture) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::from_json(&text)?
            }
            (None, Some(f)) => RunConfig::fixture(f),
            (None, None) => RunConfig::random(ModelId::LpKdV, 2, default_seed()),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("kdvmaps: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    let cfg = cli.load_config()?;
    fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &cli.out),
        Command::Verify => cmd_verify(&cfg, &cli.out),
        Command::Curve => cmd_curve(&cfg, &cli.out),
        Command::Jacobi => cmd_jacobi(&cfg, &cli.out),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Shortest round-trip decimal; never locale-dependent.
fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Writes the u-grid CSV and its JSON sidecar.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let inst = cfg.instance()?;
    let grid = lattice_evolve(&inst.model, &inst.flow1, &inst.flow2, &inst.x, cfg.m, cfg.n_steps)?;
    let field = extract_u(&grid)?;
    let stats = lattice_residual(inst.model.id, &field, inst.flow1.beta, inst.flow2.beta);
    let mut csv = String::from("m,n,re_u,im_u\n");
    for (m, row) in field.u.iter().enumerate() {
        for (n, u) in row.iter().enumerate() {
            writeln!(csv, "{m},{n},{},{}", num(u.re), num(u.im)).expect("write to string");
        }
    }
    fs::write(out.join(&cfg.outputs.u_grid), csv)?;
    let mut corners = Vec::new();
    for (m, n) in [(0, 0), (cfg.m, 0), (0, cfg.n_steps), (cfg.m, cfg.n_steps)] {
        let values = inst.model.integrals(&grid.states[m][n])?;
        corners.push(json!({ "m": m, "n": n, "integrals": values }));
    }
    let sidecar = json!({
        "model": inst.model.id,
        "alpha": inst.model.alpha,
        "M": cfg.m,
        "N_steps": cfg.n_steps,
        "gauge": field.gauge,
        "branches": { "flow1": inst.flow1, "flow2": inst.flow2 },
        "residual": stats,
        "path_residual": field.path_residual,
        "commutativity": grid.commutativity,
        "corners": corners,
    });
    write_json(&out.join(&cfg.outputs.simulate_sidecar), &sidecar)?;
    println!("max lattice residual {:e}, mean {:e}", stats.max, stats.mean);
    let tol = cfg.tolerance(Check::Lattice);
    if stats.max <= tol {
        Ok(EXIT_PASS)
    } else {
        eprintln!("lattice residual {:e} exceeds {tol:e}", stats.max);
        Ok(EXIT_CHECK_FAILURE)
    }
}

/// Runs the suite, writes the report and prints one line per check.
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let report = run_suite(&cfg.suite_config()?)?;
    write_json(&out.join(&cfg.outputs.report), &report)?;
    for c in &report.checks {
        let r = c.residual.map_or_else(|| "aborted".to_owned(), |r| format!("{r:.3e}"));
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<18} residual {r:>10} tolerance {:.1e}", c.name, c.tolerance);
    }
    if report.passed {
        Ok(EXIT_PASS)
    } else {
        eprintln!("failed checks: {}", report.failed().join(", "));
        Ok(EXIT_CHECK_FAILURE)
    }
}

pub fn cmd_curve(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let inst = cfg.instance()?;
    let curve = spectral_curve(&inst.model, &inst.x)?;
    write_json(&out.join(&cfg.outputs.curve), &curve)?;
    println!("genus {}, degenerate {}", curve.genus, curve.degenerate);
    Ok(EXIT_PASS)
}

/// Writes the per-step residuals and the period data.
pub fn cmd_jacobi(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let inst = cfg.instance()?;
    let report = jacobi_linearity_residual(&inst.model, &inst.flow1, &inst.x, cfg.steps.unwrap_or(10))?;
    let mut csv = String::from("m,residual\n");
    for (m, r) in report.residuals.iter().enumerate() {
        writeln!(csv, "{m},{}", num(*r)).expect("write to string");
    }
    fs::write(out.join(&cfg.outputs.jacobi), csv)?;
    let sidecar = json!({
        "B": report.periods.bmat,
        "homology": report.periods.homology,
        "best": report.best_label(),
        "max_residual": report.max_residual(),
        "candidates": report.candidates,
    });
    write_json(&out.join(&cfg.outputs.jacobi_sidecar), &sidecar)?;
    let tol = cfg.tolerance(Check::JacobiLinearity);
    println!("max residual {:e} ({})", report.max_residual(), report.best_label());
    Ok(if report.max_residual() <= tol { EXIT_PASS } else { EXIT_CHECK_FAILURE })
}
