//! Experiment configuration: TOML with the sections `[problem]`, `[kernel]`,
//! `[solver]`, `[sweep]` and `[output]`. Missing keys take per-problem defaults.

use std::path::{Path, PathBuf};

use mbgp_core::kernels::KernelSpec;
use mbgp_core::problems::{ProblemKind, ProblemSpec};
use mbgp_core::reference::DEFAULT_QUAD_NODES;
use mbgp_core::solver::{Mode, Sampler, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    #[serde(default)]
    kernel: RawKernel,
    #[serde(default)]
    solver: RawSolver,
    sweep: Option<RawSweep>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: String,
    n_total: Option<usize>,
    n_interior: Option<usize>,
    nu: Option<f64>,
    collocation_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    sigma: Option<f64>,
    lengthscales: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    eta: Option<f64>,
    gamma: Option<f64>,
    rho: Option<f64>,
    lambda: Option<f64>,
    beta: Option<f64>,
    iterations: Option<usize>,
    batch_size: Option<usize>,
    gn_tol: Option<f64>,
    gn_max_iters: Option<usize>,
    mode: Option<ModeName>,
    sampler: Option<SamplerName>,
    clamp_bound: Option<f64>,
    seed: Option<u64>,
    record_every: Option<usize>,
    nugget_substitution: Option<bool>,
    metric_scaling: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    batch_sizes: Vec<usize>,
    realizations: Option<usize>,
    resample_collocation: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    timings: Option<bool>,
    error_grid: Option<bool>,
    grid_resolution: Option<[usize; 2]>,
    quad_nodes: Option<usize>,
    predict: Option<PredictName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemName {
    Elliptic,
    Burgers,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Elimination,
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerName {
    Neighborhood,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictName {
    Full,
    Neighborhood,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConfig {
    pub name: ProblemName,
    pub n_total: usize,
    pub n_interior: usize,
    pub nu: f64,
    pub collocation_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelConfig {
    /// Isotropic lengthscale, or `None` for the anisotropic family.
    pub sigma: Option<f64>,
    pub lengthscales: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSection {
    pub eta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub lambda: f64,
    pub beta: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub gn_tol: f64,
    pub gn_max_iters: usize,
    pub mode: ModeName,
    pub sampler: SamplerName,
    pub clamp_bound: Option<f64>,
    pub seed: u64,
    pub record_every: usize,
    pub nugget_substitution: bool,
    pub metric_scaling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub batch_sizes: Vec<usize>,
    pub realizations: usize,
    /// Draw a fresh collocation set per realization; otherwise one set is shared.
    pub resample_collocation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Fill the `wall_ms` column; off by default so files are reproducible.
    pub timings: bool,
    pub error_grid: bool,
    pub grid_resolution: [usize; 2],
    pub quad_nodes: usize,
    pub predict: PredictName,
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub kernel: KernelConfig,
    pub solver: SolverSection,
    pub sweep: Option<SweepConfig>,
    pub output: OutputConfig,
}

fn err(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {reason}"))
}

fn positive(key: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(err(key, format!("must be positive and finite, got {v}")))
    }
}

pub fn parse_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> CliResult<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> CliResult<ExperimentConfig> {
    let name = match raw.problem.name.as_str() {
        "elliptic" => ProblemName::Elliptic,
        "burgers" => ProblemName::Burgers,
        "linear" => ProblemName::Linear,
        other => return Err(err("problem.name", format!("unknown problem `{other}`"))),
    };
    let (default_total, n_interior) = match name {
        ProblemName::Elliptic => (1200, 900),
        ProblemName::Burgers => (2400, 2000),
        ProblemName::Linear => (256, 256),
    };
    let n_total = raw.problem.n_total.unwrap_or(default_total);
    // Without an explicit interior count the default interior fraction is kept.
    let n_interior = match raw.problem.n_interior {
        Some(n) => n,
        None if name == ProblemName::Linear => n_total,
        None => (n_total as f64 * n_interior as f64 / default_total as f64).round() as usize,
    };
    if n_interior == 0 || n_interior > n_total {
        return Err(err(
            "problem.n_interior",
            format!("need 1 <= n_interior <= n_total, got {n_interior} and {n_total}"),
        ));
    }
    if name == ProblemName::Linear && n_interior != n_total {
        return Err(err("problem.n_interior", "the linear problem has no boundary points"));
    }
    let nu = positive("problem.nu", raw.problem.nu.unwrap_or(0.2))?;
    if raw.problem.nu.is_some() && name != ProblemName::Burgers {
        return Err(err("problem.nu", "only the burgers problem has a viscosity"));
    }
    let problem = ProblemConfig {
        name,
        n_total,
        n_interior,
        nu,
        collocation_seed: raw.problem.collocation_seed.unwrap_or(0),
    };

    let kernel = match (raw.kernel.sigma, raw.kernel.lengthscales) {
        (Some(_), Some(_)) => return Err(err("kernel", "give either sigma or lengthscales, not both")),
        (Some(s), None) => KernelConfig {
            sigma: Some(positive("kernel.sigma", s)?),
            lengthscales: None,
        },
        (None, Some(ls)) => {
            if ls.len() != 2 {
                return Err(err("kernel.lengthscales", "need one lengthscale per axis (2)"));
            }
            for v in &ls {
                positive("kernel.lengthscales", *v)?;
            }
            KernelConfig {
                sigma: None,
                lengthscales: Some(ls),
            }
        }
        (None, None) => match name {
            ProblemName::Burgers => KernelConfig {
                sigma: None,
                lengthscales: Some(vec![0.3, 0.05]),
            },
            _ => KernelConfig {
                sigma: Some(0.2),
                lengthscales: None,
            },
        },
    };

    let base = match name {
        ProblemName::Elliptic => SolverConfig::elliptic(),
        ProblemName::Burgers => SolverConfig::burgers(),
        ProblemName::Linear => SolverConfig {
            eta: 1e-6,
            iterations: 400,
            batch_size: 8,
            ..SolverConfig::elliptic()
        },
    };
    let s = raw.solver;
    let default_mode = if name == ProblemName::Linear {
        ModeName::Penalty
    } else {
        ModeName::Elimination
    };
    let default_sampler = if name == ProblemName::Linear {
        SamplerName::Uniform
    } else {
        SamplerName::Neighborhood
    };
    let gamma = s.gamma.unwrap_or(base.gamma);
    let mode = s.mode.unwrap_or(default_mode);
    if name == ProblemName::Linear && mode == ModeName::Elimination {
        return Err(err(
            "solver.mode",
            "the linear problem has nothing to eliminate; use penalty",
        ));
    }
    let solver = SolverSection {
        eta: s.eta.unwrap_or(base.eta),
        gamma,
        rho: s.rho.unwrap_or(gamma),
        lambda: s.lambda.unwrap_or(base.lambda),
        beta: s.beta.unwrap_or(base.beta),
        iterations: s.iterations.unwrap_or(base.iterations),
        batch_size: s.batch_size.unwrap_or(base.batch_size),
        gn_tol: s.gn_tol.unwrap_or(base.gn_tol),
        gn_max_iters: s.gn_max_iters.unwrap_or(base.gn_max_iters),
        mode,
        sampler: s.sampler.unwrap_or(default_sampler),
        clamp_bound: s.clamp_bound,
        seed: s.seed.unwrap_or(base.seed),
        record_every: s.record_every.unwrap_or(base.record_every),
        nugget_substitution: s.nugget_substitution.unwrap_or(base.nugget_substitution),
        metric_scaling: s.metric_scaling.unwrap_or(base.metric_scaling),
    };

    let sweep = match raw.sweep {
        None => None,
        Some(sw) => {
            if sw.batch_sizes.is_empty() {
                return Err(err("sweep.batch_sizes", "must not be empty"));
            }
            let realizations = sw.realizations.unwrap_or(10);
            if realizations == 0 {
                return Err(err("sweep.realizations", "must be at least 1"));
            }
            Some(SweepConfig {
                batch_sizes: sw.batch_sizes,
                realizations,
                resample_collocation: sw.resample_collocation.unwrap_or(true),
            })
        }
    };

    let o = raw.output;
    let grid_resolution = o.grid_resolution.unwrap_or([100, 100]);
    if grid_resolution.iter().any(|&r| r < 2) {
        return Err(err("output.grid_resolution", "each resolution must be at least 2"));
    }
    let quad_nodes = o.quad_nodes.unwrap_or(DEFAULT_QUAD_NODES);
    if quad_nodes == 0 {
        return Err(err("output.quad_nodes", "must be at least 1"));
    }
    let output = OutputConfig {
        dir: o.dir.unwrap_or_else(|| PathBuf::from("out")),
        timings: o.timings.unwrap_or(false),
        error_grid: o.error_grid.unwrap_or(true),
        grid_resolution,
        quad_nodes,
        predict: o.predict.unwrap_or(PredictName::Full),
    };

    let cfg = ExperimentConfig {
        problem,
        kernel,
        solver,
        sweep,
        output,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    fn validate(&self) -> CliResult<()> {
        self.solver_config(self.solver.batch_size)
            .validate(self.problem.n_total)
            .map_err(|e| err("solver", e))?;
        if let Some(sw) = &self.sweep {
            for &m in &sw.batch_sizes {
                if m == 0 || m > self.problem.n_total {
                    return Err(err(
                        "sweep.batch_sizes",
                        format!("batch size {m} outside 1..={}", self.problem.n_total),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        match self.problem.name {
            ProblemName::Elliptic => ProblemSpec::elliptic(),
            ProblemName::Burgers => ProblemSpec::burgers(self.problem.nu).expect("validated viscosity"),
            ProblemName::Linear => ProblemSpec::linear(),
        }
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        match (&self.kernel.sigma, &self.kernel.lengthscales) {
            (Some(s), _) => KernelSpec::isotropic(*s, 2).expect("validated lengthscale"),
            (None, Some(ls)) => KernelSpec::anisotropic(ls).expect("validated lengthscales"),
            (None, None) => unreachable!("kernel resolved at parse time"),
        }
    }

    /// Core solver settings for one batch size.
    pub fn solver_config(&self, batch_size: usize) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            eta: s.eta,
            gamma: s.gamma,
            rho: s.rho,
            lambda: s.lambda,
            beta: s.beta,
            iterations: s.iterations,
            batch_size,
            gn_tol: s.gn_tol,
            gn_max_iters: s.gn_max_iters,
            mode: match s.mode {
                ModeName::Elimination => Mode::Elimination,
                ModeName::Penalty => Mode::Penalty,
            },
            sampler: match s.sampler {
                SamplerName::Neighborhood => Sampler::Neighborhood,
                SamplerName::Uniform => Sampler::Uniform,
            },
            clamp_bound: s.clamp_bound,
            seed: s.seed,
            record_every: s.record_every,
            nugget_substitution: s.nugget_substitution,
            metric_scaling: s.metric_scaling,
        }
    }

    pub fn kind(&self) -> ProblemKind {
        self.problem_spec().kind
    }
}
