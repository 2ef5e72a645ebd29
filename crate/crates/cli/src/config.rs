//! TOML run configuration. Every section is optional; unknown keys are
//! rejected and all values are validated before any computation starts.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::Deserialize;

use dsm_core::benchmarks::{benchmark, Benchmark, BenchmarkName, BenchmarkParams};
use dsm_core::feigenbaum::{default_schedule, ContinuationOptions, Partition};
use dsm_core::flows::FlowKind;
use dsm_core::inequality_lab::Scenario;
use dsm_core::integrator::IntegratorConfig;
use dsm_core::schedules::Schedule;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub schedule: Option<Schedule>,
    pub integrator: IntegratorOverrides,
    pub solve: SolveSection,
    pub feigenbaum: FeigenbaumSection,
    pub inequality: InequalitySection,
    pub rates: RatesSection,
    pub check: CheckSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub benchmark: Option<String>,
    pub m: Option<u32>,
    pub v_scale: Option<f64>,
}

/// Partial integrator settings laid over a command-specific base.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOverrides {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub h_init: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub t_max: Option<f64>,
    pub residual_stop: Option<f64>,
    pub max_steps: Option<usize>,
}

impl IntegratorOverrides {
    pub fn apply(&self, mut base: IntegratorConfig) -> IntegratorConfig {
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { base.$f = v; } )*};
        }
        set!(rel_tol, abs_tol, h_init, h_min, h_max, t_max, residual_stop, max_steps);
        base
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub method: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeigenbaumSection {
    pub z: Option<Vec<f64>>,
    pub methods: Option<Vec<String>>,
    pub n_max: Option<usize>,
    pub partition: Option<Partition>,
    pub accept_residual: Option<f64>,
    pub patience: Option<usize>,
    pub seed: Option<f64>,
    pub newton_schedule: Option<Schedule>,
    pub gn_schedule: Option<Schedule>,
    pub integrator: IntegratorOverrides,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InequalitySection {
    pub scenario: Option<String>,
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    pub method: Option<String>,
    pub points: Option<usize>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub schedules: Vec<Schedule>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("dsm-out"))
    }

    /// Benchmark named by the config, or `fallback`.
    pub fn benchmark(&self, fallback: BenchmarkName) -> anyhow::Result<Benchmark> {
        let name = match &self.problem.benchmark {
            Some(s) => s.parse::<BenchmarkName>()?,
            None => fallback,
        };
        let d = BenchmarkParams::default();
        let params = BenchmarkParams { m: self.problem.m.unwrap_or(d.m), v_scale: self.problem.v_scale.unwrap_or(d.v_scale) };
        Ok(benchmark(name, &params)?)
    }

    pub fn schedule_or(&self, fallback: Schedule) -> anyhow::Result<Schedule> {
        let s = self.schedule.unwrap_or(fallback);
        s.validate().context("schedule")?;
        Ok(s)
    }

    pub fn integrator(&self, base: IntegratorConfig) -> anyhow::Result<IntegratorConfig> {
        let cfg = self.integrator.apply(base);
        cfg.validate().context("integrator")?;
        Ok(cfg)
    }
}

pub fn parse_method(s: &str) -> anyhow::Result<FlowKind> {
    Ok(s.parse::<FlowKind>()?)
}

/// Validated inputs of the Feigenbaum sweep.
#[derive(Debug, Clone)]
pub struct FeigenbaumPlan {
    pub z: Vec<f64>,
    pub methods: Vec<(FlowKind, Schedule)>,
    pub options: ContinuationOptions,
}

impl FeigenbaumSection {
    pub fn plan(&self) -> anyhow::Result<FeigenbaumPlan> {
        let z = self.z.clone().unwrap_or_else(|| vec![2.0]);
        if z.is_empty() {
            bail!("feigenbaum.z must list at least one degree");
        }
        if let Some(bad) = z.iter().find(|v| !(**v >= 2.0) || !v.is_finite()) {
            bail!("feigenbaum.z entries must be finite and >= 2, got {bad}");
        }
        let names = self.methods.clone().unwrap_or_else(|| vec!["newton".into(), "gn-sourcewise".into()]);
        if names.is_empty() {
            bail!("feigenbaum.methods must list at least one method");
        }
        let mut methods = Vec::new();
        for name in &names {
            let kind = parse_method(name)?;
            let schedule = match kind {
                FlowKind::RegNewton => self.newton_schedule,
                FlowKind::RegGnSourcewise => self.gn_schedule,
                other => bail!("feigenbaum supports the newton and gn-sourcewise methods, got {other}"),
            }
            .unwrap_or_else(|| default_schedule(kind));
            schedule.validate().with_context(|| format!("{kind} schedule"))?;
            methods.push((kind, schedule));
        }
        let d = ContinuationOptions::default();
        let options = ContinuationOptions {
            n_max: self.n_max.unwrap_or(d.n_max),
            partition: self.partition.unwrap_or(d.partition),
            integrator: self.integrator.apply(d.integrator),
            accept_residual: self.accept_residual.unwrap_or(d.accept_residual),
            patience: self.patience.unwrap_or(d.patience),
            seed: self.seed.or(d.seed),
        };
        options.validate().map_err(|e| anyhow!("feigenbaum options: {e}"))?;
        Ok(FeigenbaumPlan { z, methods, options })
    }
}

impl InequalitySection {
    pub fn scenario(&self) -> anyhow::Result<Scenario> {
        let name = self.scenario.as_deref().ok_or_else(|| anyhow!("inequality.scenario is required"))?;
        Ok(name.parse::<Scenario>()?)
    }

    pub fn horizon(&self) -> anyhow::Result<Option<f64>> {
        match self.t_max {
            Some(t) if !(t > 0.0 && t.is_finite()) => bail!("inequality.t_max must be positive and finite, got {t}"),
            t => Ok(t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[problem]\nbenchmrk = \"x\"").is_err());
        assert!(toml::from_str::<RunConfig>("[schedule]\nkind = \"power\"\neps0 = 1.0\nt0 = 2.0\nnu = 0.5\nmu = 1.0").is_err());
        assert!(toml::from_str::<RunConfig>("[extra]\na = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[integrator]\nrtol = 1e-6").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [problem]
            benchmark = "scalar-power-m"
            m = 2
            [schedule]
            kind = "power"
            eps0 = 1.0
            t0 = 2.0
            nu = 1.0
            [integrator]
            t_max = 50.0
            [feigenbaum]
            z = [13, 14]
            n_max = 8
            newton_schedule = { kind = "exp", eps0 = 1e-10, nu = 0.5 }
            [check]
            schedules = [{ kind = "log", eps0 = 1.0, t0 = 3.0 }]
            "#,
        )
        .unwrap();
        let b = cfg.benchmark(BenchmarkName::ScalarCubic).unwrap();
        assert_eq!(b.name, BenchmarkName::ScalarPowerM);
        assert_eq!(b.problem.n2, Some(2.0));
        let i = cfg.integrator(IntegratorConfig::default()).unwrap();
        assert_eq!(i.t_max, 50.0);
        assert_eq!(i.rel_tol, IntegratorConfig::default().rel_tol);
        let plan = cfg.feigenbaum.plan().unwrap();
        assert_eq!(plan.z, vec![13.0, 14.0]);
        assert_eq!(plan.options.n_max, 8);
        assert_eq!(plan.methods.len(), 2);
        assert_eq!(cfg.check.schedules.len(), 1);
    }

    #[test]
    fn invalid_values_are_reported() {
        let cfg: RunConfig = toml::from_str("[schedule]\nkind = \"power\"\neps0 = 1.0\nt0 = 2.0\nnu = 0.0").unwrap();
        let err = cfg.schedule_or(Schedule::Exp { eps0: 1.0, nu: 1.0 }).unwrap_err();
        assert!(format!("{err:#}").contains("nu must be positive"));
        let cfg: RunConfig = toml::from_str("[feigenbaum]\nz = [1.5]").unwrap();
        assert!(cfg.feigenbaum.plan().is_err());
        let cfg: RunConfig = toml::from_str("[feigenbaum]\nmethods = [\"simple\"]").unwrap();
        assert!(cfg.feigenbaum.plan().is_err());
        let cfg: RunConfig = toml::from_str("[integrator]\nh_min = -1.0").unwrap();
        assert!(cfg.integrator(IntegratorConfig::default()).is_err());
    }
}
