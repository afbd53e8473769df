//! Experiment configuration files.
//!
//! A config is a TOML document with the sections `problem`, `kernel`,
//! `method` (an array of tables), `run` and `output`. Fields that do not apply
//! to the chosen problem or method kind are rejected rather than ignored.
//! After [`ExperimentConfig::resolve`] every tunable carries an explicit
//! value, so the resolved config doubles as the run manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::defaults::{Family, DEFAULT_INITIAL_RADIUS};
use super::problem::GroundTruthConfig;
use crate::baselines::StepRule;
use crate::error::{Error, Result};
use crate::model::{BayesNetConfig, SnlpConfig};
use crate::trustregion::nystrom_size;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(rename = "method", default)]
    pub methods: Vec<MethodConfig>,
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    BayesNet,
    Snlp,
    Gaussian,
    /// A `problem.json` written by an earlier run or by `generate`.
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    ThirtyNode,
    EightyNode,
    Small,
    Large,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Generator seed for presets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bayes_net: Option<BayesNetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snlp: Option<SnlpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Row of the hyperparameter table used for defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defaults: Option<Family>,
    #[serde(default)]
    pub ground_truth: GroundTruthConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscale: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    TrSviAt,
    TrSviKl,
    MpSvgd,
    Svgd,
    SvnCtr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Static,
    Decayed,
    Adagrad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    /// Output directory name; must be unique.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Overrides `run.iterations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nystrom_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub particles: usize,
    pub iterations: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    /// Worker threads, `0` for all cores. Not written to the manifest since
    /// it has no effect on results.
    #[serde(default, skip_serializing)]
    pub workers: usize,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Fill the `wall_ms` trace column and write `timings.json`.
    #[serde(default = "yes")]
    pub record_timings: bool,
    /// Write final samples and ground truth in the packed `.bin` format.
    #[serde(default)]
    pub binary_samples: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            record_timings: true,
            binary_samples: false,
        }
    }
}

/// A method with every parameter filled in.
#[derive(Clone, Debug, PartialEq)]
pub enum MethodPlan {
    TrSviAt,
    TrSviKl {
        initial_radius: f64,
        nystrom_size: usize,
    },
    MpSvgd {
        rule: StepRule,
        step: f64,
    },
    Svgd {
        step: f64,
    },
    SvnCtr {
        radius: f64,
    },
}

impl MethodKind {
    fn name(self) -> &'static str {
        match self {
            MethodKind::TrSviAt => "tr_svi_at",
            MethodKind::TrSviKl => "tr_svi_kl",
            MethodKind::MpSvgd => "mp_svgd",
            MethodKind::Svgd => "svgd",
            MethodKind::SvnCtr => "svn_ctr",
        }
    }
}

impl RuleName {
    fn name(self) -> &'static str {
        match self {
            RuleName::Static => "static",
            RuleName::Decayed => "decayed",
            RuleName::Adagrad => "adagrad",
        }
    }
}

fn positive(path: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn absent<T>(field: &Option<T>, path: impl FnOnce() -> String, why: &str) -> Result<()> {
    match field {
        Some(_) => Err(Error::config(path(), why.to_string())),
        None => Ok(()),
    }
}

fn required<T: Clone>(field: &Option<T>, path: impl FnOnce() -> String, why: &str) -> Result<T> {
    field
        .clone()
        .ok_or_else(|| Error::config(path(), why.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::config(path, inner.message().to_string())
        })
    }

    /// Reads a config file; a relative `problem.path` is taken relative to
    /// the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(p) = cfg.problem.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Validates the config and fills every default that does not depend on
    /// the generated problem.
    pub fn resolve(&mut self) -> Result<()> {
        self.problem.resolve()?;
        let family = self.problem.defaults;
        let table = family.map(Family::hyperparameters);

        let ell = match (self.kernel.lengthscale, table) {
            (Some(l), _) => l,
            (None, Some(t)) => t.lengthscale,
            (None, None) => {
                return Err(Error::config(
                    "kernel.lengthscale",
                    "required when `problem.defaults` names no hyperparameter row",
                ))
            }
        };
        self.kernel.lengthscale = Some(positive("kernel.lengthscale", ell)?);

        if self.run.particles == 0 {
            return Err(Error::config("run.particles", "need at least one particle"));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds", "need at least one seed"));
        }
        let distinct: BTreeSet<_> = self.run.seeds.iter().collect();
        if distinct.len() != self.run.seeds.len() {
            return Err(Error::config("run.seeds", "seeds must be distinct"));
        }
        if let Some(s) = self.run.init_scale {
            positive("run.init_scale", s)?;
        }
        if self.methods.is_empty() {
            return Err(Error::config(
                "method",
                "at least one [[method]] table is required",
            ));
        }

        let n = self.run.particles;
        let iterations = self.run.iterations;
        let mut labels = BTreeSet::new();
        for (i, m) in self.methods.iter_mut().enumerate() {
            m.resolve(i, n, iterations, table)?;
            let label = m.label.clone().unwrap_or_default();
            if !labels.insert(label.clone()) {
                return Err(Error::config(
                    format!("method[{i}].label"),
                    format!("duplicate label `{label}`"),
                ));
            }
        }
        Ok(())
    }

    /// Resolved lengthscale. Panics before [`Self::resolve`].
    pub fn lengthscale(&self) -> f64 {
        self.kernel.lengthscale.expect("config not resolved")
    }
}

impl ProblemConfig {
    /// Validates the section and expands presets into generator settings.
    pub fn resolve(&mut self) -> Result<()> {
        let kind = self.kind;
        let only = |what: &str| format!("not used by problem kind `{}`", what);
        let kind_name = match kind {
            ProblemKind::BayesNet => "bayes_net",
            ProblemKind::Snlp => "snlp",
            ProblemKind::Gaussian => "gaussian",
            ProblemKind::File => "file",
        };
        if kind != ProblemKind::BayesNet {
            absent(
                &self.bayes_net,
                || "problem.bayes_net".into(),
                &only(kind_name),
            )?;
        }
        if kind != ProblemKind::Snlp {
            absent(&self.snlp, || "problem.snlp".into(), &only(kind_name))?;
        }
        if kind != ProblemKind::Gaussian {
            absent(&self.mean, || "problem.mean".into(), &only(kind_name))?;
            absent(
                &self.covariance,
                || "problem.covariance".into(),
                &only(kind_name),
            )?;
        }
        if kind != ProblemKind::File {
            absent(&self.path, || "problem.path".into(), &only(kind_name))?;
        }
        match kind {
            ProblemKind::BayesNet => {
                let generated = match self.preset {
                    Some(Preset::ThirtyNode) => Some((
                        BayesNetConfig::thirty_node(self.seed.unwrap_or(0)),
                        Family::BayesNet30,
                    )),
                    Some(Preset::EightyNode) => Some((
                        BayesNetConfig::eighty_node(self.seed.unwrap_or(0)),
                        Family::BayesNet80,
                    )),
                    Some(_) => {
                        return Err(Error::config(
                            "problem.preset",
                            "Bayes net presets are `thirty_node` and `eighty_node`",
                        ))
                    }
                    None => None,
                };
                match generated {
                    Some((cfg, family)) => {
                        if self.bayes_net.as_ref().is_some_and(|c| *c != cfg) {
                            return Err(Error::config(
                                "problem.bayes_net",
                                "give either `preset` or a [problem.bayes_net] table",
                            ));
                        }
                        self.seed.get_or_insert(0);
                        self.bayes_net = Some(cfg);
                        self.defaults.get_or_insert(family);
                    }
                    None => {
                        required(
                            &self.bayes_net,
                            || "problem.bayes_net".into(),
                            "required without a preset",
                        )?;
                        absent(
                            &self.seed,
                            || "problem.seed".into(),
                            "set the seed inside [problem.bayes_net]",
                        )?;
                    }
                }
            }
            ProblemKind::Snlp => {
                let generated = match self.preset {
                    Some(Preset::Small) => {
                        Some((SnlpConfig::small(self.seed.unwrap_or(0)), Family::SnlpSmall))
                    }
                    Some(Preset::Large) => {
                        Some((SnlpConfig::large(self.seed.unwrap_or(0)), Family::SnlpLarge))
                    }
                    Some(_) => {
                        return Err(Error::config(
                            "problem.preset",
                            "sensor network presets are `small` and `large`",
                        ))
                    }
                    None => None,
                };
                match generated {
                    Some((cfg, family)) => {
                        if self.snlp.as_ref().is_some_and(|c| *c != cfg) {
                            return Err(Error::config(
                                "problem.snlp",
                                "give either `preset` or a [problem.snlp] table",
                            ));
                        }
                        self.seed.get_or_insert(0);
                        self.snlp = Some(cfg);
                        self.defaults.get_or_insert(family);
                    }
                    None => {
                        required(
                            &self.snlp,
                            || "problem.snlp".into(),
                            "required without a preset",
                        )?;
                        absent(
                            &self.seed,
                            || "problem.seed".into(),
                            "set the seed inside [problem.snlp]",
                        )?;
                    }
                }
            }
            ProblemKind::Gaussian => {
                absent(&self.preset, || "problem.preset".into(), &only(kind_name))?;
                absent(&self.seed, || "problem.seed".into(), &only(kind_name))?;
                let mean = required(
                    &self.mean,
                    || "problem.mean".into(),
                    "required for a Gaussian target",
                )?;
                let cov = required(
                    &self.covariance,
                    || "problem.covariance".into(),
                    "required for a Gaussian target",
                )?;
                if cov.len() != mean.len() || cov.iter().any(|r| r.len() != mean.len()) {
                    let d = mean.len();
                    return Err(Error::config(
                        "problem.covariance",
                        format!("must be {d} x {d} to match `mean`"),
                    ));
                }
            }
            ProblemKind::File => {
                absent(&self.preset, || "problem.preset".into(), &only(kind_name))?;
                absent(&self.seed, || "problem.seed".into(), &only(kind_name))?;
                required(
                    &self.path,
                    || "problem.path".into(),
                    "required for kind `file`",
                )?;
            }
        }
        let gt = &self.ground_truth;
        if kind != ProblemKind::Snlp && kind != ProblemKind::File {
            let why = "Markov chain settings apply only to sensor networks";
            absent(&gt.chains, || "problem.ground_truth.chains".into(), why)?;
            absent(
                &gt.proposal_scale,
                || "problem.ground_truth.proposal_scale".into(),
                why,
            )?;
            absent(&gt.burn_in, || "problem.ground_truth.burn_in".into(), why)?;
            absent(&gt.thinning, || "problem.ground_truth.thinning".into(), why)?;
        }
        if let Some(s) = gt.proposal_scale {
            positive("problem.ground_truth.proposal_scale", s)?;
        }
        if gt.chains == Some(0) {
            return Err(Error::config(
                "problem.ground_truth.chains",
                "need at least one chain",
            ));
        }
        if gt.thinning == Some(0) {
            return Err(Error::config(
                "problem.ground_truth.thinning",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

impl MethodConfig {
    fn resolve(
        &mut self,
        index: usize,
        particles: usize,
        run_iterations: usize,
        table: Option<super::defaults::Hyperparameters>,
    ) -> Result<()> {
        let at = |field: &str| format!("method[{index}].{field}");
        let kind = self.kind.name();
        let unused = format!("not used by method kind `{kind}`");
        let keep_initial_radius = self.kind == MethodKind::TrSviKl;
        let keep_nystrom = self.kind == MethodKind::TrSviKl;
        let keep_rule = self.kind == MethodKind::MpSvgd;
        let keep_step = matches!(self.kind, MethodKind::MpSvgd | MethodKind::Svgd);
        let keep_radius = self.kind == MethodKind::SvnCtr;
        if !keep_initial_radius {
            absent(&self.initial_radius, || at("initial_radius"), &unused)?;
        }
        if !keep_nystrom {
            absent(&self.nystrom_size, || at("nystrom_size"), &unused)?;
        }
        if !keep_rule {
            absent(&self.rule, || at("rule"), &unused)?;
            absent(&self.decay, || at("decay"), &unused)?;
        }
        if !keep_step {
            absent(&self.step, || at("step"), &unused)?;
        }
        if !keep_radius {
            absent(&self.radius, || at("radius"), &unused)?;
        }
        self.iterations.get_or_insert(run_iterations);

        let no_table = "required when `problem.defaults` names no hyperparameter row";
        let default_label = match self.kind {
            MethodKind::TrSviKl => {
                let r = self.initial_radius.unwrap_or(DEFAULT_INITIAL_RADIUS);
                self.initial_radius = Some(positive(&at("initial_radius"), r)?);
                let m = self.nystrom_size.unwrap_or_else(|| nystrom_size(particles));
                if m == 0 || m > particles {
                    return Err(Error::config(
                        at("nystrom_size"),
                        format!("must lie in 1..={particles}"),
                    ));
                }
                self.nystrom_size = Some(m);
                kind.to_string()
            }
            MethodKind::MpSvgd => {
                let rule = *self.rule.get_or_insert(RuleName::Decayed);
                match rule {
                    RuleName::Decayed => {
                        let (step, decay) = match (self.step, self.decay, table) {
                            (Some(s), Some(d), _) => (s, d),
                            (s, d, Some(t)) => {
                                (s.unwrap_or(t.decayed_step.0), d.unwrap_or(t.decayed_step.1))
                            }
                            (None, _, None) => return Err(Error::config(at("step"), no_table)),
                            (_, None, None) => return Err(Error::config(at("decay"), no_table)),
                        };
                        if !(decay > 0.0 && decay <= 1.0) {
                            return Err(Error::config(
                                at("decay"),
                                format!("must lie in (0, 1], got {decay}"),
                            ));
                        }
                        self.step = Some(positive(&at("step"), step)?);
                        self.decay = Some(decay);
                    }
                    RuleName::Adagrad => {
                        absent(&self.decay, || at("decay"), "only used by rule `decayed`")?;
                        let step = match (self.step, table.and_then(|t| t.adagrad_step)) {
                            (Some(s), _) | (None, Some(s)) => s,
                            (None, None) => {
                                return Err(Error::config(
                                    at("step"),
                                    "no default AdaGrad step for this problem family",
                                ))
                            }
                        };
                        self.step = Some(positive(&at("step"), step)?);
                    }
                    RuleName::Static => {
                        absent(&self.decay, || at("decay"), "only used by rule `decayed`")?;
                        let step =
                            required(&self.step, || at("step"), "required for rule `static`")?;
                        self.step = Some(positive(&at("step"), step)?);
                    }
                }
                format!("{kind}_{}", rule.name())
            }
            MethodKind::Svgd => {
                let step = required(&self.step, || at("step"), "required for SVGD")?;
                self.step = Some(positive(&at("step"), step)?);
                kind.to_string()
            }
            MethodKind::SvnCtr => {
                let radius = match (self.radius, table) {
                    (Some(r), _) => r,
                    (None, Some(t)) => t.svn_radius,
                    (None, None) => return Err(Error::config(at("radius"), no_table)),
                };
                self.radius = Some(positive(&at("radius"), radius)?);
                kind.to_string()
            }
            MethodKind::TrSviAt => kind.to_string(),
        };
        let label = self.label.get_or_insert(default_label);
        let safe = !label.is_empty()
            && label != "init"
            && label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
            && !label.starts_with('.');
        if !safe {
            return Err(Error::config(
                at("label"),
                format!("`{label}` is not a usable directory name (letters, digits, `_`, `-`, `.`; not `init`)"),
            ));
        }
        Ok(())
    }

    /// Resolved label. Panics before resolution.
    pub fn label(&self) -> &str {
        self.label.as_deref().expect("config not resolved")
    }

    pub fn iterations(&self) -> usize {
        self.iterations.expect("config not resolved")
    }

    /// The runnable form of a resolved method.
    pub fn plan(&self) -> MethodPlan {
        let unresolved = "config not resolved";
        match self.kind {
            MethodKind::TrSviAt => MethodPlan::TrSviAt,
            MethodKind::TrSviKl => MethodPlan::TrSviKl {
                initial_radius: self.initial_radius.expect(unresolved),
                nystrom_size: self.nystrom_size.expect(unresolved),
            },
            MethodKind::MpSvgd => MethodPlan::MpSvgd {
                rule: match self.rule.expect(unresolved) {
                    RuleName::Static => StepRule::Static,
                    RuleName::Decayed => StepRule::Decayed {
                        decay: self.decay.expect(unresolved),
                    },
                    RuleName::Adagrad => StepRule::Adagrad,
                },
                step: self.step.expect(unresolved),
            },
            MethodKind::Svgd => MethodPlan::Svgd {
                step: self.step.expect(unresolved),
            },
            MethodKind::SvnCtr => MethodPlan::SvnCtr {
                radius: self.radius.expect(unresolved),
            },
        }
    }
}
