//! Experiment configuration.
//!
//! The model is either inline under `[model]`, in the same layout as a model
//! file, or referenced by path. Relative paths resolve against the directory
//! holding the config file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use bgwqsd_core::io::{load_model, ModelFile};
use bgwqsd_core::lyapunov::SmallSetPolicy;
use bgwqsd_core::{ModelSpec, StateVector};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Validate,
    Spectral,
    Kernel,
    Qsd,
    QsdFamily,
    Lyapunov,
    VerifyE,
    Simulate,
    Yaglom,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Validate,
        Stage::Spectral,
        Stage::Kernel,
        Stage::Qsd,
        Stage::QsdFamily,
        Stage::Lyapunov,
        Stage::VerifyE,
        Stage::Simulate,
        Stage::Yaglom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Spectral => "spectral",
            Stage::Kernel => "kernel",
            Stage::Qsd => "qsd",
            Stage::QsdFamily => "qsd-family",
            Stage::Lyapunov => "lyapunov",
            Stage::VerifyE => "verify-e",
            Stage::Simulate => "simulate",
            Stage::Yaglom => "yaglom",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Validate | Stage::Spectral | Stage::Kernel | Stage::Simulate => &[],
            Stage::Qsd => &[Stage::Kernel],
            Stage::QsdFamily => &[Stage::Spectral, Stage::Kernel, Stage::Qsd],
            Stage::Lyapunov => &[Stage::Spectral, Stage::Qsd],
            Stage::VerifyE => &[Stage::Spectral, Stage::Kernel, Stage::Qsd],
            Stage::Yaglom => &[Stage::Kernel, Stage::Qsd],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelFile),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateParams {
    pub samples: usize,
    pub seed: Option<u64>,
    pub primitivity_steps: usize,
    /// Point pairs per face for the sampled continuity modulus.
    pub continuity_pairs: usize,
}

impl Default for ValidateParams {
    fn default() -> Self {
        Self {
            samples: 20_000,
            seed: None,
            primitivity_steps: 32,
            continuity_pairs: 200,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self {
            tol: 1e-14,
            max_iter: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    Exact,
    Mc,
}

impl FromStr for KernelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(KernelMode::Exact),
            "mc" => Ok(KernelMode::Mc),
            other => Err(format!("unknown mode `{other}`, expected exact or mc")),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    pub radius: u64,
    pub mode: KernelMode,
    pub samples: u64,
    pub seed: Option<u64>,
    /// Bound on distinct children vectors per exact row.
    pub cap: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            radius: 12,
            mode: KernelMode::Exact,
            samples: 100_000,
            seed: None,
            cap: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QsdParams {
    pub tol: f64,
    pub max_iter: usize,
    pub j_range: (usize, usize),
}

impl Default for QsdParams {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 200_000,
            j_range: (50, 200),
        }
    }
}

/// `"default"` or an explicit list.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LambdaGrid {
    #[default]
    #[serde(deserialize_with = "default_keyword")]
    Default,
    List(Vec<f64>),
}

/// `"auto"` or an explicit list of states.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Anchors {
    #[default]
    #[serde(deserialize_with = "auto_keyword")]
    Auto,
    List(Vec<Vec<u64>>),
}

fn keyword<'de, D: serde::Deserializer<'de>>(d: D, word: &str) -> Result<(), D::Error> {
    let s = String::deserialize(d)?;
    if s == word {
        Ok(())
    } else {
        Err(serde::de::Error::custom(format!("expected `{word}`, found `{s}`")))
    }
}

fn default_keyword<'de, D: serde::Deserializer<'de>>(d: D) -> Result<(), D::Error> {
    keyword(d, "default")
}

fn auto_keyword<'de, D: serde::Deserializer<'de>>(d: D) -> Result<(), D::Error> {
    keyword(d, "auto")
}

impl FromStr for LambdaGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "default" {
            return Ok(LambdaGrid::Default);
        }
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad lambda `{t}`: {e}")))
            .collect::<Result<_, _>>()
            .map(LambdaGrid::List)
    }
}

impl FromStr for Anchors {
    type Err = String;

    /// `auto`, or states separated by `;` with coordinates separated by `,`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Anchors::Auto);
        }
        s.split(';')
            .map(|state| {
                state
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<u64>()
                            .map_err(|e| format!("bad anchor `{state}`: {e}"))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()
            .map(Anchors::List)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyParams {
    pub lambda_grid: LambdaGrid,
    pub anchors: Anchors,
    /// Ladder length when anchors are automatic.
    pub anchor_count: usize,
    pub tail_tol: f64,
    pub upsilon_window: (usize, usize),
    pub upsilon_tol: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            lambda_grid: LambdaGrid::Default,
            anchors: Anchors::Auto,
            anchor_count: 6,
            tail_tol: 1e-15,
            upsilon_window: (20, 120),
            upsilon_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovParams {
    pub a: f64,
    pub radius: u64,
    pub mode: KernelMode,
    pub samples: u64,
    pub seed: Option<u64>,
    pub cap: usize,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self {
            a: 2.5,
            radius: 8,
            mode: KernelMode::Exact,
            samples: 100_000,
            seed: None,
            cap: 1_000_000,
        }
    }
}

/// `"auto"` or `"radius=r"`.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallSet(pub SmallSetPolicy);

impl FromStr for SmallSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(SmallSet(SmallSetPolicy::Auto));
        }
        s.strip_prefix("radius=")
            .and_then(|r| r.trim().parse::<u64>().ok())
            .map(|r| SmallSet(SmallSetPolicy::Radius(r)))
            .ok_or_else(|| format!("small set must be `auto` or `radius=r`, found `{s}`"))
    }
}

impl<'de> Deserialize<'de> for SmallSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyEParams {
    /// Exponent of the Lyapunov weight; defaults to the drift exponent.
    pub a: Option<f64>,
    pub small_set: SmallSet,
    pub window: usize,
    pub step_cap: usize,
    pub return_horizon: usize,
    pub harnack_stab_tol: f64,
}

impl Default for VerifyEParams {
    fn default() -> Self {
        Self {
            a: None,
            small_set: SmallSet(SmallSetPolicy::Auto),
            window: 200,
            step_cap: 10_000,
            return_horizon: 256,
            harnack_stab_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateParams {
    pub z0: Vec<u64>,
    pub horizon: usize,
    pub paths: u64,
    pub seed: Option<u64>,
    pub population_cap: u64,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            z0: Vec::new(),
            horizon: 15,
            paths: 100_000,
            seed: None,
            population_cap: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YaglomParams {
    pub z0: Vec<u64>,
    pub horizons: Vec<usize>,
    pub paths: u64,
    pub seed: Option<u64>,
}

impl Default for YaglomParams {
    fn default() -> Self {
        Self {
            z0: Vec::new(),
            horizons: (0..=12).collect(),
            paths: 200_000,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub output: PathBuf,
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub validate: ValidateParams,
    #[serde(default)]
    pub spectral: SpectralParams,
    #[serde(default)]
    pub kernel: KernelParams,
    #[serde(default)]
    pub qsd: QsdParams,
    #[serde(default, rename = "qsd-family")]
    pub qsd_family: FamilyParams,
    #[serde(default)]
    pub lyapunov: LyapunovParams,
    #[serde(default, rename = "verify-e")]
    pub verify_e: VerifyEParams,
    #[serde(default)]
    pub simulate: SimulateParams,
    #[serde(default)]
    pub yaglom: YaglomParams,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let spec = match &self.model {
            ModelSource::Path(p) => load_model(self.base_dir.join(p)),
            ModelSource::Inline(file) => file.clone().into_spec(),
        };
        spec.map_err(|e| CliError::Config(format!("model: {e}")))
    }

    /// Every stage in the list finds its prerequisites earlier in the list.
    pub fn check_stage_order(&self) -> Result<(), CliError> {
        if self.stages.is_empty() {
            return Err(CliError::Config("`stages` is empty".into()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if self.stages[..i].contains(stage) {
                return Err(CliError::Config(format!("stage `{stage}` is listed twice")));
            }
            for dep in stage.requires() {
                if !self.stages[..i].contains(dep) {
                    return Err(CliError::Dependency {
                        stage: *stage,
                        missing: *dep,
                        detail: "it must appear earlier in `stages`".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Randomized stages must carry an explicit seed.
    pub fn check_seeds(&self, stage: Stage) -> Result<(), CliError> {
        let missing = match stage {
            Stage::Validate => self.validate.seed.is_none(),
            Stage::Kernel => self.kernel.mode == KernelMode::Mc && self.kernel.seed.is_none(),
            Stage::Lyapunov => self.lyapunov.mode == KernelMode::Mc && self.lyapunov.seed.is_none(),
            Stage::Simulate => self.simulate.seed.is_none(),
            Stage::Yaglom => self.yaglom.seed.is_none(),
            _ => false,
        };
        if missing {
            return Err(CliError::Config(format!("stage `{stage}` needs an explicit `seed`")));
        }
        Ok(())
    }
}

/// Start state from config, defaulting to one couple of the first type.
pub fn start_state(z0: &[u64], p: usize) -> Result<StateVector, CliError> {
    if z0.is_empty() {
        return Ok(StateVector::unit(p, 0));
    }
    if z0.len() != p {
        return Err(CliError::Config(format!("z0 has {} coordinates but p = {p}", z0.len())));
    }
    Ok(StateVector::new(z0.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
model = "m.toml"
output = "out"
"#;

    #[test]
    fn keywords_and_lists_parse() {
        let text = format!(
            "{BASE}\n[qsd-family]\nlambda_grid = [0.2, 0.3]\nanchors = \"auto\"\n[verify-e]\nsmall_set = \"radius=3\"\n"
        );
        let cfg = ExperimentConfig::parse(&text, ".").unwrap();
        assert_eq!(cfg.qsd_family.lambda_grid, LambdaGrid::List(vec![0.2, 0.3]));
        assert_eq!(cfg.qsd_family.anchors, Anchors::Auto);
        assert_eq!(cfg.verify_e.small_set.0, SmallSetPolicy::Radius(3));
        assert!(ExperimentConfig::parse(&format!("{BASE}\n[qsd-family]\nanchors = \"all\"\n"), ".").is_err());
    }

    #[test]
    fn flag_syntax() {
        assert_eq!(
            "1,0;2,1".parse::<Anchors>().unwrap(),
            Anchors::List(vec![vec![1, 0], vec![2, 1]])
        );
        assert_eq!("default".parse::<LambdaGrid>().unwrap(), LambdaGrid::Default);
        assert!("radius=x".parse::<SmallSet>().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse(&format!("{BASE}\n[kernel]\nradious = 3\n"), ".").is_err());
    }

    #[test]
    fn stage_order_is_checked() {
        let cfg = ExperimentConfig::parse(&format!("stages = [\"qsd\", \"kernel\"]\n{BASE}"), ".").unwrap();
        match cfg.check_stage_order() {
            Err(CliError::Dependency { stage, missing, .. }) => {
                assert_eq!((stage, missing), (Stage::Qsd, Stage::Kernel));
            }
            other => panic!("expected a dependency error, got {other:?}"),
        }
    }

    #[test]
    fn randomized_stages_need_seeds() {
        let cfg = ExperimentConfig::parse(BASE, ".").unwrap();
        assert!(cfg.check_seeds(Stage::Simulate).is_err());
        assert!(cfg.check_seeds(Stage::Kernel).is_ok());
    }
}
