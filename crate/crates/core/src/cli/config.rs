use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::constructive::{FamilyLearnerSpec, SingleLearnerSpec, DEFAULT_LEAK, DEFAULT_SHARPNESS};
use crate::error::{Error, Result};
use crate::experiments::{
    DEFAULT_GAMMAS, DEFAULT_LENGTH, DEFAULT_PERIOD_RANGE, DEFAULT_REPEATS, DEFAULT_SAMPLES,
    DEFAULT_STEPS,
};
use crate::model::ArchitectureConfig;
use crate::remote::EndpointConfig;
use crate::sequence::{Alphabet, InfiniteSequenceSpec, DEFAULT_SHAPES};

/// Accepts a sequence spec either as its short text form (`"constant0"`,
/// `"periodic:001"`) or as the tagged JSON object.
fn de_spec<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<InfiniteSequenceSpec, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => s.parse().map_err(D::Error::custom),
        v => serde_json::from_value(v).map_err(D::Error::custom),
    }
}

fn de_spec_opt<'de, D: Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<InfiniteSequenceSpec>, D::Error> {
    match Value::deserialize(d)? {
        Value::Null => Ok(None),
        v => de_spec(v).map(Some).map_err(D::Error::custom),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "construct", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstructSource {
    Single {
        #[serde(deserialize_with = "de_spec")]
        target: InfiniteSequenceSpec,
        #[serde(default = "default_leak")]
        leak: f64,
        #[serde(default)]
        alphabet: Alphabet,
    },
    Family(FamilyLearnerSpec),
}

fn default_leak() -> f64 {
    DEFAULT_LEAK
}

impl ConstructSource {
    pub fn single_spec(&self) -> Option<SingleLearnerSpec> {
        match self {
            ConstructSource::Single {
                target,
                leak,
                alphabet,
            } => Some(SingleLearnerSpec {
                target: target.clone(),
                leak: *leak,
                alphabet: alphabet.clone(),
            }),
            ConstructSource::Family(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSource {
    pub random: ArchitectureConfig,
    /// Init seed; the run seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSource {
    pub remote: EndpointConfig,
    #[serde(default)]
    pub alphabet: Alphabet,
}

/// Where the model under test comes from. Distinguished by which key the
/// JSON object carries: `construct`, `file`, `random` or `remote`.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Construct(ConstructSource),
    File(FileSource),
    Random(RandomSource),
    Remote(RemoteSource),
}

impl Serialize for ModelSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ModelSource::Construct(c) => c.serialize(s),
            ModelSource::File(f) => f.serialize(s),
            ModelSource::Random(r) => r.serialize(s),
            ModelSource::Remote(r) => r.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ModelSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        let Some(obj) = v.as_object() else {
            return Err(D::Error::custom("model source must be an object"));
        };
        let key = ["construct", "file", "random", "remote"]
            .into_iter()
            .find(|k| obj.contains_key(*k))
            .ok_or_else(|| {
                D::Error::custom("model source needs one of `construct`, `file`, `random`, `remote`")
            })?;
        let e = |e: serde_json::Error| D::Error::custom(format!("{key}: {e}"));
        Ok(match key {
            "construct" => ModelSource::Construct(serde_json::from_value(v).map_err(e)?),
            "file" => ModelSource::File(serde_json::from_value(v).map_err(e)?),
            "random" => ModelSource::Random(serde_json::from_value(v).map_err(e)?),
            _ => ModelSource::Remote(serde_json::from_value(v).map_err(e)?),
        })
    }
}

impl ModelSource {
    pub fn is_remote(&self) -> bool {
        matches!(self, ModelSource::Remote(_))
    }
}

fn gammas() -> Vec<f64> {
    DEFAULT_GAMMAS.to_vec()
}
fn samples() -> usize {
    DEFAULT_SAMPLES
}
fn length() -> usize {
    DEFAULT_LENGTH
}
fn shapes() -> Vec<(f64, f64)> {
    DEFAULT_SHAPES.to_vec()
}
fn positional_gamma() -> f64 {
    0.1
}
fn periods() -> Vec<usize> {
    DEFAULT_PERIOD_RANGE.collect()
}
fn repeats() -> Vec<usize> {
    DEFAULT_REPEATS.to_vec()
}
fn steps() -> usize {
    DEFAULT_STEPS
}
fn critical_repeats() -> usize {
    10
}
fn p_max() -> usize {
    *DEFAULT_PERIOD_RANGE.end()
}
fn modulus_gammas() -> Vec<f64> {
    vec![1.0 / 64.0, 1.0 / 16.0, 1.0 / 4.0]
}
fn modulus_ns() -> Vec<usize> {
    vec![64, 256, 1024]
}
fn zero_spec() -> InfiniteSequenceSpec {
    InfiniteSequenceSpec::constant(0)
}
fn collapse_gammas() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend(DEFAULT_GAMMAS);
    g
}
fn isolation_ks() -> Vec<usize> {
    vec![2, 4, 8, 16, 32]
}
fn isolation_epsilon() -> f64 {
    0.1
}
fn horizon() -> usize {
    1000
}
fn ssmax_s() -> f64 {
    1.0
}
fn n0() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtsConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "gammas")]
    pub gamma: Vec<f64>,
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default = "length")]
    pub length: usize,
    /// Base prompt source; the all-zero sequence when absent.
    #[serde(default, deserialize_with = "de_spec_opt")]
    pub base: Option<InfiniteSequenceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtsPositionalConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "shapes")]
    pub shapes: Vec<(f64, f64)>,
    #[serde(default = "positional_gamma")]
    pub gamma: f64,
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default = "length")]
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "periods")]
    pub periods: Vec<usize>,
    #[serde(default = "repeats")]
    pub repeats: Vec<usize>,
    #[serde(default = "steps")]
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalPeriodConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "critical_repeats")]
    pub r: usize,
    #[serde(default = "p_max")]
    pub p_max: usize,
    #[serde(default = "steps")]
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "zero_spec", deserialize_with = "de_spec")]
    pub base: InfiniteSequenceSpec,
    #[serde(default = "modulus_gammas")]
    pub gamma: Vec<f64>,
    #[serde(default = "modulus_ns")]
    pub n: Vec<usize>,
    #[serde(default = "samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(deserialize_with = "de_spec")]
    pub spec: InfiniteSequenceSpec,
    #[serde(default = "collapse_gammas")]
    pub gamma: Vec<f64>,
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default = "length")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsolationConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "isolation_ks")]
    pub k: Vec<usize>,
    #[serde(default = "isolation_epsilon")]
    pub epsilon: f64,
    #[serde(default = "horizon")]
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsmaxCompareConfig {
    /// The softmax side; its ssmax partner shares every parameter.
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "ssmax_s")]
    pub s: f64,
    #[serde(default = "gammas")]
    pub gamma: Vec<f64>,
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default = "length")]
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSensitivityConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Prompt pairs `(α, β)` sharing their final word.
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(deserialize_with = "de_spec")]
    pub spec: InfiniteSequenceSpec,
    pub epsilon: f64,
    #[serde(default = "n0")]
    pub n0: usize,
    #[serde(default = "horizon")]
    pub horizon: usize,
}

/// One experiment run: which protocol, its parameters and the model source.
/// Omitted parameters take the default grids listed on each field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    Nts(NtsConfig),
    NtsPositional(NtsPositionalConfig),
    Periodic(PeriodicConfig),
    CriticalPeriod(CriticalPeriodConfig),
    Modulus(ModulusConfig),
    Collapse(CollapseConfig),
    Isolation(IsolationConfig),
    SsmaxCompare(SsmaxCompareConfig),
    PairSensitivity(PairSensitivityConfig),
    Verify(VerifyConfig),
}

macro_rules! each {
    ($self:expr, $c:ident => $e:expr) => {
        match $self {
            ExperimentConfig::Nts($c) => $e,
            ExperimentConfig::NtsPositional($c) => $e,
            ExperimentConfig::Periodic($c) => $e,
            ExperimentConfig::CriticalPeriod($c) => $e,
            ExperimentConfig::Modulus($c) => $e,
            ExperimentConfig::Collapse($c) => $e,
            ExperimentConfig::Isolation($c) => $e,
            ExperimentConfig::SsmaxCompare($c) => $e,
            ExperimentConfig::PairSensitivity($c) => $e,
            ExperimentConfig::Verify($c) => $e,
        }
    };
}

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::Nts(_) => "nts",
            ExperimentConfig::NtsPositional(_) => "nts-positional",
            ExperimentConfig::Periodic(_) => "periodic",
            ExperimentConfig::CriticalPeriod(_) => "critical-period",
            ExperimentConfig::Modulus(_) => "modulus",
            ExperimentConfig::Collapse(_) => "collapse",
            ExperimentConfig::Isolation(_) => "isolation",
            ExperimentConfig::SsmaxCompare(_) => "ssmax-compare",
            ExperimentConfig::PairSensitivity(_) => "pair-sensitivity",
            ExperimentConfig::Verify(_) => "verify",
        }
    }

    pub fn model(&self) -> &ModelSource {
        each!(self, c => &c.model)
    }

    pub fn seed(&self) -> Option<u64> {
        each!(self, c => c.seed)
    }

    pub fn set_seed(&mut self, seed: u64) {
        each!(self, c => c.seed = Some(seed))
    }

    /// Range checks that do not need the model.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let check_gammas = |g: &[f64], zero_ok: bool| -> Result<()> {
            if g.is_empty() {
                return bad("gamma list is empty".into());
            }
            for x in g {
                let lo_ok = if zero_ok { *x >= 0.0 } else { *x > 0.0 };
                if !(lo_ok && *x <= 0.5) {
                    return bad(format!("gamma {x} outside the allowed range"));
                }
            }
            Ok(())
        };
        match self {
            ExperimentConfig::Nts(c) => {
                check_gammas(&c.gamma, false)?;
                if c.length < 2 {
                    return bad("length must be at least 2".into());
                }
            }
            ExperimentConfig::NtsPositional(c) => {
                check_gammas(&[c.gamma], false)?;
                if c.shapes.iter().any(|(u, v)| !(*u > 0.0 && *v > 0.0)) {
                    return bad("Beta-Binomial shapes must be positive".into());
                }
            }
            ExperimentConfig::Periodic(c) => {
                if c.periods.iter().any(|p| *p < 2) || c.repeats.iter().any(|r| *r < 1) {
                    return bad("periods must be >= 2 and repeats >= 1".into());
                }
            }
            ExperimentConfig::CriticalPeriod(c) => {
                if c.p_max < 2 || c.r < 1 {
                    return bad("p_max must be >= 2 and r >= 1".into());
                }
            }
            ExperimentConfig::Modulus(c) => {
                check_gammas(&c.gamma, true)?;
                if c.n.iter().any(|n| *n < 2) {
                    return bad("prompt lengths must be at least 2".into());
                }
            }
            ExperimentConfig::Collapse(c) => check_gammas(&c.gamma, true)?,
            ExperimentConfig::Isolation(c) => {
                if c.k.iter().any(|k| *k < 2) || !(c.epsilon > 0.0) {
                    return bad("k must be >= 2 and epsilon positive".into());
                }
            }
            ExperimentConfig::SsmaxCompare(c) => {
                check_gammas(&c.gamma, false)?;
                if !(c.s > 0.0 && c.s <= 1.0) {
                    return bad(format!("ssmax scale {} outside (0, 1]", c.s));
                }
            }
            ExperimentConfig::PairSensitivity(c) => {
                if !c.model.is_remote() {
                    return bad("pair-sensitivity needs a remote model".into());
                }
            }
            ExperimentConfig::Verify(c) => {
                if !(c.epsilon > 0.0) || c.n0 < 1 || c.horizon < c.n0 {
                    return bad("need epsilon > 0 and 1 <= n0 <= horizon".into());
                }
            }
        }
        Ok(())
    }
}

fn typed<T: serde::de::DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            Error::Config(e.inner().to_string())
        } else {
            Error::Config(format!("{path}: {}", e.inner()))
        }
    })
}

/// Parses a config value; errors name the offending field path.
pub fn parse_config(value: Value) -> Result<ExperimentConfig> {
    let Value::Object(mut obj) = value else {
        return Err(Error::Config("config must be a JSON object".into()));
    };
    let tag = obj
        .remove("experiment")
        .ok_or_else(|| Error::Config("missing field `experiment`".into()))?;
    let Some(tag) = tag.as_str() else {
        return Err(Error::Config("experiment: expected a string".into()));
    };
    let rest = Value::Object(obj);
    let config = match tag {
        "nts" => ExperimentConfig::Nts(typed(rest)?),
        "nts-positional" => ExperimentConfig::NtsPositional(typed(rest)?),
        "periodic" => ExperimentConfig::Periodic(typed(rest)?),
        "critical-period" => ExperimentConfig::CriticalPeriod(typed(rest)?),
        "modulus" => ExperimentConfig::Modulus(typed(rest)?),
        "collapse" => ExperimentConfig::Collapse(typed(rest)?),
        "isolation" => ExperimentConfig::Isolation(typed(rest)?),
        "ssmax-compare" => ExperimentConfig::SsmaxCompare(typed(rest)?),
        "pair-sensitivity" => ExperimentConfig::PairSensitivity(typed(rest)?),
        "verify" => ExperimentConfig::Verify(typed(rest)?),
        other => {
            return Err(Error::Config(format!("experiment: unknown experiment `{other}`")));
        }
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(read_json(path)?)
}

pub(crate) fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{} is not valid JSON: {e}", path.display())))
}

/// Construction-free defaults for the family builder, exposed for flags.
pub(crate) fn family_spec(periods: Vec<usize>, sharpness: Option<f64>, max_lag: Option<usize>) -> FamilyLearnerSpec {
    let mut spec = FamilyLearnerSpec::new(periods, sharpness.unwrap_or(DEFAULT_SHARPNESS));
    spec.max_lag = max_lag;
    spec
}
