//! TOML run configuration.
//!
//! ```toml
//! [potential]
//! kind = "hyperbolic"      # euclidean | hyperbolic | smoothed
//! lambda = 0.1
//! # p = 3.0                # smoothed only
//! # [[potential.layers]]   # optional per-layer overrides, one per layer
//!
//! [net]
//! widths = [3, 100, 1]
//! activation = "relu"
//! input_bias = true
//!
//! [data]
//! generator = "circle"     # or: path = "train.csv"
//! seed = 0
//! k = 200
//!
//! [train]
//! lr = 0.01
//! max_steps = 10000
//! seed = 0
//! log_every = 100
//! rescale = { enabled = true, threshold = 0.1, factor = 0.1 }
//! init = { scheme = "meanfield", scale = 1.0 }
//!
//! [margins]
//! layerwise = false
//!
//! [output]
//! csv_path = "metrics.csv"
//! ```
//!
//! Unknown keys are errors. Relative paths resolve against the directory of
//! the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataSpec, Dataset};
use crate::diagnostics::MarginOptions;
use crate::error::{Error, Result};
use crate::flow::{default_stop_log_loss, InitSpec, RunSpec, Schedule};
use crate::network::{Activation, HomogeneousNet};
use crate::potentials::{LayerPotentials, MirrorPotential, PotentialKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub potential: PotentialSection,
    pub net: NetSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub margins: MarginsSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: PotentialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerOverride>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<PotentialKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub input_bias: bool,
}

fn default_activation() -> Activation {
    Activation::Relu
}

/// Either `path` to a dataset CSV or generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum DataSection {
    File { path: PathBuf },
    Generated(DataSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_stop_log_loss")]
    pub stop_log_loss: f64,
    #[serde(default)]
    pub rescale: RescaleSection,
    #[serde(default)]
    pub init: InitSpec,
}

fn default_max_steps() -> usize {
    10_000
}

fn default_log_every() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RescaleSection {
    pub enabled: bool,
    /// Rescaling starts once ℒ drops below this value.
    pub threshold: f64,
    pub factor: f64,
}

impl Default for RescaleSection {
    fn default() -> Self {
        RescaleSection {
            enabled: false,
            threshold: 0.1,
            factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginsSection {
    pub layerwise: bool,
    /// Exponent of `margin_lp`; defaults to the smoothed potential's p, else 3.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config_str(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &mut PathBuf| -> Result<()> {
        let joined = base.join(&*p);
        *p = std::path::absolute(&joined).map_err(|e| Error::io(&joined, e))?;
        Ok(())
    };
    if let DataSection::File { path: p } = &mut cfg.data {
        resolve(p)?;
    }
    if let Some(p) = &mut cfg.output.csv_path {
        resolve(p)?;
    }
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    // [data] is either a path or generator keys; it is parsed separately so
    // errors name the offending key.
    if let Some(toml::Value::Table(data)) = table.get("data") {
        check_data_table(data)?;
    }
    for required in ["potential", "net", "data", "train"] {
        if !table.contains_key(required) {
            return Err(Error::Config(format!("missing section [{required}]")));
        }
    }
    let data = table.remove("data").expect("checked above");
    let partial = PartialConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| Error::Config(e.to_string()))?;
    let cfg = RunConfig {
        potential: partial.potential,
        net: partial.net,
        data: parse_data_section(data)?,
        train: partial.train,
        margins: partial.margins,
        output: partial.output,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    potential: PotentialSection,
    net: NetSection,
    train: TrainSection,
    #[serde(default)]
    margins: MarginsSection,
    #[serde(default)]
    output: OutputSection,
}

fn check_data_table(data: &toml::Table) -> Result<()> {
    if data.contains_key("path") {
        if let Some(extra) = data.keys().find(|k| *k != "path") {
            return Err(Error::Config(format!(
                "data.{extra} cannot be combined with data.path"
            )));
        }
    }
    Ok(())
}

fn parse_data_section(value: toml::Value) -> Result<DataSection> {
    let toml::Value::Table(t) = value else {
        return Err(Error::Config("[data] must be a table".into()));
    };
    if let Some(p) = t.get("path") {
        let p = p
            .as_str()
            .ok_or_else(|| Error::Config("data.path must be a string".into()))?;
        return Ok(DataSection::File { path: PathBuf::from(p) });
    }
    DataSpec::deserialize(toml::Value::Table(t))
        .map(DataSection::Generated)
        .map_err(|e| Error::Config(format!("in [data]: {e}")))
}

impl RunConfig {
    /// Per-layer potentials after applying overrides.
    pub fn layer_potentials(&self) -> Result<LayerPotentials> {
        let depth = self.net.widths.len().saturating_sub(1);
        let base = &self.potential;
        match &base.layers {
            None => Ok(LayerPotentials::uniform(
                build_potential("potential", base.kind, base.lambda, base.p)?,
                depth,
            )),
            Some(layers) => {
                if layers.len() != depth {
                    return Err(Error::Config(format!(
                        "potential.layers has {} entries but the network has {depth} layers",
                        layers.len()
                    )));
                }
                let pots = layers
                    .iter()
                    .enumerate()
                    .map(|(i, o)| {
                        let kind = o.kind.unwrap_or(base.kind);
                        let inherit = o.kind.is_none() || o.kind == Some(base.kind);
                        let lambda = o.lambda.or(if inherit { base.lambda } else { None });
                        let p = o.p.or(if inherit { base.p } else { None });
                        build_potential(&format!("potential.layers[{i}]"), kind, lambda, p)
                    })
                    .collect::<Result<Vec<_>>>()?;
                LayerPotentials::new(pots)
            }
        }
    }

    pub fn network(&self) -> Result<HomogeneousNet> {
        HomogeneousNet::new(self.net.widths.clone(), self.net.activation, self.net.input_bias)
            .map_err(|e| Error::Config(format!("net.widths: {e}")))
    }

    pub fn schedule(&self) -> Schedule {
        let t = &self.train;
        Schedule {
            base_lr: t.lr,
            rescale_enabled: t.rescale.enabled,
            rescale_threshold: t.rescale.threshold,
            rescale_factor: t.rescale.factor,
            max_steps: t.max_steps,
            stop_log_loss: t.stop_log_loss,
        }
    }

    pub fn margin_options(&self) -> MarginOptions {
        let default_p = match self.potential.kind {
            PotentialKind::Smoothed => self.potential.p.unwrap_or(3.0),
            _ => 3.0,
        };
        MarginOptions {
            layerwise: self.margins.layerwise,
            p: self.margins.p.unwrap_or(default_p),
            tau: self.margins.tau.unwrap_or(MarginOptions::default().tau),
        }
    }

    fn validate(&self) -> Result<()> {
        let net = self.network()?;
        self.layer_potentials()?;
        self.schedule().validate()?;
        if self.train.log_every == 0 {
            return Err(Error::Config("train.log_every must be at least 1".into()));
        }
        if !(self.train.init.scale > 0.0) {
            return Err(Error::Config(format!(
                "train.init.scale must be positive, got {}",
                self.train.init.scale
            )));
        }
        let m = self.margin_options();
        if !(m.p >= 1.0) {
            return Err(Error::Config(format!("margins.p must be >= 1, got {}", m.p)));
        }
        if !(0.0..1.0).contains(&m.tau) {
            return Err(Error::Config(format!("margins.tau must lie in [0, 1), got {}", m.tau)));
        }
        if let DataSection::Generated(spec) = &self.data {
            let dim = match spec.generator {
                crate::data::Generator::Circle => 2,
                crate::data::Generator::Linear => spec.dim,
            };
            check_input_width(&net, dim)?;
        }
        Ok(())
    }

    /// Loads or generates the dataset.
    pub fn dataset(&self) -> Result<Dataset> {
        let data = match &self.data {
            DataSection::File { path } => Dataset::read_csv(path)?,
            DataSection::Generated(spec) => spec.generate()?,
        };
        check_input_width(&self.network()?, data.dim())?;
        Ok(data)
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        Ok(RunSpec {
            net: self.network()?,
            potentials: self.layer_potentials()?,
            data: self.dataset()?,
            schedule: self.schedule(),
            init: self.train.init,
            seed: self.train.seed,
            log_every: self.train.log_every,
            margins: self.margin_options(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn check_input_width(net: &HomogeneousNet, dim: usize) -> Result<()> {
    if net.data_dim() != dim {
        return Err(Error::Config(format!(
            "net.widths[0] = {} does not match data dimension {dim}{}",
            net.widths()[0],
            if net.input_bias() { " + 1 (input_bias)" } else { "" }
        )));
    }
    Ok(())
}

fn build_potential(key: &str, kind: PotentialKind, lambda: Option<f64>, p: Option<f64>) -> Result<MirrorPotential> {
    let wrap = |e: Error| Error::Config(format!("{key}: {e}"));
    match kind {
        PotentialKind::Euclidean => {
            if lambda.is_some() || p.is_some() {
                return Err(Error::Config(format!(
                    "{key}: euclidean takes neither lambda nor p"
                )));
            }
            Ok(MirrorPotential::euclidean())
        }
        PotentialKind::Hyperbolic => {
            if p.is_some() {
                return Err(Error::Config(format!("{key}.p is not used by hyperbolic")));
            }
            let lambda =
                lambda.ok_or_else(|| Error::Config(format!("{key}.lambda is required for hyperbolic (λ > 0)")))?;
            MirrorPotential::hyperbolic(lambda).map_err(wrap)
        }
        PotentialKind::Smoothed => {
            let p = p.ok_or_else(|| Error::Config(format!("{key}.p is required for smoothed (p >= 2)")))?;
            MirrorPotential::smoothed(p, lambda.unwrap_or(0.0)).map_err(wrap)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[potential]
kind = "euclidean"
[net]
widths = [2, 1]
[data]
path = "d.csv"
[train]
lr = 0.1
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.train.log_every, 100);
        assert!(!cfg.train.rescale.enabled);
        assert_eq!(cfg.train.stop_log_loss, default_stop_log_loss());
        assert_eq!(cfg.data, DataSection::File { path: "d.csv".into() });
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("lr = 0.1", "lr = 0.1\nlearning_rate = 3");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn unknown_data_key_is_named() {
        let text = MINIMAL.replace("path = \"d.csv\"", "generator = \"circle\"\nsamples = 3");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("samples"), "{err}");
        let text = MINIMAL.replace("path = \"d.csv\"", "path = \"d.csv\"\nseed = 3");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("data.seed"), "{err}");
    }

    #[test]
    fn hyperbolic_zero_lambda_is_rejected() {
        let text = MINIMAL.replace("kind = \"euclidean\"", "kind = \"hyperbolic\"\nlambda = 0.0");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("potential") && err.contains("lambda > 0"), "{err}");
    }

    #[test]
    fn layer_override_length_mismatch() {
        let text = MINIMAL.replace(
            "kind = \"euclidean\"",
            "kind = \"euclidean\"\n[[potential.layers]]\n[[potential.layers]]",
        );
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("2 entries") && err.contains("1 layers"), "{err}");
    }

    #[test]
    fn mixed_layer_potentials() {
        let text = r#"
[potential]
kind = "hyperbolic"
lambda = 0.5
[[potential.layers]]
[[potential.layers]]
kind = "smoothed"
p = 3.0
[net]
widths = [3, 4, 1]
input_bias = true
[data]
generator = "circle"
k = 10
[train]
lr = 0.1
"#;
        let cfg = parse_config_str(text).unwrap();
        let pots = cfg.layer_potentials().unwrap();
        assert_eq!(pots.layer(0), &MirrorPotential::hyperbolic(0.5).unwrap());
        assert_eq!(pots.layer(1), &MirrorPotential::smoothed(3.0, 0.0).unwrap());
        assert_eq!(cfg.run_spec().unwrap().data.len(), 10);
    }

    #[test]
    fn input_width_must_match_data() {
        let text = MINIMAL
            .replace("widths = [2, 1]", "widths = [2, 1]\ninput_bias = true")
            .replace("path = \"d.csv\"", "generator = \"circle\"");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("input_bias"), "{err}");
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = parse_config_str(&MINIMAL.replace("kind = \"euclidean\"", "kind = \"smoothed\"\np = 3.0")).unwrap();
        assert_eq!(parse_config_str(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.margin_options().p, 3.0);
    }
}
