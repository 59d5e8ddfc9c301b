use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::GeneratorSpec;
use crate::metrics::CompareTo;
use crate::models::{preset, AggregatorConfig, Comparison, Mechanism, Mu, RMode, WMode};
use crate::training::{SearchSpace, TrainConfig};
use crate::triplebasis::{unit_margin_instance, Aggregation, ItemUniverse, SetTriple, RANGE_WEIGHTED_BASIS};
use crate::{Error, Result};

pub const DEFAULT_SEED_COUNT: usize = 10;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// First of `DEFAULT_SEED_COUNT` consecutive seeds when `seeds` is absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub search: SearchSpace,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub basis: BasisSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Drop sets with more items than this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_items: Option<usize>,
    /// Keep this many examples, drawn with the generator or base seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<Mechanism>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ell: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<Mu>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_mode: Option<WMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_mode: Option<RMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_dim_c: Option<bool>,
    /// Presets trained alongside the main model by `analyze`.
    pub compare: Vec<String>,
    /// `ℓ` values for `sweep-ell`.
    pub ell_values: Vec<usize>,
    /// Snapshot read by `evaluate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "sda_default".into(),
            mechanism: None,
            ell: None,
            h: None,
            comparison: None,
            mu: None,
            w_mode: None,
            r_mode: None,
            hidden: None,
            per_dim_c: None,
            compare: vec!["mnl".into()],
            ell_values: vec![1, 2, 4, 8, 16, 24],
            snapshot: None,
        }
    }
}

impl ModelSection {
    pub fn aggregator(&self) -> Result<AggregatorConfig> {
        let mut c = preset(&self.preset)?;
        let overridden = self.mechanism.is_some()
            || self.h.is_some()
            || self.comparison.is_some()
            || self.mu.is_some()
            || self.w_mode.is_some()
            || self.r_mode.is_some()
            || self.hidden.is_some()
            || self.per_dim_c.is_some();
        if let Some(v) = self.mechanism {
            c.mechanism = v;
        }
        if let Some(v) = self.ell {
            c.ell = v;
        }
        if let Some(v) = self.h {
            c.h = v;
        }
        if let Some(v) = self.comparison {
            c.comparison = v;
        }
        if let Some(v) = self.mu {
            c.mu = v;
        }
        if let Some(v) = self.w_mode {
            c.w_mode = v;
        }
        if let Some(v) = self.r_mode {
            c.r_mode = v;
        }
        if let Some(v) = self.hidden {
            c.hidden = v;
        }
        if let Some(v) = self.per_dim_c {
            c.per_dim_c = v;
        }
        if overridden {
            c.preset = None;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Format written by `generate`.
    pub format: DataFormat,
    /// Comparison target for κ.
    pub kappa: CompareTo,
    pub snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/latest"), format: DataFormat::Csv, kappa: CompareTo::Label, snapshots: true }
    }
}

/// Instance for `triple-basis`; the unit-margin instance when `items` is absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<Vec<f64>>>,
    pub x: usize,
    pub s: Vec<usize>,
    pub t: Vec<usize>,
    pub b: Vec<f64>,
    pub b_prime: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utilities: Option<Vec<[f64; 3]>>,
    pub scales: Vec<f64>,
    pub epsilon: f64,
    pub aggregation: Aggregation,
}

impl Default for BasisSection {
    fn default() -> Self {
        let (_, triple, b, b_prime) = unit_margin_instance();
        Self {
            items: None,
            x: triple.x(),
            s: triple.s().to_vec(),
            t: triple.t().to_vec(),
            b,
            b_prime,
            utilities: None,
            scales: vec![5.0, 10.0, 20.0, 30.0, 40.0],
            epsilon: 1e-2,
            aggregation: Aggregation::RangeWeighted,
        }
    }
}

pub struct BasisInstance {
    pub universe: ItemUniverse,
    pub triple: SetTriple,
    pub utilities: Vec<[f64; 3]>,
}

impl BasisSection {
    pub fn instance(&self) -> Result<BasisInstance> {
        let universe = match &self.items {
            Some(items) => ItemUniverse::new(items.clone())?,
            None => unit_margin_instance().0,
        };
        let triple = SetTriple::new(self.x, self.s.clone(), self.t.clone())?;
        let utilities = self.utilities.clone().unwrap_or_else(|| RANGE_WEIGHTED_BASIS.to_vec());
        Ok(BasisInstance { universe, triple, utilities })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => {
                let base = self.seed.unwrap_or(0);
                (0..DEFAULT_SEED_COUNT as u64).map(|i| base + i).collect()
            }
        }
    }

    /// Checks that exactly one data source is set and that a data file exists.
    pub fn validate_data(&self) -> Result<()> {
        match (&self.data.path, &self.data.generator) {
            (Some(_), Some(_)) => Err(Error::Config("data: set either `path` or `generator`, not both".into())),
            (None, None) => Err(Error::Config("data: no data source; set `path` or `generator`".into())),
            (Some(p), None) if !p.is_file() => Err(Error::Config(format!("data file not found: {}", p.display()))),
            (None, Some(g)) => g.validate(),
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("seeds: list is empty".into()));
        }
        self.model.aggregator()?;
        for name in &self.model.compare {
            preset(name)?;
        }
        if self.model.ell_values.is_empty() || self.model.ell_values.contains(&0) {
            return Err(Error::Config("model: ell_values must be nonempty and positive".into()));
        }
        self.train.validate()?;
        self.search.validate()?;
        if self.basis.scales.is_empty() || self.basis.scales.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Config("basis: scales must be nonempty and positive".into()));
        }
        if !(self.basis.epsilon > 0.0) {
            return Err(Error::Config("basis: epsilon must be positive".into()));
        }
        Ok(())
    }
}
