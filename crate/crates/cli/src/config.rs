//! Experiment configuration (TOML) and the dataset it points at.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trn_ood_core::model::{GcnConfig, TntConfig};
use trn_ood_core::shift::{ShiftKind, ShiftSpec};
use trn_ood_core::synth::{demo_lexicon, fixture_name, planted_partition, PlantedPartition};
use trn_ood_core::text::LexicalCache;
use trn_ood_core::TrnGraph;

use crate::error::{HarnessError, Result};
use crate::formats::{
    features_from_npy, labels_from_npy, parse_lexicon, parse_texts, read_edges, read_file, read_npy, sha256_hex,
};
use crate::npy::Npy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub shifts: Vec<ShiftSpec>,
    #[serde(default)]
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub model: TntConfig,
    #[serde(default)]
    pub baseline: GcnConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Either files on disk or a synthetic fixture. Relative paths are resolved
/// against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texts: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub years: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<PlantedPartition>,
}

/// Train/validation/test assignment: a mask file (0 train, 1 val, 2 test per
/// node) or stratified fractions with the test set taking the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    /// Fixed split seed; by default each experiment seed draws its own split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            seed: None,
            masks: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// E-lign scores of the text-topology network.
    Tnt,
    Energy,
    Msp,
    Mahalanobis,
    /// Energy with score propagation (K = 3 by default).
    Gnnsafe,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Tnt => "tnt",
            MethodKind::Energy => "energy",
            MethodKind::Msp => "msp",
            MethodKind::Mahalanobis => "mahalanobis",
            MethodKind::Gnnsafe => "gnnsafe",
        }
    }

    /// Whether the method scores the GCN baseline rather than the TNT model.
    pub fn uses_baseline(self) -> bool {
        self != MethodKind::Tnt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Propagation steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Propagation self-weight.
    #[serde(default = "half")]
    pub alpha: f64,
    /// Alignment weight of the E-lign score.
    #[serde(default = "one")]
    pub temperature: f64,
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

impl MethodConfig {
    pub fn new(method: MethodKind) -> Self {
        Self {
            method,
            label: None,
            k: None,
            alpha: 0.5,
            temperature: 1.0,
        }
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(match self.method {
            MethodKind::Tnt | MethodKind::Gnnsafe => 3,
            _ => 0,
        })
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let mut s = self.method.as_str().to_string();
        if self.method == MethodKind::Tnt && self.temperature != 1.0 {
            s += &format!("-T{}", self.temperature);
        }
        let default_k = MethodConfig::new(self.method).k();
        if self.k() != default_k || (self.k() > 0 && self.alpha != 0.5) {
            s += &format!("-k{}-a{}", self.k(), self.alpha);
        }
        s
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Methods run when the list is empty.
    pub fn effective_methods(&self) -> Vec<MethodConfig> {
        if self.methods.is_empty() {
            vec![MethodConfig::new(MethodKind::Tnt)]
        } else {
            self.methods.clone()
        }
    }

    pub fn needs_tnt(&self) -> bool {
        self.effective_methods().iter().any(|m| !m.method.uses_baseline())
    }

    pub fn needs_baseline(&self) -> bool {
        self.effective_methods().iter().any(|m| m.method.uses_baseline())
    }

    /// Shift specs of one experiment seed: each spec's seed is offset by it.
    pub fn shifts_for_seed(&self, seed: u64) -> Vec<ShiftSpec> {
        self.shifts
            .iter()
            .map(|s| ShiftSpec::new(s.kind.clone(), s.seed.wrapping_add(seed)))
            .collect()
    }

    /// Checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return err("seed list is empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return err(format!("seed {s} is listed twice"));
        }
        let sp = &self.split;
        if !(sp.train > 0.0 && sp.val >= 0.0 && sp.train + sp.val <= 1.0) {
            return err(format!("split fractions train={} val={} are invalid", sp.train, sp.val));
        }
        let mut labels = std::collections::BTreeSet::new();
        for m in &self.effective_methods() {
            if !labels.insert(m.label()) {
                return err(format!("method label {} is used twice", m.label()));
            }
            if !(0.0..=1.0).contains(&m.alpha) || !m.temperature.is_finite() {
                return err(format!("method {}: alpha or temperature out of range", m.label()));
            }
        }
        let mut dirs = std::collections::BTreeSet::new();
        for &s in &self.seeds {
            for spec in self.shifts_for_seed(s) {
                if !dirs.insert(spec.label()) {
                    return err(format!("two shift entries map to split {}", spec.label()));
                }
            }
        }
        self.model.validate().map_err(|e| HarnessError::Config(format!("model: {e}")))?;
        let d = &self.dataset;
        match (&d.synthetic, &d.features, &d.edges, &d.labels) {
            (Some(_), None, None, None) => {}
            (None, Some(_), Some(_), Some(_)) => {}
            _ => return err("dataset needs either `synthetic` or all of `features`, `edges`, `labels`".into()),
        }
        if d.synthetic.is_some() && (d.texts.is_some() || d.years.is_some()) {
            return err("synthetic datasets generate their own texts and years".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of everything except the output
    /// directory, followed by the digests of the referenced data files.
    pub fn hash(&self, data_digests: &BTreeMap<String, String>) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes to JSON");
        v.as_object_mut().expect("config is an object").remove("output");
        let canonical = serde_json::json!({ "config": v, "data": data_digests });
        sha256_hex(serde_json::to_string(&canonical).expect("JSON value").as_bytes())
    }
}

/// A validated config with its dataset loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub output: PathBuf,
    pub hash: String,
    pub dataset_name: String,
    pub graph: TrnGraph,
    pub lexicon: Option<LexicalCache>,
    /// Per-node split codes from the mask file.
    pub masks: Option<Vec<u8>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Experiment {
    pub fn load(path: &Path, out: Option<&Path>, seeds: Option<&[u64]>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = ExperimentConfig::from_toml(&text)
            .map_err(|e| e.context(&path.display().to_string()))?;
        if let Some(s) = seeds {
            config.seeds = s.to_vec();
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Self::prepare(config, base, out)
    }

    /// Validates `config`, loads its dataset relative to `base` and computes
    /// the config hash.
    pub fn prepare(config: ExperimentConfig, base: &Path, out: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let d = &config.dataset;
        let cfg_err = |e: HarnessError| HarnessError::Config(format!("dataset: {e}"));
        let mut digests = BTreeMap::new();
        let mut read = |key: &str, p: &Path| -> Result<Vec<u8>> {
            let bytes = read_file(&resolve(base, p)).map_err(cfg_err)?;
            digests.insert(key.to_string(), sha256_hex(&bytes));
            Ok(bytes)
        };
        let (graph, lexicon, default_name) = if let Some(pp) = &d.synthetic {
            let g = planted_partition(pp).map_err(|e| cfg_err(e.into()))?;
            let lex = match &d.lexicon {
                Some(p) => parse_lexicon(&read("lexicon", p)?).map_err(cfg_err)?,
                None => demo_lexicon(),
            };
            (g, Some(lex), fixture_name(pp))
        } else {
            let fpath = d.features.as_ref().unwrap();
            let x = features_from_npy(&Npy::from_bytes(&read("features", fpath)?).map_err(cfg_err)?)
                .map_err(cfg_err)?;
            let epath = d.edges.as_ref().unwrap();
            read("edges", epath)?;
            let edges = read_edges(&resolve(base, epath)).map_err(cfg_err)?;
            let labels = labels_from_npy(&Npy::from_bytes(&read("labels", d.labels.as_ref().unwrap())?).map_err(cfg_err)?)
                .map_err(cfg_err)?;
            let num_classes = d
                .num_classes
                .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
            let mut g = TrnGraph::new(x, edges, labels, num_classes).map_err(|e| cfg_err(e.into()))?;
            if let Some(p) = &d.texts {
                let texts = parse_texts(&read("texts", p)?).map_err(cfg_err)?;
                g = g.with_texts(texts).map_err(|e| cfg_err(e.into()))?;
            }
            if let Some(p) = &d.years {
                let years = Npy::from_bytes(&read("years", p)?).and_then(|a| a.to_i64()).map_err(cfg_err)?;
                g = g.with_years(years).map_err(|e| cfg_err(e.into()))?;
            }
            let lex = match &d.lexicon {
                Some(p) => Some(parse_lexicon(&read("lexicon", p)?).map_err(cfg_err)?),
                None => None,
            };
            let stem = fpath
                .parent()
                .and_then(Path::file_name)
                .or_else(|| fpath.file_stem())
                .map_or("dataset".to_string(), |s| s.to_string_lossy().into_owned());
            (g, lex, stem)
        };
        let masks = match &config.split.masks {
            Some(p) => {
                let codes = read_npy(&resolve(base, p))
                    .and_then(|a| a.to_i64())
                    .map_err(cfg_err)?;
                digests.insert("masks".into(), sha256_hex(&read_file(&resolve(base, p)).map_err(cfg_err)?));
                if codes.len() != graph.n() {
                    return Err(HarnessError::Config(format!(
                        "masks: {} entries for {} nodes",
                        codes.len(),
                        graph.n()
                    )));
                }
                let codes = codes
                    .into_iter()
                    .map(|c| match c {
                        0..=2 => Ok(c as u8),
                        _ => Err(HarnessError::Config(format!("masks: code {c} is not 0, 1 or 2"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(codes)
            }
            None => None,
        };
        if config.model.d != graph.dim() {
            return Err(HarnessError::Config(format!(
                "model.d = {} but the features have {} columns",
                config.model.d,
                graph.dim()
            )));
        }
        if graph.num_classes() < 2 {
            return Err(HarnessError::Config("dataset needs at least two classes".into()));
        }
        let needs_lexicon = config
            .shifts
            .iter()
            .any(|s| matches!(s.kind, ShiftKind::TextAugment { .. }));
        if needs_lexicon && lexicon.is_none() {
            return Err(HarnessError::Config("text augmentation needs dataset.lexicon".into()));
        }
        let hash = config.hash(&digests);
        let output = match out {
            Some(o) => o.to_path_buf(),
            None => resolve(base, &config.output),
        };
        let dataset_name = d.name.clone().unwrap_or(default_name);
        Ok(Self {
            config,
            output,
            hash,
            dataset_name,
            graph,
            lexicon,
            masks,
        })
    }
}
