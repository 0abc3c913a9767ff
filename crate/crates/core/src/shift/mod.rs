//! Distribution-shift generators.
//!
//! Attribute and structure shifts (feature mixing, SBM rewiring, semantic
//! connection, text swap, text augmentation) produce a perturbed copy of the
//! input graph with the same node indexing; the resulting [`OodSplit`] is
//! *paired*. Label leave-out and temporal splits carve the graph into an ID
//! training graph and a larger evaluation graph with per-node OOD flags; those
//! splits are *joint*.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::TrnGraph;
use crate::rng::Rng;
use crate::text::{LexType, LexicalCache};

mod feature;
mod split;
mod structure;
mod swap;

pub use feature::{feature_mix, feature_mix_traced, mix_row, MixDraw};
pub use split::{label_leave_out, temporal_split};
pub use structure::{sbm_rewire, sbm_rewire_traced, semantic_connect, SbmTrace};
pub use swap::{apply_swaps, text_swap, text_swap_traced};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SemanticMode {
    Top,
    Bottom,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SwapScope {
    Intra,
    Inter,
    Random,
}

impl SwapScope {
    pub fn as_str(self) -> &'static str {
        match self {
            SwapScope::Intra => "intra",
            SwapScope::Inter => "inter",
            SwapScope::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum ShiftKind {
    FeatureMix {
        alpha: f64,
    },
    StructureRewire {
        beta: f64,
        f_ii: f64,
        f_ij: f64,
    },
    SemanticConnect {
        mode: SemanticMode,
        #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
        threshold: Option<f64>,
    },
    TextSwap {
        beta: f64,
        scope: SwapScope,
    },
    LabelLeaveOut {
        ood_classes: Vec<usize>,
    },
    TemporalSplit {
        id_years: [i64; 2],
        ood_years: [i64; 2],
    },
    TextAugment {
        alpha: f64,
        p_char: f64,
        lex: LexType,
    },
}

/// One OOD scenario: the generator, its parameters and its seed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShiftSpec {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: ShiftKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} is outside [0, 1]")))
    }
}

impl ShiftKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ShiftKind::FeatureMix { alpha } => unit("alpha", *alpha),
            ShiftKind::StructureRewire { beta, f_ii, f_ij } => {
                unit("beta", *beta)?;
                unit("f_ii", *f_ii)?;
                unit("f_ij", *f_ij)
            }
            ShiftKind::SemanticConnect { mode, threshold } => match (mode, threshold) {
                (SemanticMode::Threshold, Some(q)) => unit("threshold", *q),
                (SemanticMode::Threshold, None) => Err(Error::InvalidParameter(
                    "semantic_connect threshold mode needs a threshold".into(),
                )),
                (_, Some(_)) => Err(Error::InvalidParameter(
                    "semantic_connect threshold is only valid in threshold mode".into(),
                )),
                (_, None) => Ok(()),
            },
            ShiftKind::TextSwap { beta, .. } => unit("beta", *beta),
            ShiftKind::LabelLeaveOut { ood_classes } => {
                if ood_classes.is_empty() {
                    Err(Error::InvalidParameter("label leave-out needs at least one OOD class".into()))
                } else {
                    Ok(())
                }
            }
            ShiftKind::TemporalSplit { id_years, ood_years } => {
                for r in [id_years, ood_years] {
                    if r[0] > r[1] {
                        return Err(Error::InvalidParameter(format!("year range {}..{} is empty", r[0], r[1])));
                    }
                }
                if id_years[0] <= ood_years[1] && ood_years[0] <= id_years[1] {
                    return Err(Error::InvalidParameter(format!(
                        "ID years {}..{} overlap OOD years {}..{}",
                        id_years[0], id_years[1], ood_years[0], ood_years[1]
                    )));
                }
                Ok(())
            }
            ShiftKind::TextAugment { alpha, p_char, .. } => {
                unit("alpha", *alpha)?;
                unit("p_char", *p_char)
            }
        }
    }

    /// Short, filesystem-safe identifier including the parameters.
    pub fn label(&self) -> String {
        match self {
            ShiftKind::FeatureMix { alpha } => format!("feature_mix-a{alpha}"),
            ShiftKind::StructureRewire { beta, f_ii, f_ij } => {
                format!("structure_rewire-b{beta}-fii{f_ii}-fij{f_ij}")
            }
            ShiftKind::SemanticConnect { mode, threshold } => match (mode, threshold) {
                (SemanticMode::Top, _) => "semantic_connect-top".into(),
                (SemanticMode::Bottom, _) => "semantic_connect-bottom".into(),
                (SemanticMode::Threshold, q) => format!("semantic_connect-q{}", q.unwrap_or(f64::NAN)),
            },
            ShiftKind::TextSwap { beta, scope } => format!("text_swap-{}-b{beta}", scope.as_str()),
            ShiftKind::LabelLeaveOut { ood_classes } => {
                let ids: Vec<String> = ood_classes.iter().map(|c| format!("{c}")).collect();
                format!("label_leave_out-{}", ids.join("_"))
            }
            ShiftKind::TemporalSplit { id_years, ood_years } => format!(
                "temporal-{}_{}-{}_{}",
                id_years[0], id_years[1], ood_years[0], ood_years[1]
            ),
            ShiftKind::TextAugment { alpha, p_char, lex } => {
                format!("text_augment-{}-a{alpha}-p{p_char}", lex.as_str())
            }
        }
    }

    /// Stream name of the generator's random draws.
    pub fn stream(&self) -> &'static str {
        match self {
            ShiftKind::FeatureMix { .. } => "shift/feature_mix",
            ShiftKind::StructureRewire { .. } => "shift/structure_rewire",
            ShiftKind::SemanticConnect { .. } => "shift/semantic_connect",
            ShiftKind::TextSwap { .. } => "shift/text_swap",
            ShiftKind::LabelLeaveOut { .. } => "shift/label_leave_out",
            ShiftKind::TemporalSplit { .. } => "shift/temporal",
            ShiftKind::TextAugment { .. } => "shift/text_augment",
        }
    }

    /// Whether the OOD graph is a perturbed copy of the ID graph.
    pub fn is_paired(&self) -> bool {
        !matches!(self, ShiftKind::LabelLeaveOut { .. } | ShiftKind::TemporalSplit { .. })
    }
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn label(&self) -> String {
        format!("{}-s{}", self.kind.label(), self.seed)
    }
}

/// An ID graph, an evaluation graph and the OOD indicator over the evaluation
/// graph's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct OodSplit {
    pub spec: ShiftSpec,
    pub id_graph: TrnGraph,
    pub ood_graph: TrnGraph,
    pub ood_flags: Vec<bool>,
    /// Source-graph index of each `id_graph` node.
    pub id_nodes: Vec<usize>,
    /// Source-graph index of each `ood_graph` node.
    pub ood_nodes: Vec<usize>,
    /// `ood_graph` is a perturbed copy of `id_graph` with identical indexing.
    pub paired: bool,
    /// Source class → ID class, when the ID graph relabels classes.
    pub class_map: Option<Vec<Option<usize>>>,
    pub warnings: Vec<String>,
}

impl OodSplit {
    fn paired(spec: ShiftSpec, id_graph: TrnGraph, ood_graph: TrnGraph) -> Self {
        let n = id_graph.n();
        let nodes: Vec<usize> = (0..n).collect();
        Self {
            spec,
            id_graph,
            ood_graph,
            ood_flags: alloc::vec![true; n],
            id_nodes: nodes.clone(),
            ood_nodes: nodes,
            paired: true,
            class_map: None,
            warnings: Vec::new(),
        }
    }
}

/// Runs the generator described by `spec` on `g`. Text augmentation needs a
/// lexical cache; it rewrites texts only, so the features of the OOD graph
/// must be re-embedded before they reflect the shift.
pub fn generate(g: &TrnGraph, spec: &ShiftSpec, cache: Option<&LexicalCache>) -> Result<OodSplit> {
    spec.kind.validate()?;
    let mut rng = Rng::new(spec.seed, spec.kind.stream());
    let ood = match &spec.kind {
        ShiftKind::FeatureMix { alpha } => feature_mix(g, *alpha, &mut rng)?,
        ShiftKind::StructureRewire { beta, f_ii, f_ij } => sbm_rewire(g, *beta, *f_ii, *f_ij, &mut rng)?,
        ShiftKind::SemanticConnect { mode, threshold } => semantic_connect(g, *mode, *threshold)?,
        ShiftKind::TextSwap { beta, scope } => text_swap(g, *beta, *scope, &mut rng)?,
        ShiftKind::LabelLeaveOut { ood_classes } => {
            let mut split = label_leave_out(g, ood_classes)?;
            split.spec = spec.clone();
            return Ok(split);
        }
        ShiftKind::TemporalSplit { id_years, ood_years } => {
            let mut split = temporal_split(g, *id_years, *ood_years)?;
            split.spec = spec.clone();
            return Ok(split);
        }
        ShiftKind::TextAugment { alpha, p_char, lex } => {
            let cache = cache.ok_or_else(|| {
                Error::InvalidParameter("text augmentation needs a lexical cache".into())
            })?;
            let texts = g
                .texts()
                .ok_or_else(|| Error::InvalidGraph("text augmentation needs node texts".into()))?;
            let out: Vec<String> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut node_rng = rng.substream(&format!("{i}"));
                    crate::text::text_augment(t, *lex, *alpha, *p_char, cache, &mut node_rng)
                })
                .collect();
            let mut split = OodSplit::paired(spec.clone(), g.clone(), g.clone().with_texts(out)?);
            split
                .warnings
                .push("texts were rewritten; re-embed the OOD texts before evaluating".into());
            return Ok(split);
        }
    };
    Ok(OodSplit::paired(spec.clone(), g.clone(), ood))
}

/// Parameter presets used by the reference benchmark configurations.
pub mod presets {
    use super::*;

    pub const FEATURE_MIX_ALPHAS: [f64; 3] = [0.5, 0.7, 0.9];

    /// `(name, β, f_ii, f_ij)`.
    pub const STRUCTURE_LEVELS: [(&str, f64, f64, f64); 3] = [
        ("mild", 0.2, 0.7, 0.5),
        ("medium", 0.5, 0.6, 0.3),
        ("strong", 1.0, 0.4, 0.7),
    ];

    pub const SEMANTIC_THRESHOLDS: [f64; 3] = [0.75, 0.85, 0.95];

    pub const TEXT_SWAP_BETA: f64 = 1.0;

    pub const TEXT_AUGMENT_ALPHA: f64 = 1.0;
    pub const TEXT_AUGMENT_P_CHAR: f64 = 1.0;

    pub const TEMPORAL_ID_YEARS: [i64; 2] = [1960, 2015];
    pub const TEMPORAL_OOD_YEARS: [[i64; 2]; 3] = [[2017, 2018], [2018, 2019], [2019, 2020]];

    /// `(dataset, random, thematically similar, thematically dissimilar)` OOD class lists.
    pub const LEAVE_OUT_CLASSES: [(&str, &[usize], &[usize], &[usize]); 7] = [
        ("cora", &[0, 1, 2], &[1, 3, 4], &[2, 5, 6]),
        ("citeseer", &[1, 3, 5], &[2, 3, 4], &[0, 1, 5]),
        ("wikics", &[1, 3, 4, 5, 8], &[0, 1, 8, 9], &[2, 3, 4, 6]),
        ("bookhis", &[0, 1, 3, 4, 7], &[1, 2, 6, 10, 11], &[0, 3, 5, 8, 9]),
        (
            "bookchild",
            &[0, 2, 5, 9, 10, 11, 15, 18],
            &[1, 3, 4, 6, 12, 19, 21, 23],
            &[0, 2, 5, 7, 8, 9, 10, 22],
        ),
        ("elephoto", &[1, 3, 5, 7, 9], &[0, 4, 6, 10, 11], &[1, 2, 3, 5, 9]),
        ("elecomp", &[1, 2, 3, 4, 5], &[2, 3, 4, 8, 9], &[0, 1, 5, 6, 7]),
    ];

    /// The attribute and structure shift suite, one spec per preset.
    pub fn standard_suite(seed: u64) -> Vec<ShiftSpec> {
        let mut out = Vec::new();
        for alpha in FEATURE_MIX_ALPHAS {
            out.push(ShiftSpec::new(ShiftKind::FeatureMix { alpha }, seed));
        }
        for (_, beta, f_ii, f_ij) in STRUCTURE_LEVELS {
            out.push(ShiftSpec::new(ShiftKind::StructureRewire { beta, f_ii, f_ij }, seed));
        }
        for q in SEMANTIC_THRESHOLDS {
            out.push(ShiftSpec::new(
                ShiftKind::SemanticConnect {
                    mode: SemanticMode::Threshold,
                    threshold: Some(q),
                },
                seed,
            ));
        }
        for scope in [SwapScope::Intra, SwapScope::Inter, SwapScope::Random] {
            out.push(ShiftSpec::new(
                ShiftKind::TextSwap {
                    beta: TEXT_SWAP_BETA,
                    scope,
                },
                seed,
            ));
        }
        out
    }
}
