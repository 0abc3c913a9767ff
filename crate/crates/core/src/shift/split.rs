use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{OodSplit, ShiftKind, ShiftSpec};
use crate::error::{Error, Result};
use crate::graph::TrnGraph;

/// Withholds `ood_classes`: the ID graph is the subgraph induced by the other
/// classes with labels re-indexed in ascending order; the evaluation graph is
/// the full graph with the withheld classes flagged.
pub fn label_leave_out(g: &TrnGraph, ood_classes: &[usize]) -> Result<OodSplit> {
    let c = g.num_classes();
    let mut is_ood = vec![false; c];
    for &k in ood_classes {
        if k >= c {
            return Err(Error::InvalidParameter(format!("OOD class {k} outside 0..{c}")));
        }
        is_ood[k] = true;
    }
    let held = is_ood.iter().filter(|&&o| o).count();
    if held == 0 {
        return Err(Error::InvalidParameter("label leave-out needs at least one OOD class".into()));
    }
    if held == c {
        return Err(Error::InvalidParameter(
            "label leave-out cannot withhold every class".into(),
        ));
    }
    let mut class_map = vec![None; c];
    let mut next = 0;
    for (k, slot) in class_map.iter_mut().enumerate() {
        if !is_ood[k] {
            *slot = Some(next);
            next += 1;
        }
    }
    let id_nodes: Vec<usize> = (0..g.n()).filter(|&v| !is_ood[g.labels()[v]]).collect();
    let sub = g.induced_subgraph(&id_nodes);
    let labels = sub
        .labels()
        .iter()
        .map(|&y| class_map[y].expect("ID label"))
        .collect();
    let id_graph = sub.relabeled(labels, next);
    let ood_flags = g.labels().iter().map(|&y| is_ood[y]).collect();
    let mut sorted: Vec<usize> = ood_classes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(OodSplit {
        spec: ShiftSpec::new(ShiftKind::LabelLeaveOut { ood_classes: sorted }, 0),
        id_graph,
        ood_graph: g.clone(),
        ood_flags,
        id_nodes,
        ood_nodes: (0..g.n()).collect(),
        paired: false,
        class_map: Some(class_map),
        warnings: Vec::new(),
    })
}

/// Splits by publication year. The ID graph is induced on `id_years`; the
/// evaluation graph is induced on every node published up to the end of
/// `ood_years`, with nodes inside `ood_years` flagged. Ranges are inclusive.
pub fn temporal_split(g: &TrnGraph, id_years: [i64; 2], ood_years: [i64; 2]) -> Result<OodSplit> {
    let kind = ShiftKind::TemporalSplit { id_years, ood_years };
    kind.validate()?;
    let years = g
        .years()
        .ok_or_else(|| Error::InvalidGraph("temporal split needs node years".into()))?;
    let within = |y: i64, r: [i64; 2]| r[0] <= y && y <= r[1];
    let id_nodes: Vec<usize> = (0..g.n()).filter(|&v| within(years[v], id_years)).collect();
    let ood_nodes: Vec<usize> = (0..g.n()).filter(|&v| years[v] <= ood_years[1]).collect();
    let ood_flags: Vec<bool> = ood_nodes.iter().map(|&v| within(years[v], ood_years)).collect();
    let mut warnings = Vec::new();
    if !ood_flags.iter().any(|&f| f) {
        warnings.push(format!(
            "no node falls in the OOD years {}..{}",
            ood_years[0], ood_years[1]
        ));
    }
    if id_years[1] > ood_years[1] {
        warnings.push("ID years end after the OOD years; ID nodes are absent from the evaluation graph".into());
    }
    if id_nodes.is_empty() {
        warnings.push(format!("no node falls in the ID years {}..{}", id_years[0], id_years[1]));
    }
    Ok(OodSplit {
        spec: ShiftSpec::new(kind, 0),
        id_graph: g.induced_subgraph(&id_nodes),
        ood_graph: g.induced_subgraph(&ood_nodes),
        ood_flags,
        id_nodes,
        ood_nodes,
        paired: false,
        class_map: None,
        warnings,
    })
}
