//! Directly-follows graphs and their object-centric merge.
//!
//! A DFG counts, per flattened case, how often one activity immediately
//! follows another. The object-centric graph merges the per-type DFGs: an
//! edge exists when any type's DFG has it, and carries one frequency per
//! object type (zero where that type's DFG lacks the edge).

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flatten::{flatten, FlattenedLog};
use crate::ocel::ObjectCentricEventLog;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown object type {0:?}")]
    UnknownObjectType(String),
    #[error("object type list must be non-empty and free of duplicates")]
    InvalidTypeList,
    #[error("malformed graph document: {0}")]
    MalformedGraph(String),
}

/// Single-type directly-follows graph: activities and weighted edges.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dfg {
    pub activities: BTreeSet<String>,
    pub edges: BTreeMap<(String, String), u64>,
}

/// Count adjacent activity pairs over every case sequence of the flattened
/// log. An empty log yields an empty graph; single-event cases contribute
/// activities but no edges.
pub fn discover_dfg(fl: &FlattenedLog) -> Dfg {
    let mut dfg = Dfg::default();
    for case in fl.case_sequences() {
        for activity in &case.activities {
            dfg.activities.insert((*activity).to_string());
        }
        for pair in case.activities.windows(2) {
            *dfg.edges
                .entry((pair[0].to_string(), pair[1].to_string()))
                .or_insert(0) += 1;
        }
    }
    dfg
}

/// Merged multi-type graph: each edge carries one frequency per object type,
/// aligned with `object_types`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ocdfg {
    pub activities: BTreeSet<String>,
    pub object_types: Vec<String>,
    pub edges: BTreeMap<(String, String), Vec<u64>>,
}

/// Flatten per type, discover each DFG, and merge.
pub fn discover_ocdfg(
    log: &Arc<ObjectCentricEventLog>,
    types: &[String],
) -> Result<Ocdfg, GraphError> {
    if types.is_empty() || types.iter().collect::<BTreeSet<_>>().len() != types.len() {
        return Err(GraphError::InvalidTypeList);
    }
    let dfgs: Vec<Dfg> = types
        .iter()
        .map(|ot| {
            flatten(log, ot)
                .map(|fl| discover_dfg(&fl))
                .map_err(|_| GraphError::UnknownObjectType(ot.clone()))
        })
        .collect::<Result<_, _>>()?;
    Ok(merge_dfgs(&dfgs, types))
}

/// Merge already-discovered per-type DFGs, in the given type order.
pub fn merge_dfgs(dfgs: &[Dfg], types: &[String]) -> Ocdfg {
    let mut activities = BTreeSet::new();
    let mut edges: BTreeMap<(String, String), Vec<u64>> = BTreeMap::new();
    for (i, dfg) in dfgs.iter().enumerate() {
        activities.extend(dfg.activities.iter().cloned());
        for (edge, &freq) in &dfg.edges {
            edges.entry(edge.clone()).or_insert_with(|| vec![0; dfgs.len()])[i] = freq;
        }
    }
    Ocdfg {
        activities,
        object_types: types.to_vec(),
        edges,
    }
}

impl Ocdfg {
    pub fn node_count(&self) -> usize {
        self.activities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Keep only edges with at least one component `>= min`. Nodes are kept
    /// unchanged. `min == 0` keeps everything.
    pub fn filter_min_freq(&self, min: u64) -> Ocdfg {
        Ocdfg {
            activities: self.activities.clone(),
            object_types: self.object_types.clone(),
            edges: self
                .edges
                .iter()
                .filter(|(_, freqs)| freqs.iter().any(|&f| f >= min))
                .map(|(edge, freqs)| (edge.clone(), freqs.clone()))
                .collect(),
        }
    }

    /// Deterministic DOT rendering; edge labels carry the nonzero per-type
    /// frequencies in type order.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph ocdfg {\n");
        let _ = writeln!(out, "  // object types: {}", self.object_types.join(", "));
        let _ = writeln!(out, "  rankdir=LR;");
        let _ = writeln!(out, "  node [shape=box];");
        for activity in &self.activities {
            let _ = writeln!(out, "  {};", dot_quote(activity));
        }
        for ((src, dst), freqs) in &self.edges {
            let label = self
                .object_types
                .iter()
                .zip(freqs)
                .filter(|(_, &f)| f > 0)
                .map(|(ot, f)| format!("{ot}={f}"))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(
                out,
                "  {} -> {} [label={}];",
                dot_quote(src),
                dot_quote(dst),
                dot_quote(&label)
            );
        }
        out.push_str("}\n");
        out
    }

    /// JSON export; see `from_json` for the inverse.
    pub fn to_json(&self) -> String {
        let doc = GraphDoc::from(self);
        serde_json::to_string_pretty(&doc).expect("graph document serializes")
    }

    /// Parse a JSON export back into a graph.
    pub fn from_json(text: &str) -> Result<Ocdfg, GraphError> {
        let doc: GraphDoc =
            serde_json::from_str(text).map_err(|e| GraphError::MalformedGraph(e.to_string()))?;
        doc.try_into()
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    object_types: Vec<String>,
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
}

#[derive(Serialize, Deserialize)]
struct GraphNode {
    index: usize,
    activity: String,
}

#[derive(Serialize, Deserialize)]
struct GraphEdge {
    source: String,
    target: String,
    frequencies: BTreeMap<String, u64>,
}

impl From<&Ocdfg> for GraphDoc {
    fn from(g: &Ocdfg) -> Self {
        let index = NodeIndex::from_activities(g.activities.iter().cloned());
        GraphDoc {
            object_types: g.object_types.clone(),
            nodes: index
                .labels()
                .iter()
                .enumerate()
                .map(|(i, a)| GraphNode {
                    index: i,
                    activity: a.clone(),
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|((src, dst), freqs)| GraphEdge {
                    source: src.clone(),
                    target: dst.clone(),
                    frequencies: g
                        .object_types
                        .iter()
                        .cloned()
                        .zip(freqs.iter().copied())
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<GraphDoc> for Ocdfg {
    type Error = GraphError;

    fn try_from(doc: GraphDoc) -> Result<Self, GraphError> {
        let activities: BTreeSet<String> = doc.nodes.into_iter().map(|n| n.activity).collect();
        let mut edges = BTreeMap::new();
        for edge in doc.edges {
            if !activities.contains(&edge.source) || !activities.contains(&edge.target) {
                return Err(GraphError::MalformedGraph(format!(
                    "edge {:?} -> {:?} references a missing node",
                    edge.source, edge.target
                )));
            }
            let freqs: Vec<u64> = doc
                .object_types
                .iter()
                .map(|ot| edge.frequencies.get(ot).copied().unwrap_or(0))
                .collect();
            edges.insert((edge.source, edge.target), freqs);
        }
        Ok(Ocdfg {
            activities,
            object_types: doc.object_types,
            edges,
        })
    }
}

/// Bijective activity label <-> dense index mapping, lexicographic by label,
/// so that saved models stay valid across runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeIndex {
    labels: Vec<String>,
}

impl NodeIndex {
    pub fn from_activities(activities: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = activities.into_iter().collect();
        NodeIndex {
            labels: set.into_iter().collect(),
        }
    }

    pub fn from_ocdfg(g: &Ocdfg) -> Self {
        Self::from_activities(g.activities.iter().cloned())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, activity: &str) -> Option<usize> {
        self.labels
            .binary_search_by(|label| label.as_str().cmp(activity))
            .ok()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(|s| s.as_str())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocel::{parse_ocel, OcelFormat, ParseOptions};
    use std::sync::Arc;

    fn log_from(json: &str) -> Arc<ObjectCentricEventLog> {
        Arc::new(
            parse_ocel(json.as_bytes(), OcelFormat::JsonOcel, &ParseOptions::default()).unwrap(),
        )
    }

    /// Single-type log with cases c1: A,B,C and c2: A,B.
    fn two_case_log() -> Arc<ObjectCentricEventLog> {
        log_from(
            r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["c1"]},
                "e2": {"ocel:activity": "B", "ocel:timestamp": "2024-01-01T01:00:00Z", "ocel:omap": ["c1"]},
                "e3": {"ocel:activity": "C", "ocel:timestamp": "2024-01-01T02:00:00Z", "ocel:omap": ["c1"]},
                "e4": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T03:00:00Z", "ocel:omap": ["c2"]},
                "e5": {"ocel:activity": "B", "ocel:timestamp": "2024-01-01T04:00:00Z", "ocel:omap": ["c2"]}
            },
            "ocel:objects": {
                "c1": {"ocel:type": "case"},
                "c2": {"ocel:type": "case"}
            }
        }"#,
        )
    }

    #[test]
    fn adjacent_pairs_are_counted() {
        let log = two_case_log();
        let fl = flatten(&log, "case").unwrap();
        let dfg = discover_dfg(&fl);
        assert_eq!(dfg.edges.len(), 2);
        assert_eq!(dfg.edges[&("A".into(), "B".into())], 2);
        assert_eq!(dfg.edges[&("B".into(), "C".into())], 1);
    }

    #[test]
    fn self_loops_from_repeated_activities() {
        let log = log_from(
            r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["c1"]},
                "e2": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T01:00:00Z", "ocel:omap": ["c1"]},
                "e3": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T02:00:00Z", "ocel:omap": ["c1"]}
            },
            "ocel:objects": {"c1": {"ocel:type": "case"}}
        }"#,
        );
        let dfg = discover_dfg(&flatten(&log, "case").unwrap());
        assert_eq!(dfg.edges.len(), 1);
        assert_eq!(dfg.edges[&("A".into(), "A".into())], 2);
    }

    #[test]
    fn single_event_cases_have_no_edges() {
        let log = log_from(
            r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["c1"]},
                "e2": {"ocel:activity": "B", "ocel:timestamp": "2024-01-01T01:00:00Z", "ocel:omap": ["c2"]}
            },
            "ocel:objects": {
                "c1": {"ocel:type": "case"},
                "c2": {"ocel:type": "case"}
            }
        }"#,
        );
        let dfg = discover_dfg(&flatten(&log, "case").unwrap());
        assert!(dfg.edges.is_empty());
        assert_eq!(dfg.activities.len(), 2);
    }

    #[test]
    fn merge_fills_zero_for_missing_types() {
        let mut item = Dfg::default();
        item.activities.extend(["PO".to_string(), "PI".to_string()]);
        item.edges.insert(("PO".into(), "PI".into()), 5);
        let mut order = Dfg::default();
        order
            .activities
            .extend(["PO".to_string(), "PI".to_string(), "SD".to_string()]);
        order.edges.insert(("PO".into(), "PI".into()), 2);
        order.edges.insert(("PO".into(), "SD".into()), 3);

        let merged = merge_dfgs(&[item, order], &["item".into(), "order".into()]);
        assert_eq!(merged.edges[&("PO".into(), "PI".into())], vec![5, 2]);
        assert_eq!(merged.edges[&("PO".into(), "SD".into())], vec![0, 3]);
        assert_eq!(merged.activities.len(), 3);
    }

    #[test]
    fn single_type_merge_is_isomorphic_to_its_dfg() {
        let log = two_case_log();
        let ocdfg = discover_ocdfg(&log, &["case".to_string()]).unwrap();
        let dfg = discover_dfg(&flatten(&log, "case").unwrap());
        assert_eq!(ocdfg.activities, dfg.activities);
        for (edge, freqs) in &ocdfg.edges {
            assert_eq!(freqs.len(), 1);
            assert_eq!(freqs[0], dfg.edges[edge]);
        }
    }

    #[test]
    fn disjoint_activity_sets_merge_disjointly() {
        let mut a = Dfg::default();
        a.activities.extend(["A".to_string(), "B".to_string()]);
        a.edges.insert(("A".into(), "B".into()), 1);
        let mut b = Dfg::default();
        b.activities.extend(["X".to_string(), "Y".to_string()]);
        b.edges.insert(("X".into(), "Y".into()), 4);

        let merged = merge_dfgs(&[a, b], &["t1".into(), "t2".into()]);
        assert_eq!(merged.edges.len(), 2);
        for freqs in merged.edges.values() {
            assert_eq!(freqs.iter().filter(|&&f| f > 0).count(), 1);
        }
    }

    #[test]
    fn unknown_type_rejected() {
        let log = two_case_log();
        assert!(matches!(
            discover_ocdfg(&log, &["nope".to_string()]),
            Err(GraphError::UnknownObjectType(_))
        ));
        assert!(matches!(
            discover_ocdfg(&log, &[]),
            Err(GraphError::InvalidTypeList)
        ));
        assert!(matches!(
            discover_ocdfg(&log, &["case".to_string(), "case".to_string()]),
            Err(GraphError::InvalidTypeList)
        ));
    }

    #[test]
    fn empty_graph_exports() {
        let g = Ocdfg {
            activities: BTreeSet::new(),
            object_types: vec!["case".into()],
            edges: BTreeMap::new(),
        };
        let dot = g.to_dot();
        assert!(dot.starts_with("digraph"));
        let back = Ocdfg::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn dot_lists_every_node_and_edge() {
        let log = two_case_log();
        let g = discover_ocdfg(&log, &["case".to_string()]).unwrap();
        let dot = g.to_dot();
        for activity in ["\"A\"", "\"B\"", "\"C\""] {
            assert!(dot.contains(activity), "missing {activity} in {dot}");
        }
        assert!(dot.contains("\"A\" -> \"B\" [label=\"case=2\"];"));
    }

    #[test]
    fn json_round_trip_preserves_graph() {
        let log = two_case_log();
        let g = discover_ocdfg(&log, &["case".to_string()]).unwrap();
        let back = Ocdfg::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn min_freq_filter_keeps_edges_with_any_component_at_threshold() {
        let mut a = Dfg::default();
        a.activities.extend(["A".to_string(), "B".to_string(), "C".to_string()]);
        a.edges.insert(("A".into(), "B".into()), 12);
        a.edges.insert(("B".into(), "C".into()), 3);
        let merged = merge_dfgs(&[a], &["t".into()]);
        let filtered = merged.filter_min_freq(10);
        assert_eq!(filtered.edges.len(), 1);
        assert!(filtered.edges.contains_key(&("A".into(), "B".into())));
        assert_eq!(filtered.activities.len(), 3);
    }

    #[test]
    fn node_index_is_lexicographic_and_bijective() {
        let index = NodeIndex::from_activities(["B".to_string(), "A".to_string(), "C".to_string()]);
        assert_eq!(index.labels(), &["A", "B", "C"]);
        assert_eq!(index.index_of("B"), Some(1));
        assert_eq!(index.label(2), Some("C"));
        assert_eq!(index.index_of("Z"), None);
        for (i, label) in index.labels().iter().enumerate() {
            assert_eq!(index.index_of(label), Some(i));
        }
    }
}
