//! Flattening: restrict an object-centric log to a single object type.
//!
//! The flattened log keeps exactly the source events that touch at least one
//! object of the chosen type. Each retained event's case set is its omap
//! restricted to that type, and each object's case sequence lists the event
//! in log order. An event touching several same-type objects is kept once
//! physically and appears in every affected object's sequence (convergence).

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::ocel::{Event, EventId, ObjectCentricEventLog, Timestamp};

#[derive(Debug, Error)]
pub enum FlattenError {
    #[error("unknown object type {0:?}")]
    UnknownObjectType(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A single-object-type view over a shared source log.
///
/// Event storage is borrowed from the source via `Arc`; the per-case
/// sequences are index lists, so iterating cases materializes views rather
/// than copies.
#[derive(Debug, Clone)]
pub struct FlattenedLog {
    source: Arc<ObjectCentricEventLog>,
    object_type: String,
    event_indices: Vec<usize>,
    cases: Vec<(String, Vec<usize>)>,
}

/// A flattened event: the source event restricted to one object type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlattenedEvent<'a> {
    pub id: &'a EventId,
    pub activity: &'a str,
    pub timestamp: Timestamp,
    /// Object ids of the flattened type appearing on this event.
    pub case: BTreeSet<&'a str>,
}

/// One object's projected trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseSequence<'a> {
    pub object_id: &'a str,
    pub activities: Vec<&'a str>,
    pub timestamps: Vec<Timestamp>,
}

/// Flatten `log` over object type `ot`.
pub fn flatten(
    log: &Arc<ObjectCentricEventLog>,
    ot: &str,
) -> Result<FlattenedLog, FlattenError> {
    if !log.object_types().contains(ot) {
        return Err(FlattenError::UnknownObjectType(ot.to_string()));
    }
    let mut event_indices = Vec::new();
    let mut cases: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, event) in log.events().iter().enumerate() {
        let mut retained = false;
        for obj in &event.omap {
            if log.object_type_of(obj) == Some(ot) {
                retained = true;
                cases.entry(obj.as_str()).or_default().push(idx);
            }
        }
        if retained {
            event_indices.push(idx);
        }
    }
    Ok(FlattenedLog {
        source: Arc::clone(log),
        object_type: ot.to_string(),
        event_indices,
        cases: cases
            .into_iter()
            .map(|(id, idxs)| (id.to_string(), idxs))
            .collect(),
    })
}

impl FlattenedLog {
    pub fn object_type(&self) -> &str {
        &self.object_type
    }

    pub fn source(&self) -> &Arc<ObjectCentricEventLog> {
        &self.source
    }

    pub fn event_count(&self) -> usize {
        self.event_indices.len()
    }

    pub fn case_count(&self) -> usize {
        self.cases.len()
    }

    fn view(&self, idx: usize) -> FlattenedEvent<'_> {
        let event: &Event = &self.source.events()[idx];
        let case = event
            .omap
            .iter()
            .filter(|obj| self.source.object_type_of(obj) == Some(self.object_type.as_str()))
            .map(|obj| obj.as_str())
            .collect();
        FlattenedEvent {
            id: &event.id,
            activity: &event.activity,
            timestamp: event.timestamp,
            case,
        }
    }

    /// Retained events in log order.
    pub fn events(&self) -> impl Iterator<Item = FlattenedEvent<'_>> + '_ {
        self.event_indices.iter().map(|&idx| self.view(idx))
    }

    /// Event id sequences per case object, ordered by object id.
    pub fn cases(&self) -> impl Iterator<Item = (&str, impl Iterator<Item = &EventId> + '_)> + '_ {
        self.cases.iter().map(|(id, idxs)| {
            (
                id.as_str(),
                idxs.iter().map(|&i| &self.source.events()[i].id),
            )
        })
    }

    /// One entry per object that appears in at least one event; activities
    /// and timestamps follow the log's total order.
    pub fn case_sequences(&self) -> Vec<CaseSequence<'_>> {
        self.cases
            .iter()
            .map(|(id, idxs)| {
                let events = self.source.events();
                CaseSequence {
                    object_id: id.as_str(),
                    activities: idxs.iter().map(|&i| events[i].activity.as_str()).collect(),
                    timestamps: idxs.iter().map(|&i| events[i].timestamp).collect(),
                }
            })
            .collect()
    }

    /// Number of retained events whose case set has more than one object
    /// (one event will be replicated across several sequences).
    pub fn multi_case_event_count(&self) -> usize {
        self.event_indices
            .iter()
            .filter(|&&idx| self.view(idx).case.len() > 1)
            .count()
    }

    /// CSV export: `case_id,event_id,activity,timestamp`, one row per
    /// (case, event) pair, cases ordered by object id.
    pub fn export_csv(&self, mut w: impl Write) -> Result<(), FlattenError> {
        writeln!(w, "case_id,event_id,activity,timestamp")?;
        let events = self.source.events();
        for (case_id, idxs) in &self.cases {
            for &idx in idxs {
                let event = &events[idx];
                writeln!(
                    w,
                    "{},{},{},{}",
                    csv_field(case_id),
                    csv_field(event.id.as_str()),
                    csv_field(&event.activity),
                    event.timestamp.to_rfc3339()
                )?;
            }
        }
        Ok(())
    }
}

pub(crate) fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocel::{parse_ocel, OcelFormat, ParseOptions};

    fn log_from(json: &str) -> Arc<ObjectCentricEventLog> {
        Arc::new(parse_ocel(json.as_bytes(), OcelFormat::JsonOcel, &ParseOptions::default()).unwrap())
    }

    fn mixed_log() -> Arc<ObjectCentricEventLog> {
        log_from(
            r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "Place Order", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["o1", "i1", "i2"]},
                "e2": {"ocel:activity": "Pick Item", "ocel:timestamp": "2024-01-01T01:00:00Z", "ocel:omap": ["i2"]},
                "e3": {"ocel:activity": "Send Delivery", "ocel:timestamp": "2024-01-01T02:00:00Z", "ocel:omap": ["i1", "i2"]}
            },
            "ocel:objects": {
                "o1": {"ocel:type": "order"},
                "i1": {"ocel:type": "item"},
                "i2": {"ocel:type": "item"}
            }
        }"#,
        )
    }

    #[test]
    fn case_sets_restrict_to_the_requested_type() {
        let log = mixed_log();
        let items = flatten(&log, "item").unwrap();
        let first = items.events().next().unwrap();
        assert_eq!(first.case, ["i1", "i2"].into_iter().collect());

        let orders = flatten(&log, "order").unwrap();
        assert_eq!(orders.event_count(), 1);
        let first = orders.events().next().unwrap();
        assert_eq!(first.case, ["o1"].into_iter().collect());
    }

    #[test]
    fn item_sequence_follows_log_order() {
        let log = mixed_log();
        let items = flatten(&log, "item").unwrap();
        let sequences = items.case_sequences();
        let i2 = sequences.iter().find(|c| c.object_id == "i2").unwrap();
        assert_eq!(i2.activities, vec!["Place Order", "Pick Item", "Send Delivery"]);
    }

    #[test]
    fn unknown_type_errors() {
        let log = mixed_log();
        assert!(matches!(
            flatten(&log, "customer"),
            Err(FlattenError::UnknownObjectType(_))
        ));
    }

    #[test]
    fn type_without_events_yields_empty_view() {
        let log = log_from(
            r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["o1"]}
            },
            "ocel:objects": {
                "o1": {"ocel:type": "order"},
                "p1": {"ocel:type": "package"}
            }
        }"#,
        );
        let packages = flatten(&log, "package").unwrap();
        assert_eq!(packages.event_count(), 0);
        assert_eq!(packages.case_count(), 0);
    }

    #[test]
    fn shared_event_appears_in_both_sequences() {
        let log = mixed_log();
        let items = flatten(&log, "item").unwrap();
        let sequences = items.case_sequences();
        let i1 = sequences.iter().find(|c| c.object_id == "i1").unwrap();
        let i2 = sequences.iter().find(|c| c.object_id == "i2").unwrap();
        assert!(i1.activities.contains(&"Send Delivery"));
        assert!(i2.activities.contains(&"Send Delivery"));
        assert_eq!(items.multi_case_event_count(), 2);
    }

    #[test]
    fn convergence_inflates_case_length_sum() {
        let log = mixed_log();
        let items = flatten(&log, "item").unwrap();
        let total: usize = items.case_sequences().iter().map(|c| c.activities.len()).sum();
        assert!(total >= items.event_count());
        assert_eq!(total, 5);
        assert_eq!(items.event_count(), 3);
    }

    #[test]
    fn union_over_types_recovers_all_events() {
        let log = mixed_log();
        let mut union: BTreeSet<String> = BTreeSet::new();
        for ot in log.object_types() {
            let fl = flatten(&log, ot).unwrap();
            union.extend(fl.events().map(|e| e.id.as_str().to_string()));
        }
        let all: BTreeSet<String> = log
            .events()
            .iter()
            .filter(|e| !e.omap.is_empty())
            .map(|e| e.id.as_str().to_string())
            .collect();
        assert_eq!(union, all);
    }

    #[test]
    fn order_preserved_within_cases() {
        let log = mixed_log();
        let items = flatten(&log, "item").unwrap();
        for case in items.case_sequences() {
            for pair in case.timestamps.windows(2) {
                assert!(pair[0] <= pair[1]);
            }
        }
    }

    #[test]
    fn csv_export_one_row_per_case_event_pair() {
        let log = mixed_log();
        let items = flatten(&log, "item").unwrap();
        let mut buf = Vec::new();
        items.export_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "case_id,event_id,activity,timestamp");
        assert_eq!(rows.len(), 1 + 5);
        assert!(rows[1].starts_with("i1,e1,Place Order,"));
    }

    #[test]
    fn csv_fields_with_commas_are_quoted() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
