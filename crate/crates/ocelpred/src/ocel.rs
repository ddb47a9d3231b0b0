//! Object-centric event logs: types, JSON-OCEL parsing, validation.
//!
//! A log is a set of events, a set of typed objects, and the mapping of each
//! event to its activity, timestamp and related objects. Events are kept in a
//! total order: ascending timestamp, ties broken lexicographically by event id
//! so that downstream discovery and prefix extraction are deterministic.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while parsing or validating a log.
#[derive(Debug, Error)]
pub enum OcelError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("unparseable timestamp {value:?} on event {event}")]
    UnparseableTimestamp { event: String, value: String },
    #[error("validation failed:\n{0}")]
    Validation(ValidationReport),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One rejected event and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    /// An omap entry references an object id that is not declared.
    DanglingObjectRef { event: String, object: String },
    /// The event references no objects at all.
    EmptyOmap { event: String },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::DanglingObjectRef { event, object } => {
                write!(f, "event {event}: omap references unknown object {object:?}")
            }
            ValidationIssue::EmptyOmap { event } => {
                write!(f, "event {event}: empty omap")
            }
        }
    }
}

/// All issues collected in one validation pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "  {issue}")?;
        }
        write!(f, "  ({} issue(s) total)", self.issues.len())
    }
}

/// Opaque event identifier, unique within one log.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(String);

impl EventId {
    pub fn new(id: impl Into<String>) -> Self {
        EventId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Absolute instant with millisecond precision (epoch milliseconds, UTC).
///
/// Inputs with sub-millisecond digits are truncated to milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    /// Parse ISO-8601, with or without a timezone offset. Naive timestamps
    /// (no offset) are interpreted as UTC; a space separator between date and
    /// time is accepted alongside the standard `T`.
    pub fn parse(value: &str) -> Option<Self> {
        let s = value.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Some(Timestamp(dt.timestamp_millis()));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f%z", "%Y-%m-%d %H:%M:%S%.f%z"] {
            if let Ok(dt) = DateTime::parse_from_str(s, fmt) {
                return Some(Timestamp(dt.timestamp_millis()));
            }
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
            if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
                return Some(Timestamp(naive.and_utc().timestamp_millis()));
            }
        }
        None
    }

    /// RFC 3339 rendering in UTC with millisecond precision.
    pub fn to_rfc3339(self) -> String {
        match Utc.timestamp_millis_opt(self.0) {
            chrono::LocalResult::Single(dt) => dt.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string(),
            _ => format!("@{}ms", self.0),
        }
    }

    /// Seconds since the start of the UTC day the instant falls in.
    pub fn seconds_since_midnight(self) -> f64 {
        const DAY_MS: i64 = 86_400_000;
        self.0.rem_euclid(DAY_MS) as f64 / 1000.0
    }

    /// ISO weekday, Monday = 0 .. Sunday = 6.
    pub fn weekday(self) -> u32 {
        use chrono::Datelike;
        match Utc.timestamp_millis_opt(self.0) {
            chrono::LocalResult::Single(dt) => dt.weekday().num_days_from_monday(),
            // Unrepresentable instants cannot come from a parsed log.
            _ => 0,
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

/// An object identifier together with its single type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRef {
    pub id: String,
    pub type_name: String,
}

/// One event: activity, timestamp and the set of related object ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    pub activity: String,
    pub timestamp: Timestamp,
    pub omap: BTreeSet<String>,
    /// Event attribute map, retained only when requested at parse time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<BTreeMap<String, serde_json::Value>>,
}

/// A validated object-centric event log.
///
/// `events` is sorted ascending by `(timestamp, id)`; `object_types` equals
/// the set of types appearing in `objects`. The log is immutable after
/// construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectCentricEventLog {
    events: Vec<Event>,
    objects: BTreeMap<String, ObjectRef>,
    object_types: BTreeSet<String>,
}

impl ObjectCentricEventLog {
    /// Build a log from parts, sorting events and checking referential
    /// integrity. Collects every issue before failing.
    pub fn new(
        mut events: Vec<Event>,
        objects: BTreeMap<String, ObjectRef>,
        options: &ParseOptions,
    ) -> Result<(Self, ValidationReport), OcelError> {
        let mut report = ValidationReport::default();
        let validate = |event: &Event, report: &mut ValidationReport| {
            let mut ok = true;
            if event.omap.is_empty() {
                report.issues.push(ValidationIssue::EmptyOmap {
                    event: event.id.as_str().to_string(),
                });
                ok = false;
            }
            for obj in &event.omap {
                if !objects.contains_key(obj) {
                    report.issues.push(ValidationIssue::DanglingObjectRef {
                        event: event.id.as_str().to_string(),
                        object: obj.clone(),
                    });
                    ok = false;
                }
            }
            ok
        };
        events.retain(|event| validate(event, &mut report));
        if !report.is_empty() && !options.drop_invalid {
            return Err(OcelError::Validation(report));
        }
        events.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.id.cmp(&b.id))
        });
        let object_types = objects.values().map(|o| o.type_name.clone()).collect();
        Ok((
            ObjectCentricEventLog {
                events,
                objects,
                object_types,
            },
            report,
        ))
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn objects(&self) -> &BTreeMap<String, ObjectRef> {
        &self.objects
    }

    pub fn object_types(&self) -> &BTreeSet<String> {
        &self.object_types
    }

    pub fn object_type_of(&self, object_id: &str) -> Option<&str> {
        self.objects.get(object_id).map(|o| o.type_name.as_str())
    }

    /// Distinct activity labels, sorted.
    pub fn activities(&self) -> BTreeSet<String> {
        self.events.iter().map(|e| e.activity.clone()).collect()
    }
}

/// Parser configuration.
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Drop events that fail validation (empty or dangling omap) instead of
    /// failing the whole parse. Real logs contain noise; the dropped events
    /// are listed in the returned [`ValidationReport`].
    pub drop_invalid: bool,
    /// Retain per-event attribute maps (`ocel:vmap`). Off by default to keep
    /// large logs lean.
    pub keep_attributes: bool,
}

/// Supported serialization formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcelFormat {
    /// The JSON flavor of the OCEL 1.0 interchange format.
    JsonOcel,
}

#[derive(Deserialize)]
struct RawOcel {
    #[serde(rename = "ocel:events")]
    events: BTreeMap<String, RawEvent>,
    #[serde(rename = "ocel:objects")]
    objects: BTreeMap<String, RawObject>,
}

#[derive(Deserialize)]
struct RawEvent {
    #[serde(rename = "ocel:activity")]
    activity: String,
    #[serde(rename = "ocel:timestamp")]
    timestamp: String,
    #[serde(rename = "ocel:omap")]
    omap: Vec<String>,
    #[serde(rename = "ocel:vmap", default)]
    vmap: Option<BTreeMap<String, serde_json::Value>>,
}

#[derive(Deserialize)]
struct RawObject {
    #[serde(rename = "ocel:type")]
    type_name: String,
}

/// Parse a JSON-OCEL byte stream into a validated log.
pub fn parse_ocel(
    source: impl Read,
    format: OcelFormat,
    options: &ParseOptions,
) -> Result<ObjectCentricEventLog, OcelError> {
    parse_ocel_with_report(source, format, options).map(|(log, _)| log)
}

/// Like [`parse_ocel`] but also returns the validation report, which lists
/// the events dropped under [`ParseOptions::drop_invalid`].
pub fn parse_ocel_with_report(
    source: impl Read,
    format: OcelFormat,
    options: &ParseOptions,
) -> Result<(ObjectCentricEventLog, ValidationReport), OcelError> {
    let OcelFormat::JsonOcel = format;
    let raw: RawOcel = serde_json::from_reader(std::io::BufReader::new(source))
        .map_err(|e| OcelError::MalformedInput(e.to_string()))?;

    if raw.events.values().any(|e| e.activity.is_empty()) {
        return Err(OcelError::MalformedInput(
            "event with empty ocel:activity".into(),
        ));
    }

    let mut events = Vec::with_capacity(raw.events.len());
    for (id, raw_event) in raw.events {
        let timestamp = Timestamp::parse(&raw_event.timestamp).ok_or_else(|| {
            OcelError::UnparseableTimestamp {
                event: id.clone(),
                value: raw_event.timestamp.clone(),
            }
        })?;
        events.push(Event {
            id: EventId::new(id),
            activity: raw_event.activity,
            timestamp,
            omap: raw_event.omap.into_iter().collect(),
            attributes: if options.keep_attributes {
                raw_event.vmap
            } else {
                None
            },
        });
    }

    let objects: BTreeMap<String, ObjectRef> = raw
        .objects
        .into_iter()
        .map(|(id, raw_object)| {
            if raw_object.type_name.is_empty() {
                Err(OcelError::MalformedInput(format!(
                    "object {id} has an empty ocel:type"
                )))
            } else {
                Ok((
                    id.clone(),
                    ObjectRef {
                        id,
                        type_name: raw_object.type_name,
                    },
                ))
            }
        })
        .collect::<Result<_, _>>()?;

    ObjectCentricEventLog::new(events, objects, options)
}

/// Serialize a log back to JSON-OCEL. Events appear in log order; retained
/// attribute maps are written back, dropped ones are simply absent.
pub fn serialize_ocel(log: &ObjectCentricEventLog) -> serde_json::Value {
    use serde_json::{json, Map, Value};
    let mut events = Map::new();
    for event in log.events() {
        let mut entry = Map::new();
        entry.insert("ocel:activity".into(), json!(event.activity));
        entry.insert("ocel:timestamp".into(), json!(event.timestamp.to_rfc3339()));
        entry.insert(
            "ocel:omap".into(),
            Value::Array(event.omap.iter().map(|o| json!(o)).collect()),
        );
        if let Some(attrs) = &event.attributes {
            entry.insert(
                "ocel:vmap".into(),
                Value::Object(attrs.clone().into_iter().collect()),
            );
        }
        events.insert(event.id.as_str().to_string(), Value::Object(entry));
    }
    let mut objects = Map::new();
    for (id, obj) in log.objects() {
        objects.insert(id.clone(), json!({ "ocel:type": obj.type_name }));
    }
    json!({
        "ocel:global-log": {
            "ocel:version": "1.0",
            "ocel:ordering": "timestamp",
            "ocel:attribute-names": [],
            "ocel:object-types": log.object_types().iter().collect::<Vec<_>>(),
        },
        "ocel:global-event": { "ocel:activity": "__INVALID__" },
        "ocel:global-object": { "ocel:type": "__INVALID__" },
        "ocel:events": Value::Object(events),
        "ocel:objects": Value::Object(objects),
    })
}

/// Headline counts for a log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub events: usize,
    pub objects: usize,
    pub object_types: usize,
    pub activities: usize,
    /// First and last event timestamps; `None` for an empty log.
    pub time_span: Option<(Timestamp, Timestamp)>,
}

/// Exact counts and the covered time span.
pub fn log_summary(log: &ObjectCentricEventLog) -> SummaryReport {
    let time_span = match (log.events().first(), log.events().last()) {
        (Some(first), Some(last)) => Some((first.timestamp, last.timestamp)),
        _ => None,
    };
    SummaryReport {
        events: log.events().len(),
        objects: log.objects().len(),
        object_types: log.object_types().len(),
        activities: log.activities().len(),
        time_span,
    }
}

impl fmt::Display for SummaryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "events:       {}", self.events)?;
        writeln!(f, "objects:      {}", self.objects)?;
        writeln!(f, "object types: {}", self.object_types)?;
        writeln!(f, "activities:   {}", self.activities)?;
        match self.time_span {
            Some((first, last)) => write!(f, "time span:    {first} .. {last}"),
            None => write!(f, "time span:    (empty)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> &'static str {
        r#"{
            "ocel:events": {
                "e1": {
                    "ocel:activity": "A",
                    "ocel:timestamp": "2024-01-01T00:00:00Z",
                    "ocel:omap": ["o1"]
                }
            },
            "ocel:objects": {
                "o1": { "ocel:type": "order" }
            }
        }"#
    }

    fn parse(json: &str) -> Result<ObjectCentricEventLog, OcelError> {
        parse_ocel(json.as_bytes(), OcelFormat::JsonOcel, &ParseOptions::default())
    }

    #[test]
    fn minimal_log_parses() {
        let log = parse(minimal_json()).unwrap();
        assert_eq!(log.events().len(), 1);
        assert_eq!(log.objects().len(), 1);
        assert_eq!(
            log.object_types().iter().collect::<Vec<_>>(),
            vec!["order"]
        );
        let event = &log.events()[0];
        assert_eq!(event.activity, "A");
        assert_eq!(event.timestamp, Timestamp::parse("2024-01-01T00:00:00Z").unwrap());
    }

    #[test]
    fn equal_timestamps_break_ties_by_event_id() {
        let json = r#"{
            "ocel:events": {
                "e2": {"ocel:activity": "B", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["o1"]},
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["o1"]}
            },
            "ocel:objects": {"o1": {"ocel:type": "order"}}
        }"#;
        let log = parse(json).unwrap();
        let ids: Vec<&str> = log.events().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["e1", "e2"]);
    }

    #[test]
    fn dangling_object_ref_is_rejected() {
        let json = r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["oX"]}
            },
            "ocel:objects": {"o1": {"ocel:type": "order"}}
        }"#;
        match parse(json) {
            Err(OcelError::Validation(report)) => {
                assert_eq!(report.len(), 1);
                assert!(matches!(
                    &report.issues[0],
                    ValidationIssue::DanglingObjectRef { object, .. } if object == "oX"
                ));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_omap_rejected_unless_dropping() {
        let json = r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": []},
                "e2": {"ocel:activity": "B", "ocel:timestamp": "2024-01-02T00:00:00Z", "ocel:omap": ["o1"]}
            },
            "ocel:objects": {"o1": {"ocel:type": "order"}}
        }"#;
        assert!(matches!(parse(json), Err(OcelError::Validation(_))));

        let options = ParseOptions {
            drop_invalid: true,
            ..ParseOptions::default()
        };
        let (log, report) =
            parse_ocel_with_report(json.as_bytes(), OcelFormat::JsonOcel, &options).unwrap();
        assert_eq!(log.events().len(), 1);
        assert_eq!(log.events()[0].id.as_str(), "e2");
        assert_eq!(report.len(), 1);
    }

    #[test]
    fn malformed_json_is_malformed_input() {
        assert!(matches!(
            parse("{ not json"),
            Err(OcelError::MalformedInput(_))
        ));
        assert!(matches!(
            parse(r#"{"ocel:events": {}}"#),
            Err(OcelError::MalformedInput(_))
        ));
    }

    #[test]
    fn bad_timestamp_reports_event() {
        let json = r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "A", "ocel:timestamp": "sometime", "ocel:omap": ["o1"]}
            },
            "ocel:objects": {"o1": {"ocel:type": "order"}}
        }"#;
        match parse(json) {
            Err(OcelError::UnparseableTimestamp { event, value }) => {
                assert_eq!(event, "e1");
                assert_eq!(value, "sometime");
            }
            other => panic!("expected timestamp error, got {other:?}"),
        }
    }

    #[test]
    fn timestamp_formats() {
        let utc = Timestamp::parse("2024-01-01T12:00:00Z").unwrap();
        let offset = Timestamp::parse("2024-01-01T14:00:00+02:00").unwrap();
        let naive = Timestamp::parse("2024-01-01T12:00:00").unwrap();
        let spaced = Timestamp::parse("2024-01-01 12:00:00").unwrap();
        let micros = Timestamp::parse("2024-01-01 12:00:00.123456").unwrap();
        assert_eq!(utc, offset);
        assert_eq!(utc, naive);
        assert_eq!(utc, spaced);
        assert_eq!(micros.millis() - utc.millis(), 123);
        assert!(Timestamp::parse("not-a-date").is_none());
    }

    #[test]
    fn summary_counts_are_exact() {
        let json = r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["o1"]},
                "e2": {"ocel:activity": "B", "ocel:timestamp": "2024-01-03T00:00:00Z", "ocel:omap": ["o1", "i1"]},
                "e3": {"ocel:activity": "A", "ocel:timestamp": "2024-01-02T00:00:00Z", "ocel:omap": ["i1"]}
            },
            "ocel:objects": {
                "o1": {"ocel:type": "order"},
                "i1": {"ocel:type": "item"}
            }
        }"#;
        let log = parse(json).unwrap();
        let summary = log_summary(&log);
        assert_eq!(summary.events, 3);
        assert_eq!(summary.objects, 2);
        assert_eq!(summary.object_types, 2);
        assert_eq!(summary.activities, 2);
        let (first, last) = summary.time_span.unwrap();
        assert_eq!(first, Timestamp::parse("2024-01-01T00:00:00Z").unwrap());
        assert_eq!(last, Timestamp::parse("2024-01-03T00:00:00Z").unwrap());
    }

    #[test]
    fn empty_log_summary() {
        let json = r#"{"ocel:events": {}, "ocel:objects": {}}"#;
        let log = parse(json).unwrap();
        let summary = log_summary(&log);
        assert_eq!(
            (summary.events, summary.objects, summary.object_types, summary.activities),
            (0, 0, 0, 0)
        );
        assert!(summary.time_span.is_none());
    }

    #[test]
    fn sortedness_invariant() {
        let json = r#"{
            "ocel:events": {
                "e3": {"ocel:activity": "C", "ocel:timestamp": "2024-01-03T00:00:00Z", "ocel:omap": ["o1"]},
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00Z", "ocel:omap": ["o1"]},
                "e2": {"ocel:activity": "B", "ocel:timestamp": "2024-01-02T00:00:00Z", "ocel:omap": ["o1"]}
            },
            "ocel:objects": {"o1": {"ocel:type": "order"}}
        }"#;
        let log = parse(json).unwrap();
        for pair in log.events().windows(2) {
            assert!(pair[0].timestamp <= pair[1].timestamp);
        }
    }

    #[test]
    fn serialize_round_trip() {
        let json = r#"{
            "ocel:events": {
                "e1": {"ocel:activity": "A", "ocel:timestamp": "2024-01-01T00:00:00.250Z", "ocel:omap": ["o1", "i1"]},
                "e2": {"ocel:activity": "B", "ocel:timestamp": "2024-01-02T08:30:00Z", "ocel:omap": ["i1"]}
            },
            "ocel:objects": {
                "o1": {"ocel:type": "order"},
                "i1": {"ocel:type": "item"}
            }
        }"#;
        let log = parse(json).unwrap();
        let serialized = serde_json::to_string(&serialize_ocel(&log)).unwrap();
        let reparsed = parse(&serialized).unwrap();
        assert_eq!(log, reparsed);
    }
}
