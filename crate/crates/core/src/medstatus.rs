//! Medication in-use status from classified (date, medication) relations,
//! and the `ID,Event,Status,Start,Stop` table.
//!
//! Relations here are always read as `date REL medication`: `AFTER` means
//! the date lies after the medication. Classifier output is stated from the
//! medication's side and must be inverted ([`Relation::inverse`]) before it
//! reaches this module. Rules, checked in order:
//!
//! 1. `rel(admission) = AFTER` and `rel(discharge) ∈ {BEFORE, OVERLAP}`
//! 2. `rel(admission) = OVERLAP` and `rel(discharge) = OVERLAP`
//! 3. some other date strictly between the anchors has `rel = OVERLAP`, and
//!    `rel(discharge) ∈ {BEFORE, OVERLAP}`
//! 4. otherwise not in use.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedDocument, EntitySpan, Relation};
use crate::error::{Error, Result, Warnings};

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

fn month_number(word: &str) -> Option<u32> {
    let w = word.trim_end_matches('.').to_lowercase();
    if w.len() < 3 {
        return None;
    }
    MONTHS
        .iter()
        .position(|m| *m == w || (w.len() == 3 && m.starts_with(&w)) || (w == "sept" && *m == "september"))
        .map(|i| i as u32 + 1)
}

fn valid(year: u32, month: u32, day: Option<u32>) -> bool {
    (1000..=9999).contains(&year) && (1..=12).contains(&month) && day.is_none_or(|d| (1..=31).contains(&d))
}

fn render(year: u32, month: u32, day: Option<u32>) -> Option<String> {
    if !valid(year, month, day) {
        return None;
    }
    Some(match day {
        Some(d) => format!("{year:04}-{month:02}-{d:02}"),
        None => format!("{year:04}-{month:02}"),
    })
}

fn digits(s: &str, min: usize, max: usize) -> Option<u32> {
    (s.len() >= min && s.len() <= max && s.bytes().all(|b| b.is_ascii_digit()))
        .then(|| s.parse().ok())
        .flatten()
}

/// `MM/DD/YYYY` (month first), `YYYY-MM-DD`, `Month YYYY` and
/// `Month DD, YYYY` to `YYYY-MM[-DD]`. Anything else, including relative
/// phrases, gives `None`.
pub fn normalize_date(surface: &str) -> Option<String> {
    let s = surface.trim();
    if let [m, d, y] = s.split('/').collect::<Vec<_>>().as_slice() {
        return render(digits(y, 4, 4)?, digits(m, 1, 2)?, Some(digits(d, 1, 2)?));
    }
    if let [y, m, d] = s.split('-').collect::<Vec<_>>().as_slice() {
        return render(digits(y, 4, 4)?, digits(m, 1, 2)?, Some(digits(d, 1, 2)?));
    }
    let words: Vec<&str> = s.split(|c: char| c.is_whitespace() || c == ',').filter(|w| !w.is_empty()).collect();
    match words.as_slice() {
        [m, y] => render(digits(y, 4, 4)?, month_number(m)?, None),
        [m, d, y] => render(digits(y, 4, 4)?, month_number(m)?, Some(digits(d, 1, 2)?)),
        _ => None,
    }
}

fn date_parts(normalized: &str) -> Vec<u32> {
    normalized.split('-').filter_map(|p| p.parse().ok()).collect()
}

/// Compares two normalised dates on the fields both specify.
fn cmp_common(a: &str, b: &str) -> Ordering {
    let (a, b) = (date_parts(a), date_parts(b));
    let n = a.len().min(b.len());
    a[..n].cmp(&b[..n])
}

/// Rule-based date mentions over document tokens, tagged `DATE`.
pub fn find_date_spans(doc: &AnnotatedDocument) -> Vec<EntitySpan> {
    let toks = &doc.tokens;
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let t = toks[i].text.as_str();
        let mut end = None;
        if normalize_date(t).is_some() {
            end = Some(i);
        } else if month_number(t).is_some() {
            let next = |k: usize| {
                toks.get(k)
                    .filter(|x| x.sentence_index == toks[i].sentence_index)
                    .map(|x| x.text.as_str())
            };
            if next(i + 1).and_then(|y| digits(y, 4, 4)).is_some() {
                end = Some(i + 1);
            } else if next(i + 1).and_then(|d| digits(d, 1, 2)).is_some() {
                let y = if next(i + 2) == Some(",") { i + 3 } else { i + 2 };
                if next(y).and_then(|y| digits(y, 4, 4)).is_some() {
                    end = Some(y);
                }
            }
        }
        match end {
            Some(e) if normalize_date(&doc.span_text(i, e)).is_some() => {
                out.push(EntitySpan {
                    tag: "DATE".into(),
                    start: i,
                    end: e,
                    surface: doc.span_text(i, e),
                });
                i = e + 1;
            }
            _ => i += 1,
        }
    }
    out
}

/// A date mention with its normalised value, if any.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateMention {
    pub span: EntitySpan,
    pub normalized: Option<String>,
}

impl DateMention {
    pub fn new(span: EntitySpan) -> Self {
        let normalized = normalize_date(&span.surface);
        DateMention { span, normalized }
    }

    pub fn surface(&self) -> &str {
        &self.span.surface
    }

    fn same_span(&self, other: &DateMention) -> bool {
        self.span.start == other.span.start && self.span.end == other.span.end
    }

    /// Chronological when both normalise, textual otherwise; textual order
    /// breaks ties.
    fn chrono_cmp(&self, other: &DateMention) -> Ordering {
        let by_date = match (&self.normalized, &other.normalized) {
            (Some(a), Some(b)) => cmp_common(a, b),
            _ => Ordering::Equal,
        };
        by_date.then(self.span.start.cmp(&other.span.start))
    }

    /// Strictly later on the calendar (textual order when either side does
    /// not normalise).
    fn later_than(&self, other: &DateMention) -> bool {
        match (&self.normalized, &other.normalized) {
            (Some(a), Some(b)) => cmp_common(a, b) == Ordering::Greater,
            _ => self.span.start > other.span.start,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorDates {
    pub admission: Option<DateMention>,
    pub discharge: Option<DateMention>,
}

/// Binds the first date following an `Admission Date` / `Discharge Date`
/// header (case-insensitive, colon optional). Repeated headers keep the
/// first binding (`duplicate_anchor_header`); a discharge earlier than the
/// admission is kept and counted (`anchor_order`).
pub fn find_anchor_dates(doc: &AnnotatedDocument, dates: &[EntitySpan]) -> (AnchorDates, Warnings) {
    let mut warnings = Warnings::new();
    let mut anchors = AnchorDates::default();
    let toks = &doc.tokens;
    for i in 0..toks.len().saturating_sub(1) {
        let head = toks[i].text.to_lowercase();
        if toks[i + 1].text.to_lowercase() != "date" {
            continue;
        }
        let slot = match head.as_str() {
            "admission" => &mut anchors.admission,
            "discharge" => &mut anchors.discharge,
            _ => continue,
        };
        let Some(span) = dates.iter().filter(|d| d.start > i + 1).min_by_key(|d| d.start) else {
            continue;
        };
        if slot.is_some() {
            warnings.bump("duplicate_anchor_header");
            continue;
        }
        *slot = Some(DateMention::new(span.clone()));
    }
    if let (Some(a), Some(d)) = (&anchors.admission, &anchors.discharge) {
        if a.later_than(d) {
            warnings.bump("anchor_order");
        }
    }
    (anchors, warnings)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UseStatus {
    InUse,
    NotInUse,
}

/// One `date REL medication` fact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatedRelation {
    pub date: DateMention,
    pub relation: Relation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusDecision {
    pub status: UseStatus,
    /// Rule that fired (1-3), or 4 for the fallback.
    pub rule: u8,
    pub insufficient_anchor: bool,
}

fn rel_at(relations: &[DatedRelation], anchor: &DateMention) -> Option<Relation> {
    relations.iter().find(|r| r.date.same_span(anchor)).map(|r| r.relation)
}

fn strictly_between(d: &DateMention, a: &DateMention, b: &DateMention) -> bool {
    match (&d.normalized, &a.normalized, &b.normalized) {
        (Some(x), Some(lo), Some(hi)) => cmp_common(lo, x) == Ordering::Less && cmp_common(x, hi) == Ordering::Less,
        _ => a.span.end < d.span.start && d.span.end < b.span.start,
    }
}

/// Applies the four rules in order. Without both anchors and their
/// relations no rule can be evaluated: the result is `NotInUse` with
/// `insufficient_anchor` set.
pub fn medication_status(relations: &[DatedRelation], anchors: &AnchorDates) -> StatusDecision {
    let not_in_use = |insufficient| StatusDecision {
        status: UseStatus::NotInUse,
        rule: 4,
        insufficient_anchor: insufficient,
    };
    let (Some(adm), Some(dis)) = (&anchors.admission, &anchors.discharge) else {
        return not_in_use(true);
    };
    let (Some(r_adm), Some(r_dis)) = (rel_at(relations, adm), rel_at(relations, dis)) else {
        return not_in_use(true);
    };
    let in_use = |rule| StatusDecision {
        status: UseStatus::InUse,
        rule,
        insufficient_anchor: false,
    };
    let dis_ok = matches!(r_dis, Relation::Before | Relation::Overlap);
    if r_adm == Relation::After && dis_ok {
        return in_use(1);
    }
    if r_adm == Relation::Overlap && r_dis == Relation::Overlap {
        return in_use(2);
    }
    let intermediate = relations.iter().any(|r| {
        r.relation == Relation::Overlap && !r.date.same_span(adm) && !r.date.same_span(dis) && strictly_between(&r.date, adm, dis)
    });
    if intermediate && dis_ok {
        return in_use(3);
    }
    not_in_use(false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "ON")]
    On,
    #[serde(rename = "OFF")]
    Off,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::On => "ON",
            Status::Off => "OFF",
        })
    }
}

pub const UNKNOWN: &str = "Unknown";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedStatusRecord {
    #[serde(rename = "ID")]
    pub id: u64,
    #[serde(rename = "Event")]
    pub event: String,
    #[serde(rename = "Status")]
    pub status: Status,
    #[serde(rename = "Start")]
    pub start: String,
    #[serde(rename = "Stop")]
    pub stop: String,
}

/// All relations gathered for one medication (grouped by surface).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MedicationTimeline {
    pub event: String,
    pub relations: Vec<DatedRelation>,
}

/// Status plus start/stop rows for one medication.
///
/// In use: start is the earliest date that overlaps or precedes the
/// medication (`OVERLAP`/`BEFORE`), stop the earliest strictly later date
/// that follows it (`AFTER`), else `Unknown`. A known stop adds an `OFF` row
/// running from the stop date. Not in use: one `OFF` row starting at the
/// earliest `AFTER` date, if any.
pub fn derive_rows(timeline: &MedicationTimeline, anchors: &AnchorDates) -> (StatusDecision, Vec<(Status, String, String)>) {
    let decision = medication_status(&timeline.relations, anchors);
    let earliest = |pred: &dyn Fn(&DatedRelation) -> bool| {
        timeline
            .relations
            .iter()
            .filter(|r| pred(r))
            .min_by(|a, b| a.date.chrono_cmp(&b.date))
            .map(|r| r.date.clone())
    };
    let mut rows = Vec::new();
    match decision.status {
        UseStatus::InUse => {
            let start = earliest(&|r| matches!(r.relation, Relation::Overlap | Relation::Before));
            let stop = earliest(&|r| r.relation == Relation::After && start.as_ref().is_none_or(|s| r.date.later_than(s)));
            let start_s = start.map_or(UNKNOWN.to_string(), |d| d.surface().to_string());
            match stop {
                Some(stop) => {
                    rows.push((Status::On, start_s, stop.surface().to_string()));
                    rows.push((Status::Off, stop.surface().to_string(), UNKNOWN.to_string()));
                }
                None => rows.push((Status::On, start_s, UNKNOWN.to_string())),
            }
        }
        UseStatus::NotInUse => {
            let start = earliest(&|r| r.relation == Relation::After);
            rows.push((
                Status::Off,
                start.map_or(UNKNOWN.to_string(), |d| d.surface().to_string()),
                UNKNOWN.to_string(),
            ));
        }
    }
    (decision, rows)
}

/// Records for several medications with sequential ids from `id_base`.
pub fn build_records(timelines: &[MedicationTimeline], anchors: &AnchorDates, id_base: u64) -> (Vec<MedStatusRecord>, Warnings) {
    let mut warnings = Warnings::new();
    let mut out = Vec::new();
    for t in timelines {
        let (decision, rows) = derive_rows(t, anchors);
        if decision.insufficient_anchor {
            warnings.bump("insufficient_anchor");
        }
        for (status, start, stop) in rows {
            out.push(MedStatusRecord {
                id: id_base + out.len() as u64,
                event: t.event.clone(),
                status,
                start,
                stop,
            });
        }
    }
    (out, warnings)
}

pub const CSV_HEADER: [&str; 5] = ["ID", "Event", "Status", "Start", "Stop"];

/// RFC 4180 CSV with header `ID,Event,Status,Start,Stop`.
pub fn emit_table(records: &[MedStatusRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.event.clone(),
            r.status.to_string(),
            r.start.clone(),
            r.stop.clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
}

pub fn parse_table(text: &str) -> Result<Vec<MedStatusRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::parse(1, format!("unexpected header {header:?}")));
    }
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

/// One JSON object per record, same fields as the CSV.
pub fn emit_jsonl(records: &[MedStatusRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Relation::*;

    fn mention(surface: &str, start: usize) -> DateMention {
        DateMention::new(EntitySpan {
            tag: "DATE".into(),
            start,
            end: start,
            surface: surface.into(),
        })
    }

    fn anchors() -> AnchorDates {
        AnchorDates {
            admission: Some(mention("04/01/2019", 2)),
            discharge: Some(mention("04/20/2019", 5)),
        }
    }

    fn rels(adm: Relation, dis: Relation, mid: Option<Relation>) -> Vec<DatedRelation> {
        let a = anchors();
        let mut v = vec![
            DatedRelation {
                date: a.admission.unwrap(),
                relation: adm,
            },
            DatedRelation {
                date: a.discharge.unwrap(),
                relation: dis,
            },
        ];
        if let Some(r) = mid {
            v.push(DatedRelation {
                date: mention("04/10/2019", 9),
                relation: r,
            });
        }
        v
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_date("May 2019").as_deref(), Some("2019-05"));
        assert_eq!(normalize_date("04/12/2019").as_deref(), Some("2019-04-12"));
        assert_eq!(normalize_date("2019-04-12").as_deref(), Some("2019-04-12"));
        assert_eq!(normalize_date("February 3, 2020").as_deref(), Some("2020-02-03"));
        assert_eq!(normalize_date("Feb 2020").as_deref(), Some("2020-02"));
        assert_eq!(normalize_date("last Tuesday"), None);
        assert_eq!(normalize_date("13/01/2019"), None);
        assert_eq!(normalize_date(""), None);
    }

    #[test]
    fn paper_cases() {
        let a = anchors();
        assert_eq!(medication_status(&rels(After, Before, None), &a).status, UseStatus::InUse);
        assert_eq!(medication_status(&rels(Overlap, Overlap, None), &a).status, UseStatus::InUse);
        assert_eq!(medication_status(&rels(Before, After, None), &a).status, UseStatus::NotInUse);
        let d = medication_status(&rels(Before, Overlap, Some(Overlap)), &a);
        assert_eq!((d.status, d.rule), (UseStatus::InUse, 3));
    }

    #[test]
    fn missing_anchor_flags() {
        let mut a = anchors();
        a.discharge = None;
        let d = medication_status(&rels(After, Before, None), &a);
        assert_eq!(d.status, UseStatus::NotInUse);
        assert!(d.insufficient_anchor);
        let d = medication_status(&rels(After, Before, None)[..1], &anchors());
        assert!(d.insufficient_anchor);
    }

    #[test]
    fn between_falls_back_to_text_order() {
        let a = AnchorDates {
            admission: Some(mention("the day of admission", 2)),
            discharge: Some(mention("discharge day", 20)),
        };
        let mut v = vec![
            DatedRelation {
                date: a.admission.clone().unwrap(),
                relation: Before,
            },
            DatedRelation {
                date: a.discharge.clone().unwrap(),
                relation: Before,
            },
            DatedRelation {
                date: mention("yesterday", 30),
                relation: Overlap,
            },
        ];
        assert_eq!(medication_status(&v, &a).status, UseStatus::NotInUse);
        v[2].date = mention("yesterday", 10);
        assert_eq!(medication_status(&v, &a).rule, 3);
    }

    /// Rules read off the text, independently of `medication_status`.
    fn expected(adm: Relation, dis: Relation, mid: Option<Relation>) -> UseStatus {
        let r1 = adm == After && (dis == Before || dis == Overlap);
        let r2 = adm == Overlap && dis == Overlap;
        let r3 = mid == Some(Overlap) && (dis == Before || dis == Overlap);
        if r1 || r2 || r3 {
            UseStatus::InUse
        } else {
            UseStatus::NotInUse
        }
    }

    #[test]
    fn truth_table() {
        let mut n = 0;
        for adm in Relation::ALL {
            for dis in Relation::ALL {
                for mid in [None, Some(Before), Some(After), Some(Overlap)] {
                    let got = medication_status(&rels(adm, dis, mid), &anchors());
                    assert_eq!(got.status, expected(adm, dis, mid), "{adm} {dis} {mid:?}");
                    n += 1;
                }
            }
        }
        assert_eq!(n, 36);
    }

    #[test]
    fn fig1_rows() {
        let t = MedicationTimeline {
            event: "Methotrexate".into(),
            relations: vec![
                DatedRelation {
                    date: mention("May 2019", 2),
                    relation: Overlap,
                },
                DatedRelation {
                    date: mention("June 2019", 6),
                    relation: Overlap,
                },
                DatedRelation {
                    date: mention("February 2020", 20),
                    relation: After,
                },
            ],
        };
        let a = AnchorDates {
            admission: Some(mention("May 2019", 2)),
            discharge: Some(mention("June 2019", 6)),
        };
        let (recs, w) = build_records(&[t], &a, 134529565);
        assert!(w.is_empty());
        let csv = emit_table(&recs).unwrap();
        assert_eq!(
            csv,
            "ID,Event,Status,Start,Stop\r\n134529565,Methotrexate,ON,May 2019,February 2020\r\n134529566,Methotrexate,OFF,February 2020,Unknown\r\n"
        );
    }

    #[test]
    fn table_edge_cases() {
        assert_eq!(emit_table(&[]).unwrap(), "ID,Event,Status,Start,Stop\r\n");
        let r = MedStatusRecord {
            id: 1,
            event: "Tylenol, extra strength".into(),
            status: Status::Off,
            start: UNKNOWN.into(),
            stop: UNKNOWN.into(),
        };
        let csv = emit_table(std::slice::from_ref(&r)).unwrap();
        assert!(csv.contains("\"Tylenol, extra strength\""));
        assert_eq!(parse_table(&csv).unwrap(), vec![r.clone()]);
        assert!(emit_jsonl(&[r]).unwrap().contains("\"Status\":\"OFF\""));
    }

    #[test]
    fn anchors_from_text() {
        let doc = AnnotatedDocument::from_text(
            "d",
            "Admission Date: 04/12/2019\n\nDischarge Date 04/20/2019\n\nADMISSION DATE: 05/01/2019\n",
        );
        let dates = find_date_spans(&doc);
        assert_eq!(dates.len(), 3);
        let (a, w) = find_anchor_dates(&doc, &dates);
        assert_eq!(a.admission.unwrap().surface(), "04/12/2019");
        assert_eq!(a.discharge.unwrap().surface(), "04/20/2019");
        assert_eq!(w.get("duplicate_anchor_header"), 1);

        let doc = AnnotatedDocument::from_text("d", "No headers here, 04/12/2019.");
        let (a, _) = find_anchor_dates(&doc, &find_date_spans(&doc));
        assert_eq!(a, AnchorDates::default());
    }

    #[test]
    fn date_span_finder() {
        let doc = AnnotatedDocument::from_text("d", "Seen May 3, 2019 and June 2019; again 2019-07-01. May he rest.");
        let got: Vec<String> = find_date_spans(&doc).into_iter().map(|s| s.surface).collect();
        assert_eq!(got, ["May 3, 2019", "June 2019", "2019-07-01"]);
    }

    proptest! {
        #[test]
        fn normalize_never_panics(s in "\\PC{0,20}") {
            if let Some(n) = normalize_date(&s) {
                let ok = n.len() == 7 || n.len() == 10;
                prop_assert!(ok && n.as_bytes()[4] == b'-');
                let shape_ok = n.bytes().enumerate().all(|(i, b)| if i == 4 || i == 7 { b == b'-' } else { b.is_ascii_digit() });
                prop_assert!(shape_ok);
            }
        }

        #[test]
        fn csv_round_trip(events in prop::collection::vec("[A-Za-z ,\"]{1,12}", 0..6)) {
            let recs: Vec<MedStatusRecord> = events.iter().enumerate().map(|(i, e)| MedStatusRecord {
                id: 100 + i as u64,
                event: e.clone(),
                status: if i % 2 == 0 { Status::On } else { Status::Off },
                start: "May 2019".into(),
                stop: UNKNOWN.into(),
            }).collect();
            prop_assert_eq!(parse_table(&emit_table(&recs).unwrap()).unwrap(), recs);
        }
    }
}
