//! End-to-end extraction: medication mentions, date mentions, their
//! relations, the status rules and the output table.

use std::collections::HashMap;

use crate::corpus::{iob_to_spans, AnnotatedDocument, EntitySpan, Relation};
use crate::error::{Result, Warnings};
use crate::medstatus::{
    build_records, find_anchor_dates, find_date_spans, AnchorDates, DateMention, DatedRelation, MedStatusRecord, MedicationTimeline,
};
use crate::ner::{predict_tags, NerModel};
use crate::relex::{classify_relation, generate_candidates, CandidateOptions, Mention, RelModel};

/// Entity tags treated as medications: `m` in the medication scheme,
/// `TREATMENT` in the event scheme.
pub const MEDICATION_TAGS: [&str; 2] = ["m", "TREATMENT"];

/// Where mentions and relations come from.
#[derive(Clone, Copy)]
pub enum Source<'a> {
    /// Gold entities, timexes and TLINKs already on the document.
    Gold,
    Models {
        ner: &'a NerModel,
        rel: &'a RelModel,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentResult {
    pub doc_id: String,
    pub anchors: AnchorDates,
    pub timelines: Vec<MedicationTimeline>,
    pub warnings: Warnings,
}

/// `(medication, date, date REL medication)` triples in discovery order.
type Triple = (EntitySpan, EntitySpan, Relation);

fn gold_triples(doc: &AnnotatedDocument) -> (Vec<Triple>, Vec<EntitySpan>) {
    let med_spans: Vec<(usize, usize)> = doc.entities.iter().filter(|e| e.tag == "m").map(|e| (e.start, e.end)).collect();
    let is_med = |s: &EntitySpan| {
        if med_spans.is_empty() {
            s.tag == "TREATMENT"
        } else {
            med_spans.contains(&(s.start, s.end))
        }
    };
    let mut meds: Vec<(&String, &EntitySpan)> = doc.events.iter().filter(|(_, s)| is_med(s)).collect();
    meds.sort_by_key(|(_, s)| (s.start, s.end));
    let mut dates: Vec<EntitySpan> = doc.timexes.values().filter(|t| t.tag == "DATE").cloned().collect();
    dates.sort_by_key(|s| (s.start, s.end));
    let mut triples = Vec::new();
    for (id, med) in meds {
        for link in &doc.tlinks {
            let (other, rel) = if &link.source == id {
                (&link.target, link.relation.inverse())
            } else if &link.target == id {
                (&link.source, link.relation)
            } else {
                continue;
            };
            if let Some(date) = doc.timexes.get(other).filter(|t| t.tag == "DATE") {
                triples.push((med.clone(), date.clone(), rel));
            }
        }
    }
    (triples, dates)
}

/// Medication spans predicted by the tagger, with document token offsets.
pub fn predicted_medications(ner: &NerModel, doc: &AnnotatedDocument) -> Result<Vec<EntitySpan>> {
    let labels = predict_tags(ner, doc)?;
    let mut out = Vec::new();
    for (range, labels) in doc.sentence_token_ranges().into_iter().zip(labels) {
        let tokens: Vec<String> = doc.tokens[range.clone()].iter().map(|t| t.text.clone()).collect();
        for s in iob_to_spans(&tokens, &labels) {
            if MEDICATION_TAGS.contains(&s.tag.as_str()) {
                let (start, end) = (range.start + s.start, range.start + s.end);
                out.push(EntitySpan {
                    tag: s.tag,
                    start,
                    end,
                    surface: doc.span_text(start, end),
                });
            }
        }
    }
    Ok(out)
}

fn model_triples(
    doc: &AnnotatedDocument,
    ner: &NerModel,
    rel: &RelModel,
    opts: &CandidateOptions,
    warnings: &mut Warnings,
) -> Result<(Vec<Triple>, Vec<EntitySpan>)> {
    let mention = |span: EntitySpan| Mention { id: None, span };
    let meds: Vec<Mention> = predicted_medications(ner, doc)?.into_iter().map(mention).collect();
    let dates = find_date_spans(doc);
    let times: Vec<Mention> = dates.iter().cloned().map(mention).collect();
    let (instances, w) = generate_candidates(doc, &meds, &times, &rel.vocab, opts);
    warnings.merge(&w);
    let mut triples = Vec::with_capacity(instances.len());
    for inst in &instances {
        let (label, _) = classify_relation(rel, inst)?;
        triples.push((inst.event.clone(), inst.time.clone(), label.inverse()));
    }
    Ok((triples, dates))
}

/// Groups triples by case-folded medication surface, in order of first
/// appearance. Within a group the first relation seen for a date wins.
fn timelines(triples: Vec<Triple>) -> Vec<MedicationTimeline> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<MedicationTimeline> = Vec::new();
    for (med, date, relation) in triples {
        let key = med.surface.to_lowercase();
        let k = *index.entry(key).or_insert_with(|| {
            out.push(MedicationTimeline {
                event: med.surface.clone(),
                relations: Vec::new(),
            });
            out.len() - 1
        });
        let t = &mut out[k];
        if t.relations
            .iter()
            .any(|r| r.date.span.start == date.start && r.date.span.end == date.end)
        {
            continue;
        }
        t.relations.push(DatedRelation {
            date: DateMention::new(date),
            relation,
        });
    }
    out
}

pub fn analyze_document(doc: &AnnotatedDocument, source: Source, opts: &CandidateOptions) -> Result<DocumentResult> {
    let mut warnings = Warnings::new();
    let (triples, dates) = match source {
        Source::Gold => gold_triples(doc),
        Source::Models { ner, rel } => model_triples(doc, ner, rel, opts, &mut warnings)?,
    };
    let (anchors, w) = find_anchor_dates(doc, &dates);
    warnings.merge(&w);
    Ok(DocumentResult {
        doc_id: doc.doc_id.clone(),
        anchors,
        timelines: timelines(triples),
        warnings,
    })
}

/// Table rows for analysed documents, numbered consecutively from
/// `id_base` in document order.
pub fn assemble(results: &[DocumentResult], id_base: u64) -> (Vec<MedStatusRecord>, Warnings) {
    let mut records = Vec::new();
    let mut warnings = Warnings::new();
    for r in results {
        let (recs, w) = build_records(&r.timelines, &r.anchors, id_base + records.len() as u64);
        records.extend(recs);
        warnings.merge(&r.warnings);
        warnings.merge(&w);
    }
    (records, warnings)
}

pub fn extract(
    docs: &[AnnotatedDocument],
    source: Source,
    opts: &CandidateOptions,
    id_base: u64,
) -> Result<(Vec<MedStatusRecord>, Warnings)> {
    let results = docs.iter().map(|d| analyze_document(d, source, opts)).collect::<Result<Vec<_>>>()?;
    Ok(assemble(&results, id_base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fig1_document;
    use crate::medstatus::{emit_table, Status};

    #[test]
    fn fig1_gold_table() {
        let doc = fig1_document().unwrap().parse().unwrap().doc;
        let (recs, w) = extract(&[doc], Source::Gold, &CandidateOptions::default(), 134529565).unwrap();
        assert!(w.is_empty(), "{w:?}");
        let rows: Vec<_> = recs
            .iter()
            .map(|r| (r.id, r.event.as_str(), r.status, r.start.as_str(), r.stop.as_str()))
            .collect();
        assert_eq!(
            rows,
            [
                (134529565, "Methotrexate", Status::On, "May 2019", "February 2020"),
                (134529566, "Methotrexate", Status::Off, "February 2020", "Unknown"),
            ]
        );
        assert!(emit_table(&recs).unwrap().starts_with("ID,Event,Status,Start,Stop"));
    }

    #[test]
    fn document_without_entities() {
        let doc = AnnotatedDocument::from_text("x", "Nothing to see here.");
        let (recs, _) = extract(&[doc], Source::Gold, &CandidateOptions::default(), 1).unwrap();
        assert!(recs.is_empty());
        assert_eq!(emit_table(&recs).unwrap(), "ID,Event,Status,Start,Stop\r\n");
    }

    #[test]
    fn ids_continue_across_documents() {
        let doc = fig1_document().unwrap().parse().unwrap().doc;
        let (recs, _) = extract(&[doc.clone(), doc], Source::Gold, &CandidateOptions::default(), 10).unwrap();
        let ids: Vec<u64> = recs.iter().map(|r| r.id).collect();
        assert_eq!(ids, [10, 11, 12, 13]);
    }
}
