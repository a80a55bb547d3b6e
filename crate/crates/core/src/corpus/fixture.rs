//! Seeded synthetic discharge summaries in both annotation layouts.
//!
//! Every document opens with `Admission Date:` / `Discharge Date:` headers
//! followed by a templated `HOSPITAL COURSE` narrative. Medication mentions
//! carry dose/route/frequency/reason fields for the medication layout and
//! `TREATMENT` events plus TLINKs to the in-sentence date and both anchor
//! dates for the event layout.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::xml::escape;
use super::{parse_2009_annotations, parse_2012_annotations, AnnotatedDocument, ParseOptions, Parsed, Relation};
use crate::error::{Error, Result};

pub const FIG1_DOC_ID: &str = "fig1";

const MEDS: [&str; 12] = [
    "Methotrexate",
    "Percocet",
    "Levaquin",
    "Aspirin",
    "Lisinopril",
    "Metoprolol",
    "Heparin",
    "Insulin",
    "Warfarin",
    "Prednisone",
    "Vancomycin",
    "Lasix",
];
const DOSES: [&str; 5] = ["40 mg", "3.2mg", "500 mg", "1 tablet", "10 units"];
const ROUTES: [&str; 4] = ["p.o.", "IV", "orally", "subcutaneously"];
const FREQS: [&str; 4] = ["daily", "b.i.d.", "q.d.", "twice a day"];
const PROBLEMS: [&str; 7] = [
    "pneumonia",
    "chest pain",
    "rheumatoid arthritis",
    "atrial fibrillation",
    "hypertension",
    "a urinary tract infection",
    "fever",
];
const TESTS: [&str; 4] = ["CT", "MRI", "Chest x-ray", "Echocardiogram"];
const DEPTS: [&str; 3] = ["emergency room", "intensive care unit", "cardiology service"];
const SUBJECTS: [&str; 3] = ["He", "She", "The patient"];
const DURATIONS: [&str; 3] = ["two weeks", "10 days", "one month"];
const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixtureSpec {
    pub n_docs: usize,
    pub seed: u64,
    /// Narrative sentences per document (inclusive bounds).
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Make the first document the two-date Methotrexate timeline.
    pub include_fig1: bool,
}

impl FixtureSpec {
    pub fn new(n_docs: usize, seed: u64) -> Self {
        FixtureSpec {
            n_docs,
            seed,
            min_sentences: 4,
            max_sentences: 8,
            include_fig1: true,
        }
    }
}

/// One generated document as the text of its four files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixtureDocument {
    pub doc_id: String,
    pub text: String,
    /// Event layout: `EVENT`/`TIMEX3` elements.
    pub xml: String,
    /// Event layout: `TLINK <from> <REL> <to>` lines.
    pub tlink: String,
    /// Medication layout entries.
    pub ann: String,
}

impl FixtureDocument {
    /// Events, timexes and relations.
    pub fn parse(&self) -> Result<Parsed> {
        parse_2012_annotations(&self.doc_id, &self.text, &self.xml, &self.tlink, ParseOptions::default())
    }

    /// Medication field spans as `entities`.
    pub fn parse_medications(&self) -> Result<Parsed> {
        parse_2009_annotations(&self.doc_id, &self.text, &self.ann, ParseOptions::default())
    }
}

#[derive(Clone, Copy)]
struct Date {
    year: u32,
    month: u32,
    day: u32,
}

impl Date {
    fn random(rng: &mut ChaCha8Rng) -> Date {
        Date {
            year: rng.gen_range(2015..=2020),
            month: rng.gen_range(1..=12),
            day: rng.gen_range(1..=28),
        }
    }

    fn plus_days(self, days: u32) -> Date {
        let mut d = self;
        d.day += days;
        while d.day > 28 {
            d.day -= 28;
            d.month += 1;
            if d.month > 12 {
                d.month = 1;
                d.year += 1;
            }
        }
        d
    }

    fn render(self, style: usize) -> String {
        let month = MONTHS[self.month as usize - 1];
        match style % 4 {
            0 => format!("{:02}/{:02}/{}", self.month, self.day, self.year),
            1 => format!("{}-{:02}-{:02}", self.year, self.month, self.day),
            2 => format!("{month} {}", self.year),
            _ => format!("{month} {}, {}", self.day, self.year),
        }
    }
}

struct Mention {
    id: String,
    start: usize,
    end: usize,
    kind: String,
    text: String,
}

#[derive(Default)]
struct Builder {
    text: String,
    chars: usize,
    events: Vec<Mention>,
    timexes: Vec<Mention>,
    tlinks: Vec<(String, Relation, String)>,
    /// Medication-layout entries: (tag, start, end) char ranges per line.
    meds: Vec<Vec<(&'static str, usize, usize)>>,
}

impl Builder {
    fn push(&mut self, s: &str) -> (usize, usize) {
        let start = self.chars;
        self.text.push_str(s);
        self.chars += s.chars().count();
        (start, self.chars)
    }

    fn event(&mut self, s: &str, kind: &str) -> String {
        let (start, end) = self.push(s);
        let id = format!("E{}", self.events.len());
        self.events.push(Mention {
            id: id.clone(),
            start,
            end,
            kind: kind.into(),
            text: s.into(),
        });
        id
    }

    fn timex(&mut self, s: &str, kind: &str) -> String {
        let (start, end) = self.push(s);
        let id = format!("T{}", self.timexes.len());
        self.timexes.push(Mention {
            id: id.clone(),
            start,
            end,
            kind: kind.into(),
            text: s.into(),
        });
        id
    }

    fn link(&mut self, from: &str, rel: Relation, to: &str) {
        self.tlinks.push((from.into(), rel, to.into()));
    }

    fn last_event_range(&self) -> (usize, usize) {
        let e = self.events.last().expect("event pushed");
        (e.start, e.end)
    }

    fn finish(self, doc_id: &str) -> Result<FixtureDocument> {
        let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\" ?>\n<ClinicalNarrativeTemporalAnnotation>\n<TAGS>\n");
        for (name, list) in [("EVENT", &self.events), ("TIMEX3", &self.timexes)] {
            for m in list {
                let _ = writeln!(
                    xml,
                    "<{name} id=\"{}\" start=\"{}\" end=\"{}\" text=\"{}\" type=\"{}\" />",
                    m.id,
                    m.start,
                    m.end,
                    escape(&m.text),
                    m.kind
                );
            }
        }
        xml.push_str("</TAGS>\n</ClinicalNarrativeTemporalAnnotation>\n");

        let mut tlink = String::new();
        for (from, rel, to) in &self.tlinks {
            let _ = writeln!(tlink, "TLINK {from} {rel} {to}");
        }

        let doc = AnnotatedDocument::from_text(doc_id, self.text.clone());
        let line_of = |tok: usize| -> (usize, usize) {
            let start = doc.tokens[tok].start;
            let line_start = doc.text.chars().take(start).filter(|&c| c == '\n').count();
            let first_on_line = doc.tokens[..tok]
                .iter()
                .rposition(|t| doc.text.chars().take(t.start).filter(|&c| c == '\n').count() != line_start)
                .map_or(0, |p| p + 1);
            (line_start + 1, tok - first_on_line)
        };
        let mut ann = String::new();
        for entry in &self.meds {
            let mut fields = Vec::new();
            for tag in super::MEDICATION_TAGS {
                match entry.iter().find(|(t, _, _)| *t == tag) {
                    Some(&(_, a, b)) => {
                        let (s, e) = doc
                            .tokens_in_chars(a, b)
                            .ok_or_else(|| Error::Invalid(format!("fixture span {a}..{b} has no tokens")))?;
                        let (ls, ts) = line_of(s);
                        let (le, te) = line_of(e);
                        let surface = doc.span_text(s, e).to_lowercase();
                        fields.push(format!("{tag}=\"{surface}\" {ls}:{ts} {le}:{te}"));
                    }
                    None => fields.push(format!("{tag}=\"nm\"")),
                }
            }
            fields.push("ln=\"narrative\"".into());
            let _ = writeln!(ann, "{}", fields.join("||"));
        }

        Ok(FixtureDocument {
            doc_id: doc_id.into(),
            text: self.text,
            xml,
            tlink,
            ann,
        })
    }
}

/// Admission/discharge headers; returns the two timex ids.
fn headers(b: &mut Builder, adm: &str, dis: &str) -> (String, String) {
    b.push("Admission Date: ");
    let t_adm = b.timex(adm, "DATE");
    b.push("\n\nDischarge Date: ");
    let t_dis = b.timex(dis, "DATE");
    b.push("\n\nHOSPITAL COURSE: ");
    (t_adm, t_dis)
}

/// The Methotrexate discharge-summary excerpt with its gold annotations.
pub fn fig1_document() -> Result<FixtureDocument> {
    let mut b = Builder::default();
    let (t_adm, t_dis) = headers(&mut b, "May 2019", "June 2019");
    let e1 = b.event("Methotrexate", "TREATMENT");
    let m1 = b.last_event_range();
    b.push(" was started on admission in ");
    let t_may = b.timex("May 2019", "DATE");
    b.push(" for ");
    let p = b.event("rheumatoid arthritis", "PROBLEM");
    let r1 = b.last_event_range();
    b.push(". The patient will continue ");
    let e2 = b.event("Methotrexate", "TREATMENT");
    let m2 = b.last_event_range();
    b.push(" until ");
    let t_feb = b.timex("February 2020", "DATE");
    b.push(".\n");
    b.link(&e1, Relation::Overlap, &t_adm);
    b.link(&e1, Relation::Overlap, &t_dis);
    b.link(&e1, Relation::Overlap, &t_may);
    b.link(&p, Relation::Overlap, &t_may);
    b.link(&e2, Relation::Overlap, &t_dis);
    b.link(&e2, Relation::Before, &t_feb);
    b.meds.push(vec![("m", m1.0, m1.1), ("r", r1.0, r1.1)]);
    b.meds.push(vec![("m", m2.0, m2.1)]);
    b.finish(FIG1_DOC_ID)
}

fn random_doc(doc_id: &str, spec: &FixtureSpec, rng: &mut ChaCha8Rng) -> Result<FixtureDocument> {
    let mut b = Builder::default();
    let adm = Date::random(rng);
    let dis = adm.plus_days(rng.gen_range(2..20));
    let style = rng.gen_range(0..4);
    let (t_adm, t_dis) = headers(&mut b, &adm.render(style), &dis.render(style));
    let n = rng.gen_range(spec.min_sentences..=spec.max_sentences.max(spec.min_sentences));
    let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).expect("non-empty");

    for k in 0..n {
        if k > 0 {
            b.push(" ");
        }
        let subj = pick(rng, &SUBJECTS);
        let date = adm.plus_days(rng.gen_range(0..6)).render(rng.gen_range(0..4));
        let med = pick(rng, &MEDS);
        match rng.gen_range(0..9) {
            0 => {
                b.push(&format!("{subj} was started on "));
                let e = b.event(med, "TREATMENT");
                let m = b.last_event_range();
                b.push(" ");
                let d = b.push(pick(rng, &DOSES));
                b.push(" ");
                let r = b.push(pick(rng, &ROUTES));
                b.push(" ");
                let f = b.push(pick(rng, &FREQS));
                b.push(" on ");
                let t = b.timex(&date, "DATE");
                b.push(".");
                b.link(&e, Relation::Overlap, &t);
                anchor_links(&mut b, rng, &e, &t_adm, &t_dis);
                b.meds
                    .push(vec![("m", m.0, m.1), ("do", d.0, d.1), ("mo", r.0, r.1), ("f", f.0, f.1)]);
            }
            1 => {
                b.push("Prior to ");
                let t = b.timex(&date, "DATE");
                b.push(&format!(", {} had been taking ", subj.to_lowercase()));
                let e = b.event(med, "TREATMENT");
                let m = b.last_event_range();
                b.push(" ");
                let d = b.push(pick(rng, &DOSES));
                b.push(".");
                b.link(&e, Relation::Before, &t);
                anchor_links(&mut b, rng, &e, &t_adm, &t_dis);
                b.meds.push(vec![("m", m.0, m.1), ("do", d.0, d.1)]);
            }
            2 => {
                b.push("After ");
                let t = b.timex(&date, "DATE");
                b.push(&format!(" {} received ", subj.to_lowercase()));
                let e = b.event(med, "TREATMENT");
                let m = b.last_event_range();
                b.push(" ");
                let f = b.push(pick(rng, &FREQS));
                b.push(".");
                b.link(&e, Relation::After, &t);
                anchor_links(&mut b, rng, &e, &t_adm, &t_dis);
                b.meds.push(vec![("m", m.0, m.1), ("f", f.0, f.1)]);
            }
            3 => {
                b.push(&format!("{subj} developed "));
                let e = b.event(pick(rng, &PROBLEMS), "PROBLEM");
                b.push(" on ");
                let t = b.timex(&date, "DATE");
                b.push(".");
                b.link(&e, Relation::Overlap, &t);
            }
            4 => {
                b.event(pick(rng, &TESTS), "TEST");
                b.push(" ");
                b.event("shows", "EVIDENTIAL");
                b.push(" ");
                b.event(pick(rng, &PROBLEMS), "PROBLEM");
                b.push(".");
            }
            5 => {
                b.push(&format!("{subj} was "));
                b.event("readmitted", "OCCURRENCE");
                b.push(" for ");
                b.event(pick(rng, &PROBLEMS), "PROBLEM");
                b.push(".");
            }
            6 => {
                b.push(&format!("{subj} was transferred to the "));
                b.event(pick(rng, &DEPTS), "CLINICAL_DEPT");
                b.push(".");
            }
            7 => {
                let e = b.event(med, "TREATMENT");
                let m = b.last_event_range();
                b.push(" ");
                let d = b.push(pick(rng, &DOSES));
                b.push(" was given for ");
                b.event(pick(rng, &PROBLEMS), "PROBLEM");
                let r = b.last_event_range();
                b.push(".");
                anchor_links(&mut b, rng, &e, &t_adm, &t_dis);
                b.meds.push(vec![("m", m.0, m.1), ("do", d.0, d.1), ("r", r.0, r.1)]);
            }
            _ => {
                b.push(&format!("{subj} will continue "));
                let e = b.event(med, "TREATMENT");
                let m = b.last_event_range();
                b.push(" for ");
                let t = b.timex(pick(rng, &DURATIONS), "DURATION");
                let du = b.timexes.last().map(|x| (x.start, x.end)).expect("timex pushed");
                b.push(".");
                b.link(&e, Relation::Overlap, &t);
                anchor_links(&mut b, rng, &e, &t_adm, &t_dis);
                b.meds.push(vec![("m", m.0, m.1), ("du", du.0, du.1)]);
            }
        }
    }
    b.push("\n");
    b.finish(doc_id)
}

fn anchor_links(b: &mut Builder, rng: &mut ChaCha8Rng, event: &str, t_adm: &str, t_dis: &str) {
    let adm = *Relation::ALL.choose(rng).expect("non-empty");
    let dis = *Relation::ALL.choose(rng).expect("non-empty");
    b.link(event, adm, t_adm);
    b.link(event, dis, t_dis);
}

pub fn generate_fixture_corpus(spec: &FixtureSpec) -> Result<Vec<FixtureDocument>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut docs = Vec::with_capacity(spec.n_docs);
    for i in 0..spec.n_docs {
        let doc = if i == 0 && spec.include_fig1 {
            fig1_document()?
        } else {
            random_doc(&format!("doc{i:03}"), spec, &mut rng)?
        };
        docs.push(doc);
    }
    Ok(docs)
}

/// Writes `<id>.txt`, `<id>.xml`, `<id>.tlink` and `<id>.ann` per document.
pub fn write_fixture(dir: &Path, docs: &[FixtureDocument]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for d in docs {
        for (ext, body) in [("txt", &d.text), ("xml", &d.xml), ("tlink", &d.tlink), ("ann", &d.ann)] {
            let path = dir.join(format!("{}.{ext}", d.doc_id));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_documents_parse_cleanly() {
        let docs = generate_fixture_corpus(&FixtureSpec::new(10, 1)).unwrap();
        assert_eq!(docs.len(), 10);
        for d in &docs {
            let p = d.parse().unwrap();
            assert!(p.warnings.is_empty(), "{}: {:?}", d.doc_id, p.warnings);
            assert!(!p.doc.events.is_empty());
            for e in p.doc.events.values() {
                assert!(e.start <= e.end && e.end < p.doc.tokens.len());
            }
            let m = d.parse_medications().unwrap();
            assert!(m.warnings.is_empty());
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_fixture_corpus(&FixtureSpec::new(6, 9)).unwrap();
        let b = generate_fixture_corpus(&FixtureSpec::new(6, 9)).unwrap();
        assert_eq!(a, b);
        let c = generate_fixture_corpus(&FixtureSpec::new(6, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fig1_timeline() {
        let d = fig1_document().unwrap();
        let p = d.parse().unwrap().doc;
        assert!(d.text.contains("Methotrexate") && d.text.contains("February 2020"));
        let meds: Vec<_> = p.events.values().filter(|e| e.tag == "TREATMENT").collect();
        assert_eq!(meds.len(), 2);
        let feb = p.timexes.iter().find(|(_, t)| t.surface == "February 2020").unwrap().0;
        assert!(p.tlinks.iter().any(|l| &l.target == feb && l.relation == Relation::Before));
        let m = d.parse_medications().unwrap().doc;
        assert_eq!(m.entities.iter().filter(|e| e.tag == "m").count(), 2);
    }
}
