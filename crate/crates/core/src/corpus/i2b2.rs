//! Readers for the two annotation layouts.
//!
//! Medication files (one entry per line):
//!
//! ```text
//! m="percocet" 5:2 5:2||do="nm"||mo="p.o." 5:3 5:3||ln="narrative"
//! ```
//!
//! `L:T` is a 1-based line and 0-based token index within that line, using
//! this crate's tokenizer. Several ranges of one field are comma separated.
//!
//! Event files are XML with `EVENT`/`TIMEX3` elements carrying `id`, `start`,
//! `end` (0-based character offsets, end exclusive) and `type`. Relations
//! come from a separate text file of `TLINK <from> <RELATION> <to>` lines,
//! and from any `TLINK` elements (`fromID`, `toID`, `type`) in the XML.

use std::collections::BTreeMap;
use std::path::Path;

use super::xml;
use super::{AnnotatedDocument, EntitySpan, Relation, TLink, EVENT_TAGS, MEDICATION_TAGS, TIMEX_TYPES};
use crate::error::{Error, Result, Warnings};

/// i2b2 relation names that are recognised but not modelled.
const DROPPED_RELATIONS: [&str; 5] = ["SIMULTANEOUS", "BEFORE_OVERLAP", "DURING", "BEGUN_BY", "ENDED_BY"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Skip and count malformed lines instead of failing.
    pub lenient: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parsed {
    pub doc: AnnotatedDocument,
    pub warnings: Warnings,
}

struct Recovery {
    lenient: bool,
    warnings: Warnings,
}

impl Recovery {
    fn new(opts: ParseOptions) -> Self {
        Recovery {
            lenient: opts.lenient,
            warnings: Warnings::new(),
        }
    }

    /// Passes `Ok` through; in lenient mode swallows the error and counts it.
    fn check<T>(&mut self, r: Result<T>) -> Result<Option<T>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(e) if self.lenient => {
                log::debug!("skipped: {e}");
                self.warnings.bump("skipped_line");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

fn normalize_surface(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).flat_map(char::to_lowercase).collect()
}

pub fn parse_2009_annotations(doc_id: &str, doc_text: &str, ann_text: &str, opts: ParseOptions) -> Result<Parsed> {
    let mut doc = AnnotatedDocument::from_text(doc_id, doc_text);
    let mut rec = Recovery::new(opts);

    // token ordinals per 1-based line
    let line_starts: Vec<usize> = std::iter::once(0)
        .chain(doc_text.chars().enumerate().filter(|(_, c)| *c == '\n').map(|(i, _)| i + 1))
        .collect();
    let mut by_line: Vec<Vec<usize>> = vec![Vec::new(); line_starts.len()];
    for (i, t) in doc.tokens.iter().enumerate() {
        let line = line_starts.partition_point(|&s| s <= t.start) - 1;
        by_line[line].push(i);
    }

    for (ln, line) in ann_text.lines().enumerate() {
        let ln = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        for segment in line.split("||") {
            let spans = parse_segment(segment, ln, &doc, &by_line);
            if let Some(spans) = rec.check(spans)? {
                doc.entities.extend(spans);
            }
        }
    }
    doc.entities.sort_by_key(|s| (s.start, s.end));
    doc.entities.dedup();
    Ok(Parsed {
        doc,
        warnings: rec.warnings,
    })
}

fn parse_segment(segment: &str, ln: usize, doc: &AnnotatedDocument, by_line: &[Vec<usize>]) -> Result<Vec<EntitySpan>> {
    let segment = segment.trim();
    let (tag, rest) = segment
        .split_once("=\"")
        .ok_or_else(|| Error::parse(ln, format!("expected tag=\"surface\" in {segment:?}")))?;
    let close = rest
        .rfind('"')
        .ok_or_else(|| Error::parse(ln, format!("unterminated surface in {segment:?}")))?;
    let surface = &rest[..close];
    let positions = rest[close + 1..].trim();
    let tag = tag.trim();
    if tag == "ln" {
        return Ok(Vec::new());
    }
    if !MEDICATION_TAGS.contains(&tag) {
        return Err(Error::Scheme {
            tag: tag.to_string(),
            scheme: "medication".into(),
        });
    }
    if surface == "nm" && positions.is_empty() {
        return Ok(Vec::new());
    }
    let mut spans = Vec::new();
    for range in positions.split(',') {
        let parts: Vec<&str> = range.split_whitespace().collect();
        let [a, b] = parts.as_slice() else {
            return Err(Error::parse(ln, format!("expected two L:T positions, got {range:?}")));
        };
        let start = resolve(a, ln, by_line)?;
        let end = resolve(b, ln, by_line)?;
        if end < start {
            return Err(Error::parse(ln, format!("span end before start in {range:?}")));
        }
        let text = doc.span_text(start, end);
        if spans.is_empty() && positions.split(',').count() == 1 && normalize_surface(&text) != normalize_surface(surface) {
            return Err(Error::parse(ln, format!("surface {surface:?} does not match text {text:?}")));
        }
        spans.push(EntitySpan {
            tag: tag.to_string(),
            start,
            end,
            surface: text,
        });
    }
    Ok(spans)
}

fn resolve(pos: &str, ln: usize, by_line: &[Vec<usize>]) -> Result<usize> {
    let (l, t) = pos
        .split_once(':')
        .and_then(|(l, t)| Some((l.parse::<usize>().ok()?, t.parse::<usize>().ok()?)))
        .ok_or_else(|| Error::parse(ln, format!("bad position {pos:?}")))?;
    if l == 0 || l > by_line.len() {
        return Err(Error::range("annotation line", l, by_line.len()));
    }
    let line = &by_line[l - 1];
    line.get(t)
        .copied()
        .ok_or_else(|| Error::range(format!("token on line {l}"), t, line.len()))
}

pub fn parse_2012_annotations(doc_id: &str, doc_text: &str, xml_text: &str, tlink_text: &str, opts: ParseOptions) -> Result<Parsed> {
    let mut doc = AnnotatedDocument::from_text(doc_id, doc_text);
    let mut rec = Recovery::new(opts);
    let n_chars = doc_text.chars().count();
    let mut raw_links: Vec<(usize, String, String, String)> = Vec::new();

    for el in xml::elements(xml_text)? {
        match el.name.as_str() {
            "EVENT" | "TIMEX3" => {
                let mention = mention_from(&el, &doc, n_chars);
                let Some((id, span)) = rec.check(mention)? else {
                    continue;
                };
                if doc.mention(&id).is_some() {
                    rec.check::<()>(Err(Error::parse(el.line, format!("duplicate id {id}"))))?;
                    continue;
                }
                let map = if el.name == "EVENT" { &mut doc.events } else { &mut doc.timexes };
                map.insert(id, span);
            }
            "TLINK" => {
                let attr = |k: &str| el.attrs.get(k).cloned().unwrap_or_default();
                raw_links.push((el.line, attr("fromID"), attr("type"), attr("toID")));
            }
            _ => {}
        }
    }
    for (ln, line) in tlink_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["TLINK", from, rel, to] => raw_links.push((ln + 1, from.to_string(), rel.to_string(), to.to_string())),
            _ => {
                rec.check::<()>(Err(Error::parse(ln + 1, format!("expected `TLINK <from> <REL> <to>`: {line:?}"))))?;
            }
        }
    }

    for (ln, from, rel, to) in raw_links {
        let link = resolve_link(&doc, ln, from, &rel, to, &mut rec.warnings);
        if let Some(Some(link)) = rec.check(link)? {
            if !doc.tlinks.contains(&link) {
                doc.tlinks.push(link);
            }
        }
    }

    doc.entities = doc.events.values().cloned().collect();
    doc.entities.sort_by_key(|s| (s.start, s.end));
    Ok(Parsed {
        doc,
        warnings: rec.warnings,
    })
}

fn resolve_link(doc: &AnnotatedDocument, ln: usize, from: String, rel: &str, to: String, warnings: &mut Warnings) -> Result<Option<TLink>> {
    let upper = rel.to_ascii_uppercase();
    let relation = match upper.parse::<Relation>() {
        Ok(r) => Some(r),
        Err(_) if DROPPED_RELATIONS.contains(&upper.as_str()) => None,
        Err(_) => return Err(Error::parse(ln, format!("unknown relation type {rel:?}"))),
    };
    for id in [&from, &to] {
        if doc.mention(id).is_none() {
            return Err(Error::Link {
                id: id.clone(),
                what: format!("TLINK on line {ln}"),
            });
        }
    }
    match relation {
        Some(relation) => Ok(Some(TLink {
            source: from,
            target: to,
            relation,
        })),
        None => {
            warnings.bump("dropped_relation");
            Ok(None)
        }
    }
}

fn mention_from(el: &xml::Element, doc: &AnnotatedDocument, n_chars: usize) -> Result<(String, EntitySpan)> {
    let get = |k: &str| {
        el.attrs
            .get(k)
            .ok_or_else(|| Error::parse(el.line, format!("<{}> missing attribute {k}", el.name)))
    };
    let id = get("id")?.clone();
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .trim()
            .parse()
            .map_err(|_| Error::parse(el.line, format!("<{}> attribute {k} is not an offset", el.name)))
    };
    let (start, end) = (num("start")?, num("end")?);
    if start >= end || end > n_chars {
        return Err(Error::range(format!("offsets of {id}"), end, n_chars));
    }
    let kind = get("type")?.to_ascii_uppercase();
    let allowed: &[&str] = if el.name == "EVENT" { &EVENT_TAGS } else { &TIMEX_TYPES };
    if !allowed.contains(&kind.as_str()) {
        return Err(Error::Scheme {
            tag: kind,
            scheme: el.name.to_lowercase(),
        });
    }
    let (a, b) = doc
        .tokens_in_chars(start, end)
        .ok_or_else(|| Error::range(format!("offsets of {id}"), start, n_chars))?;
    Ok((
        id,
        EntitySpan {
            tag: kind,
            start: a,
            end: b,
            surface: doc.span_text(a, b),
        },
    ))
}

/// Loads every `<stem>.txt` in `dir` together with whichever of
/// `<stem>.xml`/`<stem>.tlink` (event layout) or `<stem>.ann` (medication
/// layout) exist. With both layouts present the medication spans are kept
/// as `entities` and the events remain available by id.
pub fn load_directory(dir: &Path, opts: ParseOptions) -> Result<Vec<Parsed>> {
    let mut txts = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                txts.insert(stem.to_string(), path.clone());
            }
        }
    }
    txts.values().map(|p| load_document(p, opts)).collect()
}

/// One `.txt` file plus whichever of `.xml`, `.tlink` and `.ann` sit next
/// to it. The document id is the file stem.
pub fn load_document(txt: &Path, opts: ParseOptions) -> Result<Parsed> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let stem = txt.file_stem().and_then(|s| s.to_str()).unwrap_or("doc").to_string();
    let text = read(txt)?;
    let xml_path = txt.with_extension("xml");
    let tlink_path = txt.with_extension("tlink");
    let ann_path = txt.with_extension("ann");
    let mut parsed = if xml_path.exists() {
        let tlinks = if tlink_path.exists() { read(&tlink_path)? } else { String::new() };
        parse_2012_annotations(&stem, &text, &read(&xml_path)?, &tlinks, opts)?
    } else {
        Parsed {
            doc: AnnotatedDocument::from_text(&stem, &text),
            warnings: Warnings::new(),
        }
    };
    if ann_path.exists() {
        let meds = parse_2009_annotations(&stem, &text, &read(&ann_path)?, opts)?;
        parsed.doc.entities = meds.doc.entities;
        parsed.warnings.merge(&meds.warnings);
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "Admission Date: 04/12/2019\nHe took Percocet 3.2mg daily.\n";

    #[test]
    fn medication_entries() {
        let ann = "m=\"percocet\" 2:2 2:2||do=\"3.2mg\" 2:3 2:3||mo=\"nm\"||ln=\"narrative\"";
        let p = parse_2009_annotations("d", TEXT, ann, ParseOptions::default()).unwrap();
        let tags: Vec<_> = p.doc.entities.iter().map(|e| (e.tag.as_str(), e.surface.as_str())).collect();
        assert_eq!(tags, [("m", "Percocet"), ("do", "3.2mg")]);
    }

    #[test]
    fn medication_errors() {
        let opts = ParseOptions::default();
        assert!(matches!(
            parse_2009_annotations("d", TEXT, "m=\"x\" 9:0 9:0", opts),
            Err(Error::Range { .. })
        ));
        assert!(matches!(
            parse_2009_annotations("d", TEXT, "m=\"x\" 2:40 2:40", opts),
            Err(Error::Range { .. })
        ));
        assert!(matches!(
            parse_2009_annotations("d", TEXT, "zz=\"took\" 2:1 2:1", opts),
            Err(Error::Scheme { .. })
        ));
        let e = parse_2009_annotations("d", TEXT, "\nm percocet", opts).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        assert!(parse_2009_annotations("d", TEXT, "m=\"aspirin\" 2:2 2:2", opts).is_err());

        let lenient = ParseOptions { lenient: true };
        let p = parse_2009_annotations("d", TEXT, "m percocet\nm=\"percocet\" 2:2 2:2", lenient).unwrap();
        assert_eq!(p.doc.entities.len(), 1);
        assert_eq!(p.warnings.get("skipped_line"), 1);
    }

    const TEXT12: &str = "He was given Levaquin on 05/01/2019.";
    const XML12: &str = r#"<TAGS>
<EVENT id="E1" start="13" end="21" text="Levaquin" type="TREATMENT" />
<TIMEX3 id="T1" start="25" end="35" text="05/01/2019" type="DATE" val="2019-05-01" />
</TAGS>"#;

    #[test]
    fn event_layout() {
        let tl = "TLINK E1 BEFORE T1\nTLINK E1 SIMULTANEOUS T1\n";
        let p = parse_2012_annotations("d", TEXT12, XML12, tl, ParseOptions::default()).unwrap();
        assert_eq!(p.doc.events["E1"].tag, "TREATMENT");
        assert_eq!(p.doc.events["E1"].surface, "Levaquin");
        assert_eq!(p.doc.timexes["T1"].surface, "05/01/2019");
        assert_eq!(
            p.doc.tlinks,
            [TLink {
                source: "E1".into(),
                target: "T1".into(),
                relation: Relation::Before
            }]
        );
        assert_eq!(p.warnings.get("dropped_relation"), 1);
        assert_eq!(p.doc.entities.len(), 1);
    }

    #[test]
    fn event_layout_errors() {
        let opts = ParseOptions::default();
        let dangling = parse_2012_annotations("d", TEXT12, XML12, "TLINK E1 BEFORE T9", opts);
        assert!(matches!(dangling, Err(Error::Link { .. })));
        let bad = XML12.replace("end=\"35\"", "end=\"99\"");
        assert!(matches!(
            parse_2012_annotations("d", TEXT12, &bad, "", opts),
            Err(Error::Range { .. })
        ));
        let bad = XML12.replace("TREATMENT", "DRUG");
        assert!(matches!(
            parse_2012_annotations("d", TEXT12, &bad, "", opts),
            Err(Error::Scheme { .. })
        ));
        assert!(parse_2012_annotations("d", TEXT12, XML12, "TLINK E1 LATER T1", opts).is_err());
    }
}
