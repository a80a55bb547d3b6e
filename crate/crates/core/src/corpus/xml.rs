//! Just enough XML to read flat annotation elements: start/empty tags with
//! quoted attributes. Text content, comments, processing instructions and
//! CDATA sections are skipped.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, PartialEq)]
pub(crate) struct Element {
    pub name: String,
    pub attrs: BTreeMap<String, String>,
    pub line: usize,
}

pub(crate) fn elements(xml: &str) -> Result<Vec<Element>> {
    let mut out = Vec::new();
    let mut rest = xml;
    let mut line = 1;
    while let Some(lt) = rest.find('<') {
        line += rest[..lt].matches('\n').count();
        rest = &rest[lt..];
        let skip_to = |rest: &str, end: &str| rest.find(end).map(|i| i + end.len());
        let consumed = if rest.starts_with("<![CDATA[") {
            skip_to(rest, "]]>")
        } else if rest.starts_with("<!--") {
            skip_to(rest, "-->")
        } else if rest.starts_with("<?") {
            skip_to(rest, "?>")
        } else {
            skip_to(rest, ">")
        };
        let Some(consumed) = consumed else {
            return Err(Error::parse(line, "unterminated markup"));
        };
        let tag = &rest[1..consumed - 1];
        if !tag.starts_with(['/', '!', '?']) {
            out.push(parse_tag(tag.trim_end_matches('/'), line)?);
        }
        line += rest[..consumed].matches('\n').count();
        rest = &rest[consumed..];
    }
    Ok(out)
}

fn parse_tag(tag: &str, line: usize) -> Result<Element> {
    let tag = tag.trim();
    let name_end = tag.find(char::is_whitespace).unwrap_or(tag.len());
    let name = tag[..name_end].to_string();
    if name.is_empty() {
        return Err(Error::parse(line, "empty element name"));
    }
    let mut attrs = BTreeMap::new();
    let mut rest = tag[name_end..].trim_start();
    while !rest.is_empty() {
        let eq = rest
            .find('=')
            .ok_or_else(|| Error::parse(line, format!("attribute without value in <{name}>")))?;
        let key = rest[..eq].trim().to_string();
        let after = rest[eq + 1..].trim_start();
        let quote = after
            .chars()
            .next()
            .filter(|c| *c == '"' || *c == '\'')
            .ok_or_else(|| Error::parse(line, format!("unquoted attribute {key} in <{name}>")))?;
        let close = after[1..]
            .find(quote)
            .ok_or_else(|| Error::parse(line, format!("unterminated attribute {key} in <{name}>")))?;
        attrs.insert(key, unescape(&after[1..1 + close]));
        rest = after[close + 2..].trim_start();
    }
    Ok(Element { name, attrs, line })
}

pub(crate) fn unescape(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    s.replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
