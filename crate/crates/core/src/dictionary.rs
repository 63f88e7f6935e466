//! Closed-vocabulary dictionary and whitelist.
//!
//! Dictionary files follow the usual `.dic` layout:
//!
//! ```text
//! %
//! 1	posemo
//! 2	negemo
//! %
//! happ*	1
//! sad	2
//! ```
//!
//! A trailing `*` marks a stem that matches every word it prefixes.

#![allow(clippy::tabs_in_doc_comments)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::ParseError;
use crate::model::{fold_case, CategorySet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictEntry {
    /// Case-folded pattern without the wildcard marker.
    pub pattern: String,
    pub stem: bool,
    pub categories: CategorySet,
}

#[derive(Debug, Clone, Default)]
pub struct Dictionary {
    categories: BTreeMap<u32, String>,
    entries: Vec<DictEntry>,
    literals: HashMap<String, CategorySet>,
    stems: HashMap<String, CategorySet>,
    max_stem_chars: usize,
}

impl Dictionary {
    pub fn new(categories: BTreeMap<u32, String>) -> Self {
        Dictionary { categories, ..Default::default() }
    }

    /// Adds an entry. `pattern` may end with `*` to mark a stem.
    pub fn add_entry(&mut self, pattern: &str, ids: impl IntoIterator<Item = u32>) -> Result<(), ParseError> {
        let (body, stem) = match pattern.strip_suffix('*') {
            Some(b) => (b, true),
            None => (pattern, false),
        };
        let body = fold_case(body.trim());
        if body.is_empty() {
            return Err(ParseError::EmptyField("pattern"));
        }
        let cats = CategorySet::from_ids(ids);
        if let Some(bad) = cats.ids().iter().find(|id| !self.categories.contains_key(id)) {
            return Err(ParseError::line(0, format!("unknown category id {bad} for pattern {pattern:?}")));
        }
        let index = if stem { &mut self.stems } else { &mut self.literals };
        index.entry(body.clone()).or_default().union_with(&cats);
        if stem {
            self.max_stem_chars = self.max_stem_chars.max(body.chars().count());
        }
        self.entries.push(DictEntry { pattern: body, stem, categories: cats });
        Ok(())
    }

    pub fn categories(&self) -> &BTreeMap<u32, String> {
        &self.categories
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    /// Category ids of every entry matching `folded`, which must already be
    /// case-folded. Literals match by equality, stems by prefix.
    pub fn lookup_folded(&self, folded: &str) -> CategorySet {
        let mut out = self.literals.get(folded).cloned().unwrap_or_default();
        if self.stems.is_empty() {
            return out;
        }
        for (count, (idx, ch)) in folded.char_indices().enumerate() {
            if count >= self.max_stem_chars {
                break;
            }
            let end = idx + ch.len_utf8();
            if let Some(c) = self.stems.get(&folded[..end]) {
                out.union_with(c);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        // Skip a leading BOM and blank lines before the header.
        let first = loop {
            match lines.next() {
                Some((_, l)) if l.trim_start_matches('\u{feff}').trim().is_empty() => continue,
                Some((n, l)) => break (n, l.trim_start_matches('\u{feff}').trim()),
                None => return Err(ParseError::line(1, "empty dictionary")),
            }
        };
        if first.1 != "%" {
            return Err(ParseError::line(first.0, "dictionary must start with a '%' header line"));
        }
        let mut categories = BTreeMap::new();
        let mut closed = false;
        for (n, line) in lines.by_ref() {
            let line = line.trim();
            if line == "%" {
                closed = true;
                break;
            }
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ParseError::line(n, "expected numeric category id"))?;
            let name = parts.collect::<Vec<_>>().join(" ");
            if name.is_empty() {
                return Err(ParseError::line(n, "category without name"));
            }
            if categories.insert(id, name).is_some() {
                return Err(ParseError::line(n, format!("duplicate category id {id}")));
            }
        }
        if !closed {
            return Err(ParseError::line(0, "unterminated category header"));
        }
        let mut dict = Dictionary::new(categories);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (pattern, ids) = match line.split_once('\t') {
                Some(p) => p,
                None => line
                    .trim()
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| ParseError::line(n, "entry without category ids"))?,
            };
            let ids: Vec<u32> = ids
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| ParseError::line(n, format!("bad category id {s:?}"))))
                .collect::<Result<_, _>>()?;
            if ids.is_empty() {
                return Err(ParseError::line(n, "entry without category ids"));
            }
            dict.add_entry(pattern.trim(), ids).map_err(|e| match e {
                ParseError::Line { msg, .. } => ParseError::line(n, msg),
                other => ParseError::line(n, other.to_string()),
            })?;
        }
        Ok(dict)
    }

    pub fn to_dic(&self) -> String {
        let mut s = String::from("%\n");
        for (id, name) in &self.categories {
            s.push_str(&format!("{id}\t{name}\n"));
        }
        s.push_str("%\n");
        for e in &self.entries {
            s.push_str(&e.pattern);
            if e.stem {
                s.push('*');
            }
            let ids: Vec<String> = e.categories.ids().iter().map(u32::to_string).collect();
            s.push('\t');
            s.push_str(&ids.join("\t"));
            s.push('\n');
        }
        s
    }
}

/// Words that may be logged verbatim (case-folded).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Whitelist {
    words: BTreeSet<String>,
}

impl Whitelist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Whitelist { words: words.into_iter().map(|w| fold_case(w.as_ref().trim())).filter(|w| !w.is_empty()).collect() }
    }

    /// One word per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        Self::from_words(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    pub fn contains_folded(&self, folded: &str) -> bool {
        self.words.contains(folded)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIC: &str = "%\n1\tposemo\n2\tnegemo\n3\tsocial\n%\nhapp*\t1\nsad\t2\nfriend*\t1\t3\nhappy\t1\n";

    #[test]
    fn parses_header_and_entries() {
        let d = Dictionary::parse(DIC).unwrap();
        assert_eq!(d.categories().len(), 3);
        assert_eq!(d.entries().len(), 4);
        assert_eq!(d.lookup_folded("happiness").ids(), &[1]);
        assert_eq!(d.lookup_folded("friends").ids(), &[1, 3]);
        assert_eq!(d.lookup_folded("sad").ids(), &[2]);
        assert!(d.lookup_folded("sadness").is_empty());
        assert!(d.lookup_folded("hap").is_empty());
    }

    #[test]
    fn round_trips_through_text() {
        let d = Dictionary::parse(DIC).unwrap();
        let again = Dictionary::parse(&d.to_dic()).unwrap();
        assert_eq!(again.entries(), d.entries());
    }

    #[test]
    fn rejects_unknown_category() {
        let err = Dictionary::parse("%\n1\ta\n%\nfoo\t7\n").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn rejects_missing_header() {
        assert!(Dictionary::parse("foo\t1\n").is_err());
        assert!(Dictionary::parse("%\n1\ta\n").is_err());
    }

    #[test]
    fn patterns_are_case_folded() {
        let d = Dictionary::parse("%\n1\ta\n%\nHAUS\t1\n").unwrap();
        assert_eq!(d.lookup_folded("haus").ids(), &[1]);
    }

    #[test]
    fn whitelist_folds_and_dedups() {
        let wl = Whitelist::parse("# words\nHaus\nhaus\n\nStraße\n");
        assert_eq!(wl.len(), 2);
        assert!(wl.contains_folded("haus"));
        assert!(wl.contains_folded("strasse"));
    }
}
