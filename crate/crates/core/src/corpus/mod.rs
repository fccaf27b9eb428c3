//! Caption corpora, lexicon-based concept extraction and concept groups.
//!
//! A concept group collects every image whose caption mentions a concept.
//! Mini-groups sampled from it are the unit the discovery head trains on.

mod index;
pub mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use crate::{Error, Result};

pub use index::{
    build_concept_index, sample_mini_group, support_positions, ConceptGroupIndex, GroupEntry,
    MiniGroup,
};

/// Dense id of a lexicon entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptId(pub usize);

impl ConceptId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    /// Filled by [`build_concept_index`]; empty right after parsing.
    pub concepts: Vec<ConceptId>,
}

impl CaptionRecord {
    pub fn new(image_id: impl Into<String>, caption: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            caption: caption.into(),
            concepts: Vec::new(),
        }
    }
}

/// Supported corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// `image_id<TAB>caption`, one record per line.
    #[default]
    Tsv,
}

/// Parses a caption corpus. Empty lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R, format: CorpusFormat) -> Result<Vec<CaptionRecord>> {
    match format {
        CorpusFormat::Tsv => parse_tsv(reader),
    }
}

fn parse_tsv<R: BufRead>(reader: R) -> Result<Vec<CaptionRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let tabs = line.matches('\t').count();
        if tabs != 1 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 1 tab, found {tabs}"),
            });
        }
        let (id, caption) = line.split_once('\t').expect("one tab present");
        if id.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty image id".into(),
            });
        }
        if id.contains(',') {
            return Err(Error::Parse {
                line: lineno,
                message: format!("image id `{id}` contains a comma"),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateImage(id.to_string()));
        }
        records.push(CaptionRecord::new(id, caption));
    }
    Ok(records)
}

/// Lowercases, removes ASCII punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// The object filter: a closed set of single- or multi-word terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    terms: Vec<String>,
    lookup: HashMap<String, ConceptId>,
    max_tokens: usize,
}

impl Lexicon {
    /// Builds a lexicon; ids follow the order of `terms`.
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Self {
            terms: Vec::new(),
            lookup: HashMap::new(),
            max_tokens: 0,
        };
        for term in terms {
            let tokens = tokenize(term.as_ref());
            if tokens.is_empty() {
                return Err(Error::Config(format!(
                    "lexicon term `{}` is empty after normalisation",
                    term.as_ref()
                )));
            }
            let key = tokens.join(" ");
            if out.lookup.contains_key(&key) {
                return Err(Error::Config(format!("duplicate lexicon term `{key}`")));
            }
            out.max_tokens = out.max_tokens.max(tokens.len());
            out.lookup.insert(key.clone(), ConceptId(out.terms.len()));
            out.terms.push(key);
        }
        if out.terms.is_empty() {
            return Err(Error::Empty("lexicon has no terms".into()));
        }
        Ok(out)
    }

    /// Reads one term per line; `#` lines and blank lines are ignored.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut terms = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            terms.push(trimmed.to_string());
        }
        Self::new(terms)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, id: ConceptId) -> Option<&str> {
        self.terms.get(id.0).map(String::as_str)
    }

    pub fn id(&self, term: &str) -> Option<ConceptId> {
        self.lookup.get(&tokenize(term).join(" ")).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for term in &self.terms {
            out.push_str(term);
            out.push('\n');
        }
        out
    }
}

/// Scans a caption for lexicon entries, longest match first.
///
/// Multi-word entries only match contiguous tokens. The result keeps the
/// order of first occurrence and contains no duplicates.
pub fn extract_concepts(caption: &str, lexicon: &Lexicon) -> Vec<ConceptId> {
    let tokens = tokenize(caption);
    let mut found = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = lexicon.max_tokens.min(tokens.len() - i);
        let mut step = 1;
        for len in (1..=longest).rev() {
            let key = tokens[i..i + len].join(" ");
            if let Some(&id) = lexicon.lookup.get(&key) {
                if !found.contains(&id) {
                    found.push(id);
                }
                step = len;
                break;
            }
        }
        i += step;
    }
    found
}
