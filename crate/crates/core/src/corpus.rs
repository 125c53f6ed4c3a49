//! Chaptered text ingestion: segmentation into the volume/book/chapter
//! hierarchy, tokenization, and alias-based character appearance detection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of a narrative unit in the hierarchy. All indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitRef {
    pub volume: usize,
    pub book: usize,
    pub chapter: usize,
    /// Global position in narrative order.
    pub ordinal: usize,
}

/// (volume, book, chapter) with lower levels zeroed when grouping.
type UnitKey = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chapter {
    pub unit: UnitRef,
    pub title: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
}

impl Chapter {
    pub fn new(unit: UnitRef, title: impl Into<String>, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let tokens = tokenize(&raw_text);
        Chapter {
            unit,
            title: title.into(),
            raw_text,
            tokens,
        }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

/// Title line of a volume or book heading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivisionHeading {
    pub volume: usize,
    /// 0 for a volume heading.
    pub book: usize,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub chapters: Vec<Chapter>,
    pub divisions: Vec<DivisionHeading>,
}

/// Granularity at which co-appearance is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitLevel {
    #[default]
    Chapter,
    Book,
    Volume,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.chapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chapters.is_empty()
    }

    /// Chapter with the given 1-based ordinal.
    pub fn chapter(&self, ordinal: usize) -> Option<&Chapter> {
        ordinal.checked_sub(1).and_then(|i| self.chapters.get(i))
    }

    /// Distinct (volume, book) pairs in narrative order.
    pub fn books(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for c in &self.chapters {
            let key = (c.unit.volume, c.unit.book);
            if out.last() != Some(&key) {
                out.push(key);
            }
        }
        out
    }

    pub fn volume_count(&self) -> usize {
        self.chapters.last().map_or(0, |c| c.unit.volume)
    }

    /// Ordinals of the chapters belonging to each book, keyed like [`Corpus::books`].
    pub fn book_chapters(&self) -> Vec<((usize, usize), Vec<usize>)> {
        let mut out: Vec<((usize, usize), Vec<usize>)> = Vec::new();
        for c in &self.chapters {
            let key = (c.unit.volume, c.unit.book);
            match out.last_mut() {
                Some((k, v)) if *k == key => v.push(c.unit.ordinal),
                _ => out.push((key, vec![c.unit.ordinal])),
            }
        }
        out
    }

    /// Regroups chapters into coarser units. Each book (or volume) becomes a
    /// single unit whose text is the concatenation of its chapters.
    pub fn at_level(&self, level: UnitLevel) -> Corpus {
        let key = |u: &UnitRef| match level {
            UnitLevel::Chapter => (u.volume, u.book, u.chapter),
            UnitLevel::Book => (u.volume, u.book, 0),
            UnitLevel::Volume => (u.volume, 0, 0),
        };
        if level == UnitLevel::Chapter {
            return self.clone();
        }
        let mut groups: Vec<(UnitKey, Vec<&Chapter>)> = Vec::new();
        for c in &self.chapters {
            let k = key(&c.unit);
            match groups.last_mut() {
                Some((gk, v)) if *gk == k => v.push(c),
                _ => groups.push((k, vec![c])),
            }
        }
        let chapters = groups
            .into_iter()
            .enumerate()
            .map(|(i, ((volume, book, _), members))| {
                let title = self
                    .divisions
                    .iter()
                    .find(|d| d.volume == volume && d.book == book)
                    .map(|d| d.title.clone())
                    .unwrap_or_else(|| members[0].title.clone());
                let raw_text = members
                    .iter()
                    .map(|c| c.raw_text.as_str())
                    .collect::<Vec<_>>()
                    .join("\n");
                let tokens = members.iter().flat_map(|c| c.tokens.iter().cloned()).collect();
                Chapter {
                    unit: UnitRef {
                        volume,
                        book: book.max(1),
                        chapter: 1,
                        ordinal: i + 1,
                    },
                    title,
                    raw_text,
                    tokens,
                }
            })
            .collect();
        Corpus {
            chapters,
            divisions: self.divisions.clone(),
        }
    }

    /// JSON-friendly summary: ordinals, hierarchy and token counts.
    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            chapter_count: self.len(),
            book_count: self.books().len(),
            volume_count: self.volume_count(),
            chapters: self
                .chapters
                .iter()
                .map(|c| ManifestEntry {
                    ordinal: c.unit.ordinal,
                    volume: c.unit.volume,
                    book: c.unit.book,
                    chapter: c.unit.chapter,
                    title: c.title.clone(),
                    token_count: c.token_count(),
                })
                .collect(),
            divisions: self.divisions.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub ordinal: usize,
    pub volume: usize,
    pub book: usize,
    pub chapter: usize,
    pub title: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub chapter_count: usize,
    pub book_count: usize,
    pub volume_count: usize,
    pub chapters: Vec<ManifestEntry>,
    pub divisions: Vec<DivisionHeading>,
}

/// Heading patterns and trim markers. Patterns are regular expressions
/// anchored at the start of a line; markers are unanchored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    #[serde(default)]
    pub volume_pattern: Option<String>,
    #[serde(default)]
    pub book_pattern: Option<String>,
    pub chapter_pattern: String,
    /// Text before the `start_occurrence`-th match of this marker is dropped.
    #[serde(default)]
    pub start_marker: Option<String>,
    #[serde(default = "one")]
    pub start_occurrence: usize,
    /// Text from the first match of this marker (after the start) is dropped.
    #[serde(default)]
    pub end_marker: Option<String>,
}

fn one() -> usize {
    1
}

impl SegmentationConfig {
    pub fn chapters_only(chapter_pattern: &str) -> Self {
        SegmentationConfig {
            chapter_pattern: chapter_pattern.to_string(),
            start_occurrence: 1,
            ..Default::default()
        }
    }
}

fn compile(pattern: &str, heading: bool) -> Result<Regex> {
    let src = if heading {
        format!("^(?:{pattern})")
    } else {
        pattern.to_string()
    };
    RegexBuilder::new(&src)
        .multi_line(true)
        .build()
        .map_err(|source| Error::BadPattern {
            pattern: pattern.to_string(),
            source,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeadingKind {
    Volume,
    Book,
    Chapter,
}

/// Splits `raw` into chapters.
///
/// Each chapter's text runs from its heading line to the next heading of any
/// kind. Prose that follows a volume or book heading line before the first
/// chapter heading is prepended to that chapter, as is any text before the
/// first heading. Volume and book heading lines are kept in
/// [`Corpus::divisions`].
pub fn parse_narrative(raw: &str, markers: &SegmentationConfig) -> Result<Corpus> {
    let text = trim(raw, markers)?;

    let volume_re = markers
        .volume_pattern
        .as_deref()
        .map(|p| compile(p, true))
        .transpose()?;
    let book_re = markers
        .book_pattern
        .as_deref()
        .map(|p| compile(p, true))
        .transpose()?;
    let chapter_re = compile(&markers.chapter_pattern, true)?;

    // (line start, line end incl. newline, kind)
    let mut headings: Vec<(usize, usize, HeadingKind)> = Vec::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let start = pos;
        pos += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        let kind = if volume_re.as_ref().is_some_and(|r| r.is_match(body)) {
            Some(HeadingKind::Volume)
        } else if book_re.as_ref().is_some_and(|r| r.is_match(body)) {
            Some(HeadingKind::Book)
        } else if chapter_re.is_match(body) {
            Some(HeadingKind::Chapter)
        } else {
            None
        };
        if let Some(kind) = kind {
            headings.push((start, pos, kind));
        }
    }
    if !headings.iter().any(|h| h.2 == HeadingKind::Chapter) {
        return Err(Error::NoChaptersFound);
    }

    let uses_volumes = volume_re.is_some();
    let uses_books = book_re.is_some();
    let mut volume = usize::from(!uses_volumes);
    let mut book = usize::from(!uses_books);
    let mut chapter = 0;
    let mut divisions = Vec::new();
    let mut chapters: Vec<Chapter> = Vec::new();
    let mut prefix = text[..headings[0].0].to_string();

    for (i, &(start, end, kind)) in headings.iter().enumerate() {
        let next = headings.get(i + 1).map_or(text.len(), |h| h.0);
        let title = text[start..end].trim().to_string();
        match kind {
            HeadingKind::Volume => {
                volume += 1;
                book = usize::from(!uses_books);
                chapter = 0;
                divisions.push(DivisionHeading {
                    volume,
                    book: 0,
                    title,
                });
                prefix.push_str(&text[end..next]);
            }
            HeadingKind::Book => {
                if volume == 0 {
                    return Err(Error::NonMonotoneHeading { offset: start });
                }
                book += 1;
                chapter = 0;
                divisions.push(DivisionHeading {
                    volume,
                    book,
                    title,
                });
                prefix.push_str(&text[end..next]);
            }
            HeadingKind::Chapter => {
                if volume == 0 || book == 0 {
                    return Err(Error::NonMonotoneHeading { offset: start });
                }
                chapter += 1;
                let mut body = std::mem::take(&mut prefix);
                body.push_str(&text[start..next]);
                let unit = UnitRef {
                    volume,
                    book,
                    chapter,
                    ordinal: chapters.len() + 1,
                };
                chapters.push(Chapter {
                    unit,
                    title,
                    raw_text: body,
                    tokens: Vec::new(),
                });
            }
        }
    }
    // Trailing division prose with no following chapter stays with the last one.
    if !prefix.is_empty() {
        if let Some(last) = chapters.last_mut() {
            last.raw_text.push_str(&prefix);
        }
    }
    chapters
        .par_iter_mut()
        .for_each(|c| c.tokens = tokenize(&c.raw_text));
    Ok(Corpus {
        chapters,
        divisions,
    })
}

fn trim<'a>(raw: &'a str, markers: &SegmentationConfig) -> Result<&'a str> {
    let mut text = raw;
    if let Some(m) = &markers.start_marker {
        let re = compile(m, false)?;
        let nth = markers.start_occurrence.max(1) - 1;
        let found = re
            .find_iter(text)
            .nth(nth)
            .ok_or_else(|| Error::MarkerNotFound(m.clone()))?;
        text = &text[found.start()..];
    }
    if let Some(m) = &markers.end_marker {
        let re = compile(m, false)?;
        let found = re
            .find(text)
            .ok_or_else(|| Error::MarkerNotFound(m.clone()))?;
        text = &text[..found.start()];
    }
    Ok(text)
}

/// Lowercased alphabetic runs, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Alias matched literally, bounded by word boundaries.
    #[default]
    Word,
    /// Alias words matched across any run of whitespace, including line breaks.
    Phrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub name: String,
    pub aliases: Vec<String>,
    #[serde(default, rename = "match")]
    pub match_mode: MatchMode,
}

#[derive(Debug, Clone)]
pub struct CharacterRoster {
    entries: Vec<RosterEntry>,
    matchers: Vec<Regex>,
}

#[derive(Deserialize)]
struct RosterFile {
    character: Vec<RosterEntry>,
}

impl CharacterRoster {
    pub fn new(entries: Vec<RosterEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidRoster("roster is empty".into()));
        }
        let mut names = HashMap::new();
        let mut claimed: HashMap<Vec<String>, &str> = HashMap::new();
        for e in &entries {
            if names.insert(e.name.as_str(), ()).is_some() {
                return Err(Error::InvalidRoster(format!("duplicate name `{}`", e.name)));
            }
            if e.aliases.is_empty() {
                return Err(Error::InvalidRoster(format!("`{}` has no aliases", e.name)));
            }
            for alias in &e.aliases {
                let key = tokenize(alias);
                if key.is_empty() {
                    return Err(Error::InvalidRoster(format!(
                        "`{}` has an empty alias",
                        e.name
                    )));
                }
                match claimed.get(&key) {
                    Some(owner) if *owner != e.name => {
                        return Err(Error::AmbiguousAlias {
                            alias: alias.clone(),
                            first: owner.to_string(),
                            second: e.name.clone(),
                        })
                    }
                    _ => {
                        claimed.insert(key, &e.name);
                    }
                }
            }
        }
        let matchers = entries.iter().map(alias_regex).collect::<Result<_>>()?;
        Ok(CharacterRoster { entries, matchers })
    }

    pub fn from_toml(src: &str) -> Result<Self> {
        let file: RosterFile =
            toml::from_str(src).map_err(|e| Error::InvalidRoster(e.to_string()))?;
        Self::new(file.character)
    }

    pub fn entries(&self) -> &[RosterEntry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn matches(&self, index: usize, text: &str) -> bool {
        self.matchers[index].is_match(text)
    }
}

fn alias_regex(entry: &RosterEntry) -> Result<Regex> {
    let alternatives: Vec<String> = entry
        .aliases
        .iter()
        .map(|alias| {
            let alias = alias.trim();
            let body = match entry.match_mode {
                MatchMode::Word => regex::escape(alias),
                MatchMode::Phrase => alias
                    .split_whitespace()
                    .map(regex::escape)
                    .collect::<Vec<_>>()
                    .join(r"\s+"),
            };
            let lead = if alias.starts_with(char::is_alphanumeric) {
                r"\b"
            } else {
                ""
            };
            let tail = if alias.ends_with(char::is_alphanumeric) {
                r"\b"
            } else {
                ""
            };
            format!("{lead}{body}{tail}")
        })
        .collect();
    let src = format!("(?:{})", alternatives.join("|"));
    RegexBuilder::new(&src)
        .case_insensitive(true)
        .build()
        .map_err(|source| Error::BadPattern {
            pattern: src.clone(),
            source,
        })
}

/// The chapters in which a character appears.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub character: String,
    /// Sorted, duplicate-free chapter ordinals.
    pub chapters: Vec<usize>,
}

impl Timeline {
    pub fn new(character: impl Into<String>, mut chapters: Vec<usize>) -> Self {
        chapters.sort_unstable();
        chapters.dedup();
        Timeline {
            character: character.into(),
            chapters,
        }
    }

    pub fn appearance(&self) -> usize {
        self.chapters.len()
    }

    pub fn first(&self) -> Option<usize> {
        self.chapters.first().copied()
    }

    pub fn contains(&self, ordinal: usize) -> bool {
        self.chapters.binary_search(&ordinal).is_ok()
    }
}

impl fmt::Display for Timeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} chapters)", self.character, self.appearance())
    }
}

/// One timeline per roster entry, in roster order.
pub fn detect_appearances(corpus: &Corpus, roster: &CharacterRoster) -> Vec<Timeline> {
    let hits: Vec<Vec<usize>> = corpus
        .chapters
        .par_iter()
        .map(|c| {
            (0..roster.len())
                .filter(|&i| roster.matches(i, &c.raw_text))
                .collect()
        })
        .collect();
    let mut per_char: Vec<Vec<usize>> = vec![Vec::new(); roster.len()];
    for (chapter, found) in corpus.chapters.iter().zip(hits) {
        for i in found {
            per_char[i].push(chapter.unit.ordinal);
        }
    }
    roster
        .entries
        .iter()
        .zip(per_char)
        .map(|(e, chapters)| Timeline::new(e.name.clone(), chapters))
        .collect()
}

/// name → ordinal array, as written to `timelines.json`.
pub fn timelines_to_map(timelines: &[Timeline]) -> BTreeMap<String, Vec<usize>> {
    timelines
        .iter()
        .map(|t| (t.character.clone(), t.chapters.clone()))
        .collect()
}
