//! Lexicon-based chapter scoring and the sentiment polarity index (SPI),
//! with character, pair and community aggregates.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Chapter, Timeline};
use crate::error::{Error, Result};
use crate::network::{csv_field, CharacterNetwork, CommunityPartition};

/// Positive and negative word lists. An entry ending in `*` matches every
/// token starting with the text before the `*`.
#[derive(Debug, Clone, Default)]
pub struct SentimentLexicon {
    positive: PatternSet,
    negative: PatternSet,
}

#[derive(Debug, Clone, Default)]
struct PatternSet {
    words: HashSet<String>,
    stems: HashSet<String>,
    max_stem_chars: usize,
}

impl PatternSet {
    fn insert(&mut self, entry: &str) {
        if let Some(stem) = entry.strip_suffix('*') {
            self.max_stem_chars = self.max_stem_chars.max(stem.chars().count());
            self.stems.insert(stem.to_string());
        } else {
            self.words.insert(entry.to_string());
        }
    }

    fn contains_entry(&self, entry: &str) -> bool {
        match entry.strip_suffix('*') {
            Some(stem) => self.stems.contains(stem),
            None => self.words.contains(entry),
        }
    }

    fn matches(&self, token: &str) -> bool {
        if self.words.contains(token) {
            return true;
        }
        if self.stems.is_empty() {
            return false;
        }
        token
            .char_indices()
            .map(|(i, c)| i + c.len_utf8())
            .take(self.max_stem_chars)
            .any(|end| self.stems.contains(&token[..end]))
    }

    fn len(&self) -> usize {
        self.words.len() + self.stems.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

impl SentimentLexicon {
    pub fn new<P, N>(positive: P, negative: N) -> Result<Self>
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        N: IntoIterator,
        N::Item: AsRef<str>,
    {
        let mut lex = SentimentLexicon::default();
        for p in positive {
            lex.add(Polarity::Positive, p.as_ref(), 0)?;
        }
        for n in negative {
            lex.add(Polarity::Negative, n.as_ref(), 0)?;
        }
        Ok(lex)
    }

    fn add(&mut self, polarity: Polarity, entry: &str, line: usize) -> Result<()> {
        let entry = entry.trim().to_lowercase();
        let bad = |reason: &str| Error::InvalidLexicon {
            line,
            reason: format!("{reason}: `{entry}`"),
        };
        if entry.is_empty() || entry == "*" {
            return Err(bad("empty entry"));
        }
        if entry.trim_end_matches('*').contains('*') || entry.ends_with("**") {
            return Err(bad("wildcard only allowed in final position"));
        }
        let (mine, other) = match polarity {
            Polarity::Positive => (&mut self.positive, &self.negative),
            Polarity::Negative => (&mut self.negative, &self.positive),
        };
        if other.contains_entry(&entry) {
            return Err(bad("entry listed as both positive and negative"));
        }
        mine.insert(&entry);
        Ok(())
    }

    /// Parses the sectioned text format: `[positive]` and `[negative]`
    /// headers, one entry per line, `#` comments.
    pub fn parse(src: &str) -> Result<Self> {
        let mut lex = SentimentLexicon::default();
        let mut section = None;
        for (i, raw) in src.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.to_lowercase().as_str() {
                "[positive]" => section = Some(Polarity::Positive),
                "[negative]" => section = Some(Polarity::Negative),
                _ => {
                    let polarity = section.ok_or_else(|| Error::InvalidLexicon {
                        line: line_no,
                        reason: "entry before any [positive]/[negative] section".into(),
                    })?;
                    lex.add(polarity, line, line_no)?;
                }
            }
        }
        Ok(lex)
    }

    pub fn is_positive(&self, token: &str) -> bool {
        self.positive.matches(token)
    }

    pub fn is_negative(&self, token: &str) -> bool {
        self.negative.matches(token)
    }

    pub fn len(&self) -> (usize, usize) {
        (self.positive.len(), self.negative.len())
    }
}

/// Sentiment polarity index of a (π, ν) percentage pair.
pub fn spi(positive_pct: f64, negative_pct: f64) -> f64 {
    ((positive_pct + 1.0) / (negative_pct + 1.0)).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChapterSentiment {
    pub ordinal: usize,
    /// Percentage of tokens matching a positive entry.
    pub positive: f64,
    /// Percentage of tokens matching a negative entry.
    pub negative: f64,
    pub spi: f64,
}

pub fn score_chapter(ordinal: usize, tokens: &[String], lexicon: &SentimentLexicon) -> ChapterSentiment {
    let total = tokens.len();
    let (mut pos, mut neg) = (0usize, 0usize);
    for t in tokens {
        pos += usize::from(lexicon.is_positive(t));
        neg += usize::from(lexicon.is_negative(t));
    }
    let pct = |k: usize| {
        if total == 0 {
            0.0
        } else {
            100.0 * k as f64 / total as f64
        }
    };
    let (positive, negative) = (pct(pos), pct(neg));
    ChapterSentiment {
        ordinal,
        positive,
        negative,
        spi: spi(positive, negative),
    }
}

pub fn score_corpus(chapters: &[Chapter], lexicon: &SentimentLexicon) -> Vec<ChapterSentiment> {
    chapters
        .par_iter()
        .map(|c| score_chapter(c.unit.ordinal, &c.tokens, lexicon))
        .collect()
}

pub fn chapter_spi_csv(scores: &[ChapterSentiment]) -> String {
    let mut out = String::from("ordinal,positive,negative,spi\n");
    for s in scores {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            s.ordinal, s.positive, s.negative, s.spi
        ));
    }
    out
}

/// Chapter ordinal → σ lookup.
#[derive(Debug, Clone)]
pub struct SpiTable(Vec<f64>);

impl SpiTable {
    pub fn new(scores: &[ChapterSentiment]) -> Self {
        let max = scores.iter().map(|s| s.ordinal).max().unwrap_or(0);
        let mut v = vec![f64::NAN; max];
        for s in scores {
            v[s.ordinal - 1] = s.spi;
        }
        SpiTable(v)
    }

    pub fn get(&self, ordinal: usize) -> Option<f64> {
        ordinal
            .checked_sub(1)
            .and_then(|i| self.0.get(i))
            .copied()
            .filter(|x| !x.is_nan())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied().filter(|x| !x.is_nan())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentProfile {
    pub subject: String,
    pub chapters: Vec<usize>,
    /// σ of each chapter, in ordinal order.
    pub spi_set: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean (0 for a single chapter).
    pub std_error: f64,
    pub quartiles: Quartiles,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cosentiment: Option<f64>,
}

pub fn aggregate_spi(subject: &str, chapters: &[usize], table: &SpiTable) -> Result<SentimentProfile> {
    if chapters.is_empty() {
        return Err(Error::EmptySubject);
    }
    let mut ords = chapters.to_vec();
    ords.sort_unstable();
    ords.dedup();
    let spi_set = ords
        .iter()
        .map(|&o| {
            table.get(o).ok_or(Error::OrdinalOutOfRange {
                ordinal: o,
                max: table.0.len(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = spi_set.len() as f64;
    let mean = spi_set.iter().sum::<f64>() / n;
    let std_error = if spi_set.len() > 1 {
        let var = spi_set.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let mut sorted = spi_set.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(SentimentProfile {
        subject: subject.to_string(),
        chapters: ords,
        quartiles: Quartiles {
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
        },
        spi_set,
        mean,
        std_error,
        cosentiment: None,
    })
}

pub fn cosentiment(pair_mean: f64, baseline: f64) -> f64 {
    pair_mean - baseline
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSign {
    Positive,
    Negative,
    Neutral,
}

impl EdgeSign {
    pub fn of(value: f64) -> Self {
        if value > 0.0 {
            EdgeSign::Positive
        } else if value < 0.0 {
            EdgeSign::Negative
        } else {
            EdgeSign::Neutral
        }
    }
}

/// Profiles for every character and every connected pair, plus the pair
/// baseline σ̄₀ and per-edge cosentiments (indexed like `network.edges`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentReport {
    pub mean_chapter_spi: f64,
    pub mean_chapter_spi_std_error: f64,
    pub pair_baseline: f64,
    pub characters: Vec<SentimentProfile>,
    pub pairs: Vec<SentimentProfile>,
    pub edge_cosentiment: Vec<f64>,
}

impl SentimentReport {
    pub fn character(&self, name: &str) -> Option<&SentimentProfile> {
        self.characters.iter().find(|p| p.subject == name)
    }

    pub fn pair(&self, a: &str, b: &str) -> Option<&SentimentProfile> {
        let (x, y) = (pair_label(a, b), pair_label(b, a));
        self.pairs.iter().find(|p| p.subject == x || p.subject == y)
    }

    pub fn edge_signs(&self) -> Vec<EdgeSign> {
        self.edge_cosentiment.iter().map(|&c| EdgeSign::of(c)).collect()
    }
}

pub fn pair_label(a: &str, b: &str) -> String {
    format!("{a}|{b}")
}

pub fn sentiment_report(
    scores: &[ChapterSentiment],
    timelines: &[Timeline],
    network: &CharacterNetwork,
) -> Result<SentimentReport> {
    let table = SpiTable::new(scores);
    let all: Vec<usize> = scores.iter().map(|s| s.ordinal).collect();
    let overall = aggregate_spi("all chapters", &all, &table)?;
    let characters = timelines
        .iter()
        .filter(|t| t.appearance() > 0)
        .map(|t| aggregate_spi(&t.character, &t.chapters, &table))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = network
        .edges
        .iter()
        .map(|e| {
            let (a, b) = network.edge_names(e);
            aggregate_spi(&pair_label(a, b), &e.chapters, &table)
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|p| p.mean).sum::<f64>() / pairs.len() as f64
    };
    let mut edge_cosentiment = Vec::with_capacity(pairs.len());
    for p in &mut pairs {
        let c = cosentiment(p.mean, baseline);
        p.cosentiment = Some(c);
        edge_cosentiment.push(c);
    }
    Ok(SentimentReport {
        mean_chapter_spi: overall.mean,
        mean_chapter_spi_std_error: overall.std_error,
        pair_baseline: baseline,
        characters,
        pairs,
        edge_cosentiment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosentimentCell {
    pub row: String,
    pub col: String,
    pub edge_count: usize,
    pub positive_fraction: f64,
    pub negative_fraction: f64,
    /// log10(edge_count); absent for empty cells.
    pub log_radius: Option<f64>,
}

/// Upper-triangular community × community table (diagonal = intra-community).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityCosentimentMatrix {
    pub labels: Vec<String>,
    pub cells: Vec<CosentimentCell>,
}

impl CommunityCosentimentMatrix {
    pub fn cell(&self, a: &str, b: &str) -> Option<&CosentimentCell> {
        self.cells
            .iter()
            .find(|c| (c.row == a && c.col == b) || (c.row == b && c.col == a))
    }

    pub fn total_edges(&self) -> usize {
        self.cells.iter().map(|c| c.edge_count).sum()
    }
}

pub fn community_cosentiments(
    network: &CharacterNetwork,
    partition: &CommunityPartition,
    cosentiments: &[f64],
) -> CommunityCosentimentMatrix {
    let k = partition.len();
    // (edges, positive, negative)
    let mut counts: BTreeMap<(usize, usize), (usize, usize, usize)> = BTreeMap::new();
    for (e, &c) in network.edges.iter().zip(cosentiments) {
        let (a, b) = network.edge_names(e);
        let (Some(x), Some(y)) = (partition.community_of(a), partition.community_of(b)) else {
            continue;
        };
        let cell = counts.entry((x.min(y), x.max(y))).or_default();
        cell.0 += 1;
        match EdgeSign::of(c) {
            EdgeSign::Positive => cell.1 += 1,
            EdgeSign::Negative => cell.2 += 1,
            EdgeSign::Neutral => {}
        }
    }
    let mut cells = Vec::new();
    for i in 0..k {
        for j in i..k {
            let (n, p, q) = counts.get(&(i, j)).copied().unwrap_or_default();
            let frac = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
            cells.push(CosentimentCell {
                row: partition.labels[i].clone(),
                col: partition.labels[j].clone(),
                edge_count: n,
                positive_fraction: frac(p),
                negative_fraction: frac(q),
                log_radius: (n > 0).then(|| (n as f64).log10()),
            });
        }
    }
    CommunityCosentimentMatrix {
        labels: partition.labels.clone(),
        cells,
    }
}

/// `pair,mean,cosentiment` rows for quick inspection.
pub fn pair_csv(report: &SentimentReport) -> String {
    let mut out = String::from("pair,chapters,mean_spi,cosentiment\n");
    for p in &report.pairs {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            csv_field(&p.subject),
            p.chapters.len(),
            p.mean,
            p.cosentiment.unwrap_or(0.0)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, detect_communities};

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hand_scored_chapter() {
        let lex = SentimentLexicon::new(["happy", "love"], ["pain"]).unwrap();
        let s = score_chapter(1, &toks(&["happy", "love", "pain"]), &lex);
        assert!((s.positive - 200.0 / 3.0).abs() < 1e-9);
        assert!((s.negative - 100.0 / 3.0).abs() < 1e-9);
        let expected = ((200.0_f64 / 3.0 + 1.0) / (100.0 / 3.0 + 1.0)).log10();
        assert!((s.spi - expected).abs() < 1e-12);
        assert!((s.spi - 0.2946).abs() < 1e-4);
    }

    #[test]
    fn empty_chapter_is_neutral() {
        let lex = SentimentLexicon::new(["a"], ["b"]).unwrap();
        let s = score_chapter(1, &[], &lex);
        assert_eq!((s.positive, s.negative, s.spi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn wildcard_matching() {
        let lex = SentimentLexicon::parse("# c\n[positive]\nhapp*\n[negative]\nabandon*\nsad\n").unwrap();
        assert!(lex.is_positive("happiness"));
        assert!(lex.is_positive("happ"));
        assert!(!lex.is_positive("hap"));
        assert!(lex.is_negative("abandoned"));
        assert!(lex.is_negative("sad"));
        assert!(!lex.is_negative("sadness"));
        assert_eq!(lex.len(), (1, 2));
    }

    #[test]
    fn lexicon_validation() {
        assert!(SentimentLexicon::parse("word\n").is_err());
        assert!(SentimentLexicon::parse("[positive]\na*b\n").is_err());
        assert!(SentimentLexicon::parse("[positive]\ngood\n[negative]\ngood\n").is_err());
        assert!(SentimentLexicon::parse("[positive]\n*\n").is_err());
        // a stem and a literal with the same letters are distinct entries
        assert!(SentimentLexicon::parse("[positive]\ngood*\n[negative]\ngood\n").is_ok());
    }

    #[test]
    fn aggregate_examples() {
        let scores: Vec<ChapterSentiment> = (1..=100)
            .map(|o| ChapterSentiment {
                ordinal: o,
                positive: 0.0,
                negative: 0.0,
                spi: match o {
                    1 => 0.1,
                    2 => -0.1,
                    100 => 0.3,
                    _ => 0.0,
                },
            })
            .collect();
        let table = SpiTable::new(&scores);
        let p = aggregate_spi("a", &[100, 1, 2], &table).unwrap();
        assert!((p.mean - 0.1).abs() < 1e-12);
        assert_eq!(p.spi_set, vec![0.1, -0.1, 0.3]);
        assert!((p.quartiles.median - 0.1).abs() < 1e-12);
        let pair = aggregate_spi("a|b", &[2, 100], &table).unwrap();
        assert!((pair.mean - (-0.1 + 0.3) / 2.0).abs() < 1e-12);
        assert!(matches!(aggregate_spi("x", &[], &table), Err(Error::EmptySubject)));
        assert!(aggregate_spi("x", &[101], &table).is_err());
    }

    #[test]
    fn cosentiment_examples() {
        assert_eq!(cosentiment(0.07, 0.07), 0.0);
        assert!((cosentiment(0.02, 0.07) + 0.05).abs() < 1e-12);
        assert_eq!(EdgeSign::of(0.0), EdgeSign::Neutral);
    }

    #[test]
    fn community_matrix_fixture() {
        let t = vec![
            Timeline::new("A", vec![1, 2, 3]),
            Timeline::new("B", vec![1, 2]),
            Timeline::new("C", vec![3]),
        ];
        let net = build_network(&t);
        // edges: (A,B), (A,C); add (B,C) via a shared chapter
        let t2 = vec![
            Timeline::new("A", vec![1, 2, 3]),
            Timeline::new("B", vec![1, 2, 4]),
            Timeline::new("C", vec![3, 4]),
        ];
        let net2 = build_network(&t2);
        assert_eq!(net.edge_count(), 2);
        assert_eq!(net2.edge_count(), 3);
        let partition = CommunityPartition {
            assignment: [("A".to_string(), 0), ("B".to_string(), 0), ("C".to_string(), 1)]
                .into_iter()
                .collect(),
            labels: vec!["I".into(), "II".into()],
            members: vec![vec!["A".into(), "B".into()], vec!["C".into()]],
            modularity: 0.0,
        };
        // edge order: (A,B), (A,C), (B,C)
        let m = community_cosentiments(&net2, &partition, &[0.1, -0.2, -0.05]);
        let intra = m.cell("I", "I").unwrap();
        assert_eq!((intra.edge_count, intra.positive_fraction, intra.negative_fraction), (1, 1.0, 0.0));
        let inter = m.cell("I", "II").unwrap();
        assert_eq!((inter.edge_count, inter.positive_fraction, inter.negative_fraction), (2, 0.0, 1.0));
        assert!((inter.log_radius.unwrap() - 2f64.log10()).abs() < 1e-12);
        assert_eq!(m.cell("II", "II").unwrap().log_radius, None);
        assert_eq!(m.total_edges(), 3);
    }

    #[test]
    fn single_community_all_positive() {
        let t = vec![Timeline::new("A", vec![1]), Timeline::new("B", vec![1])];
        let net = build_network(&t);
        let p = detect_communities(&net);
        let m = community_cosentiments(&net, &p, &[0.3]);
        let c = m.cell("I", "I").unwrap();
        assert_eq!((c.positive_fraction, c.negative_fraction), (1.0, 0.0));
    }

    #[test]
    fn report_baseline_centres_cosentiments() {
        let lex = SentimentLexicon::new(["good"], ["bad"]).unwrap();
        let chapters = [
            toks(&["good", "day"]),
            toks(&["bad", "bad", "day"]),
            toks(&["good", "good", "bad"]),
        ];
        let scores: Vec<_> = chapters
            .iter()
            .enumerate()
            .map(|(i, t)| score_chapter(i + 1, t, &lex))
            .collect();
        let t = vec![
            Timeline::new("A", vec![1, 2, 3]),
            Timeline::new("B", vec![1, 2]),
            Timeline::new("C", vec![3]),
        ];
        let net = build_network(&t);
        let r = sentiment_report(&scores, &t, &net).unwrap();
        let sum: f64 = r.edge_cosentiment.iter().sum();
        assert!(sum.abs() < 1e-12);
        assert!(r.pair("B", "A").is_some());
        assert_eq!(r.characters.len(), 3);
    }
}
