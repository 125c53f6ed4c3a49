//! Bundling consecutive books into Sequences by character composition, and
//! per-Sequence network snapshots.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Timeline};
use crate::network::{build_network, CharacterNetwork};
use crate::sentiment::{cosentiment, EdgeSign, SpiTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookCompositionVector {
    pub volume: usize,
    pub book: usize,
    pub chapters: Vec<usize>,
    /// Per roster character: 1/0 presence, or the number of the book's chapters
    /// the character appears in when built with counts.
    pub composition: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMeasure {
    #[default]
    Cosine,
    /// Cosine over per-book appearance counts instead of presence.
    CountCosine,
    Jaccard,
}

/// How snapshot edges are signed: by the whole-novel cosentiment, or by a
/// cosentiment recomputed from the Sequence's own chapters and pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotSigns {
    #[default]
    Global,
    Local,
}

/// One vector per book that features at least one character. Books without
/// characters are dropped and reported in the second element.
pub fn book_vectors(
    timelines: &[Timeline],
    corpus: &Corpus,
    measure: SimilarityMeasure,
) -> (Vec<BookCompositionVector>, Vec<(usize, usize)>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for ((volume, book), chapters) in corpus.book_chapters() {
        let composition: Vec<f64> = timelines
            .iter()
            .map(|t| {
                let hits = chapters.iter().filter(|&&c| t.contains(c)).count();
                match measure {
                    SimilarityMeasure::CountCosine => hits as f64,
                    _ => f64::from(u8::from(hits > 0)),
                }
            })
            .collect();
        if composition.iter().all(|&x| x == 0.0) {
            log::info!("book {volume}.{book} has no roster characters; excluded");
            dropped.push((volume, book));
        } else {
            kept.push(BookCompositionVector {
                volume,
                book,
                chapters,
                composition,
            });
        }
    }
    (kept, dropped)
}

pub fn similarity(a: &[f64], b: &[f64], measure: SimilarityMeasure) -> f64 {
    match measure {
        SimilarityMeasure::Cosine | SimilarityMeasure::CountCosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot / (na * nb)
            }
        }
        SimilarityMeasure::Jaccard => {
            let inter = a.iter().zip(b).filter(|(x, y)| **x > 0.0 && **y > 0.0).count();
            let union = a.iter().zip(b).filter(|(x, y)| **x > 0.0 || **y > 0.0).count();
            if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum Threshold {
    /// Mean of the consecutive similarities.
    #[default]
    Auto,
    #[serde(untagged)]
    Value(f64),
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub index: usize,
    /// (volume, book) of each member, in narrative order.
    pub books: Vec<(usize, usize)>,
    pub chapters: Vec<usize>,
    pub mean_spi: Option<f64>,
    pub sign: Option<EdgeSign>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceBundling {
    /// Similarity between retained book i and i+1.
    pub similarities: Vec<f64>,
    /// None when fewer than two books were retained.
    pub threshold: Option<f64>,
    pub sequences: Vec<Sequence>,
}

impl SequenceBundling {
    pub fn similarity_csv(&self, vectors: &[BookCompositionVector]) -> String {
        let mut out = String::from("from_volume,from_book,to_volume,to_book,similarity,merged\n");
        let thr = self.threshold.unwrap_or(f64::INFINITY);
        for (i, s) in self.similarities.iter().enumerate() {
            let (a, b) = (&vectors[i], &vectors[i + 1]);
            out.push_str(&format!(
                "{},{},{},{},{:.6},{}\n",
                a.volume,
                a.book,
                b.volume,
                b.book,
                s,
                *s >= thr
            ));
        }
        out
    }
}

/// Consecutive retained books are chained into one Sequence whenever their
/// similarity reaches the threshold.
pub fn bundle_sequences(
    vectors: &[BookCompositionVector],
    threshold: Threshold,
    measure: SimilarityMeasure,
    spi: Option<&SpiTable>,
) -> SequenceBundling {
    let similarities: Vec<f64> = vectors
        .windows(2)
        .map(|w| similarity(&w[0].composition, &w[1].composition, measure))
        .collect();
    let thr = match threshold {
        Threshold::Value(v) => Some(v),
        Threshold::Auto if similarities.is_empty() => None,
        Threshold::Auto => Some(similarities.iter().sum::<f64>() / similarities.len() as f64),
    };
    let mut groups: Vec<Vec<&BookCompositionVector>> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        let merge = i > 0 && thr.is_some_and(|t| similarities[i - 1] >= t);
        match groups.last_mut() {
            Some(g) if merge => g.push(v),
            _ => groups.push(vec![v]),
        }
    }
    let sequences = groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let chapters: Vec<usize> = g.iter().flat_map(|v| v.chapters.iter().copied()).collect();
            let mean_spi = spi.and_then(|table| {
                let vals: Vec<f64> = chapters.iter().filter_map(|&c| table.get(c)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            });
            Sequence {
                index: i + 1,
                books: g.iter().map(|v| (v.volume, v.book)).collect(),
                chapters,
                sign: mean_spi.map(EdgeSign::of),
                mean_spi,
            }
        })
        .collect();
    SequenceBundling {
        similarities,
        threshold: thr,
        sequences,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSnapshot {
    pub index: usize,
    pub network: CharacterNetwork,
    /// Sign of each snapshot edge, indexed like `network.edges`.
    pub signs: Vec<EdgeSign>,
    pub positive_fraction: f64,
    pub negative_fraction: f64,
}

/// Sign counts over a list of edge signs: (positive, negative) fractions.
pub fn sign_fractions(signs: &[EdgeSign]) -> (f64, f64) {
    if signs.is_empty() {
        return (0.0, 0.0);
    }
    let n = signs.len() as f64;
    let pos = signs.iter().filter(|s| **s == EdgeSign::Positive).count() as f64;
    let neg = signs.iter().filter(|s| **s == EdgeSign::Negative).count() as f64;
    (pos / n, neg / n)
}

/// Builds each Sequence's co-appearance network from its own chapters and
/// colours edges with the supplied pair signs (keyed by unordered name pair).
pub fn sequence_snapshots(
    sequences: &[Sequence],
    timelines: &[Timeline],
    pair_signs: &HashMap<(String, String), EdgeSign>,
) -> Vec<SequenceSnapshot> {
    sequences
        .iter()
        .map(|s| {
            let mut chapters = s.chapters.clone();
            chapters.sort_unstable();
            let local: Vec<Timeline> = timelines
                .iter()
                .map(|t| {
                    Timeline::new(
                        t.character.clone(),
                        t.chapters
                            .iter()
                            .copied()
                            .filter(|c| chapters.binary_search(c).is_ok())
                            .collect(),
                    )
                })
                .collect();
            let network = build_network(&local);
            let signs: Vec<EdgeSign> = network
                .edges
                .iter()
                .map(|e| {
                    let (a, b) = network.edge_names(e);
                    let key = if a <= b {
                        (a.to_string(), b.to_string())
                    } else {
                        (b.to_string(), a.to_string())
                    };
                    pair_signs.get(&key).copied().unwrap_or(EdgeSign::Neutral)
                })
                .collect();
            let (positive_fraction, negative_fraction) = sign_fractions(&signs);
            SequenceSnapshot {
                index: s.index,
                network,
                signs,
                positive_fraction,
                negative_fraction,
            }
        })
        .collect()
}

/// Re-signs every snapshot edge by its mean SPI over the Sequence's shared
/// chapters minus the mean of those pair means within the same snapshot.
pub fn apply_local_signs(snapshots: &mut [SequenceSnapshot], table: &SpiTable) {
    for snap in snapshots {
        let means: Vec<f64> = snap
            .network
            .edges
            .iter()
            .map(|e| {
                let vals: Vec<f64> = e.chapters.iter().filter_map(|&c| table.get(c)).collect();
                if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            })
            .collect();
        let baseline = if means.is_empty() {
            0.0
        } else {
            means.iter().sum::<f64>() / means.len() as f64
        };
        snap.signs = means.iter().map(|&m| EdgeSign::of(cosentiment(m, baseline))).collect();
        let (p, n) = sign_fractions(&snap.signs);
        snap.positive_fraction = p;
        snap.negative_fraction = n;
    }
}

/// Unordered-pair lookup of edge signs for [`sequence_snapshots`].
pub fn pair_sign_map(network: &CharacterNetwork, signs: &[EdgeSign]) -> HashMap<(String, String), EdgeSign> {
    network
        .edges
        .iter()
        .zip(signs)
        .map(|(e, &s)| {
            let (a, b) = network.edge_names(e);
            let key = if a <= b {
                (a.to_string(), b.to_string())
            } else {
                (b.to_string(), a.to_string())
            };
            (key, s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Chapter, UnitRef};
    use crate::sentiment::ChapterSentiment;

    fn vecs(rows: &[&[f64]]) -> Vec<BookCompositionVector> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| BookCompositionVector {
                volume: 1,
                book: i + 1,
                chapters: vec![i + 1],
                composition: r.to_vec(),
            })
            .collect()
    }

    fn corpus(books: &[usize]) -> Corpus {
        // books[i] = book index of chapter i+1
        let mut chapter_in_book = 0;
        let mut last = 0;
        Corpus {
            chapters: books
                .iter()
                .enumerate()
                .map(|(i, &b)| {
                    if b != last {
                        chapter_in_book = 0;
                        last = b;
                    }
                    chapter_in_book += 1;
                    Chapter::new(
                        UnitRef {
                            volume: 1,
                            book: b,
                            chapter: chapter_in_book,
                            ordinal: i + 1,
                        },
                        "",
                        "",
                    )
                })
                .collect(),
            divisions: vec![],
        }
    }

    #[test]
    fn fixture_vectors() {
        let c = corpus(&[1, 1, 2, 3]);
        let t = vec![
            Timeline::new("A", vec![1]),
            Timeline::new("B", vec![2, 3]),
            Timeline::new("C", vec![3]),
        ];
        let (v, dropped) = book_vectors(&t, &c, SimilarityMeasure::Cosine);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].composition, vec![1.0, 1.0, 0.0]);
        assert_eq!(v[1].composition, vec![0.0, 1.0, 1.0]);
        assert_eq!(dropped, vec![(1, 3)]);
        let (counts, _) = book_vectors(&t, &c, SimilarityMeasure::CountCosine);
        assert_eq!(counts[0].composition, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn hand_cosines() {
        let v = vecs(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let b = bundle_sequences(&v, Threshold::Auto, SimilarityMeasure::Cosine, None);
        assert_eq!(b.similarities, vec![0.0, 1.0]);
        assert_eq!(b.threshold, Some(0.5));
        let books: Vec<_> = b.sequences.iter().map(|s| s.books.len()).collect();
        assert_eq!(books, vec![1, 2]);
        assert_eq!(b.sequences[1].chapters, vec![2, 3]);
    }

    #[test]
    fn identical_vectors_one_sequence() {
        let v = vecs(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let b = bundle_sequences(&v, Threshold::Auto, SimilarityMeasure::Cosine, None);
        assert_eq!(b.sequences.len(), 1);
        let single = bundle_sequences(&v[..1], Threshold::Auto, SimilarityMeasure::Cosine, None);
        assert_eq!(single.threshold, None);
        assert_eq!(single.sequences.len(), 1);
    }

    #[test]
    fn jaccard_measure() {
        assert!((similarity(&[1.0, 1.0, 0.0], &[0.0, 1.0, 1.0], SimilarityMeasure::Jaccard) - 1.0 / 3.0).abs() < 1e-12);
        assert!((similarity(&[1.0, 1.0, 0.0], &[0.0, 1.0, 1.0], SimilarityMeasure::Cosine) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn snapshot_fractions() {
        assert_eq!(sign_fractions(&[]), (0.0, 0.0));
        let (p, n) = sign_fractions(&[EdgeSign::Positive, EdgeSign::Positive, EdgeSign::Negative]);
        assert!((p - 2.0 / 3.0).abs() < 1e-12 && (n - 1.0 / 3.0).abs() < 1e-12);

        let t = vec![
            Timeline::new("A", vec![1, 3]),
            Timeline::new("B", vec![1]),
            Timeline::new("C", vec![3]),
        ];
        let global = build_network(&t);
        let signs = pair_sign_map(&global, &[EdgeSign::Positive, EdgeSign::Negative]);
        let seqs = vec![
            Sequence { index: 1, books: vec![(1, 1)], chapters: vec![1], mean_spi: None, sign: None },
            Sequence { index: 2, books: vec![(1, 2)], chapters: vec![2], mean_spi: None, sign: None },
            Sequence { index: 3, books: vec![(1, 3)], chapters: vec![3], mean_spi: None, sign: None },
        ];
        let snaps = sequence_snapshots(&seqs, &t, &signs);
        assert_eq!(snaps[0].network.edge_count(), 1);
        assert_eq!((snaps[0].positive_fraction, snaps[0].negative_fraction), (1.0, 0.0));
        assert_eq!(snaps[1].network.edge_count(), 0);
        assert_eq!((snaps[1].positive_fraction, snaps[1].negative_fraction), (0.0, 0.0));
        assert_eq!((snaps[2].positive_fraction, snaps[2].negative_fraction), (0.0, 1.0));
    }

    #[test]
    fn local_signs_recentre_within_sequence() {
        let t = vec![
            Timeline::new("A", vec![1, 2]),
            Timeline::new("B", vec![1]),
            Timeline::new("C", vec![2]),
        ];
        let global = build_network(&t);
        let signs = pair_sign_map(&global, &[EdgeSign::Negative, EdgeSign::Negative]);
        let seqs = vec![Sequence { index: 1, books: vec![(1, 1)], chapters: vec![1, 2], mean_spi: None, sign: None }];
        let mut snaps = sequence_snapshots(&seqs, &t, &signs);
        assert_eq!(snaps[0].negative_fraction, 1.0);
        let scores = [
            ChapterSentiment { ordinal: 1, positive: 0.0, negative: 0.0, spi: 0.3 },
            ChapterSentiment { ordinal: 2, positive: 0.0, negative: 0.0, spi: -0.1 },
        ];
        apply_local_signs(&mut snaps, &SpiTable::new(&scores));
        let net = &snaps[0].network;
        for (e, s) in net.edges.iter().zip(&snaps[0].signs) {
            let expected = if net.edge_names(e).1 == "B" || net.edge_names(e).0 == "B" {
                EdgeSign::Positive
            } else {
                EdgeSign::Negative
            };
            assert_eq!(*s, expected);
        }
        assert_eq!((snaps[0].positive_fraction, snaps[0].negative_fraction), (0.5, 0.5));
    }
}
