//! Synthetic novels with known ground truth, and brute-force reference
//! implementations used to cross-check the engine.
#![allow(dead_code)]

use std::collections::BTreeMap;

use narranet::corpus::{Corpus, SegmentationConfig, Timeline};
use narranet::sentiment::SentimentLexicon;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NAMES: [&str; 8] = [
    "Alderic", "Brunhild", "Corwin", "Dagny", "Elspeth", "Fenwick", "Galahad", "Hesper",
];
pub const FILLER: [&str; 12] = [
    "the", "door", "walked", "river", "stone", "night", "lovely", "hated", "window", "bread", "road", "city",
];
pub const POSITIVE: [&str; 3] = ["good", "happy", "love*"];
pub const NEGATIVE: [&str; 3] = ["bad", "sad", "hate*"];
pub const SENTIMENT_WORDS: [&str; 6] = ["good", "happy", "loved", "bad", "sad", "hateful"];

pub struct SyntheticNovel {
    pub text: String,
    pub names: Vec<String>,
    /// presence[c][i]: character i named in chapter c + 1.
    pub presence: Vec<Vec<bool>>,
    /// Chapter ordinals per book.
    pub books: Vec<Vec<usize>>,
}

impl SyntheticNovel {
    pub fn chapter_count(&self) -> usize {
        self.presence.len()
    }

    pub fn timelines(&self) -> Vec<Timeline> {
        (0..self.names.len())
            .map(|i| {
                let chapters = (0..self.chapter_count()).filter(|&c| self.presence[c][i]).map(|c| c + 1).collect();
                Timeline::new(self.names[i].clone(), chapters)
            })
            .collect()
    }

    pub fn roster_toml(&self) -> String {
        self.names
            .iter()
            .map(|n| format!("[[character]]\nname = \"{n}\"\naliases = [\"{n}\"]\n"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn markers() -> SegmentationConfig {
    SegmentationConfig {
        volume_pattern: None,
        book_pattern: Some("BOOK [0-9]+".into()),
        chapter_pattern: "CHAPTER [0-9]+".into(),
        start_marker: None,
        start_occurrence: 1,
        end_marker: None,
    }
}

pub const MARKERS_TOML: &str = "book_pattern = 'BOOK [0-9]+'\nchapter_pattern = 'CHAPTER [0-9]+'\n";

pub fn lexicon() -> SentimentLexicon {
    SentimentLexicon::new(POSITIVE, NEGATIVE).unwrap()
}

/// Up to `max_chars` characters over up to `max_chapters` chapters split into
/// books. Every chapter names a random subset of characters and carries
/// random filler and sentiment words.
pub fn synthetic_novel(seed: u64, max_chars: usize, max_chapters: usize, words_per_chapter: usize) -> SyntheticNovel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_chars = rng.gen_range(1..=max_chars.min(NAMES.len()));
    let n_chapters = rng.gen_range(1..=max_chapters);
    let names: Vec<String> = NAMES[..n_chars].iter().map(|s| s.to_string()).collect();
    let density = rng.gen_range(0.1..0.8);
    let presence: Vec<Vec<bool>> = (0..n_chapters)
        .map(|_| (0..n_chars).map(|_| rng.gen_bool(density)).collect())
        .collect();
    let mut books: Vec<Vec<usize>> = Vec::new();
    for c in 1..=n_chapters {
        if books.is_empty() || rng.gen_bool(0.35) {
            books.push(Vec::new());
        }
        books.last_mut().unwrap().push(c);
    }
    let mut text = String::from("Preface of a synthetic tale.\n\n");
    for (b, chapters) in books.iter().enumerate() {
        text.push_str(&format!("BOOK {}\n\n", b + 1));
        for &c in chapters {
            text.push_str(&format!("CHAPTER {c}\n\n"));
            let mut words: Vec<&str> = (0..words_per_chapter)
                .map(|_| {
                    if rng.gen_bool(0.25) {
                        *SENTIMENT_WORDS.choose(&mut rng).unwrap()
                    } else {
                        *FILLER.choose(&mut rng).unwrap()
                    }
                })
                .collect();
            for (i, present) in presence[c - 1].iter().enumerate() {
                if *present {
                    let at = rng.gen_range(0..=words.len());
                    words.insert(at, NAMES[i]);
                }
            }
            for line in words.chunks(9) {
                text.push_str(&line.join(" "));
                text.push('\n');
            }
            text.push('\n');
        }
    }
    SyntheticNovel {
        text,
        names,
        presence,
        books,
    }
}

/// Brute-force co-appearance edges keyed by name pair, weight, and shared chapters.
pub fn oracle_edges(timelines: &[Timeline], chapters: usize) -> BTreeMap<(String, String), Vec<usize>> {
    let mut out = BTreeMap::new();
    for a in timelines {
        for b in timelines {
            if a.character >= b.character {
                continue;
            }
            let shared: Vec<usize> = (1..=chapters).filter(|&c| a.chapters.contains(&c) && b.chapters.contains(&c)).collect();
            if !shared.is_empty() {
                out.insert((a.character.clone(), b.character.clone()), shared);
            }
        }
    }
    out
}

pub fn oracle_nodes(timelines: &[Timeline]) -> Vec<String> {
    timelines.iter().filter(|t| !t.chapters.is_empty()).map(|t| t.character.clone()).collect()
}

/// Cumulative nodes, edges, per-character appearance and degree at each t.
pub struct OracleGrowth {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
    pub appearance: Vec<Vec<usize>>,
    pub degree: Vec<Vec<usize>>,
}

pub fn oracle_growth(timelines: &[Timeline], chapters: usize) -> OracleGrowth {
    let upto = |t: &Timeline, c: usize| t.chapters.iter().filter(|&&x| x <= c).count();
    let linked = |a: &Timeline, b: &Timeline, c: usize| (1..=c).any(|x| a.chapters.contains(&x) && b.chapters.contains(&x));
    let mut g = OracleGrowth {
        nodes: Vec::new(),
        edges: Vec::new(),
        appearance: vec![Vec::new(); timelines.len()],
        degree: vec![Vec::new(); timelines.len()],
    };
    for c in 1..=chapters {
        g.nodes.push(timelines.iter().filter(|t| upto(t, c) > 0).count());
        let mut m = 0;
        for i in 0..timelines.len() {
            g.appearance[i].push(upto(&timelines[i], c));
            let d = (0..timelines.len()).filter(|&j| j != i && linked(&timelines[i], &timelines[j], c)).count();
            g.degree[i].push(d);
            m += (i + 1..timelines.len()).filter(|&j| linked(&timelines[i], &timelines[j], c)).count();
        }
        g.edges.push(m);
    }
    g
}

fn lexicon_hit(token: &str, entries: &[&str]) -> bool {
    entries.iter().any(|e| match e.strip_suffix('*') {
        Some(stem) => token.starts_with(stem),
        None => token == *e,
    })
}

/// σ of every chapter by direct counting.
pub fn oracle_chapter_spi(corpus: &Corpus) -> Vec<f64> {
    corpus
        .chapters
        .iter()
        .map(|ch| {
            let n = ch.tokens.len();
            if n == 0 {
                return 0.0;
            }
            let pos = ch.tokens.iter().filter(|t| lexicon_hit(t, &POSITIVE)).count();
            let neg = ch.tokens.iter().filter(|t| lexicon_hit(t, &NEGATIVE)).count();
            let p = 100.0 * pos as f64 / n as f64;
            let q = 100.0 * neg as f64 / n as f64;
            ((p + 1.0) / (q + 1.0)).log10()
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sequence bundling by explicit set arithmetic: returns threshold and the
/// chapter lists of each Sequence.
pub fn oracle_sequences(timelines: &[Timeline], books: &[Vec<usize>]) -> (Option<f64>, Vec<Vec<usize>>) {
    let present: Vec<(Vec<usize>, Vec<usize>)> = books
        .iter()
        .map(|chs| {
            let set: Vec<usize> = (0..timelines.len())
                .filter(|&i| chs.iter().any(|c| timelines[i].chapters.contains(c)))
                .collect();
            (chs.clone(), set)
        })
        .filter(|(_, set)| !set.is_empty())
        .collect();
    let sims: Vec<f64> = present
        .windows(2)
        .map(|w| {
            let inter = w[0].1.iter().filter(|i| w[1].1.contains(i)).count() as f64;
            inter / ((w[0].1.len() as f64).sqrt() * (w[1].1.len() as f64).sqrt())
        })
        .collect();
    let thr = (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64);
    let mut seqs: Vec<Vec<usize>> = Vec::new();
    for (i, (chs, _)) in present.iter().enumerate() {
        if i > 0 && sims[i - 1] >= thr.unwrap() {
            seqs.last_mut().unwrap().extend(chs);
        } else {
            seqs.push(chs.clone());
        }
    }
    (thr, seqs)
}

/// Runs the engine end to end on one synthetic novel and compares network,
/// growth, pair SPI aggregation and sequence bundling against the oracles.
pub fn check_oracle_equivalence(seed: u64) -> Result<(), String> {
    use narranet::corpus::{detect_appearances, parse_narrative, CharacterRoster};
    use narranet::network::{build_network, growth_series};
    use narranet::sentiment::{score_corpus, sentiment_report};
    use narranet::sequence::{book_vectors, bundle_sequences, SimilarityMeasure, Threshold};

    let novel = synthetic_novel(seed, 8, 12, 30);
    let corpus = parse_narrative(&novel.text, &markers()).map_err(|e| e.to_string())?;
    let c = novel.chapter_count();
    if corpus.len() != c {
        return Err(format!("seed {seed}: {} chapters parsed, {c} written", corpus.len()));
    }
    let roster = CharacterRoster::from_toml(&novel.roster_toml()).map_err(|e| e.to_string())?;
    let timelines = detect_appearances(&corpus, &roster);
    let truth = novel.timelines();
    if timelines != truth {
        return Err(format!("seed {seed}: timelines {timelines:?} != {truth:?}"));
    }

    let net = build_network(&timelines);
    if net.nodes != oracle_nodes(&truth) {
        return Err(format!("seed {seed}: nodes differ"));
    }
    let engine_edges: BTreeMap<(String, String), Vec<usize>> = net
        .edges
        .iter()
        .map(|e| {
            let (a, b) = net.edge_names(e);
            let key = if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
            assert_eq!(e.weight, e.chapters.len());
            (key, e.chapters.clone())
        })
        .collect();
    if engine_edges != oracle_edges(&truth, c) {
        return Err(format!("seed {seed}: edges differ"));
    }

    let g = growth_series(&timelines, c);
    let og = oracle_growth(&truth, c);
    if g.nodes != og.nodes || g.edges != og.edges || g.appearance != og.appearance || g.degree != og.degree {
        return Err(format!("seed {seed}: growth differs"));
    }

    let scores = score_corpus(&corpus.chapters, &lexicon());
    let spi = oracle_chapter_spi(&corpus);
    let engine_spi: Vec<f64> = scores.iter().map(|s| s.spi).collect();
    if engine_spi != spi {
        return Err(format!("seed {seed}: chapter spi {engine_spi:?} != {spi:?}"));
    }
    let report = sentiment_report(&scores, &timelines, &net).map_err(|e| e.to_string())?;
    let pair_means: BTreeMap<(String, String), f64> = oracle_edges(&truth, c)
        .into_iter()
        .map(|(k, shared)| {
            let vals: Vec<f64> = shared.iter().map(|&ch| spi[ch - 1]).collect();
            (k, mean(&vals))
        })
        .collect();
    for ((a, b), m) in &pair_means {
        let p = report.pair(a, b).ok_or(format!("seed {seed}: pair {a}|{b} missing"))?;
        if p.mean != *m {
            return Err(format!("seed {seed}: pair {a}|{b} mean {} != {m}", p.mean));
        }
    }
    if !pair_means.is_empty() {
        let means: Vec<f64> = net
            .edges
            .iter()
            .map(|e| {
                let (a, b) = net.edge_names(e);
                let key = if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
                pair_means[&key]
            })
            .collect();
        let base = mean(&means);
        if report.pair_baseline != base {
            return Err(format!("seed {seed}: baseline {} != {base}", report.pair_baseline));
        }
        for (i, m) in means.iter().enumerate() {
            if report.edge_cosentiment[i] != m - base {
                return Err(format!("seed {seed}: cosentiment of edge {i} differs"));
            }
        }
    }

    let (vectors, _) = book_vectors(&timelines, &corpus, SimilarityMeasure::Cosine);
    let bundling = bundle_sequences(&vectors, Threshold::Auto, SimilarityMeasure::Cosine, None);
    let (thr, seqs) = oracle_sequences(&truth, &novel.books);
    if bundling.threshold != thr {
        return Err(format!("seed {seed}: threshold {:?} != {thr:?}", bundling.threshold));
    }
    let engine_seqs: Vec<Vec<usize>> = bundling.sequences.iter().map(|s| s.chapters.clone()).collect();
    if engine_seqs != seqs {
        return Err(format!("seed {seed}: sequences {engine_seqs:?} != {seqs:?}"));
    }
    Ok(())
}
