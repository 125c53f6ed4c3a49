//! Word–chapter TF-IDF, non-negative matrix factorisation by multiplicative
//! updates, and character topical states built from the topic–chapter factor.

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::{Array2, ArrayViewMut1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Timeline};
use crate::error::{Error, Result};
use crate::network::CommunityPartition;

pub const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

pub fn bundled_stopwords() -> HashSet<String> {
    BUNDLED_STOPWORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    /// Drop the bundled English stopwords.
    pub stopwords: bool,
    pub extra_stopwords: Vec<String>,
    /// Minimum number of chapters a word must occur in.
    pub min_df: usize,
    /// Words occurring in more than this fraction of chapters are dropped.
    pub max_df_fraction: f64,
    /// Tokens shorter than this many characters are dropped.
    pub min_token_chars: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            stopwords: true,
            extra_stopwords: Vec::new(),
            min_df: 2,
            max_df_fraction: 0.95,
            min_token_chars: 2,
        }
    }
}

impl VocabConfig {
    /// No filtering at all.
    pub fn unfiltered() -> Self {
        VocabConfig {
            stopwords: false,
            extra_stopwords: Vec::new(),
            min_df: 1,
            max_df_fraction: 1.0,
            min_token_chars: 1,
        }
    }
}

/// Retained words in lexicographic order with their document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub df: Vec<usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.binary_search_by(|w| w.as_str().cmp(word)).ok()
    }
}

/// Compressed sparse column matrix of non-negative entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-column `(row, value)` lists; zero values are skipped.
    pub fn from_columns(rows: usize, columns: Vec<Vec<(usize, f64)>>) -> Self {
        let cols = columns.len();
        let mut col_ptr = Vec::with_capacity(cols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for mut col in columns {
            col.sort_by_key(|e| e.0);
            for (r, v) in col {
                assert!(r < rows, "row {r} out of bounds");
                if v != 0.0 {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        SparseMatrix {
            rows,
            cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn from_dense(m: &Array2<f64>) -> Self {
        let columns = m
            .axis_iter(Axis(1))
            .map(|col| col.iter().copied().enumerate().filter(|e| e.1 != 0.0).collect())
            .collect();
        Self::from_columns(m.nrows(), columns)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for c in 0..self.cols {
            for (r, v) in self.column(c) {
                out[[r, c]] = v;
            }
        }
        out
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.column(c).find(|e| e.0 == r).map_or(0.0, |e| e.1)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Row-major triplets of the transpose, for row-wise products.
    fn rows_view(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.rows];
        for c in 0..self.cols {
            for (r, v) in self.column(c) {
                rows[r].push((c, v));
            }
        }
        rows
    }
}

/// TF-IDF with smoothed idf, ln((1 + |D|) / (1 + df)) + 1, and unit-length
/// document columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfMatrix {
    pub matrix: SparseMatrix,
    pub idf: Vec<f64>,
}

pub fn build_tfidf(corpus: &Corpus, config: &VocabConfig) -> Result<(Vocabulary, TfIdfMatrix)> {
    let docs: Vec<&[String]> = corpus.chapters.iter().map(|c| c.tokens.as_slice()).collect();
    build_tfidf_from_tokens(&docs, config)
}

pub fn build_tfidf_from_tokens<S: AsRef<str>>(
    docs: &[&[S]],
    config: &VocabConfig,
) -> Result<(Vocabulary, TfIdfMatrix)> {
    let mut stop: HashSet<String> = if config.stopwords {
        bundled_stopwords()
    } else {
        HashSet::new()
    };
    stop.extend(config.extra_stopwords.iter().map(|w| w.to_lowercase()));
    let keep = |w: &str| !stop.contains(w) && w.chars().count() >= config.min_token_chars;

    let counts: Vec<HashMap<&str, usize>> = docs
        .iter()
        .map(|doc| {
            let mut m = HashMap::new();
            for t in doc.iter().map(AsRef::as_ref).filter(|t| keep(t)) {
                *m.entry(t).or_insert(0) += 1;
            }
            m
        })
        .collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &counts {
        for w in doc.keys() {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    let n_docs = docs.len();
    let max_df = config.max_df_fraction * n_docs as f64;
    let retained: Vec<(&str, usize)> = df
        .into_iter()
        .filter(|&(_, d)| d >= config.min_df.max(1) && (d as f64) <= max_df)
        .collect();
    if retained.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let index: HashMap<&str, usize> = retained.iter().enumerate().map(|(i, (w, _))| (*w, i)).collect();
    let idf: Vec<f64> = retained
        .iter()
        .map(|&(_, d)| ((1.0 + n_docs as f64) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    let columns = counts
        .iter()
        .map(|doc| {
            let mut col: Vec<(usize, f64)> = doc
                .iter()
                .filter_map(|(w, &tf)| index.get(w).map(|&i| (i, tf as f64 * idf[i])))
                .collect();
            col.sort_by_key(|e| e.0);
            let norm = col.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.iter_mut().for_each(|e| e.1 /= norm);
            }
            col
        })
        .collect();
    let vocab = Vocabulary {
        words: retained.iter().map(|(w, _)| w.to_string()).collect(),
        df: retained.iter().map(|&(_, d)| d).collect(),
    };
    let matrix = SparseMatrix::from_columns(vocab.len(), columns);
    Ok((vocab, TfIdfMatrix { matrix, idf }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnmfOptions {
    pub topic_count: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative decrease of the squared error falls below this.
    pub rel_tol: f64,
}

impl Default for NnmfOptions {
    fn default() -> Self {
        NnmfOptions {
            topic_count: 50,
            seed: 0,
            max_iter: 200,
            rel_tol: 1e-4,
        }
    }
}

/// `M ≈ Q·H` with Q word × topic and H topic × chapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub q: Array2<f64>,
    pub h: Array2<f64>,
    pub topic_count: usize,
    pub seed: u64,
    /// Squared Frobenius error after initialisation and after each iteration.
    pub error_trace: Vec<f64>,
}

impl TopicModel {
    pub fn final_error(&self) -> f64 {
        self.error_trace.last().copied().unwrap_or(0.0)
    }

    pub fn iterations(&self) -> usize {
        self.error_trace.len().saturating_sub(1)
    }

    pub fn reconstruction(&self) -> Array2<f64> {
        self.q.dot(&self.h)
    }
}

/// Squared Frobenius distance between sparse M and dense QH, expanded as
/// ‖M‖² − 2⟨M, QH⟩ + ⟨QᵀQ, HHᵀ⟩.
fn squared_error(m: &SparseMatrix, norm_sq: f64, q: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let cross: f64 = (0..m.cols)
        .into_par_iter()
        .map(|c| {
            let hc = h.column(c);
            m.column(c)
                .map(|(r, v)| v * q.row(r).dot(&hc))
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let gram_q = q.t().dot(q);
    let gram_h = h.dot(&h.t());
    let quad: f64 = (&gram_q * &gram_h).sum();
    (norm_sq - 2.0 * cross + quad).max(0.0)
}

fn mu_step(factor: &mut [f64], numer: &[f64], denom: &[f64]) {
    for ((f, &n), &d) in factor.iter_mut().zip(numer).zip(denom) {
        if d > 0.0 {
            *f *= n / d;
        }
    }
}

/// Below this many multiply-adds per half-step the updates run serially.
const PARALLEL_MIN_WORK: usize = 1 << 16;

/// Lee–Seung multiplicative updates on the squared Frobenius objective.
pub fn nnmf(m: &SparseMatrix, opts: &NnmfOptions) -> Result<TopicModel> {
    let (words, docs) = m.shape();
    let k = opts.topic_count;
    if k == 0 || k >= words.min(docs) {
        return Err(Error::DimensionError {
            topics: k,
            words,
            docs,
        });
    }
    let norm_sq = m.frobenius_sq();
    let mean = m.values.iter().sum::<f64>() / (words * docs) as f64;
    let scale = (mean / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut h = Array2::from_shape_simple_fn((k, docs), || scale * rng.gen::<f64>());
    let mut q = Array2::from_shape_simple_fn((words, k), || scale * rng.gen::<f64>());
    let rows = m.rows_view();
    let parallel = m.nnz() * k >= PARALLEL_MIN_WORK;

    let mut trace = vec![squared_error(m, norm_sq, &q, &h)];
    for _ in 0..opts.max_iter {
        // H ← H ∘ (QᵀM) ⊘ (QᵀQ H)
        let mut qtm = Array2::<f64>::zeros((docs, k));
        let fill_qtm = |(c, mut out): (usize, ArrayViewMut1<f64>)| {
            for (r, v) in m.column(c) {
                out.scaled_add(v, &q.row(r));
            }
        };
        if parallel {
            qtm.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(fill_qtm);
        } else {
            qtm.axis_iter_mut(Axis(0)).enumerate().for_each(fill_qtm);
        }
        let denom = q.t().dot(&q).dot(&h);
        let numer = qtm.t().as_standard_layout().into_owned();
        mu_step(
            h.as_slice_mut().expect("standard layout"),
            numer.as_slice().expect("standard layout"),
            denom.as_standard_layout().as_slice().expect("standard layout"),
        );

        // Q ← Q ∘ (MHᵀ) ⊘ (Q HHᵀ)
        let mut mht = Array2::<f64>::zeros((words, k));
        let fill_mht = |(r, mut out): (usize, ArrayViewMut1<f64>)| {
            for &(c, v) in &rows[r] {
                out.scaled_add(v, &h.column(c));
            }
        };
        if parallel {
            mht.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(fill_mht);
        } else {
            mht.axis_iter_mut(Axis(0)).enumerate().for_each(fill_mht);
        }
        let denom = q.dot(&h.dot(&h.t()));
        mu_step(
            q.as_slice_mut().expect("standard layout"),
            mht.as_slice().expect("standard layout"),
            denom.as_standard_layout().as_slice().expect("standard layout"),
        );

        let err = squared_error(m, norm_sq, &q, &h);
        let prev = *trace.last().unwrap_or(&err);
        trace.push(err);
        if prev <= 0.0 || (prev - err) / prev < opts.rel_tol {
            break;
        }
    }
    Ok(TopicModel {
        q,
        h,
        topic_count: k,
        seed: opts.seed,
        error_trace: trace,
    })
}

/// Independent factorisations for `seeds`, run concurrently; output order
/// follows `seeds`.
pub fn nnmf_restarts(m: &SparseMatrix, opts: &NnmfOptions, seeds: &[u64]) -> Result<Vec<TopicModel>> {
    seeds
        .par_iter()
        .map(|&seed| nnmf(m, &NnmfOptions { seed, ..*opts }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicKeywords {
    pub topic: usize,
    /// (word, q) in descending weight order; the first entry is the strongest.
    pub keywords: Vec<(String, f64)>,
}

impl TopicKeywords {
    pub fn strongest(&self) -> Option<&str> {
        self.keywords.first().map(|k| k.0.as_str())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.keywords.iter().any(|k| k.0 == word)
    }
}

pub fn topic_keywords(q: &Array2<f64>, vocab: &Vocabulary, top_n: usize) -> Vec<TopicKeywords> {
    (0..q.ncols())
        .map(|k| {
            let col = q.column(k);
            let mut idx: Vec<usize> = (0..q.nrows()).collect();
            idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            TopicKeywords {
                topic: k,
                keywords: idx
                    .into_iter()
                    .take(top_n.max(1))
                    .map(|i| (vocab.words[i].clone(), col[i]))
                    .collect(),
            }
        })
        .collect()
}

/// Index of the topic whose strongest keyword is `word`, else the topic that
/// gives `word` the highest weight.
pub fn topic_for_keyword(q: &Array2<f64>, vocab: &Vocabulary, word: &str) -> Option<usize> {
    let row = vocab.index_of(word)?;
    (0..q.ncols())
        .find(|&k| {
            let col = q.column(k);
            col.iter().enumerate().all(|(i, &v)| v < col[row] || (v == col[row] && i >= row))
        })
        .or_else(|| {
            (0..q.ncols()).max_by(|&a, &b| q[[row, a]].total_cmp(&q[[row, b]]).then(b.cmp(&a)))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicalState {
    pub window: Vec<usize>,
    /// Normalised topic strengths; uniform when the window carries no mass.
    pub state: Vec<f64>,
    /// Σ over topics and window chapters of H.
    pub mass: f64,
    pub zero_mass: bool,
}

/// Topic strengths of a chapter window: Σ_{c∈window} H[k,c] divided by the
/// total over all topics and window chapters.
pub fn topical_state(h: &Array2<f64>, window: &[usize]) -> Result<TopicalState> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let docs = h.ncols();
    let mut w = window.to_vec();
    w.sort_unstable();
    w.dedup();
    if let Some(&bad) = w.iter().find(|&&c| c == 0 || c > docs) {
        return Err(Error::OrdinalOutOfRange {
            ordinal: bad,
            max: docs,
        });
    }
    let k = h.nrows();
    let mut sums = vec![0.0; k];
    for &c in &w {
        for (t, s) in sums.iter_mut().enumerate() {
            *s += h[[t, c - 1]];
        }
    }
    let mass: f64 = sums.iter().sum();
    let zero_mass = mass <= 0.0;
    let state = if zero_mass {
        log::warn!("topical state over {} chapters has zero mass", w.len());
        vec![1.0 / k as f64; k]
    } else {
        sums.iter().map(|s| s / mass).collect()
    };
    Ok(TopicalState {
        window: w,
        state,
        mass,
        zero_mass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityTopics {
    pub label: String,
    /// Chapters featuring at least two members.
    pub chapters: Vec<usize>,
    pub state: Option<TopicalState>,
    pub zero_mass: bool,
}

pub fn community_topics(
    h: &Array2<f64>,
    partition: &CommunityPartition,
    timelines: &[Timeline],
) -> Vec<CommunityTopics> {
    let by_name: HashMap<&str, &Timeline> = timelines.iter().map(|t| (t.character.as_str(), t)).collect();
    partition
        .labels
        .iter()
        .zip(&partition.members)
        .map(|(label, members)| {
            let mut count: BTreeMap<usize, usize> = BTreeMap::new();
            for m in members {
                if let Some(t) = by_name.get(m.as_str()) {
                    for &c in &t.chapters {
                        *count.entry(c).or_insert(0) += 1;
                    }
                }
            }
            let chapters: Vec<usize> = count.into_iter().filter(|&(_, n)| n >= 2).map(|(c, _)| c).collect();
            let state = topical_state(h, &chapters).ok();
            let zero_mass = state.as_ref().is_none_or(|s| s.zero_mass);
            if chapters.is_empty() {
                log::warn!("community {label} has no chapter with two members");
            }
            CommunityTopics {
                label: label.clone(),
                chapters,
                state,
                zero_mass,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseSpec {
    pub phases: Vec<Phase>,
}

impl PhaseSpec {
    /// Checks ordering and overlap, and returns the uncovered gaps between
    /// consecutive phases.
    pub fn validate(&self, chapter_count: usize) -> Result<Vec<(usize, usize)>> {
        if self.phases.is_empty() {
            return Err(Error::InvalidPhases("no phases given".into()));
        }
        let mut gaps = Vec::new();
        for (i, p) in self.phases.iter().enumerate() {
            if p.start == 0 || p.start > p.end {
                return Err(Error::InvalidPhases(format!("phase `{}` has an empty range", p.name)));
            }
            if p.end > chapter_count {
                return Err(Error::InvalidPhases(format!(
                    "phase `{}` ends at {} but there are {chapter_count} chapters",
                    p.name, p.end
                )));
            }
            if i > 0 {
                let prev = &self.phases[i - 1];
                if p.start <= prev.end {
                    return Err(Error::InvalidPhases(format!(
                        "phases `{}` and `{}` overlap or are out of order",
                        prev.name, p.name
                    )));
                }
                if p.start > prev.end + 1 {
                    gaps.push((prev.end + 1, p.start - 1));
                }
            }
        }
        Ok(gaps)
    }
}

/// Pearson correlation; None when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// How "weak before" is judged when classifying transfers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weakness {
    /// Strictly below the median component of the before-state.
    #[default]
    BelowMedian,
    /// Not among the `top_n` strongest components of the before-state.
    NotTopN,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransferKind {
    Transferred { from: String, to: String },
    ExogenousBoth,
    SingleEntry { character: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferLabel {
    pub topic: usize,
    #[serde(flatten)]
    pub kind: TransferKind,
    pub before: [f64; 2],
    pub delta: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferEdge {
    pub topic: usize,
    /// Character name or `exogenous`.
    pub source: String,
    pub target: String,
    pub phase: String,
}

pub const EXOGENOUS: &str = "exogenous";

fn top_indices(v: &[f64], n: usize, positive_only: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).filter(|&i| !positive_only || v[i] > 0.0).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Labels the `top_n` largest positive gains of each character.
pub fn classify_transfers(
    names: [&str; 2],
    before: [&[f64]; 2],
    delta: [&[f64]; 2],
    top_n: usize,
    weakness: Weakness,
) -> Vec<TransferLabel> {
    let top_n = top_n.max(1);
    let before_top = [top_indices(before[0], top_n, false), top_indices(before[1], top_n, false)];
    let gains = [top_indices(delta[0], top_n, true), top_indices(delta[1], top_n, true)];
    let medians = [median(before[0]), median(before[1])];
    let weak = |c: usize, k: usize| match weakness {
        Weakness::BelowMedian => before[c][k] < medians[c],
        Weakness::NotTopN => !before_top[c].contains(&k),
    };
    let mut labels = Vec::new();
    let mut exogenous_done = HashSet::new();
    for me in 0..2 {
        let other = 1 - me;
        for &k in &gains[me] {
            let kind = if before_top[other].contains(&k) {
                TransferKind::Transferred {
                    from: names[other].to_string(),
                    to: names[me].to_string(),
                }
            } else if weak(0, k) && weak(1, k) {
                if gains[other].contains(&k) {
                    if !exogenous_done.insert(k) {
                        continue;
                    }
                    TransferKind::ExogenousBoth
                } else {
                    TransferKind::SingleEntry {
                        character: names[me].to_string(),
                    }
                }
            } else {
                continue;
            };
            labels.push(TransferLabel {
                topic: k,
                kind,
                before: [before[0][k], before[1][k]],
                delta: [delta[0][k], delta[1][k]],
            });
        }
    }
    labels
}

pub fn transfer_edges(labels: &[TransferLabel], names: [&str; 2], phase: &str) -> Vec<TransferEdge> {
    let edge = |topic, source: &str, target: &str| TransferEdge {
        topic,
        source: source.to_string(),
        target: target.to_string(),
        phase: phase.to_string(),
    };
    let mut out = Vec::new();
    for l in labels {
        match &l.kind {
            TransferKind::Transferred { from, to } => out.push(edge(l.topic, from, to)),
            TransferKind::ExogenousBoth => {
                out.push(edge(l.topic, EXOGENOUS, names[0]));
                out.push(edge(l.topic, EXOGENOUS, names[1]));
            }
            TransferKind::SingleEntry { character } => out.push(edge(l.topic, EXOGENOUS, character)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterPhaseState {
    pub character: String,
    pub window: Vec<usize>,
    /// True when the character does not appear in the window; the state is
    /// then carried over from the latest earlier phase, if any.
    pub absent: bool,
    pub state: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub phase: Phase,
    pub states: [CharacterPhaseState; 2],
    /// Correlation of the two end-of-phase states under the first model.
    pub correlation: Option<f64>,
    /// Correlation under each model of the ensemble.
    pub correlation_per_model: Vec<Option<f64>>,
    pub correlation_mean: Option<f64>,
    pub correlation_std: Option<f64>,
    pub transfers: Vec<TransferLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub characters: [String; 2],
    pub window: Option<usize>,
    pub top_n: usize,
    pub gaps: Vec<(usize, usize)>,
    pub phases: Vec<PhaseEntry>,
    pub diagram: Vec<TransferEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseOptions {
    /// Use only the last `window` chapters of each phase; None = whole phase.
    pub window: Option<usize>,
    pub top_n: usize,
    pub weakness: Weakness,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions {
            window: None,
            top_n: 5,
            weakness: Weakness::BelowMedian,
        }
    }
}

/// Per-phase states of each character (carried forward while absent).
fn phase_states(h: &Array2<f64>, phases: &[Phase], timeline: &Timeline, window: Option<usize>) -> Vec<(Vec<usize>, bool, Option<Vec<f64>>)> {
    let mut last: Option<Vec<f64>> = None;
    phases
        .iter()
        .map(|p| {
            let from = match window {
                Some(w) => p.end.saturating_sub(w.max(1) - 1).max(p.start),
                None => p.start,
            };
            let chapters: Vec<usize> = timeline
                .chapters
                .iter()
                .copied()
                .filter(|&c| c >= from && c <= p.end)
                .collect();
            let own = topical_state(h, &chapters).ok().filter(|s| !s.zero_mass);
            let absent = own.is_none();
            if let Some(s) = own {
                last = Some(s.state);
            }
            (chapters, absent, last.clone())
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (Some(m), Some(v.sqrt()))
}

/// Tracks two characters' topical states across phases, correlating their
/// states at the end of each phase and labelling topic transfers at each
/// phase transition. `models` holds the H factor of each restart; the first
/// is the reference for states and transfers.
pub fn phase_analysis(
    models: &[&Array2<f64>],
    phases: &PhaseSpec,
    pair: [&Timeline; 2],
    opts: &PhaseOptions,
) -> Result<PhaseReport> {
    let reference = *models.first().ok_or(Error::EmptyWindow)?;
    let gaps = phases.validate(reference.ncols())?;
    for (a, b) in gaps.iter() {
        log::warn!("chapters {a}..={b} belong to no phase");
    }
    let names = [pair[0].character.as_str(), pair[1].character.as_str()];
    let per_model: Vec<Vec<Option<f64>>> = models
        .iter()
        .map(|h| {
            let s0 = phase_states(h, &phases.phases, pair[0], opts.window);
            let s1 = phase_states(h, &phases.phases, pair[1], opts.window);
            s0.iter()
                .zip(&s1)
                .map(|(a, b)| match (&a.2, &b.2) {
                    (Some(x), Some(y)) => pearson(x, y),
                    _ => None,
                })
                .collect()
        })
        .collect();
    let states = [
        phase_states(reference, &phases.phases, pair[0], opts.window),
        phase_states(reference, &phases.phases, pair[1], opts.window),
    ];
    let mut entries = Vec::new();
    let mut diagram = Vec::new();
    for (i, phase) in phases.phases.iter().enumerate() {
        let char_state = |c: usize| {
            let (window, absent, state) = &states[c][i];
            let delta = if i == 0 {
                None
            } else {
                match (state, &states[c][i - 1].2) {
                    (Some(now), Some(before)) => Some(now.iter().zip(before).map(|(a, b)| a - b).collect()),
                    _ => None,
                }
            };
            CharacterPhaseState {
                character: names[c].to_string(),
                window: window.clone(),
                absent: *absent,
                state: state.clone(),
                delta,
            }
        };
        let pair_states = [char_state(0), char_state(1)];
        let transfers = match (
            &pair_states[0].delta,
            &pair_states[1].delta,
            &states[0].get(i.wrapping_sub(1)).and_then(|s| s.2.clone()),
            &states[1].get(i.wrapping_sub(1)).and_then(|s| s.2.clone()),
        ) {
            (Some(d0), Some(d1), Some(b0), Some(b1)) => {
                classify_transfers(names, [b0, b1], [d0, d1], opts.top_n, opts.weakness)
            }
            _ => Vec::new(),
        };
        diagram.extend(transfer_edges(&transfers, names, &phase.name));
        let rs: Vec<Option<f64>> = per_model.iter().map(|m| m[i]).collect();
        let defined: Vec<f64> = rs.iter().flatten().copied().collect();
        let (correlation_mean, correlation_std) = mean_std(&defined);
        entries.push(PhaseEntry {
            phase: phase.clone(),
            states: pair_states,
            correlation: rs[0],
            correlation_per_model: rs,
            correlation_mean,
            correlation_std,
            transfers,
        });
    }
    Ok(PhaseReport {
        characters: [names[0].to_string(), names[1].to_string()],
        window: opts.window,
        top_n: opts.top_n,
        gaps,
        phases: entries,
        diagram,
    })
}

/// Dense matrix as CSV with a header row of column labels and a leading label column.
pub fn matrix_csv(m: &Array2<f64>, row_labels: &[String], col_labels: &[String]) -> String {
    let mut out = String::from("label");
    for c in col_labels {
        out.push(',');
        out.push_str(&crate::network::csv_field(c));
    }
    out.push('\n');
    for (r, row) in m.axis_iter(Axis(0)).enumerate() {
        out.push_str(&crate::network::csv_field(&row_labels[r]));
        for v in row {
            out.push_str(&format!(",{v:.8e}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn tfidf_hand_example() {
        let d1 = ["a", "a", "b"];
        let d2 = ["b"];
        let (vocab, tfidf) = build_tfidf_from_tokens(&[&d1[..], &d2[..]], &VocabConfig::unfiltered()).unwrap();
        assert_eq!(vocab.words, vec!["a", "b"]);
        assert_eq!(vocab.df, vec![1, 2]);
        let idf_a = (3.0f64 / 2.0).ln() + 1.0;
        assert!((tfidf.idf[0] - idf_a).abs() < 1e-12);
        assert!((tfidf.idf[1] - 1.0).abs() < 1e-12);
        let m = tfidf.matrix.to_dense();
        let norm = ((2.0 * idf_a).powi(2) + 1.0).sqrt();
        assert!((m[[0, 0]] - 2.0 * idf_a / norm).abs() < 1e-12);
        assert!((m[[1, 0]] - 1.0 / norm).abs() < 1e-12);
        assert_eq!(m[[0, 1]], 0.0);
        assert!((m[[1, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tfidf_single_word() {
        let d = ["x"];
        let (_, t) = build_tfidf_from_tokens(&[&d[..]], &VocabConfig::unfiltered()).unwrap();
        assert_eq!(t.matrix.shape(), (1, 1));
        assert!((t.matrix.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tfidf_filters() {
        let d1 = ["the", "cat", "x"];
        let d2 = ["the", "cat", "dog"];
        let d3 = ["dog", "bird"];
        let (v, _) = build_tfidf_from_tokens(&[&d1[..], &d2[..], &d3[..]], &VocabConfig::default()).unwrap();
        // "x" too short, "bird" too rare, "the" a stopword
        assert_eq!(v.words, vec!["cat", "dog"]);
        let all = ["cat", "dog"];
        let (v, _) = build_tfidf_from_tokens(&[&all[..], &all[..], &d3[..]], &VocabConfig::default()).unwrap();
        assert_eq!(v.words, vec!["cat"]);
        let only_stop = ["the", "and"];
        let err = build_tfidf_from_tokens(&[&only_stop[..]], &VocabConfig::default());
        assert!(matches!(err, Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn rank_one_recovery() {
        let m = array![[3.0, 1.0], [6.0, 2.0]];
        let sm = SparseMatrix::from_dense(&m);
        let model = nnmf(
            &sm,
            &NnmfOptions {
                topic_count: 1,
                seed: 7,
                max_iter: 200,
                rel_tol: 0.0,
            },
        )
        .unwrap();
        assert!(model.final_error() < 1e-6, "{}", model.final_error());
        let recon = model.reconstruction();
        let direct: f64 = (&recon - &m).mapv(|x| x * x).sum();
        assert!(direct < 1e-6);
        assert!(model.iterations() <= 200);
    }

    #[test]
    fn zero_matrix() {
        let sm = SparseMatrix::from_dense(&Array2::zeros((4, 5)));
        let model = nnmf(&sm, &NnmfOptions { topic_count: 2, seed: 1, max_iter: 20, rel_tol: 1e-4 }).unwrap();
        assert!(model.error_trace.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn dimension_error() {
        let sm = SparseMatrix::from_dense(&Array2::ones((3, 5)));
        for k in [0, 3, 4] {
            let err = nnmf(&sm, &NnmfOptions { topic_count: k, ..Default::default() });
            assert!(matches!(err, Err(Error::DimensionError { .. })));
        }
    }

    #[test]
    fn keyword_ranking() {
        let vocab = Vocabulary {
            words: vec!["bread".into(), "valjean".into()],
            df: vec![1, 1],
        };
        let q = array![[0.1], [0.9]];
        let kw = topic_keywords(&q, &vocab, 5);
        assert_eq!(kw[0].keywords.iter().map(|k| k.0.as_str()).collect::<Vec<_>>(), vec!["valjean", "bread"]);
        assert_eq!(kw[0].strongest(), Some("valjean"));
        assert_eq!(topic_for_keyword(&q, &vocab, "valjean"), Some(0));
        // ties keep vocabulary order
        let tie = topic_keywords(&array![[0.5], [0.5]], &vocab, 1);
        assert_eq!(tie[0].strongest(), Some("bread"));
    }

    #[test]
    fn topical_state_examples() {
        let h = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(topical_state(&h, &[1]).unwrap().state, vec![1.0, 0.0]);
        assert_eq!(topical_state(&h, &[1, 2]).unwrap().state, vec![0.5, 0.5]);
        assert!(matches!(topical_state(&h, &[]), Err(Error::EmptyWindow)));
        assert!(topical_state(&h, &[3]).is_err());
        let z = topical_state(&Array2::zeros((4, 2)), &[1]).unwrap();
        assert!(z.zero_mass);
        assert_eq!(z.state, vec![0.25; 4]);
    }

    #[test]
    fn community_topic_windows() {
        let h = array![[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0], [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]];
        let t = vec![
            Timeline::new("A", vec![1, 7]),
            Timeline::new("B", vec![2, 7]),
            Timeline::new("C", vec![3]),
            Timeline::new("D", vec![4]),
        ];
        let partition = CommunityPartition {
            assignment: Default::default(),
            labels: vec!["I".into(), "II".into()],
            members: vec![vec!["A".into(), "B".into()], vec!["C".into(), "D".into()]],
            modularity: 0.0,
        };
        let ct = community_topics(&h, &partition, &t);
        assert_eq!(ct[0].chapters, vec![7]);
        assert_eq!(ct[0].state.as_ref().unwrap().state, topical_state(&h, &[7]).unwrap().state);
        assert!(ct[1].zero_mass);
        assert!(ct[1].state.is_none());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 0.0], &[0.0, 1.0]).unwrap() < 0.0);
        assert_eq!(pearson(&[0.5, 0.5], &[1.0, 0.0]), None);
    }

    #[test]
    fn phase_validation() {
        let spec = |r: &[(usize, usize)]| PhaseSpec {
            phases: r
                .iter()
                .enumerate()
                .map(|(i, &(start, end))| Phase { name: format!("P{i}"), start, end })
                .collect(),
        };
        assert_eq!(spec(&[(1, 3), (4, 5)]).validate(5).unwrap(), vec![]);
        assert_eq!(spec(&[(1, 3), (6, 7)]).validate(8).unwrap(), vec![(4, 5)]);
        assert!(matches!(spec(&[(1, 3), (3, 5)]).validate(5), Err(Error::InvalidPhases(_))));
        assert!(spec(&[(1, 9)]).validate(5).is_err());
        assert!(spec(&[]).validate(5).is_err());
    }

    #[test]
    fn transfer_swap() {
        // α strong in topic 0, β in topic 1; afterwards each gains the other's
        let before_a = [0.6, 0.1, 0.1, 0.1, 0.1];
        let before_b = [0.1, 0.6, 0.1, 0.1, 0.1];
        let delta_a = [-0.3, 0.3, 0.0, 0.0, 0.0];
        let delta_b = [0.3, -0.3, 0.0, 0.0, 0.0];
        let labels = classify_transfers(["a", "b"], [&before_a, &before_b], [&delta_a, &delta_b], 1, Weakness::BelowMedian);
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[0].topic, 1);
        assert_eq!(labels[0].kind, TransferKind::Transferred { from: "b".into(), to: "a".into() });
        assert_eq!(labels[1].kind, TransferKind::Transferred { from: "a".into(), to: "b".into() });
        let edges = transfer_edges(&labels, ["a", "b"], "II");
        assert_eq!(edges[0].source, "b");
    }

    #[test]
    fn transfer_exogenous_and_single() {
        let before_a = [0.5, 0.3, 0.1, 0.05, 0.05];
        let before_b = [0.3, 0.5, 0.1, 0.05, 0.05];
        // topic 3 gains for both, topic 4 only for b
        let delta_a = [-0.1, -0.1, 0.0, 0.2, 0.0];
        let delta_b = [-0.1, -0.3, 0.0, 0.2, 0.2];
        let labels = classify_transfers(["a", "b"], [&before_a, &before_b], [&delta_a, &delta_b], 2, Weakness::BelowMedian);
        let kinds: Vec<_> = labels.iter().map(|l| (l.topic, l.kind.clone())).collect();
        assert_eq!(
            kinds,
            vec![
                (3, TransferKind::ExogenousBoth),
                (4, TransferKind::SingleEntry { character: "b".into() }),
            ]
        );
        let edges = transfer_edges(&labels, ["a", "b"], "II");
        assert_eq!(edges.len(), 3);
    }

    #[test]
    fn phases_with_absence() {
        // 3 topics, 6 chapters
        let h = array![
            [1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 1.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, 0.0, 1.0, 2.0]
        ];
        let a = Timeline::new("a", vec![1, 3, 6]);
        let b = Timeline::new("b", vec![2, 4, 5, 6]);
        let spec = PhaseSpec {
            phases: vec![
                Phase { name: "I".into(), start: 1, end: 2 },
                Phase { name: "II".into(), start: 3, end: 4 },
                Phase { name: "III".into(), start: 5, end: 5 },
                Phase { name: "IV".into(), start: 6, end: 6 },
            ],
        };
        let r = phase_analysis(&[&h, &h], &spec, [&a, &b], &PhaseOptions::default()).unwrap();
        assert_eq!(r.phases.len(), 4);
        // both in topic 0 during phase I
        assert!((r.phases[0].correlation.unwrap() - 1.0).abs() < 1e-12);
        let p3 = &r.phases[2];
        assert!(p3.states[0].absent);
        assert_eq!(p3.states[0].state, r.phases[1].states[0].state);
        assert_eq!(p3.states[0].delta, Some(vec![0.0, 0.0, 0.0]));
        assert_eq!(r.phases[3].correlation.map(|x| (x * 1e9).round()), Some(1e9));
        assert_eq!(p3.correlation_std, Some(0.0));
    }
}
