//! Stage orchestration: configuration, cached intermediate artifacts, report
//! bundling and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    detect_appearances, parse_narrative, timelines_to_map, CharacterRoster, Corpus, SegmentationConfig,
    Timeline, UnitLevel,
};
use crate::error::{Error, Result};
use crate::export::{to_dot, to_gexf, transfer_dot, GraphDecorations};
use crate::network::{
    build_network, centralities, detect_communities, detect_stages, growth_series, path_statistics,
    CharacterNetwork, CommunityPartition, GrowthSeries,
};
use crate::sentiment::{
    chapter_spi_csv, community_cosentiments, pair_csv, score_corpus, sentiment_report, ChapterSentiment,
    SentimentLexicon, SentimentReport, SpiTable,
};
use crate::sequence::{
    book_vectors, bundle_sequences, apply_local_signs, pair_sign_map, sequence_snapshots, SequenceBundling, SimilarityMeasure,
    SnapshotSigns,
    Threshold,
};
use crate::topics::{
    build_tfidf, community_topics, matrix_csv, nnmf_restarts, phase_analysis, topic_keywords, topical_state,
    NnmfOptions, Phase, PhaseOptions, PhaseSpec, TopicKeywords, TopicModel, Vocabulary, VocabConfig, Weakness,
};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const BUNDLED_LEXICON: &str = include_str!("../data/open_lexicon.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub text: PathBuf,
    pub segmentation: PathBuf,
    pub roster: PathBuf,
    /// Bundled open lexicon when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSettings {
    pub topic_count: usize,
    pub n_seeds: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub keywords: usize,
}

impl Default for TopicSettings {
    fn default() -> Self {
        TopicSettings {
            topic_count: 50,
            n_seeds: 10,
            max_iter: 200,
            rel_tol: 1e-4,
            keywords: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSettings {
    pub threshold: Threshold,
    pub measure: SimilarityMeasure,
    pub snapshot_signs: SnapshotSigns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSettings {
    pub window: usize,
    pub burst_z: f64,
}

impl Default for StageSettings {
    fn default() -> Self {
        StageSettings {
            window: 10,
            burst_z: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSettings {
    pub characters: Vec<String>,
    pub ranges: Vec<Phase>,
    pub window: Option<usize>,
    pub top_n: usize,
    pub weakness: Weakness,
}

impl Default for PhaseSettings {
    fn default() -> Self {
        PhaseSettings {
            characters: Vec::new(),
            ranges: Vec::new(),
            window: None,
            top_n: 5,
            weakness: Weakness::BelowMedian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub unit_level: UnitLevel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub vocab: VocabConfig,
    #[serde(default)]
    pub topics: TopicSettings,
    #[serde(default)]
    pub sequences: SequenceSettings,
    #[serde(default)]
    pub stages: StageSettings,
    #[serde(default)]
    pub phases: PhaseSettings,
}

impl PipelineConfig {
    /// Reads a TOML config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&src).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.text);
        fix(&mut self.paths.segmentation);
        fix(&mut self.paths.roster);
        fix(&mut self.paths.output);
        if let Some(l) = &mut self.paths.lexicon {
            fix(l);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let must_exist = |what: &str, p: &Path| {
            if p.as_os_str().is_empty() {
                Err(Error::Config(format!("{what} path not set")))
            } else if !p.is_file() {
                Err(Error::Config(format!("{what} file {} does not exist", p.display())))
            } else {
                Ok(())
            }
        };
        must_exist("text", &self.paths.text)?;
        must_exist("segmentation", &self.paths.segmentation)?;
        must_exist("roster", &self.paths.roster)?;
        if let Some(l) = &self.paths.lexicon {
            must_exist("lexicon", l)?;
        }
        if self.paths.output.as_os_str().is_empty() {
            return Err(Error::Config("output path not set".into()));
        }
        let t = &self.topics;
        if t.topic_count == 0 || t.n_seeds == 0 || t.max_iter == 0 || t.keywords == 0 {
            return Err(Error::Config("topic settings must be positive".into()));
        }
        if t.rel_tol.is_nan() || t.rel_tol < 0.0 {
            return Err(Error::Config("rel_tol must be non-negative".into()));
        }
        if self.stages.window == 0 || self.stages.burst_z.is_nan() || self.stages.burst_z <= 0.0 {
            return Err(Error::Config("stage window and burst_z must be positive".into()));
        }
        if self.vocab.min_df == 0 || self.vocab.max_df_fraction.is_nan() || self.vocab.max_df_fraction <= 0.0 {
            return Err(Error::Config("vocab min_df and max_df_fraction must be positive".into()));
        }
        if let Threshold::Value(v) = self.sequences.threshold {
            if !v.is_finite() {
                return Err(Error::Config("sequence threshold must be finite".into()));
            }
        }
        if self.phases.top_n == 0 || self.phases.window == Some(0) {
            return Err(Error::Config("phase top_n and window must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of every field.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.topics.n_seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Network,
    Sentiment,
    Sequences,
    Topics,
    Phases,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Network,
        Stage::Sentiment,
        Stage::Sequences,
        Stage::Topics,
        Stage::Phases,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Network => "network",
            Stage::Sentiment => "sentiment",
            Stage::Sequences => "sequences",
            Stage::Topics => "topics",
            Stage::Phases => "phases",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub outputs: Vec<PathBuf>,
    pub millis: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub config_hash: String,
    /// Input file → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    #[serde(default)]
    pub report_groups: BTreeMap<String, Vec<PathBuf>>,
}

#[derive(Serialize, Deserialize)]
struct Cached<T> {
    config_hash: String,
    payload: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkCache {
    network: CharacterNetwork,
    partition: CommunityPartition,
    growth: GrowthSeries,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SentimentCache {
    scores: Vec<ChapterSentiment>,
    report: SentimentReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceCache {
    bundling: SequenceBundling,
    dropped_books: Vec<(usize, usize)>,
    snapshot_fractions: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopicsCache {
    vocabulary: Vocabulary,
    /// Model of the first seed, with Q.
    primary: TopicModel,
    /// H of every restart, in seed order (first equals `primary.h`).
    ensemble_h: Vec<Array2<f64>>,
    seeds: Vec<u64>,
    keywords: Vec<TopicKeywords>,
}

#[derive(Debug, Clone, Serialize)]
struct CharacterTopics {
    character: String,
    appearance: usize,
    state: Vec<f64>,
    top_topics: Vec<(usize, f64, Option<String>)>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Runs stages against one output directory.
pub struct Pipeline {
    config: PipelineConfig,
    hash: String,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let out = config.paths.output.clone();
        fs::create_dir_all(out.join("cache")).map_err(|e| Error::io(&out, e))?;
        Ok(Pipeline { config, hash, out })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    fn write(&self, rel: &str, contents: impl AsRef<[u8]>, outputs: &mut Vec<PathBuf>) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        outputs.push(PathBuf::from(rel));
        Ok(())
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T, outputs: &mut Vec<PathBuf>) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serialisable");
        bytes.push(b'\n');
        self.write(rel, bytes, outputs)
    }

    fn cache_path(&self, name: &str) -> PathBuf {
        self.out.join("cache").join(format!("{name}.json"))
    }

    fn store<T: Serialize>(&self, name: &str, payload: &T) -> Result<()> {
        let path = self.cache_path(name);
        let wrapped = Cached {
            config_hash: self.hash.clone(),
            payload,
        };
        let bytes = serde_json::to_vec(&wrapped).expect("serialisable");
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn load<T: DeserializeOwned>(&self, name: &str, stage: Stage, producer: Stage) -> Result<T> {
        let path = self.cache_path(name);
        let missing = |why: &str| Error::StageDependencyMissing {
            stage: stage.name(),
            missing: format!("{name} ({why})"),
            producer: producer.name(),
        };
        if !path.is_file() {
            return Err(missing("not produced yet"));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let cached: Cached<T> = serde_json::from_slice(&bytes).map_err(|e| Error::Artifact {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if cached.config_hash != self.hash {
            return Err(missing("produced under a different configuration"));
        }
        Ok(cached.payload)
    }

    pub fn run(&self, stage: Stage) -> Result<StageRecord> {
        let start = Instant::now();
        let outputs = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Network => self.network()?,
            Stage::Sentiment => self.sentiment()?,
            Stage::Sequences => self.sequences()?,
            Stage::Topics => self.topics()?,
            Stage::Phases => self.phases()?,
            Stage::Report => self.report()?,
        };
        let record = StageRecord {
            stage: stage.name().to_string(),
            outputs,
            millis: start.elapsed().as_millis(),
        };
        self.update_manifest(&record)?;
        log::info!("stage {} finished in {} ms", record.stage, record.millis);
        Ok(record)
    }

    pub fn run_all(&self) -> Result<Vec<StageRecord>> {
        Stage::ALL.iter().map(|&s| self.run(s)).collect()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out.join("manifest.json")
    }

    fn update_manifest(&self, record: &StageRecord) -> Result<()> {
        let path = self.manifest_path();
        let existing: Option<RunManifest> = fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .filter(|m: &RunManifest| m.config_hash == self.hash);
        let mut manifest = match existing {
            Some(m) => m,
            None => {
                let mut inputs = BTreeMap::new();
                let p = &self.config.paths;
                for (k, path) in [("text", &p.text), ("segmentation", &p.segmentation), ("roster", &p.roster)] {
                    inputs.insert(k.to_string(), sha256_file(path)?);
                }
                inputs.insert(
                    "lexicon".to_string(),
                    match &p.lexicon {
                        Some(l) => sha256_file(l)?,
                        None => hex::encode(Sha256::digest(BUNDLED_LEXICON.as_bytes())),
                    },
                );
                RunManifest {
                    engine_version: ENGINE_VERSION.to_string(),
                    config_hash: self.hash.clone(),
                    inputs,
                    stages: Vec::new(),
                    report_groups: BTreeMap::new(),
                }
            }
        };
        manifest.stages.retain(|s| s.stage != record.stage);
        manifest.stages.push(record.clone());
        manifest.stages.sort_by_key(|s| {
            Stage::ALL
                .iter()
                .position(|x| x.name() == s.stage)
                .unwrap_or(usize::MAX)
        });
        if record.stage == Stage::Report.name() {
            manifest.report_groups = report_groups(&record.outputs);
        }
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serialisable");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn lexicon(&self) -> Result<SentimentLexicon> {
        match &self.config.paths.lexicon {
            Some(p) => {
                let src = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                SentimentLexicon::parse(&src)
            }
            None => SentimentLexicon::parse(BUNDLED_LEXICON),
        }
    }

    fn ingest(&self) -> Result<Vec<PathBuf>> {
        let p = &self.config.paths;
        let raw = fs::read_to_string(&p.text).map_err(|e| Error::io(&p.text, e))?;
        let seg_src = fs::read_to_string(&p.segmentation).map_err(|e| Error::io(&p.segmentation, e))?;
        let markers: SegmentationConfig = toml::from_str(&seg_src)
            .map_err(|e| Error::Config(format!("{}: {e}", p.segmentation.display())))?;
        let roster_src = fs::read_to_string(&p.roster).map_err(|e| Error::io(&p.roster, e))?;
        let roster = CharacterRoster::from_toml(&roster_src)?;
        let corpus = parse_narrative(&raw, &markers)?.at_level(self.config.unit_level);
        let timelines = detect_appearances(&corpus, &roster);
        let mut outputs = Vec::new();
        self.write_json("corpus_manifest.json", &corpus.manifest(), &mut outputs)?;
        self.write_json("timelines.json", &timelines_to_map(&timelines), &mut outputs)?;
        self.store("corpus", &corpus)?;
        self.store("timelines", &timelines)?;
        Ok(outputs)
    }

    fn network(&self) -> Result<Vec<PathBuf>> {
        let corpus: Corpus = self.load("corpus", Stage::Network, Stage::Ingest)?;
        let timelines: Vec<Timeline> = self.load("timelines", Stage::Network, Stage::Ingest)?;
        let network = build_network(&timelines);
        let partition = detect_communities(&network);
        let growth = growth_series(&timelines, corpus.len());
        let stages = detect_stages(&growth, self.config.stages.window, self.config.stages.burst_z);
        let stats = path_statistics(&network)?;
        let cents = centralities(&network, &timelines);
        let appearance: Vec<usize> = cents.iter().map(|c| c.appearance).collect();
        let deco = GraphDecorations {
            partition: Some(&partition),
            appearance: Some(&appearance),
            ..Default::default()
        };
        let mut outputs = Vec::new();
        self.write("network/network.gexf", to_gexf(&network, &deco), &mut outputs)?;
        self.write("network/network.dot", to_dot(&network, &deco), &mut outputs)?;
        self.write("network/growth.csv", growth.to_csv(true), &mut outputs)?;
        self.write_json("network/stages.json", &stages, &mut outputs)?;
        self.write_json("network/communities.json", &partition, &mut outputs)?;
        self.write_json("network/centralities.json", &cents, &mut outputs)?;
        self.write_json("network/path_statistics.json", &stats, &mut outputs)?;
        self.store(
            "network",
            &NetworkCache {
                network,
                partition,
                growth,
            },
        )?;
        Ok(outputs)
    }

    fn sentiment(&self) -> Result<Vec<PathBuf>> {
        let corpus: Corpus = self.load("corpus", Stage::Sentiment, Stage::Ingest)?;
        let timelines: Vec<Timeline> = self.load("timelines", Stage::Sentiment, Stage::Ingest)?;
        let net: NetworkCache = self.load("network", Stage::Sentiment, Stage::Network)?;
        let scores = score_corpus(&corpus.chapters, &self.lexicon()?);
        let report = sentiment_report(&scores, &timelines, &net.network)?;
        let matrix = community_cosentiments(&net.network, &net.partition, &report.edge_cosentiment);
        let deco = GraphDecorations {
            partition: Some(&net.partition),
            cosentiment: Some(&report.edge_cosentiment),
            ..Default::default()
        };
        let mut outputs = Vec::new();
        self.write("sentiment/chapter_spi.csv", chapter_spi_csv(&scores), &mut outputs)?;
        self.write_json("sentiment/profiles.json", &report, &mut outputs)?;
        self.write("sentiment/pairs.csv", pair_csv(&report), &mut outputs)?;
        self.write_json("sentiment/community_cosentiment.json", &matrix, &mut outputs)?;
        self.write("sentiment/network_cosentiment.gexf", to_gexf(&net.network, &deco), &mut outputs)?;
        self.write("sentiment/network_cosentiment.dot", to_dot(&net.network, &deco), &mut outputs)?;
        self.store("sentiment", &SentimentCache { scores, report })?;
        Ok(outputs)
    }

    fn sequences(&self) -> Result<Vec<PathBuf>> {
        let corpus: Corpus = self.load("corpus", Stage::Sequences, Stage::Ingest)?;
        let timelines: Vec<Timeline> = self.load("timelines", Stage::Sequences, Stage::Ingest)?;
        let net: NetworkCache = self.load("network", Stage::Sequences, Stage::Network)?;
        let sent: SentimentCache = self.load("sentiment", Stage::Sequences, Stage::Sentiment)?;
        let measure = self.config.sequences.measure;
        let (vectors, dropped) = book_vectors(&timelines, &corpus, measure);
        let table = SpiTable::new(&sent.scores);
        let bundling = bundle_sequences(&vectors, self.config.sequences.threshold, measure, Some(&table));
        let signs = pair_sign_map(&net.network, &sent.report.edge_signs());
        let mut snapshots = sequence_snapshots(&bundling.sequences, &timelines, &signs);
        if self.config.sequences.snapshot_signs == SnapshotSigns::Local {
            apply_local_signs(&mut snapshots, &table);
        }
        let mut outputs = Vec::new();
        self.write_json("sequences/sequences.json", &bundling, &mut outputs)?;
        self.write("sequences/similarity.csv", bundling.similarity_csv(&vectors), &mut outputs)?;
        let fractions: Vec<(usize, f64, f64)> = snapshots
            .iter()
            .map(|s| (s.index, s.positive_fraction, s.negative_fraction))
            .collect();
        self.write_json("sequences/snapshots.json", &snapshots, &mut outputs)?;
        for s in &snapshots {
            let deco = GraphDecorations {
                signs: Some(&s.signs),
                ..Default::default()
            };
            self.write(
                &format!("sequences/snapshot_{:02}.gexf", s.index),
                to_gexf(&s.network, &deco),
                &mut outputs,
            )?;
        }
        self.store(
            "sequences",
            &SequenceCache {
                bundling,
                dropped_books: dropped,
                snapshot_fractions: fractions,
            },
        )?;
        Ok(outputs)
    }

    fn topics(&self) -> Result<Vec<PathBuf>> {
        let corpus: Corpus = self.load("corpus", Stage::Topics, Stage::Ingest)?;
        let timelines: Vec<Timeline> = self.load("timelines", Stage::Topics, Stage::Ingest)?;
        let net: NetworkCache = self.load("network", Stage::Topics, Stage::Network)?;
        let (vocabulary, tfidf) = build_tfidf(&corpus, &self.config.vocab)?;
        let t = &self.config.topics;
        let opts = NnmfOptions {
            topic_count: t.topic_count,
            seed: self.config.seed,
            max_iter: t.max_iter,
            rel_tol: t.rel_tol,
        };
        let seeds = self.config.seeds();
        let mut models = nnmf_restarts(&tfidf.matrix, &opts, &seeds)?;
        let ensemble_h: Vec<Array2<f64>> = models.iter().map(|m| m.h.clone()).collect();
        let primary = models.swap_remove(0);
        drop(models);
        let keywords = topic_keywords(&primary.q, &vocabulary, t.keywords);
        let states = character_topics(&primary.h, &timelines, &keywords);
        let communities = community_topics(&primary.h, &net.partition, &timelines);
        let topic_labels: Vec<String> = (1..=t.topic_count).map(|k| format!("T{k}")).collect();
        let chapter_labels: Vec<String> = (1..=corpus.len()).map(|c| c.to_string()).collect();

        let mut outputs = Vec::new();
        self.write_json("topics/topics.json", &topic_table(&keywords), &mut outputs)?;
        self.write("topics/Q.csv", matrix_csv(&primary.q, &vocabulary.words, &topic_labels), &mut outputs)?;
        self.write("topics/H.csv", matrix_csv(&primary.h, &topic_labels, &chapter_labels), &mut outputs)?;
        self.write_json("topics/topical_states.json", &states, &mut outputs)?;
        self.write_json("topics/community_topics.json", &communities, &mut outputs)?;
        self.write_json(
            "topics/convergence.json",
            &serde_json::json!({
                "seeds": seeds,
                "vocabulary_size": vocabulary.len(),
                "error_trace": primary.error_trace,
            }),
            &mut outputs,
        )?;
        self.store(
            "topics",
            &TopicsCache {
                vocabulary,
                primary,
                ensemble_h,
                seeds,
                keywords,
            },
        )?;
        Ok(outputs)
    }

    fn phases(&self) -> Result<Vec<PathBuf>> {
        let topics: TopicsCache = self.load("topics", Stage::Phases, Stage::Topics)?;
        let timelines: Vec<Timeline> = self.load("timelines", Stage::Phases, Stage::Ingest)?;
        let ps = &self.config.phases;
        if ps.characters.len() != 2 || ps.ranges.is_empty() {
            return Err(Error::Config(
                "phases need exactly two characters and at least one range".into(),
            ));
        }
        let find = |name: &str| {
            timelines
                .iter()
                .find(|t| t.character == name)
                .ok_or_else(|| Error::UnknownCharacter(name.to_string()))
        };
        let pair = [find(&ps.characters[0])?, find(&ps.characters[1])?];
        let spec = PhaseSpec {
            phases: ps.ranges.clone(),
        };
        let models: Vec<&Array2<f64>> = topics.ensemble_h.iter().collect();
        let report = phase_analysis(
            &models,
            &spec,
            pair,
            &PhaseOptions {
                window: ps.window,
                top_n: ps.top_n,
                weakness: ps.weakness,
            },
        )?;
        let mut outputs = Vec::new();
        self.write_json(
            "phases/phase_report.json",
            &serde_json::json!({
                "report": report,
                "topic_keywords": topic_table(&topics.keywords),
            }),
            &mut outputs,
        )?;
        self.write("phases/transfers.dot", transfer_dot(&report.diagram, &topics.keywords), &mut outputs)?;
        Ok(outputs)
    }

    fn report(&self) -> Result<Vec<PathBuf>> {
        let corpus: Corpus = self.load("corpus", Stage::Report, Stage::Ingest)?;
        let timelines: Vec<Timeline> = self.load("timelines", Stage::Report, Stage::Ingest)?;
        let net: NetworkCache = self.load("network", Stage::Report, Stage::Network)?;
        let sent: SentimentCache = self.load("sentiment", Stage::Report, Stage::Sentiment)?;
        let seq: SequenceCache = self.load("sequences", Stage::Report, Stage::Sequences)?;
        let topics: TopicsCache = self.load("topics", Stage::Report, Stage::Topics)?;
        let phases_path = self.out.join("phases/phase_report.json");
        if !phases_path.is_file() {
            return Err(Error::StageDependencyMissing {
                stage: Stage::Report.name(),
                missing: "phases/phase_report.json".into(),
                producer: Stage::Phases.name(),
            });
        }
        let phase_json = fs::read(&phases_path).map_err(|e| Error::io(&phases_path, e))?;

        let mut outputs = Vec::new();
        // chapter sentiment with sequence shading
        let seq_of: BTreeMap<usize, usize> = seq
            .bundling
            .sequences
            .iter()
            .flat_map(|s| s.chapters.iter().map(move |&c| (c, s.index)))
            .collect();
        let bars: Vec<serde_json::Value> = sent
            .scores
            .iter()
            .map(|s| {
                serde_json::json!({
                    "ordinal": s.ordinal,
                    "positive": s.positive,
                    "negative": s.negative,
                    "spi": s.spi,
                    "sequence": seq_of.get(&s.ordinal),
                })
            })
            .collect();
        let shading: Vec<serde_json::Value> = seq
            .bundling
            .sequences
            .iter()
            .map(|s| {
                serde_json::json!({
                    "index": s.index,
                    "first_chapter": s.chapters.first(),
                    "last_chapter": s.chapters.last(),
                    "mean_spi": s.mean_spi,
                    "sign": s.sign,
                })
            })
            .collect();
        self.write_json(
            "report/chapter_sentiment.json",
            &serde_json::json!({
                "mean_chapter_spi": sent.report.mean_chapter_spi,
                "std_error": sent.report.mean_chapter_spi_std_error,
                "chapters": bars,
                "sequences": shading,
            }),
            &mut outputs,
        )?;

        let deco = GraphDecorations {
            partition: Some(&net.partition),
            cosentiment: Some(&sent.report.edge_cosentiment),
            ..Default::default()
        };
        self.write("report/network.gexf", to_gexf(&net.network, &deco), &mut outputs)?;
        self.write_json("report/communities.json", &net.partition, &mut outputs)?;
        self.write("report/growth.csv", net.growth.to_csv(false), &mut outputs)?;

        let cents = centralities(&net.network, &timelines);
        let histogram = |values: Vec<usize>| {
            let mut h: BTreeMap<usize, usize> = BTreeMap::new();
            for v in values {
                *h.entry(v).or_insert(0) += 1;
            }
            h
        };
        self.write_json(
            "report/centralities.json",
            &serde_json::json!({
                "centralities": cents,
                "appearance_histogram": histogram(cents.iter().map(|c| c.appearance).collect()),
                "degree_histogram": histogram(cents.iter().map(|c| c.degree).collect()),
            }),
            &mut outputs,
        )?;
        self.write("report/centrality_growth.csv", net.growth.to_csv(true), &mut outputs)?;

        self.write_json(
            "report/sequence_snapshots.json",
            &serde_json::json!({
                "threshold": seq.bundling.threshold,
                "dropped_books": seq.dropped_books,
                "sequences": seq.bundling.sequences,
                "fractions": seq.snapshot_fractions,
            }),
            &mut outputs,
        )?;
        self.write_json("report/topic_table.json", &topic_table(&topics.keywords), &mut outputs)?;
        let communities = community_topics(&topics.primary.h, &net.partition, &timelines);
        self.write_json(
            "report/topic_wheels.json",
            &serde_json::json!({
                "characters": character_topics(&topics.primary.h, &timelines, &topics.keywords),
                "communities": communities,
            }),
            &mut outputs,
        )?;
        self.write("report/phase_transfers.json", phase_json, &mut outputs)?;
        let _ = corpus;
        Ok(outputs)
    }
}

fn topic_table(keywords: &[TopicKeywords]) -> Vec<serde_json::Value> {
    keywords
        .iter()
        .map(|t| {
            serde_json::json!({
                "topic": t.topic,
                "label": format!("T{}", t.topic + 1),
                "keywords": t.keywords.iter().enumerate().map(|(i, (w, q))| serde_json::json!({
                    "word": w, "weight": q, "bold": i == 0,
                })).collect::<Vec<_>>(),
            })
        })
        .collect()
}

fn character_topics(h: &Array2<f64>, timelines: &[Timeline], keywords: &[TopicKeywords]) -> Vec<CharacterTopics> {
    timelines
        .iter()
        .filter(|t| t.appearance() > 0)
        .filter_map(|t| {
            let s = topical_state(h, &t.chapters).ok()?;
            let mut order: Vec<usize> = (0..s.state.len()).collect();
            order.sort_by(|&a, &b| s.state[b].total_cmp(&s.state[a]).then(a.cmp(&b)));
            Some(CharacterTopics {
                character: t.character.clone(),
                appearance: t.appearance(),
                top_topics: order
                    .into_iter()
                    .take(5)
                    .map(|k| {
                        (
                            k,
                            s.state[k],
                            keywords.get(k).and_then(|kw| kw.strongest()).map(str::to_string),
                        )
                    })
                    .collect(),
                state: s.state,
            })
        })
        .collect()
}

const REPORT_GROUPS: [(&str, &[&str]); 8] = [
    ("chapter_sentiment", &["report/chapter_sentiment.json"]),
    ("network_communities_cosentiment", &["report/network.gexf", "report/communities.json"]),
    ("growth", &["report/growth.csv"]),
    ("centralities", &["report/centralities.json", "report/centrality_growth.csv"]),
    ("sequence_snapshots", &["report/sequence_snapshots.json"]),
    ("topic_table", &["report/topic_table.json"]),
    ("topic_wheels", &["report/topic_wheels.json"]),
    ("phase_transfers", &["report/phase_transfers.json"]),
];

fn report_groups(outputs: &[PathBuf]) -> BTreeMap<String, Vec<PathBuf>> {
    REPORT_GROUPS
        .iter()
        .map(|(group, files)| {
            (
                group.to_string(),
                files
                    .iter()
                    .map(PathBuf::from)
                    .filter(|p| outputs.contains(p))
                    .collect(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_changes_with_every_field() {
        let base = PipelineConfig::default();
        let h0 = base.hash();
        let mut variants: Vec<PipelineConfig> = Vec::new();
        let mut v = |f: &dyn Fn(&mut PipelineConfig)| {
            let mut c = base.clone();
            f(&mut c);
            variants.push(c);
        };
        v(&|c| c.paths.text = "a".into());
        v(&|c| c.paths.segmentation = "a".into());
        v(&|c| c.paths.roster = "a".into());
        v(&|c| c.paths.lexicon = Some("a".into()));
        v(&|c| c.paths.output = "a".into());
        v(&|c| c.unit_level = UnitLevel::Book);
        v(&|c| c.seed = 9);
        v(&|c| c.vocab.stopwords = false);
        v(&|c| c.vocab.extra_stopwords = vec!["x".into()]);
        v(&|c| c.vocab.min_df = 3);
        v(&|c| c.vocab.max_df_fraction = 0.5);
        v(&|c| c.vocab.min_token_chars = 3);
        v(&|c| c.topics.topic_count = 10);
        v(&|c| c.topics.n_seeds = 3);
        v(&|c| c.topics.max_iter = 10);
        v(&|c| c.topics.rel_tol = 1e-3);
        v(&|c| c.topics.keywords = 3);
        v(&|c| c.sequences.threshold = Threshold::Value(0.4));
        v(&|c| c.sequences.measure = SimilarityMeasure::Jaccard);
        v(&|c| c.sequences.snapshot_signs = SnapshotSigns::Local);
        v(&|c| c.stages.window = 5);
        v(&|c| c.stages.burst_z = 1.5);
        v(&|c| c.phases.characters = vec!["a".into(), "b".into()]);
        v(&|c| c.phases.ranges = vec![Phase { name: "I".into(), start: 1, end: 2 }]);
        v(&|c| c.phases.window = Some(3));
        v(&|c| c.phases.top_n = 3);
        v(&|c| c.phases.weakness = Weakness::NotTopN);
        let mut seen = std::collections::HashSet::new();
        seen.insert(h0);
        for c in &variants {
            assert!(seen.insert(c.hash()), "hash collision for {c:?}");
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let src = r#"
seed = 3
unit_level = "chapter"
[paths]
text = "t.txt"
segmentation = "s.toml"
roster = "r.toml"
output = "out"
[topics]
topic_count = 5
[sequences]
threshold = 0.4
measure = "jaccard"
[phases]
characters = ["A", "B"]
[[phases.ranges]]
name = "I"
start = 1
end = 3
"#;
        let mut c: PipelineConfig = toml::from_str(src).unwrap();
        assert_eq!(c.sequences.threshold, Threshold::Value(0.4));
        assert_eq!(c.topics.topic_count, 5);
        assert_eq!(c.topics.n_seeds, 10);
        c.resolve_relative(Path::new("/base"));
        assert_eq!(c.paths.text, PathBuf::from("/base/t.txt"));
        let auto: PipelineConfig = toml::from_str(&src.replace("threshold = 0.4", "threshold = \"auto\"")).unwrap();
        assert_eq!(auto.sequences.threshold, Threshold::Auto);
        assert!(toml::from_str::<PipelineConfig>(&src.replace("seed = 3", "seed = 3\nbogus = 1")).is_err());
    }
}
