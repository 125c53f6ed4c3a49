//! Weighted co-appearance network, its cumulative growth, path statistics,
//! community structure and narrative-stage detection.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Timeline;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    /// Number of shared chapters.
    pub weight: usize,
    pub chapters: Vec<usize>,
}

/// Undirected co-appearance graph. Node indices refer to `nodes`; every edge
/// has `source < target`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CharacterNetwork {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

impl CharacterNetwork {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn edge_between(&self, a: &str, b: &str) -> Option<&Edge> {
        let (i, j) = (self.index_of(a)?, self.index_of(b)?);
        let (lo, hi) = (i.min(j), i.max(j));
        self.edges
            .iter()
            .find(|e| e.source == lo && e.target == hi)
    }

    /// Sorted neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.source].push(e.target);
            adj[e.target].push(e.source);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn edge_names(&self, e: &Edge) -> (&str, &str) {
        (&self.nodes[e.source], &self.nodes[e.target])
    }
}

/// Sorted intersection of two sorted ordinal lists.
pub(crate) fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Characters with at least one appearance become nodes (in input order);
/// two nodes are linked when they share at least one chapter.
pub fn build_network(timelines: &[Timeline]) -> CharacterNetwork {
    let present: Vec<&Timeline> = timelines.iter().filter(|t| t.appearance() > 0).collect();
    let mut edges = Vec::new();
    for i in 0..present.len() {
        for j in i + 1..present.len() {
            let shared = intersect(&present[i].chapters, &present[j].chapters);
            if !shared.is_empty() {
                edges.push(Edge {
                    source: i,
                    target: j,
                    weight: shared.len(),
                    chapters: shared,
                });
            }
        }
    }
    CharacterNetwork {
        nodes: present.iter().map(|t| t.character.clone()).collect(),
        edges,
    }
}

/// Cumulative quantities indexed by ordinal (`series[t - 1]` holds the value at `t`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthSeries {
    pub chapter_count: usize,
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
    pub characters: Vec<String>,
    pub appearance: Vec<Vec<usize>>,
    pub degree: Vec<Vec<usize>>,
}

impl GrowthSeries {
    pub fn new_nodes_at(&self, t: usize) -> usize {
        self.nodes[t - 1] - if t > 1 { self.nodes[t - 2] } else { 0 }
    }

    pub fn new_edges_at(&self, t: usize) -> usize {
        self.edges[t - 1] - if t > 1 { self.edges[t - 2] } else { 0 }
    }

    /// Growth series restricted to aggregate node and edge counts, for
    /// synthetic inputs to [`detect_stages`].
    pub fn from_counts(nodes: Vec<usize>, edges: Vec<usize>) -> Self {
        assert_eq!(nodes.len(), edges.len());
        GrowthSeries {
            chapter_count: nodes.len(),
            nodes,
            edges,
            characters: Vec::new(),
            appearance: Vec::new(),
            degree: Vec::new(),
        }
    }

    /// CSV with columns `ordinal,n,m`, plus `a:<name>` and `k:<name>` per
    /// character when `per_character` is set.
    pub fn to_csv(&self, per_character: bool) -> String {
        let mut out = String::from("ordinal,n,m");
        if per_character {
            for c in &self.characters {
                out.push_str(&format!(",a:{},k:{}", csv_field(c), csv_field(c)));
            }
        }
        out.push('\n');
        for t in 0..self.chapter_count {
            out.push_str(&format!("{},{},{}", t + 1, self.nodes[t], self.edges[t]));
            if per_character {
                for (a, k) in self.appearance.iter().zip(&self.degree) {
                    out.push_str(&format!(",{},{}", a[t], k[t]));
                }
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cumulative(increments: &[usize]) -> Vec<usize> {
    increments
        .iter()
        .scan(0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

pub fn growth_series(timelines: &[Timeline], chapter_count: usize) -> GrowthSeries {
    let c = chapter_count;
    let mut node_inc = vec![0; c];
    let mut edge_inc = vec![0; c];
    let mut appearance = Vec::with_capacity(timelines.len());
    let mut degree_inc = vec![vec![0; c]; timelines.len()];
    for t in timelines {
        let mut inc = vec![0; c];
        for &o in t.chapters.iter().filter(|&&o| o >= 1 && o <= c) {
            inc[o - 1] += 1;
        }
        if let Some(first) = t.first().filter(|&o| o <= c) {
            node_inc[first - 1] += 1;
        }
        appearance.push(cumulative(&inc));
    }
    for i in 0..timelines.len() {
        for j in i + 1..timelines.len() {
            let shared = intersect(&timelines[i].chapters, &timelines[j].chapters);
            if let Some(&first) = shared.first().filter(|&&o| o <= c) {
                edge_inc[first - 1] += 1;
                degree_inc[i][first - 1] += 1;
                degree_inc[j][first - 1] += 1;
            }
        }
    }
    GrowthSeries {
        chapter_count: c,
        nodes: cumulative(&node_inc),
        edges: cumulative(&edge_inc),
        characters: timelines.iter().map(|t| t.character.clone()).collect(),
        appearance,
        degree: degree_inc.iter().map(|d| cumulative(d)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStatistics {
    pub density: f64,
    /// Mean over ordered pairs joined by a path.
    pub mean_geodesic: f64,
    pub diameter: usize,
    /// Mean local clustering over nodes with degree ≥ 2.
    pub clustering_coefficient: f64,
    pub connected_pairs: usize,
    pub disconnected_pairs: usize,
}

fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap_or(0);
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

pub fn path_statistics(network: &CharacterNetwork) -> Result<PathStatistics> {
    let n = network.node_count();
    if n == 0 {
        return Err(Error::EmptyNetwork);
    }
    let adj = network.adjacency();
    let per_source: Vec<(usize, usize, usize, usize)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let dist = bfs(&adj, s);
            let (mut sum, mut count, mut max, mut missing) = (0, 0, 0, 0);
            for (t, d) in dist.iter().enumerate() {
                if t == s {
                    continue;
                }
                match d {
                    Some(d) => {
                        sum += d;
                        count += 1;
                        max = max.max(*d);
                    }
                    None => missing += 1,
                }
            }
            (sum, count, max, missing)
        })
        .collect();
    let sum: usize = per_source.iter().map(|p| p.0).sum();
    let connected: usize = per_source.iter().map(|p| p.1).sum();
    let diameter = per_source.iter().map(|p| p.2).max().unwrap_or(0);
    let disconnected: usize = per_source.iter().map(|p| p.3).sum();

    let mut local = Vec::new();
    for (u, nbrs) in adj.iter().enumerate() {
        let k = nbrs.len();
        if k < 2 {
            continue;
        }
        let mut links = 0;
        for (x, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[x + 1..] {
                if adj[a].binary_search(&b).is_ok() {
                    links += 1;
                }
            }
        }
        let _ = u;
        local.push(2.0 * links as f64 / (k * (k - 1)) as f64);
    }
    let pairs = n * (n.saturating_sub(1)) / 2;
    Ok(PathStatistics {
        density: if pairs == 0 {
            0.0
        } else {
            network.edge_count() as f64 / pairs as f64
        },
        mean_geodesic: if connected == 0 {
            0.0
        } else {
            sum as f64 / connected as f64
        },
        diameter,
        clustering_coefficient: if local.is_empty() {
            0.0
        } else {
            local.iter().sum::<f64>() / local.len() as f64
        },
        connected_pairs: connected / 2,
        disconnected_pairs: disconnected / 2,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Centrality {
    pub name: String,
    pub appearance: usize,
    pub degree: usize,
    /// Sum of incident edge weights.
    pub weighted_degree: usize,
}

/// Per-node centralities in node order.
pub fn centralities(network: &CharacterNetwork, timelines: &[Timeline]) -> Vec<Centrality> {
    let mut degree = vec![0; network.node_count()];
    let mut strength = vec![0; network.node_count()];
    for e in &network.edges {
        degree[e.source] += 1;
        degree[e.target] += 1;
        strength[e.source] += e.weight;
        strength[e.target] += e.weight;
    }
    let appearance: HashMap<&str, usize> = timelines
        .iter()
        .map(|t| (t.character.as_str(), t.appearance()))
        .collect();
    network
        .nodes
        .iter()
        .enumerate()
        .map(|(i, name)| Centrality {
            name: name.clone(),
            appearance: appearance.get(name.as_str()).copied().unwrap_or(0),
            degree: degree[i],
            weighted_degree: strength[i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityPartition {
    /// Node name → index into `labels`.
    pub assignment: BTreeMap<String, usize>,
    /// Roman-numeral labels, largest community first.
    pub labels: Vec<String>,
    pub members: Vec<Vec<String>>,
    pub modularity: f64,
}

impl CommunityPartition {
    pub fn community_of(&self, name: &str) -> Option<usize> {
        self.assignment.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn roman(mut n: usize) -> String {
    const TABLE: [(usize, &str); 13] = [
        (1000, "M"),
        (900, "CM"),
        (500, "D"),
        (400, "CD"),
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut out = String::new();
    for &(value, glyph) in &TABLE {
        while n >= value {
            out.push_str(glyph);
            n -= value;
        }
    }
    out
}

/// Weighted Newman modularity of a node → community assignment.
pub fn modularity(network: &CharacterNetwork, community: &[usize]) -> f64 {
    let total: f64 = network.edges.iter().map(|e| e.weight as f64).sum();
    if total == 0.0 {
        return 0.0;
    }
    let groups = community.iter().copied().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; groups];
    let mut strength = vec![0.0; groups];
    for e in &network.edges {
        let w = e.weight as f64;
        let (a, b) = (community[e.source], community[e.target]);
        if a == b {
            inside[a] += w;
        }
        strength[a] += w;
        strength[b] += w;
    }
    inside
        .iter()
        .zip(&strength)
        .map(|(i, s)| i / total - (s / (2.0 * total)).powi(2))
        .sum()
}

const MERGE_EPS: f64 = 1e-12;

/// Greedy agglomerative modularity maximisation on edge weights. Starting from
/// singletons, the pair of adjacent communities with the largest modularity
/// gain is merged until no merge increases modularity. Equal gains are
/// resolved by the smallest member names of the two communities.
pub fn detect_communities(network: &CharacterNetwork) -> CommunityPartition {
    let n = network.node_count();
    let total: f64 = network.edges.iter().map(|e| e.weight as f64).sum();
    // smallest member name of each live community
    let mut key: Vec<String> = network.nodes.clone();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut alive = vec![true; n];
    // e[i][j]: half the fraction of edge weight between communities i and j
    let mut between: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut share = vec![0.0; n];
    if total > 0.0 {
        for e in &network.edges {
            let w = e.weight as f64 / (2.0 * total);
            *between[e.source].entry(e.target).or_default() += w;
            *between[e.target].entry(e.source).or_default() += w;
            share[e.source] += w;
            share[e.target] += w;
        }
    }
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for (&j, &eij) in &between[i] {
                if j <= i {
                    continue;
                }
                let gain = 2.0 * (eij - share[i] * share[j]);
                let better = match best {
                    None => true,
                    Some((g, bi, bj)) => {
                        if gain > g + MERGE_EPS {
                            true
                        } else if gain < g - MERGE_EPS {
                            false
                        } else {
                            pair_key(&key, i, j) < pair_key(&key, bi, bj)
                        }
                    }
                };
                if better {
                    best = Some((gain, i, j));
                }
            }
        }
        let Some((gain, i, j)) = best else { break };
        if gain <= MERGE_EPS {
            break;
        }
        // merge j into i
        let moved = std::mem::take(&mut between[j]);
        for (k, w) in moved {
            if k == i {
                continue;
            }
            *between[i].entry(k).or_default() += w;
            let row = &mut between[k];
            row.remove(&j);
            *row.entry(i).or_default() += w;
        }
        between[i].remove(&j);
        share[i] += share[j];
        share[j] = 0.0;
        alive[j] = false;
        let taken = std::mem::take(&mut members[j]);
        members[i].extend(taken);
        if key[j] < key[i] {
            key[i] = key[j].clone();
        }
    }

    let mut groups: Vec<Vec<usize>> = (0..n)
        .filter(|&i| alive[i])
        .map(|i| {
            let mut m = members[i].clone();
            m.sort_by(|a, b| network.nodes[*a].cmp(&network.nodes[*b]));
            m
        })
        .collect();
    groups.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| network.nodes[a[0]].cmp(&network.nodes[b[0]]))
    });
    let mut community = vec![0; n];
    for (label, g) in groups.iter().enumerate() {
        for &v in g {
            community[v] = label;
        }
    }
    CommunityPartition {
        assignment: network
            .nodes
            .iter()
            .cloned()
            .zip(community.iter().copied())
            .collect(),
        labels: (1..=groups.len()).map(roman).collect(),
        members: groups
            .iter()
            .map(|g| g.iter().map(|&v| network.nodes[v].clone()).collect())
            .collect(),
        modularity: modularity(network, &community),
    }
}

fn pair_key(key: &[String], i: usize, j: usize) -> (&str, &str) {
    let (a, b) = (key[i].as_str(), key[j].as_str());
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    NodeBurst,
    Plateau,
    EdgeLed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAnnotation {
    pub kind: StageKind,
    /// Inclusive ordinal range.
    pub start: usize,
    pub end: usize,
    /// Peak z-score for bursts and edge-led ranges; run length for plateaus.
    pub magnitude: f64,
}

impl StageAnnotation {
    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start <= end && start <= self.end
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Merges the inclusive spans of flagged sliding windows into ranges.
fn flagged_ranges(flags: &[Option<f64>], window: usize) -> Vec<(usize, usize, f64)> {
    let mut out: Vec<(usize, usize, f64)> = Vec::new();
    for (s, flag) in flags.iter().enumerate() {
        let Some(z) = flag else { continue };
        let (start, end) = (s + 1, s + window);
        match out.last_mut() {
            Some(last) if start <= last.1 + 1 => {
                last.1 = last.1.max(end);
                last.2 = last.2.max(*z);
            }
            _ => out.push((start, end, *z)),
        }
    }
    out
}

/// Annotates node bursts, zero-growth plateaus and edge-led stretches using
/// sliding windows of `window` chapters.
pub fn detect_stages(growth: &GrowthSeries, window: usize, burst_z: f64) -> Vec<StageAnnotation> {
    let c = growth.chapter_count;
    let window = window.max(1);
    let mut out = Vec::new();
    if c >= window {
        let at = |series: &[usize], t: usize| if t == 0 { 0 } else { series[t - 1] };
        let starts = c - window + 1;
        let dn: Vec<f64> = (1..=starts)
            .map(|s| (at(&growth.nodes, s + window - 1) - at(&growth.nodes, s - 1)) as f64)
            .collect();
        let dm: Vec<f64> = (1..=starts)
            .map(|s| (at(&growth.edges, s + window - 1) - at(&growth.edges, s - 1)) as f64)
            .collect();
        let (mn, sn) = mean_sd(&dn);
        let (mm, sm) = mean_sd(&dm);
        let z = |x: f64, mean: f64, sd: f64| if sd > 0.0 { (x - mean) / sd } else { 0.0 };
        let bursts: Vec<Option<f64>> = dn
            .iter()
            .map(|&x| (x > mn + burst_z * sn).then(|| z(x, mn, sn)))
            .collect();
        let edge_led: Vec<Option<f64>> = dm
            .iter()
            .zip(&dn)
            .map(|(&x, &y)| (x > mm + burst_z * sm && y < mn).then(|| z(x, mm, sm)))
            .collect();
        out.extend(
            flagged_ranges(&bursts, window)
                .into_iter()
                .map(|(start, end, magnitude)| StageAnnotation {
                    kind: StageKind::NodeBurst,
                    start,
                    end,
                    magnitude,
                }),
        );
        out.extend(
            flagged_ranges(&edge_led, window)
                .into_iter()
                .map(|(start, end, magnitude)| StageAnnotation {
                    kind: StageKind::EdgeLed,
                    start,
                    end,
                    magnitude,
                }),
        );
    }
    let mut run_start = None;
    for t in 1..=c + 1 {
        let flat = t <= c && growth.new_nodes_at(t) == 0;
        match (flat, run_start) {
            (true, None) => run_start = Some(t),
            (false, Some(s)) => {
                let len = t - s;
                if len >= window {
                    out.push(StageAnnotation {
                        kind: StageKind::Plateau,
                        start: s,
                        end: t - 1,
                        magnitude: len as f64,
                    });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    out
}
