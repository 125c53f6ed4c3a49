//! GEXF and DOT writers for character networks and topic-transfer diagrams.

use std::fmt::Write as _;

use crate::network::{CharacterNetwork, CommunityPartition};
use crate::sentiment::EdgeSign;
use crate::topics::{TopicKeywords, TransferEdge, EXOGENOUS};

/// Optional per-node and per-edge annotations.
#[derive(Debug, Clone, Default)]
pub struct GraphDecorations<'a> {
    pub partition: Option<&'a CommunityPartition>,
    /// Indexed like `network.edges`.
    pub cosentiment: Option<&'a [f64]>,
    /// Indexed like `network.edges`; overrides the sign derived from `cosentiment`.
    pub signs: Option<&'a [EdgeSign]>,
    pub appearance: Option<&'a [usize]>,
}

impl GraphDecorations<'_> {
    fn sign(&self, i: usize) -> Option<EdgeSign> {
        self.signs
            .map(|s| s[i])
            .or_else(|| self.cosentiment.map(|c| EdgeSign::of(c[i])))
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn sign_name(s: EdgeSign) -> &'static str {
    match s {
        EdgeSign::Positive => "positive",
        EdgeSign::Negative => "negative",
        EdgeSign::Neutral => "neutral",
    }
}

pub fn to_gexf(network: &CharacterNetwork, deco: &GraphDecorations) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<gexf xmlns=\"http://gexf.net/1.3\" version=\"1.3\">\n");
    out.push_str("  <graph mode=\"static\" defaultedgetype=\"undirected\">\n");
    out.push_str("    <attributes class=\"node\">\n");
    out.push_str("      <attribute id=\"community\" title=\"community\" type=\"string\"/>\n");
    out.push_str("      <attribute id=\"appearance\" title=\"appearance\" type=\"integer\"/>\n");
    out.push_str("    </attributes>\n");
    out.push_str("    <attributes class=\"edge\">\n");
    out.push_str("      <attribute id=\"cosentiment\" title=\"cosentiment\" type=\"double\"/>\n");
    out.push_str("      <attribute id=\"sign\" title=\"sign\" type=\"string\"/>\n");
    out.push_str("    </attributes>\n");
    out.push_str("    <nodes>\n");
    for (i, name) in network.nodes.iter().enumerate() {
        let _ = write!(out, "      <node id=\"{i}\" label=\"{}\">", xml_escape(name));
        let mut values = String::new();
        if let Some(c) = deco.partition.and_then(|p| p.community_of(name).map(|c| &p.labels[c])) {
            let _ = write!(values, "<attvalue for=\"community\" value=\"{c}\"/>");
        }
        if let Some(a) = deco.appearance.map(|a| a[i]) {
            let _ = write!(values, "<attvalue for=\"appearance\" value=\"{a}\"/>");
        }
        if !values.is_empty() {
            let _ = write!(out, "<attvalues>{values}</attvalues>");
        }
        out.push_str("</node>\n");
    }
    out.push_str("    </nodes>\n");
    out.push_str("    <edges>\n");
    for (i, e) in network.edges.iter().enumerate() {
        let _ = write!(
            out,
            "      <edge id=\"{i}\" source=\"{}\" target=\"{}\" weight=\"{}\">",
            e.source, e.target, e.weight
        );
        let mut values = String::new();
        if let Some(c) = deco.cosentiment.map(|c| c[i]) {
            let _ = write!(values, "<attvalue for=\"cosentiment\" value=\"{c:.6}\"/>");
        }
        if let Some(s) = deco.sign(i) {
            let _ = write!(values, "<attvalue for=\"sign\" value=\"{}\"/>", sign_name(s));
        }
        if !values.is_empty() {
            let _ = write!(out, "<attvalues>{values}</attvalues>");
        }
        out.push_str("</edge>\n");
    }
    out.push_str("    </edges>\n  </graph>\n</gexf>\n");
    out
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn to_dot(network: &CharacterNetwork, deco: &GraphDecorations) -> String {
    let mut out = String::from("graph characters {\n");
    for name in &network.nodes {
        let _ = write!(out, "  {}", dot_id(name));
        if let Some(c) = deco.partition.and_then(|p| p.community_of(name).map(|c| &p.labels[c])) {
            let _ = write!(out, " [community={}]", dot_id(c));
        }
        out.push_str(";\n");
    }
    for (i, e) in network.edges.iter().enumerate() {
        let (a, b) = network.edge_names(e);
        let _ = write!(out, "  {} -- {} [weight={}", dot_id(a), dot_id(b), e.weight);
        if let Some(s) = deco.sign(i) {
            let color = match s {
                EdgeSign::Positive => "blue",
                EdgeSign::Negative => "red",
                EdgeSign::Neutral => "gray",
            };
            let _ = write!(out, ", sign={}, color={color}", sign_name(s));
        }
        out.push_str("];\n");
    }
    out.push_str("}\n");
    out
}

/// Directed topic-flow diagram: one edge per transfer, labelled with the
/// topic's strongest keyword and the phase.
pub fn transfer_dot(edges: &[TransferEdge], topics: &[TopicKeywords]) -> String {
    let mut out = String::from("digraph transfers {\n  rankdir=LR;\n");
    let _ = writeln!(out, "  {} [shape=point];", dot_id(EXOGENOUS));
    for e in edges {
        let keyword = topics
            .iter()
            .find(|t| t.topic == e.topic)
            .and_then(|t| t.strongest())
            .unwrap_or("");
        let label = format!("T{} {} ({})", e.topic + 1, keyword, e.phase);
        let _ = writeln!(
            out,
            "  {} -> {} [label={}];",
            dot_id(&e.source),
            dot_id(&e.target),
            dot_id(&label)
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Timeline;
    use crate::network::{build_network, detect_communities};

    #[test]
    fn gexf_contains_weights_and_signs() {
        let t = vec![Timeline::new("A&B", vec![1, 2]), Timeline::new("C", vec![1, 2])];
        let net = build_network(&t);
        let p = detect_communities(&net);
        let cos = [-0.1];
        let g = to_gexf(
            &net,
            &GraphDecorations {
                partition: Some(&p),
                cosentiment: Some(&cos),
                ..Default::default()
            },
        );
        assert!(g.contains("label=\"A&amp;B\""));
        assert!(g.contains("weight=\"2\""));
        assert!(g.contains("value=\"negative\""));
        assert!(g.contains("value=\"I\""));
        let d = to_dot(&net, &GraphDecorations { cosentiment: Some(&cos), ..Default::default() });
        assert!(d.contains("\"A&B\" -- \"C\" [weight=2, sign=negative, color=red]"));
    }

    #[test]
    fn transfer_diagram() {
        let edges = vec![TransferEdge {
            topic: 1,
            source: "Marius".into(),
            target: "Valjean".into(),
            phase: "II".into(),
        }];
        let topics = vec![TopicKeywords {
            topic: 1,
            keywords: vec![("marius".into(), 1.0)],
        }];
        let d = transfer_dot(&edges, &topics);
        assert!(d.contains("\"Marius\" -> \"Valjean\" [label=\"T2 marius (II)\"]"));
    }
}
