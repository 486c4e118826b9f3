//! Local entity-passage graph of one question: a title node per passage, a
//! node per annotated entity occurrence, and entity -> title edges wherever
//! the mention's target matches a passage title.

use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::QuestionInstance;

/// Case-folds, collapses internal whitespace and trims.
pub fn normalize_title(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    EntitySpan,
    PassageTitle,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum NodeLocation {
    /// The passage title; its token range is fixed when the sequence is
    /// assembled.
    Title,
    /// `span` indexes the passage's `entity_spans`.
    Entity {
        span: usize,
        sentence: usize,
        start: usize,
        end: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub passage_idx: usize,
    pub location: NodeLocation,
    pub label: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LocalGraph {
    pub nodes: Vec<GraphNode>,
    /// `(entity node, title node)` pairs, sorted and unique.
    pub edges: Vec<(usize, usize)>,
}

impl LocalGraph {
    pub fn title_node(&self, passage: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.kind == NodeKind::PassageTitle && n.passage_idx == passage)
    }

    /// Node indices belonging to one passage, in graph order.
    pub fn nodes_of(&self, passage: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.passage_idx == passage)
            .map(|(i, _)| i)
    }

    /// One line per edge: `<entity label>@p<i> -> <title>@p<j>`.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for &(s, d) in &self.edges {
            let (a, b) = (&self.nodes[s], &self.nodes[d]);
            let _ = writeln!(
                out,
                "{}@p{} -> {}@p{}",
                a.label, a.passage_idx, b.label, b.passage_idx
            );
        }
        out
    }
}

/// Builds the graph. Per passage the title node comes first, then entity
/// nodes ordered by (sentence, start, end); ties keep annotation order.
pub fn build_local_graph(inst: &QuestionInstance) -> LocalGraph {
    let mut nodes = Vec::new();
    for (pi, p) in inst.passages.iter().enumerate() {
        nodes.push(GraphNode {
            kind: NodeKind::PassageTitle,
            passage_idx: pi,
            location: NodeLocation::Title,
            label: normalize_title(&p.title),
        });
        let mut order: Vec<usize> = (0..p.entity_spans.len()).collect();
        order.sort_by_key(|&k| {
            let s = &p.entity_spans[k];
            (s.sentence, s.start, s.end)
        });
        for k in order {
            let s = &p.entity_spans[k];
            let label = p
                .span_text(s)
                .map(|t| normalize_title(&t))
                .unwrap_or_default();
            nodes.push(GraphNode {
                kind: NodeKind::EntitySpan,
                passage_idx: pi,
                location: NodeLocation::Entity {
                    span: k,
                    sentence: s.sentence,
                    start: s.start,
                    end: s.end,
                },
                label,
            });
        }
    }
    let titles: Vec<(usize, String)> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == NodeKind::PassageTitle)
        .map(|(i, n)| (i, n.label.clone()))
        .collect();
    let mut edges = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        if let NodeLocation::Entity { span, .. } = n.location {
            let target = normalize_title(&inst.passages[n.passage_idx].entity_spans[span].target_title);
            for (t, label) in &titles {
                if *label == target {
                    edges.push((i, *t));
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    LocalGraph { nodes, edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntitySpan, Passage, SupportRef};
    use std::collections::BTreeSet;

    fn span(sentence: usize, start: usize, end: usize, target: &str) -> EntitySpan {
        EntitySpan {
            sentence,
            start,
            end,
            target_title: target.into(),
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_title("  David  Walsh Noughton "), "david walsh noughton");
        assert_eq!(normalize_title(""), "");
        assert_eq!(normalize_title("\tA\nB "), "a b");
    }

    #[test]
    fn mention_links_to_its_target_page() {
        let mut a = Passage::new(
            "An American Werewolf in London",
            vec!["It stars David Noughton.".into()],
        );
        a.entity_spans.push(span(0, 9, 23, "David Walsh Noughton"));
        let b = Passage::new("David Walsh Noughton", vec!["He is an actor.".into()]);
        let inst = QuestionInstance::new(
            "x",
            "?",
            "actor",
            vec![a, b],
            vec![
                SupportRef { title: "An American Werewolf in London".into(), fact: Some(1) },
                SupportRef { title: "David Walsh Noughton".into(), fact: Some(1) },
            ],
        );
        let g = build_local_graph(&inst);
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.edges, vec![(1, 2)]);
        assert_eq!(g.nodes[1].label, "david noughton");
        assert_eq!(
            g.edge_list(),
            "david noughton@p0 -> david walsh noughton@p1\n"
        );
    }

    #[test]
    fn no_spans_means_no_edges() {
        let inst = QuestionInstance::new(
            "x",
            "?",
            "a",
            vec![
                Passage::new("A", vec!["a.".into()]),
                Passage::new("B", vec!["b.".into()]),
            ],
            vec![],
        );
        let g = build_local_graph(&inst);
        assert_eq!(g.nodes.len(), 2);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn duplicate_titles_get_distinct_links() {
        let mut p0 = Passage::new("Dup", vec!["x Dup y Other z.".into(), "Dup again.".into()]);
        p0.entity_spans.push(span(0, 2, 5, "dup"));
        p0.entity_spans.push(span(0, 8, 13, "Other"));
        p0.entity_spans.push(span(1, 0, 3, "Missing"));
        let mut p1 = Passage::new(" dup ", vec!["Other here.".into()]);
        p1.entity_spans.push(span(0, 0, 5, "OTHER"));
        let p2 = Passage::new("Other", vec!["o.".into()]);
        let inst = QuestionInstance::new("x", "?", "a", vec![p0, p1, p2], vec![]);
        let g = build_local_graph(&inst);
        // brute-force oracle over (span, passage) pairs
        let mut expect = BTreeSet::new();
        for (si, s) in g.nodes.iter().enumerate() {
            let NodeLocation::Entity { span, .. } = s.location else { continue };
            let target = &inst.passages[s.passage_idx].entity_spans[span].target_title;
            for (pj, p) in inst.passages.iter().enumerate() {
                if normalize_title(&p.title) == normalize_title(target) {
                    expect.insert((si, g.title_node(pj).unwrap()));
                }
            }
        }
        let got: BTreeSet<_> = g.edges.iter().copied().collect();
        assert_eq!(got, expect);
        assert_eq!(g.nodes.len(), 3 + 4);
        // self link kept: span "Dup" in passage titled "Dup"
        assert!(g.edges.contains(&(1, 0)));
        assert!(g.edges.contains(&(1, 4)));
    }
}
