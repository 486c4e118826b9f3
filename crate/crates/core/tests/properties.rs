use proptest::prelude::*;

use seqgraph::corpus::{generate_synthetic, SyntheticConfig};
use seqgraph::graphbuild::{build_local_graph, normalize_title, NodeKind};
use seqgraph::seqcodec::{linearize_path, parse_path, Hop, PathVariant, ReasoningPath};

fn field() -> impl Strategy<Value = String> {
    prop::collection::vec("[A-Za-z0-9'(),.?#-]{1,8}|café|Zoë", 1..4).prop_map(|w| w.join(" "))
}

fn variant() -> impl Strategy<Value = PathVariant> {
    prop::sample::select(PathVariant::ALL.to_vec())
}

fn hop(v: PathVariant) -> impl Strategy<Value = Hop> {
    (
        field(),
        prop::sample::subsequence((1..=16usize).collect::<Vec<_>>(), 0..4).prop_shuffle(),
        field(),
        prop::option::of(field()),
    )
        .prop_map(move |(title, facts, question, answer)| Hop {
            title: (v != PathVariant::Da).then_some(title),
            facts: if v == PathVariant::Hotpot { facts } else { Vec::new() },
            sub_question: matches!(v, PathVariant::Da | PathVariant::Dsia).then_some(question),
            intermediate_answer: answer.filter(|_| matches!(v, PathVariant::Sia | PathVariant::Dsia)),
        })
}

fn path() -> impl Strategy<Value = ReasoningPath> {
    variant().prop_flat_map(|v| {
        (prop::collection::vec(hop(v), 1..=4), field()).prop_map(move |(hops, final_answer)| ReasoningPath {
            variant: v,
            hops,
            final_answer,
        })
    })
}

proptest! {
    #[test]
    fn linearized_paths_parse_back(p in path()) {
        let text = linearize_path(&p, 16, 4).unwrap();
        let parsed = parse_path(&text, p.variant);
        prop_assert!(parsed.diagnostics.is_empty(), "{:?}", parsed.diagnostics);
        prop_assert_eq!(parsed.path, p);
    }

    #[test]
    fn parsing_arbitrary_text_never_panics(text in "(\\[(answer|title-[0-9]|facts-[0-9]|f[0-9]{1,2})\\]|[a-z ]{0,6}){0,12}", v in variant()) {
        let _ = parse_path(&text, v);
    }

    #[test]
    fn title_normalisation_is_idempotent(s in "\\PC{0,24}") {
        let once = normalize_title(&s);
        prop_assert_eq!(normalize_title(&once), once);
    }

    #[test]
    fn graph_edges_join_mentions_to_matching_titles(seed in 0u64..10_000, passages in 3usize..8) {
        let inst = generate_synthetic(&SyntheticConfig {
            instances: 1,
            passages,
            hop_counts: vec![2, 3],
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap()
        .remove(0);
        let g = build_local_graph(&inst);
        prop_assert!(g.edges.windows(2).all(|w| w[0] < w[1]));
        for &(s, d) in &g.edges {
            prop_assert_eq!(g.nodes[s].kind, NodeKind::EntitySpan);
            prop_assert_eq!(g.nodes[d].kind, NodeKind::PassageTitle);
            prop_assert_eq!(&g.nodes[s].label, &g.nodes[d].label);
        }
    }
}
