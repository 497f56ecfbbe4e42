mod common;

use std::collections::BTreeSet;

use axregion::abstraction::Backend;
use axregion::axtree::trace::parse_trace;
use axregion::decomposer::{partition_from_labels, partition_from_roots, EdgeLabel, EdgeLabelSet};
use axregion::digest::{replay, replay_with, KeywordSelector, Pipeline};
use axregion::metrics::{
    change_histogram, change_ratio, edge_confusion, edge_f1, lca_depth_ratio, median, ratio_histogram, region_prf,
    token_count, ApproxCounter, MetricsError, TokenCounter,
};
use axregion::{parse_axtree, AXNode, AXTree};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_labels(tree: &AXTree, rng: &mut ChaCha8Rng, p_cut: f64) -> EdgeLabelSet {
    let index = tree.index();
    EdgeLabelSet::from_fn(&index, |_, _| if rng.random_bool(p_cut) { EdgeLabel::Cut } else { EdgeLabel::Merge })
}

/// Ten edges under one parent, cut where `cuts[i]`.
fn star_labels(cuts: &[usize]) -> EdgeLabelSet {
    let mut s = EdgeLabelSet::new();
    for i in 0..10 {
        s.insert("root", &format!("c{i}"), if cuts.contains(&i) { EdgeLabel::Cut } else { EdgeLabel::Merge });
    }
    s
}

#[test]
fn edge_f1_examples() {
    let truth = star_labels(&[1, 2, 3]);
    assert_eq!(edge_f1(&truth, &truth).unwrap(), (1.0, 1.0, 1.0));
    assert_eq!(edge_f1(&star_labels(&[]), &truth).unwrap(), (0.0, 0.0, 0.0));
    assert_eq!(edge_f1(&star_labels(&[]), &star_labels(&[])).unwrap(), (1.0, 1.0, 1.0));

    // 2 TP (1, 2), 1 FP (7), 1 FN (3)
    let (p, r, f) = edge_f1(&star_labels(&[1, 2, 7]), &truth).unwrap();
    for v in [p, r, f] {
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }
    let c = edge_confusion(&star_labels(&[1, 2, 7]), &truth).unwrap();
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 6));

    let mut other = EdgeLabelSet::new();
    other.insert("x", "y", EdgeLabel::Cut);
    assert_eq!(edge_f1(&other, &truth), Err(MetricsError::DomainMismatch));
    let mut shifted = star_labels(&[]);
    shifted.labels.remove(&("root".to_string(), "c0".to_string()));
    shifted.insert("root", "c99", EdgeLabel::Merge);
    assert_eq!(edge_f1(&shifted, &truth), Err(MetricsError::DomainMismatch));
}

#[test]
fn region_prf_examples() {
    let t = parse_axtree("[a] main\n\t[b] link 'x'\n\t[c] link 'y'\n\t[d] button 'z'\n", "u").unwrap();
    let same = partition_from_roots(&t, &["a", "d"]).unwrap();
    let r = region_prf(&same, &same, 0.5).unwrap();
    assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

    // gt {a,b} {c} {d} vs pred {a,b,c} {d}
    let gt = partition_from_roots(&t, &["a", "c", "d"]).unwrap();
    let pred = partition_from_roots(&t, &["a", "d"]).unwrap();
    let r = region_prf(&pred, &gt, 0.5).unwrap();
    let ab = r.matched.iter().find(|m| m.0 == 0).expect("{a,b} matched");
    assert!((ab.2 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.counts.matched, 2);
    assert_eq!((r.precision, r.recall), (1.0, 2.0 / 3.0));
    assert_eq!(region_prf(&pred, &gt, 0.7).unwrap().counts.matched, 1);

    let other = parse_axtree("[a] main\n\t[b] link 'x'\n", "u").unwrap();
    let p2 = partition_from_roots(&other, &["a"]).unwrap();
    assert_eq!(region_prf(&p2, &gt, 0.5), Err(MetricsError::NodeSetMismatch));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn region_prf_is_symmetric_in_f1(seed in any::<u64>(), n in 1usize..=15, thr in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, n, "prop://m");
        let a = partition_from_labels(&tree, &random_labels(&tree, &mut rng, 0.4)).unwrap();
        let b = partition_from_labels(&tree, &random_labels(&tree, &mut rng, 0.4)).unwrap();
        let ab = region_prf(&a, &b, thr).unwrap();
        let ba = region_prf(&b, &a, thr).unwrap();
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
        prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);

        let mut seen_t = BTreeSet::new();
        let mut seen_p = BTreeSet::new();
        for (t, p, iou) in &ab.matched {
            prop_assert!(seen_t.insert(*t) && seen_p.insert(*p));
            prop_assert!(*iou >= thr);
        }
        let ident = region_prf(&a, &a, thr).unwrap();
        prop_assert_eq!((ident.precision, ident.recall, ident.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn edge_f1_survives_partition_round_trip(seed in any::<u64>(), n in 2usize..=15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, n, "prop://m");
        let pred = random_labels(&tree, &mut rng, 0.3);
        let truth = random_labels(&tree, &mut rng, 0.3);
        let via = |l: &EdgeLabelSet| partition_from_labels(&tree, l).unwrap().edge_labels(&tree);
        prop_assert_eq!(edge_f1(&via(&pred), &via(&truth)).unwrap(), edge_f1(&pred, &truth).unwrap());
    }

    #[test]
    fn lca_ratio_bounds(seed in any::<u64>(), n in 1usize..=25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, n, "prop://m");
        let index = tree.index();
        let max = index.max_depth();
        for a in 0..n {
            for b in 0..n {
                let r = lca_depth_ratio(&tree, &index.node(a).id, &index.node(b).id).unwrap();
                prop_assert!((0.0..=1.0).contains(&r));
                let deepest_same = a == b && max > 0 && index.depth(a) == max;
                prop_assert_eq!(r == 1.0, deepest_same);
            }
        }
    }

    #[test]
    fn change_ratio_ignores_sibling_order(seed in any::<u64>(), n in 1usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, n, "prop://m");
        fn flip(n: &AXNode) -> AXNode {
            let mut m = n.clone();
            m.children = n.children.iter().rev().map(flip).collect();
            m
        }
        let flipped = AXTree::new(flip(tree.root()), "prop://m").unwrap();
        prop_assert_eq!(change_ratio(&tree, &tree).unwrap(), 0.0);
        prop_assert_eq!(change_ratio(&tree, &flipped).unwrap(), 0.0);
    }
}

#[test]
fn lca_examples() {
    let t = parse_axtree("[r] main\n\t[a] link 'x'\n\t[b] link 'y'\n", "u").unwrap();
    assert_eq!(lca_depth_ratio(&t, "a", "b").unwrap(), 0.0);
    assert_eq!(lca_depth_ratio(&t, "a", "a").unwrap(), 1.0);
    assert_eq!(lca_depth_ratio(&t, "r", "r").unwrap(), 0.0);

    let path = parse_axtree("[0] main\n\t[1] group\n\t\t[2] group\n\t\t\t[3] group\n\t\t\t\t[4] link 'x'\n", "u").unwrap();
    assert_eq!(lca_depth_ratio(&path, "3", "4").unwrap(), 0.75);
    assert_eq!(lca_depth_ratio(&path, "2", "2").unwrap(), 0.5);
    assert_eq!(lca_depth_ratio(&path, "9", "2"), Err(MetricsError::UnknownId("9".into())));

    let single = parse_axtree("[x] main\n", "u").unwrap();
    assert_eq!(lca_depth_ratio(&single, "x", "x").unwrap(), 0.0);
}

#[test]
fn change_ratio_examples() {
    let lines = |ids: std::ops::Range<usize>| -> String {
        let mut s = "[n0] main\n".to_string();
        for i in ids {
            s.push_str(&format!("\t[n{i}] link 'l{i}'\n"));
        }
        s
    };
    let before = parse_axtree(&lines(1..10), "u").unwrap();
    let after = parse_axtree(&lines(1..11), "u").unwrap();
    assert_eq!(before.node_count(), 10);
    assert!((change_ratio(&before, &after).unwrap() - 0.1).abs() < 1e-12);

    let disjoint = parse_axtree(&lines(1..10).replace("[n", "[m"), "u").unwrap();
    assert_eq!(change_ratio(&before, &disjoint).unwrap(), 2.0);

    // content edits on surviving ids do not count
    let renamed = parse_axtree(&lines(1..10).replace("'l3'", "'changed'"), "u").unwrap();
    assert_eq!(change_ratio(&before, &renamed).unwrap(), 0.0);
}

#[test]
fn histograms_and_median() {
    let h = change_histogram(&[0.0, 0.0, 0.01, 0.05, 0.2, 0.49, 0.5, 0.9, 2.0]);
    assert_eq!(h.counts, vec![2, 1, 1, 1, 1, 1, 2]);
    assert_eq!(h.total(), 9);
    assert!((h.fraction(0) - 2.0 / 9.0).abs() < 1e-12);
    assert_eq!(change_histogram(&[]).fraction(0), 0.0);

    let h = ratio_histogram(&[0.0, 0.05, 0.1, 0.99, 1.0]);
    assert_eq!(h.counts, vec![2, 1, 0, 0, 0, 0, 0, 0, 0, 2]);
    assert_eq!(h.labels[9], "[0.9,1.0]");

    assert_eq!(median(&[]), None);
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
}

#[test]
fn default_counter_formula() {
    assert_eq!(token_count(""), 0);
    assert_eq!(token_count("aaaa"), 1);
    // 11 bytes -> 3, 2 words -> ceil(5 / 2)
    assert_eq!(token_count("hello world"), 3);
    for s in ["[1] link 'Home'", "\t\t[42] button 'Add to Cart'", "x"] {
        let expect = (s.len().div_ceil(4) + s.split_whitespace().count()).div_ceil(2);
        assert_eq!(ApproxCounter.count(s), expect);
    }
}

fn corpus() -> Vec<String> {
    let tree = page("shopping_home");
    let mut out: Vec<String> = axregion::serialize_axtree(&tree).lines().take(17).map(String::from).collect();
    out.push(String::new());
    out.push("Add gingerbread kit to cart".into());
    out.push("Ünïcödé  and\ttabs\n".into());
    assert_eq!(out.len(), 20);
    out
}

#[test]
fn external_tokenizer_plugs_in() {
    let bpe = tiktoken_rs::o200k_base().unwrap();
    let exact = |s: &str| bpe.encode_ordinary(s).len();
    for s in corpus() {
        assert_eq!((&exact as &dyn TokenCounter).count(&s), bpe.encode_ordinary(&s).len());
    }

    let text = std::fs::read_to_string(fixtures().join("traces/five_pages.jsonl")).unwrap();
    let trace = parse_trace(&text).unwrap();
    let rule = landmark_rule();
    let selector = KeywordSelector { top_k: Some(5) };
    let pipeline = Pipeline::new(&rule, rule.tau(), Backend::Heuristic, &selector);
    let run = replay_with(&trace, &pipeline, &exact).unwrap();
    for (row, digest) in run.report.steps.iter().zip(&run.digests) {
        assert_eq!(row.digest_tokens, bpe.encode_ordinary(digest).len());
    }
    let approx = replay(&trace, &pipeline).unwrap();
    assert_eq!(approx.digests, run.digests);
    for (row, digest) in approx.report.steps.iter().zip(&approx.digests) {
        assert_eq!(row.digest_tokens, token_count(digest));
    }
}
