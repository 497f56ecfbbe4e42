mod common;

use std::collections::{BTreeSet, HashMap};

use axregion::abstraction::{
    abstract_partition, abstract_region, region_subtree, Backend, BackendKind, LmError,
};
use axregion::axtree::trace::parse_trace;
use axregion::digest::{
    open_session, replay, FixedSelector, KeywordSelector, LmSelector, Pipeline, PageSession, StepOutcome,
};
use axregion::metrics::token_count;
use axregion::{decompose, parse_axtree, preprocess, serialize_axtree, AXTree};
use common::*;

fn shopping(selected: &[usize]) -> PageSession {
    let tree = page("shopping_home");
    let sel = FixedSelector(selected.iter().copied().collect());
    let rule = landmark_rule();
    open_session(&tree, "browse", &[], &rule, rule.tau(), &Backend::Heuristic, &sel).unwrap()
}

fn block_bodies(digest: &str) -> Vec<usize> {
    // child line count per region block
    let mut out = Vec::new();
    let mut current: Option<usize> = None;
    for line in digest.lines() {
        if line.starts_with("<R") {
            if let Some(c) = current.take() {
                out.push(c);
            }
            current = Some(0);
        } else if line.starts_with("</R") || line.starts_with("<added") {
            if let Some(c) = current.take() {
                out.push(c);
            }
        } else if let Some(c) = current.as_mut() {
            *c += 1;
        }
    }
    if let Some(c) = current {
        out.push(c);
    }
    out
}

#[test]
fn two_selected_regions_of_twenty_three() {
    let s = shopping(&[3, 9]);
    assert_eq!(s.partition().len(), 23);
    let d = s.render_digest();
    let bodies = block_bodies(&d);
    assert_eq!(bodies.len(), 23);
    assert_eq!(bodies.iter().filter(|&&c| c > 0).count(), 2);
    assert_eq!(d.matches("</R").count(), 2);
    assert!(token_count(&d) < token_count(&serialize_axtree(s.current_tree())));
    assert!(!d.contains("<added_elements>"));
}

#[test]
fn full_selection_is_the_tree_plus_tags() {
    let s = shopping(&(0..23).collect::<Vec<_>>());
    let d = s.render_digest();
    for n in s.current_tree().nodes() {
        assert_eq!(d.matches(&format!("[{}] ", n.id)).count(), 1, "{}", n.id);
    }
    let mut body: Vec<&str> = d.lines().filter(|l| !l.starts_with('<')).map(str::trim_start).collect();
    let full = serialize_axtree(s.current_tree());
    let mut lines: Vec<&str> = full.lines().map(str::trim_start).collect();
    body.sort_unstable();
    lines.sort_unstable();
    assert_eq!(body, lines);

    let mut v = shopping(&[0]);
    v.view_all();
    assert_eq!(v.render_digest(), d);
}

#[test]
fn one_region_page_is_always_selected() {
    let tree = page("edge_single_node");
    let rule = landmark_rule();
    for sel in [&KeywordSelector::default() as &dyn axregion::digest::Selector, &FixedSelector(BTreeSet::new())] {
        let s = open_session(&tree, "nothing in common", &[], &rule, 0.5, &Backend::Heuristic, sel).unwrap();
        assert_eq!(s.selected(), &BTreeSet::from([0]));
    }
}

#[test]
fn keyword_selector_finds_the_gingerbread_card() {
    let tree = page("shopping_home");
    let rule = landmark_rule();
    let s = open_session(&tree, "add gingerbread kit to cart", &[], &rule, rule.tau(), &Backend::Heuristic, &KeywordSelector::default())
        .unwrap();
    let r = s.partition().region_of("36").unwrap().region_id;
    assert!(s.selected().contains(&r), "selected {:?}", s.selected());
    let a = &s.abstractions()[r];
    assert!(format!("{} {}", a.purpose, a.state_summary).to_lowercase().contains("gingerbread"));
}

#[test]
fn lm_selector_reply_is_honoured() {
    let tree = page("shopping_home");
    let rule = landmark_rule();
    let reply = |_: &str| -> Result<String, LmError> { Ok("R3, R7".into()) };
    let sel = LmSelector { client: &reply, max_retries: 0 };
    let s = open_session(&tree, "t", &[], &rule, rule.tau(), &Backend::Heuristic, &sel).unwrap();
    assert_eq!(s.selected(), &BTreeSet::from([3, 7]));
    assert!(s.selection_fallback().is_none());
    assert!(s.selection_prompt().contains("R22"));
}

#[test]
fn lm_failures_fall_back_safely() {
    let tree = page("shopping_home");
    let rule = landmark_rule();
    let down = |_: &str| -> Result<String, LmError> { Err(LmError::Unavailable("connection refused".into())) };
    let sel = LmSelector { client: &down, max_retries: 1 };
    let s = open_session(&tree, "t", &[], &rule, rule.tau(), &Backend::lm(&down), &sel).unwrap();
    assert_eq!(s.selected().len(), 23);
    assert!(s.selection_fallback().is_some());
    assert!(s.abstractions().iter().all(|a| a.backend == BackendKind::Heuristic && a.fallback.is_some()));

    let garbled = |_: &str| -> Result<String, LmError> { Ok("I think maybe the cart?".into()) };
    let sel = LmSelector { client: &garbled, max_retries: 0 };
    let s = open_session(&tree, "t", &[], &rule, rule.tau(), &Backend::Heuristic, &sel).unwrap();
    assert_eq!(s.selected().len(), 23);
}

#[test]
fn one_failed_region_in_a_batch() {
    let tree = page("shopping_home");
    let rule = landmark_rule();
    let partition = decompose(&tree, &rule, rule.tau()).unwrap();
    let victim = partition.regions[5].root_id.clone();
    let needle = format!("[{victim}] ");
    let flaky = move |prompt: &str| -> Result<String, LmError> {
        if prompt.contains(&needle) {
            Err(LmError::Timeout)
        } else {
            Ok("```json\n{\"purpose\": \"p\", \"state_summary\": \"s\"}\n```".into())
        }
    };
    let out = abstract_partition(&partition, &tree, &Backend::lm(&flaky));
    assert_eq!(out.len(), 23);
    let kinds: Vec<BackendKind> = out.iter().map(|a| a.backend).collect();
    assert_eq!(kinds.iter().filter(|&&k| k == BackendKind::Lm).count(), 22);
    assert_eq!(kinds[5], BackendKind::Heuristic);
    assert!(out.iter().enumerate().all(|(i, a)| a.region_id == i));
}

#[test]
fn heuristic_abstractions() {
    let nav = parse_axtree(
        "[n] navigation\n\t[a] link 'Home'\n\t[b] link 'Deals'\n\t[c] link 'Help'\n\t[d] link 'Account'\n",
        "u",
    )
    .unwrap();
    assert_eq!(abstract_region(&nav, &Backend::Heuristic).purpose, "site navigation links");

    let search = parse_axtree("[s] search\n\t[q] combobox 'Search'\n\t[b] button 'Search'\n", "u").unwrap();
    let a = abstract_region(&search, &Backend::Heuristic);
    assert!(a.purpose.to_lowercase().contains("search"));
    assert!(a.state_summary.to_lowercase().contains("combobox"));

    let wrapper = parse_axtree("[g] generic\n\t[h] none\n", "u").unwrap();
    assert_eq!(abstract_region(&wrapper, &Backend::Heuristic).purpose, "structural wrapper");

    let unreachable = |_: &str| -> Result<String, LmError> { Err(LmError::Unavailable("down".into())) };
    let a = abstract_region(&search, &Backend::lm(&unreachable));
    assert_eq!(a.backend, BackendKind::Heuristic);
    assert_eq!(a.purpose, abstract_region(&search, &Backend::Heuristic).purpose);
}

#[test]
fn abstraction_is_pure() {
    for tree in fixture_trees().into_iter().take(17) {
        let tree = preprocess(&tree);
        let rule = landmark_rule();
        let partition = decompose(&tree, &rule, rule.tau()).unwrap();
        let (t0, p0) = (serialize_axtree(&tree), partition.clone());
        let a = abstract_partition(&partition, &tree, &Backend::Heuristic);
        let b = abstract_partition(&partition, &tree, &Backend::Heuristic);
        assert_eq!(a, b);
        assert_eq!(a.len(), partition.len());
        assert_eq!((serialize_axtree(&tree), &partition), (t0, &p0));
        for r in &p0.regions {
            let sub = region_subtree(&tree, r);
            assert_eq!(sub.node_count(), r.members.len());
        }
    }
}

fn trace_steps(name: &str) -> Vec<(String, AXTree)> {
    let text = std::fs::read_to_string(fixtures().join("traces").join(name)).unwrap();
    parse_trace(&text)
        .unwrap()
        .steps
        .into_iter()
        .map(|s| (s.url.clone(), preprocess(&s.tree)))
        .collect()
}

/// Region members at entry, keyed by id.
fn membership(s: &PageSession) -> HashMap<String, usize> {
    s.partition()
        .regions
        .iter()
        .flat_map(|r| r.members.iter().map(move |m| (m.clone(), r.region_id)))
        .collect()
}

#[test]
fn node_coverage_and_stable_membership_across_steps() {
    let steps = trace_steps("same_page_10.jsonl");
    let rule = landmark_rule();
    let sel = KeywordSelector { top_k: Some(3) };
    let pipeline = Pipeline::new(&rule, rule.tau(), Backend::Heuristic, &sel);
    let mut s = pipeline.open(&steps[0].1, "buy tea", &[]).unwrap();
    let entry = membership(&s);
    let entry_text = serialize_axtree(s.entry_tree());
    for (url, tree) in &steps[1..] {
        let outcome = s.step(tree.clone(), url);
        let StepOutcome::SamePage(delta) = outcome else { panic!("same url") };
        let added: BTreeSet<&str> = delta.added.iter().flat_map(|g| g.ids()).collect();
        for n in s.current_tree().nodes() {
            let in_region = (0..s.partition().len()).filter(|&r| s.surviving_members(r).any(|m| m == n.id)).count();
            let in_added = usize::from(added.contains(n.id.as_str()));
            assert_eq!(in_region + in_added, 1, "{}", n.id);
            if in_region == 1 {
                assert!(entry.contains_key(&n.id));
            }
        }
        for id in added {
            assert!(!entry.contains_key(id) || delta.collisions.contains(id));
        }
        assert_eq!(membership(&s), entry);
        assert_eq!(serialize_axtree(s.entry_tree()), entry_text);
    }
    assert_eq!(pipeline.decompose_calls(), 1);
}

#[test]
fn view_all_lasts_for_the_page_only() {
    let steps = trace_steps("five_pages.jsonl");
    let rule = landmark_rule();
    let sel = FixedSelector(BTreeSet::from([0]));
    let pipeline = Pipeline::new(&rule, rule.tau(), Backend::Heuristic, &sel);
    let mut s = pipeline.open(&steps[0].1, "t", &[]).unwrap();
    s.view_all();
    let mut i = 1;
    while i < steps.len() && steps[i].0 == steps[0].0 {
        assert!(matches!(s.step(steps[i].1.clone(), &steps[i].0), StepOutcome::SamePage(_)));
        assert!(s.view_all_active());
        i += 1;
    }
    assert!(i < steps.len());
    let entry_before = serialize_axtree(s.entry_tree());
    assert_eq!(s.step(steps[i].1.clone(), &steps[i].0), StepOutcome::NewPage);
    assert_eq!(serialize_axtree(s.entry_tree()), entry_before);
    let fresh = pipeline.open(&steps[i].1, "t", &[]).unwrap();
    assert!(!fresh.view_all_active());
}

#[test]
fn replay_is_deterministic_and_counts_pages() {
    let text = std::fs::read_to_string(fixtures().join("traces/five_pages.jsonl")).unwrap();
    let trace = parse_trace(&text).unwrap();
    let rule = landmark_rule();
    let sel = KeywordSelector { top_k: Some(5) };
    let run = |_: ()| {
        let pipeline = Pipeline::new(&rule, rule.tau(), Backend::Heuristic, &sel);
        replay(&trace, &pipeline).unwrap()
    };
    let (a, b) = (run(()), run(()));
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.digests, b.digests);
    assert_eq!(a.report.pages, 5);
    assert_eq!(a.report.decompose_calls, 5);
    assert_eq!(a.report.view_all_calls, 2);
    assert_eq!(a.report.steps.len(), trace.steps.len());
    let t = &a.report.totals;
    assert_eq!(t.total, t.actor_observation + t.selection + t.view_all);
}

#[test]
fn everything_selected_trace_is_flagged() {
    let text = std::fs::read_to_string(fixtures().join("traces/same_page_10.jsonl")).unwrap();
    let trace = parse_trace(&text).unwrap();
    let rule = landmark_rule();
    let sel = FixedSelector((0..100).collect());
    let pipeline = Pipeline::new(&rule, rule.tau(), Backend::Heuristic, &sel);
    let run = replay(&trace, &pipeline).unwrap();
    for row in &run.report.steps {
        assert!(row.digest_tokens >= row.baseline_tokens);
        assert!(row.reduction_pct <= 0.0);
    }
    assert_eq!(run.report.flags.len(), run.report.steps.len());
}
