//! Choosing the task-relevant regions at page entry.

use std::collections::BTreeSet;

use crate::abstraction::{ChatClient, LmError, RegionAbstraction};

pub const SELECTION_PROMPT: &str = include_str!("../../prompts/selection.txt");

/// Ignored when matching task words against region descriptions.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "to", "of", "in", "on", "for", "and", "or", "with", "at", "by", "from", "is", "are", "be", "this",
    "that", "it", "its", "as", "into", "my", "me", "i", "you", "your", "please", "what", "which", "how", "all", "any",
    "can", "do", "does", "page", "offers", "key", "text", "no", "not", "there", "find", "show", "get", "go",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectionParseError {
    #[error("selection reply names no regions")]
    Empty,
    #[error("`{0}` is not a region id")]
    BadToken(String),
    #[error("region R{0} does not exist")]
    UnknownRegion(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub selected: BTreeSet<usize>,
    /// Set when the reply could not be used and every region was selected.
    pub fallback: Option<String>,
}

pub trait Selector: Sync {
    fn select(&self, task: &str, history: &[String], abstractions: &[RegionAbstraction]) -> Selection;
}

pub fn render_history(history: &[String]) -> String {
    if history.is_empty() {
        return "None".into();
    }
    history
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {a}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `R<i>` header followed by purpose and state summary, one region per paragraph.
pub fn render_abstractions(abstractions: &[RegionAbstraction]) -> String {
    abstractions
        .iter()
        .map(|a| format!("R{}\npurpose: {}\nstate_summary: {}", a.region_id, a.purpose, a.state_summary))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_selection_prompt(task: &str, history: &[String], abstractions: &[RegionAbstraction]) -> String {
    SELECTION_PROMPT
        .replace("{task_instruction}", task)
        .replace("{action_history}", &render_history(history))
        .replace("{region_abstractions}", &render_abstractions(abstractions))
}

/// Parses a comma-separated list such as `R3, R7`.
pub fn parse_selection(reply: &str, region_count: usize) -> Result<BTreeSet<usize>, SelectionParseError> {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let mut out = BTreeSet::new();
    for tok in line.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let digits = tok
            .strip_prefix('R')
            .or_else(|| tok.strip_prefix('r'))
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| SelectionParseError::BadToken(tok.to_string()))?;
        let id: usize = digits.parse().map_err(|_| SelectionParseError::BadToken(tok.to_string()))?;
        if id >= region_count {
            return Err(SelectionParseError::UnknownRegion(id));
        }
        out.insert(id);
    }
    if out.is_empty() {
        return Err(SelectionParseError::Empty);
    }
    Ok(out)
}

/// Lowercased alphanumeric words minus stopwords, with a trailing plural `s` dropped.
pub fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 2)
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| {
            if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
                w[..w.len() - 1].to_string()
            } else {
                w
            }
        })
        .collect()
}

/// Offline selector: regions whose purpose or state summary shares a
/// content word with the task. `top_k` keeps only the best-scoring ones
/// (ties by region order). At least one region is always selected.
#[derive(Debug, Clone, Default)]
pub struct KeywordSelector {
    pub top_k: Option<usize>,
}

impl KeywordSelector {
    pub fn scores(&self, task: &str, abstractions: &[RegionAbstraction]) -> Vec<usize> {
        let wanted = content_words(task);
        abstractions
            .iter()
            .map(|a| {
                let have = content_words(&format!("{} {}", a.purpose, a.state_summary));
                wanted.intersection(&have).count()
            })
            .collect()
    }
}

impl Selector for KeywordSelector {
    fn select(&self, task: &str, _history: &[String], abstractions: &[RegionAbstraction]) -> Selection {
        let scores = self.scores(task, abstractions);
        let mut ranked: Vec<usize> = (0..abstractions.len()).filter(|&i| scores[i] > 0).collect();
        ranked.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
        if let Some(k) = self.top_k {
            ranked.truncate(k.max(1));
        }
        let mut selected: BTreeSet<usize> = ranked.into_iter().map(|i| abstractions[i].region_id).collect();
        if selected.is_empty() {
            if let Some(first) = abstractions.first() {
                selected.insert(first.region_id);
            }
        }
        Selection {
            selected,
            fallback: None,
        }
    }
}

/// Model-backed selector. Any failure selects every region.
pub struct LmSelector<'a> {
    pub client: &'a dyn ChatClient,
    pub max_retries: u32,
}

impl LmSelector<'_> {
    fn ask(&self, prompt: &str, n: usize) -> Result<BTreeSet<usize>, String> {
        let mut last = String::new();
        for _ in 0..=self.max_retries {
            match self.client.complete(prompt) {
                Ok(reply) => return parse_selection(&reply, n).map_err(|e| e.to_string()),
                Err(e @ LmError::Timeout) | Err(e @ LmError::Unavailable(_)) => last = e.to_string(),
                Err(e) => return Err(e.to_string()),
            }
        }
        Err(last)
    }
}

impl Selector for LmSelector<'_> {
    fn select(&self, task: &str, history: &[String], abstractions: &[RegionAbstraction]) -> Selection {
        let prompt = render_selection_prompt(task, history, abstractions);
        match self.ask(&prompt, abstractions.len()) {
            Ok(selected) => Selection {
                selected,
                fallback: None,
            },
            Err(reason) => {
                log::warn!("region selection failed ({reason}); selecting every region");
                Selection {
                    selected: abstractions.iter().map(|a| a.region_id).collect(),
                    fallback: Some(reason),
                }
            }
        }
    }
}

/// Fixed selection, for tests and for replaying recorded choices.
#[derive(Debug, Clone)]
pub struct FixedSelector(pub BTreeSet<usize>);

impl Selector for FixedSelector {
    fn select(&self, _task: &str, _history: &[String], abstractions: &[RegionAbstraction]) -> Selection {
        let n = abstractions.len();
        let mut selected: BTreeSet<usize> = self.0.iter().copied().filter(|&i| i < n).collect();
        if selected.is_empty() && n > 0 {
            selected.insert(0);
        }
        Selection {
            selected,
            fallback: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::BackendKind;

    fn abs(id: usize, purpose: &str, state: &str) -> RegionAbstraction {
        RegionAbstraction {
            region_id: id,
            purpose: purpose.into(),
            state_summary: state.into(),
            backend: BackendKind::Heuristic,
            latency_ms: 0,
            fallback: None,
        }
    }

    #[test]
    fn parses_region_lists() {
        assert_eq!(parse_selection("R3, R7", 10).unwrap(), BTreeSet::from([3, 7]));
        assert_eq!(parse_selection("\nr1,R1 ,R0\n", 2).unwrap(), BTreeSet::from([0, 1]));
        assert_eq!(parse_selection("R3, R12", 10), Err(SelectionParseError::UnknownRegion(12)));
        assert_eq!(parse_selection("", 3), Err(SelectionParseError::Empty));
        assert!(matches!(parse_selection("regions 3 and 7", 10), Err(SelectionParseError::BadToken(_))));
    }

    #[test]
    fn content_words_strip_noise() {
        let w = content_words("Add the Gingerbread kits to my cart!");
        assert_eq!(w, BTreeSet::from(["add".into(), "gingerbread".into(), "kit".into(), "cart".into()]));
    }

    #[test]
    fn keyword_selection() {
        let a = vec![
            abs(0, "site navigation links", "Offers 3 links ('Home', 'Blog', 'About')."),
            abs(1, "product card", "Offers 1 link ('Gingerbread House Kit') and 1 button ('Add to Cart')."),
            abs(2, "product card", "Offers 1 link ('Green Tea') and 1 button ('Add to Cart')."),
        ];
        let all = KeywordSelector::default().select("add gingerbread kit to cart", &[], &a);
        assert_eq!(all.selected, BTreeSet::from([1, 2]));
        let top = KeywordSelector { top_k: Some(1) }.select("add gingerbread kit to cart", &[], &a);
        assert_eq!(top.selected, BTreeSet::from([1]));
        let none = KeywordSelector::default().select("zzz", &[], &a);
        assert_eq!(none.selected, BTreeSet::from([0]));
        let one = KeywordSelector::default().select("anything", &[], &a[..1]);
        assert_eq!(one.selected.len(), 1);
    }

    #[test]
    fn lm_selector_parses_and_falls_back() {
        let a = vec![abs(0, "p", "s"), abs(1, "q", "t"), abs(2, "r", "u")];
        let good = |p: &str| -> Result<String, LmError> {
            assert!(p.contains("Task: buy tea"));
            assert!(p.contains("1. click('a1')"));
            assert!(p.contains("R2\npurpose: r\nstate_summary: u"));
            Ok("R0, R2".into())
        };
        let s = LmSelector { client: &good, max_retries: 0 }.select("buy tea", &["click('a1')".into()], &a);
        assert_eq!(s.selected, BTreeSet::from([0, 2]));
        let bad = |_: &str| -> Result<String, LmError> { Ok("I would pick the second one".into()) };
        let s = LmSelector { client: &bad, max_retries: 0 }.select("buy tea", &[], &a);
        assert_eq!(s.selected, BTreeSet::from([0, 1, 2]));
        assert!(s.fallback.is_some());
    }

    #[test]
    fn prompt_has_no_placeholders() {
        let p = render_selection_prompt("t", &[], &[abs(0, "p", "s")]);
        assert!(!p.contains('{'));
        assert!(p.contains("Action history:\nNone\n"));
    }
}
