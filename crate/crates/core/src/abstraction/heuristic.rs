//! Offline purpose/state templates keyed on the region's role pattern.
//!
//! | pattern                                                  | purpose                  |
//! |----------------------------------------------------------|--------------------------|
//! | only nameless `generic`/`none` nodes                     | structural wrapper       |
//! | search root, or a combobox/searchbox plus a button       | search form              |
//! | navigation root                                          | site navigation links    |
//! | links plus buttons plus price-like text                  | product card             |
//! | form root, or text inputs                                | input form               |
//! | table/grid root, or rows                                 | data table               |
//! | two or more links and nothing else interactive           | link list                |
//! | list root                                                | item list                |
//! | buttons only                                             | action buttons           |
//! | heading present                                          | `<heading>` section      |
//! | anything else                                            | `<root role>` content    |

use crate::axtree::AXNode;

const SHOWN_NAMES: usize = 4;
const SHOWN_TEXT: usize = 3;
const MAX_LEN: usize = 60;

/// Nodes with no name, no value and a wrapper role.
pub fn is_content_free(node: &AXNode) -> bool {
    matches!(node.role.as_str(), "generic" | "none") && node.name.is_empty() && node.value.is_empty()
}

fn clip(s: &str) -> String {
    let s = s.trim();
    if s.chars().count() <= MAX_LEN {
        s.to_string()
    } else {
        let head: String = s.chars().take(MAX_LEN - 3).collect();
        format!("{}...", head.trim_end())
    }
}

fn is_text_role(role: &str) -> bool {
    matches!(role, "StaticText" | "paragraph" | "text" | "LabelText" | "caption" | "cell" | "gridcell")
}

fn is_priceish(s: &str) -> bool {
    s.contains('$') || s.contains('€') || s.contains('£') || s.to_ascii_lowercase().contains("price")
}

struct Profile<'a> {
    root: &'a AXNode,
    nodes: Vec<&'a AXNode>,
}

impl<'a> Profile<'a> {
    fn count(&self, roles: &[&str]) -> usize {
        self.nodes.iter().filter(|n| roles.contains(&n.role.as_str())).count()
    }

    fn first_heading(&self) -> Option<&'a str> {
        self.nodes.iter().find(|n| n.role == "heading" && !n.name.is_empty()).map(|n| n.name.as_str())
    }
}

pub fn purpose(members: &[&AXNode]) -> String {
    let Some(&root) = members.first() else {
        return "structural wrapper".into();
    };
    let p = Profile {
        root,
        nodes: members.to_vec(),
    };
    if p.nodes.iter().all(|n| is_content_free(n)) {
        return "structural wrapper".into();
    }
    let links = p.count(&["link"]);
    let buttons = p.count(&["button"]);
    let search_inputs = p.count(&["combobox", "searchbox"]);
    let text_inputs = p.count(&["textbox", "checkbox", "radio", "spinbutton", "slider"]);
    let interactive = links + buttons + search_inputs + text_inputs;
    let priceish = p.nodes.iter().any(|n| is_priceish(&n.name) || is_priceish(&n.value));
    let root_role = p.root.role.as_str();

    if root_role == "search" || (search_inputs > 0 && buttons > 0) {
        return "search form".into();
    }
    if root_role == "navigation" {
        return "site navigation links".into();
    }
    if priceish && buttons > 0 && (links > 0 || p.count(&["heading"]) > 0) {
        return "product card".into();
    }
    if root_role == "form" || text_inputs > 0 || search_inputs > 0 {
        return "input form".into();
    }
    if matches!(root_role, "table" | "grid" | "treegrid") || p.count(&["row"]) > 0 {
        return "data table".into();
    }
    if links >= 2 && links == interactive {
        return "link list".into();
    }
    if matches!(root_role, "list" | "listbox" | "menu" | "menubar" | "tablist") {
        return "item list".into();
    }
    if buttons > 0 && buttons == interactive {
        return "action buttons".into();
    }
    if let Some(h) = p.first_heading() {
        return format!("{} section", clip(h));
    }
    format!("{root_role} content")
}

fn plural(role: &str, n: usize) -> String {
    let word = match role {
        "combobox" => "combobox",
        "searchbox" => "search box",
        "textbox" => "text field",
        other => other,
    };
    if n == 1 {
        format!("1 {word}")
    } else if word.ends_with('x') {
        format!("{n} {word}es")
    } else {
        format!("{n} {word}s")
    }
}

pub fn state_summary(members: &[&AXNode]) -> String {
    const ACTIONABLE: [&str; 7] = ["link", "button", "combobox", "searchbox", "textbox", "checkbox", "radio"];
    let mut parts = Vec::new();
    for role in ACTIONABLE {
        let hits: Vec<&&AXNode> = members.iter().filter(|n| n.role == role).collect();
        if hits.is_empty() {
            continue;
        }
        let names: Vec<String> = hits
            .iter()
            .filter_map(|n| {
                let label = if n.name.is_empty() { &n.value } else { &n.name };
                (!label.is_empty()).then(|| format!("'{}'", clip(label)))
            })
            .take(SHOWN_NAMES)
            .collect();
        let mut part = plural(role, hits.len());
        if !names.is_empty() {
            let more = if hits.len() > names.len() { ", ..." } else { "" };
            part.push_str(&format!(" ({}{more})", names.join(", ")));
        }
        if matches!(role, "textbox" | "combobox" | "searchbox") {
            if let Some(v) = hits.iter().find(|n| !n.value.is_empty()) {
                part.push_str(&format!(" holding '{}'", clip(&v.value)));
            }
        }
        parts.push(part);
    }
    let text: Vec<String> = members
        .iter()
        .filter(|n| (is_text_role(&n.role) || n.role == "heading") && !n.name.is_empty())
        .map(|n| clip(&n.name))
        .take(SHOWN_TEXT)
        .collect();

    let mut out = if parts.is_empty() {
        "No interactive elements.".to_string()
    } else {
        format!("Offers {}.", parts.join("; "))
    };
    if !text.is_empty() {
        out.push_str(&format!(" Key text: {}.", text.join(" | ")));
    }
    out
}
