use super::{AXNode, AXTree};

/// Roles an agent can act on even without a name or value.
pub const INTERACTIVE_ROLES: [&str; 7] = [
    "link", "button", "textbox", "combobox", "checkbox", "image", "heading",
];

const WRAPPER_ROLES: [&str; 2] = ["generic", "none"];

/// A node is visible when it has a name, a value, or an interactive role.
pub fn is_visible(node: &AXNode) -> bool {
    !node.name.is_empty() || !node.value.is_empty() || INTERACTIVE_ROLES.contains(&node.role.as_str())
}

fn has_visible(node: &AXNode) -> bool {
    node.iter().any(is_visible)
}

fn is_wrapper(node: &AXNode) -> bool {
    node.name.is_empty() && node.value.is_empty() && WRAPPER_ROLES.contains(&node.role.as_str())
}

fn enrich(node: &mut AXNode) {
    if !node.name.is_empty() {
        return;
    }
    let key = match node.role.as_str() {
        "image" | "img" => "src",
        "link" => "href",
        _ => return,
    };
    if let Some(v) = node.attrs.get(key).filter(|v| !v.is_empty()) {
        node.name = v.clone();
    }
}

/// Returns the nodes that replace `node` in its parent's child list.
fn process(mut node: AXNode, is_root: bool) -> Vec<AXNode> {
    enrich(&mut node);
    let children = std::mem::take(&mut node.children);
    node.children = children.into_iter().flat_map(|c| process(c, false)).collect();
    if is_root || !is_wrapper(&node) {
        return vec![node];
    }
    let branches = node.children.iter().filter(|c| has_visible(c)).count();
    if branches >= 2 {
        vec![node]
    } else {
        node.children
    }
}

/// Drops content-free `generic`/`none` wrappers (promoting their children in
/// order), keeps wrappers that group two or more visible branches, and fills
/// empty image/link names from `src`/`href`. The root is always kept.
pub fn preprocess(tree: &AXTree) -> AXTree {
    let root = process(tree.root().clone(), true)
        .pop()
        .expect("root is always retained");
    AXTree::new(root, tree.url()).expect("preprocessing keeps ids unique")
}
