use std::fmt::Write as _;

use super::{AXNode, AXTree, TreeError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    /// `line` is 1-based; 0 means the input as a whole.
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: second root node at depth 0")]
    MultipleRoots { line: usize },
    #[error("line {line}: indentation jumps more than one level below its parent")]
    IndentJump { line: usize },
    #[error("line {line}: duplicate node id `{id}`")]
    DuplicateId { line: usize, id: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::MalformedLine { line, .. }
            | ParseError::MultipleRoots { line }
            | ParseError::IndentJump { line }
            | ParseError::DuplicateId { line, .. } => *line,
        }
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Indent {
    Tab,
    Spaces(usize),
}

fn indent_depth<'a>(raw: &'a str, unit: &mut Option<Indent>, line: usize) -> Result<(usize, &'a str), ParseError> {
    let body = raw.trim_start_matches([' ', '\t']);
    let lead = &raw[..raw.len() - body.len()];
    if lead.is_empty() {
        return Ok((0, body));
    }
    let unit = *unit.get_or_insert_with(|| {
        if lead.starts_with('\t') {
            Indent::Tab
        } else {
            Indent::Spaces(lead.len())
        }
    });
    let depth = match unit {
        Indent::Tab if lead.bytes().all(|b| b == b'\t') => lead.len(),
        Indent::Spaces(n) if lead.bytes().all(|b| b == b' ') && lead.len().is_multiple_of(n) => lead.len() / n,
        _ => return Err(malformed(line, "inconsistent indentation")),
    };
    Ok((depth, body))
}

struct Cursor<'a> {
    rest: &'a str,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start_matches([' ', '\t']);
    }

    fn at_end(&self) -> bool {
        self.rest.is_empty()
    }

    fn bare(&mut self) -> &'a str {
        let end = self.rest.find([' ', '\t']).unwrap_or(self.rest.len());
        let (tok, rest) = self.rest.split_at(end);
        self.rest = rest;
        tok
    }

    fn quoted(&mut self) -> Result<String, ParseError> {
        debug_assert!(self.rest.starts_with('\''));
        let mut out = String::new();
        let mut chars = self.rest[1..].char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '\'' => {
                    self.rest = &self.rest[i + 2..];
                    if !self.rest.is_empty() && !self.rest.starts_with([' ', '\t']) {
                        return Err(malformed(self.line, "text directly after closing quote"));
                    }
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, '\'')) => out.push('\''),
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, 'r')) => out.push('\r'),
                    Some((_, 't')) => out.push('\t'),
                    Some((_, other)) => {
                        return Err(malformed(self.line, format!("unknown escape `\\{other}`")))
                    }
                    None => break,
                },
                c => out.push(c),
            }
        }
        Err(malformed(self.line, "unterminated quote"))
    }
}

fn parse_line(body: &str, line: usize) -> Result<AXNode, ParseError> {
    let rest = body
        .strip_prefix('[')
        .ok_or_else(|| malformed(line, "expected `[id]`"))?;
    let close = rest.find(']').ok_or_else(|| malformed(line, "missing `]` after id"))?;
    let id = &rest[..close];
    if id.is_empty() || id.contains([' ', '\t', '[']) {
        return Err(malformed(line, format!("invalid id `{id}`")));
    }
    let mut cur = Cursor {
        rest: &rest[close + 1..],
        line,
    };
    if !cur.rest.starts_with([' ', '\t']) {
        return Err(malformed(line, "expected role after id"));
    }
    cur.skip_ws();
    let role = cur.bare();
    if role.is_empty() || role.starts_with('\'') || role.contains('=') {
        return Err(malformed(line, "missing role"));
    }
    let mut node = AXNode::new(id, role);

    // name and value slots, then key=value attributes
    let mut texts = 0;
    loop {
        cur.skip_ws();
        if cur.at_end() {
            break;
        }
        if cur.rest.starts_with('\'') {
            if texts == 2 || !node.attrs.is_empty() {
                return Err(malformed(line, "unexpected quoted text"));
            }
            let s = cur.quoted()?;
            if texts == 0 {
                node.name = s;
            } else {
                node.value = s;
            }
            texts += 1;
            continue;
        }
        let start = cur.rest;
        let tok = cur.bare();
        match tok.split_once('=') {
            Some((key, _)) if !key.is_empty() && !key.contains('\'') => {
                // re-read the value so quoted values may contain spaces
                cur.rest = &start[key.len() + 1..];
                let val = if cur.rest.starts_with('\'') {
                    cur.quoted()?
                } else {
                    cur.bare().to_string()
                };
                node.attrs.insert(key.to_string(), val);
            }
            _ => {
                if texts == 2 || !node.attrs.is_empty() {
                    return Err(malformed(line, format!("unexpected token `{tok}`")));
                }
                if texts == 0 {
                    node.name = tok.to_string();
                } else {
                    node.value = tok.to_string();
                }
                texts += 1;
            }
        }
    }
    Ok(node)
}

/// Parses the indentation-based text format into a tree.
pub fn parse_axtree(text: &str, url: &str) -> Result<AXTree, ParseError> {
    let mut unit = None;
    // open path from the root down to the most recent node, with source lines
    let mut path: Vec<(AXNode, usize)> = Vec::new();
    let mut root: Option<AXNode> = None;
    let mut root_line = 0;

    fn close(path: &mut Vec<(AXNode, usize)>, keep: usize, root: &mut Option<AXNode>) {
        while path.len() > keep {
            let (node, _) = path.pop().expect("non-empty path");
            match path.last_mut() {
                Some((parent, _)) => parent.children.push(node),
                None => *root = Some(node),
            }
        }
    }

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        let (depth, body) = indent_depth(raw, &mut unit, line)?;
        let node = parse_line(body, line)?;
        if depth == 0 {
            if root.is_some() || !path.is_empty() {
                return Err(ParseError::MultipleRoots { line });
            }
            root_line = line;
        } else if path.is_empty() && root.is_none() {
            return Err(malformed(line, "first node must be at depth 0"));
        } else if depth > path.len() {
            return Err(ParseError::IndentJump { line });
        }
        close(&mut path, depth, &mut root);
        path.push((node, line));
    }
    close(&mut path, 0, &mut root);

    let root = root.ok_or_else(|| malformed(0, "no root node"))?;
    AXTree::new(root, url).map_err(|e| match e {
        TreeError::DuplicateId(id) => {
            let line = text
                .lines()
                .enumerate()
                .filter(|(_, l)| l.trim_start().starts_with(&format!("[{id}]")))
                .map(|(i, _)| i + 1)
                .nth(1)
                .unwrap_or(root_line);
            ParseError::DuplicateId { line, id }
        }
        TreeError::EmptyRole(id) => malformed(root_line, format!("node `{id}` has no role")),
    })
}

fn push_quoted(out: &mut String, s: &str) {
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
}

/// Writes one node line (no indentation, no newline).
pub fn write_node_line(out: &mut String, node: &AXNode) {
    let _ = write!(out, "[{}] {}", node.id, node.role);
    if !node.name.is_empty() || !node.value.is_empty() {
        out.push(' ');
        push_quoted(out, &node.name);
    }
    if !node.value.is_empty() {
        out.push(' ');
        push_quoted(out, &node.value);
    }
    for (k, v) in &node.attrs {
        out.push(' ');
        out.push_str(k);
        out.push('=');
        if v.is_empty() || v.contains([' ', '\t', '\'', '\\', '\n', '\r']) {
            push_quoted(out, v);
        } else {
            out.push_str(v);
        }
    }
}

fn write_subtree(out: &mut String, node: &AXNode, depth: usize) {
    for _ in 0..depth {
        out.push('\t');
    }
    write_node_line(out, node);
    out.push('\n');
    for child in &node.children {
        write_subtree(out, child, depth + 1);
    }
}

/// Canonical text form of a subtree, tab-indented starting at `depth`.
pub fn serialize_subtree(node: &AXNode, depth: usize) -> String {
    let mut out = String::new();
    write_subtree(&mut out, node, depth);
    out
}

/// Canonical text form; `parse_axtree` of the result gives back the same tree.
pub fn serialize_axtree(tree: &AXTree) -> String {
    serialize_subtree(tree.root(), 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line() {
        let t = parse_axtree("[a1] link 'Home'", "u").unwrap();
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.root().id, "a1");
        assert_eq!(t.root().role, "link");
        assert_eq!(t.root().name, "Home");
        assert_eq!(serialize_axtree(&t), "[a1] link 'Home'\n");
    }

    #[test]
    fn empty_input_has_no_root() {
        assert!(matches!(
            parse_axtree("", "u"),
            Err(ParseError::MalformedLine { line: 0, .. })
        ));
    }

    #[test]
    fn indent_jump() {
        let text = "[r] RootWebArea\n\t[a] generic\n\t\t\t[b] link 'x'\n";
        assert_eq!(parse_axtree(text, "u"), Err(ParseError::IndentJump { line: 3 }));
    }

    #[test]
    fn multiple_roots() {
        let text = "[r] RootWebArea\n[s] RootWebArea\n";
        assert_eq!(parse_axtree(text, "u"), Err(ParseError::MultipleRoots { line: 2 }));
    }

    #[test]
    fn duplicate_id_reports_second_line() {
        let text = "[r] RootWebArea\n\t[a] link\n\t[a] button\n";
        assert_eq!(
            parse_axtree(text, "u"),
            Err(ParseError::DuplicateId {
                line: 3,
                id: "a".into()
            })
        );
    }

    #[test]
    fn malformed_line_number() {
        let text = "[r] RootWebArea\n\t[a] link\n\tnot a node\n";
        assert_eq!(parse_axtree(text, "u").unwrap_err().line(), 3);
    }

    #[test]
    fn spaces_are_detected() {
        let text = "[r] RootWebArea\n  [a] list\n    [b] listitem 'one'\n  [c] link 'two'\n";
        let t = parse_axtree(text, "u").unwrap();
        assert_eq!(t.root().children.len(), 2);
        assert_eq!(t.root().children[0].children[0].name, "one");
    }

    #[test]
    fn mixed_indent_rejected() {
        let text = "[r] RootWebArea\n  [a] list\n\t[b] link\n";
        assert!(matches!(
            parse_axtree(text, "u"),
            Err(ParseError::MalformedLine { line: 3, .. })
        ));
    }

    #[test]
    fn quote_escaping_round_trips() {
        let node = AXNode::new("q", "StaticText").with_name("it's a \\ test\nline");
        let t = AXTree::new(node, "u").unwrap();
        let s = serialize_axtree(&t);
        assert_eq!(s, "[q] StaticText 'it\\'s a \\\\ test\\nline'\n");
        assert_eq!(parse_axtree(&s, "u").unwrap(), t);
    }

    #[test]
    fn value_without_name_and_attrs() {
        let node = AXNode::new("t", "textbox")
            .with_value("typed")
            .with_attr("href", "/x?a=b")
            .with_attr("title", "two words");
        let t = AXTree::new(node, "u").unwrap();
        let s = serialize_axtree(&t);
        assert_eq!(s, "[t] textbox '' 'typed' href=/x?a=b title='two words'\n");
        assert_eq!(parse_axtree(&s, "u").unwrap(), t);
    }

    #[test]
    fn bare_name_accepted() {
        let t = parse_axtree("[b] button Submit", "u").unwrap();
        assert_eq!(t.root().name, "Submit");
    }
}
