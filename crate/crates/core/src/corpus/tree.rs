use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scaffold::{ScaffoldInstance, ScaffoldSource};

const TRACE_LABEL: &str = "-NONE-";

#[derive(Debug)]
struct Open {
    label: Option<String>,
    first_token: usize,
    label_closed: bool,
    children: usize,
    offset: usize,
}

fn tree_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Data {
        source_name: "tree".into(),
        line: 0,
        message: format!("char {offset}: {}", message.into()),
    }
}

/// Parses one parenthesized tree.
///
/// Every labeled node covering at least one token yields a positive span;
/// unary chains collapse to one span and spans longer than `max_len` are
/// dropped. A token's tag is the label of its parent node. `-NONE-`
/// subtrees are removed.
pub fn parse_bracketed_tree(line: &str, max_len: usize) -> Result<ScaffoldInstance> {
    let mut stack: Vec<Open> = Vec::new();
    let mut tokens = Vec::new();
    let mut pos = Vec::new();
    let mut spans = BTreeSet::new();
    let mut trace_depth = 0usize;
    let mut finished = false;

    let chars: Vec<char> = line.chars().collect();
    let mut k = 0;
    while k < chars.len() {
        let c = chars[k];
        if c.is_whitespace() {
            k += 1;
            continue;
        }
        if finished {
            return Err(tree_error(k, "content after the end of the tree"));
        }
        match c {
            '(' => {
                if let Some(top) = stack.last_mut() {
                    top.label_closed = true;
                    top.children += 1;
                }
                stack.push(Open {
                    label: None,
                    first_token: tokens.len(),
                    label_closed: false,
                    children: 0,
                    offset: k,
                });
                k += 1;
            }
            ')' => {
                let node = stack.pop().ok_or_else(|| tree_error(k, "unbalanced `)`"))?;
                if node.children == 0 {
                    return Err(tree_error(node.offset, "constituent without children"));
                }
                if node.label.as_deref() == Some(TRACE_LABEL) {
                    trace_depth -= 1;
                } else if node.label.is_some() && tokens.len() > node.first_token {
                    let (i, j) = (node.first_token, tokens.len() - 1);
                    if j - i < max_len {
                        spans.insert((i, j));
                    }
                }
                if stack.is_empty() {
                    finished = true;
                }
                k += 1;
            }
            _ => {
                let start = k;
                while k < chars.len()
                    && !chars[k].is_whitespace()
                    && chars[k] != '('
                    && chars[k] != ')'
                {
                    k += 1;
                }
                let atom: String = chars[start..k].iter().collect();
                let top = stack
                    .last_mut()
                    .ok_or_else(|| tree_error(start, format!("`{atom}` outside any bracket")))?;
                if !top.label_closed && top.children == 0 && top.label.is_none() {
                    if atom == TRACE_LABEL {
                        trace_depth += 1;
                    }
                    top.label = Some(atom);
                    top.label_closed = true;
                } else {
                    top.children += 1;
                    if trace_depth == 0 {
                        pos.push(top.label.clone().unwrap_or_else(|| "X".into()));
                        tokens.push(atom);
                    }
                }
            }
        }
    }
    if let Some(open) = stack.last() {
        return Err(tree_error(open.offset, "unbalanced `(`"));
    }
    if tokens.is_empty() {
        return Err(tree_error(0, "tree has no tokens"));
    }
    Ok(ScaffoldInstance {
        tokens,
        pos,
        positive_spans: spans,
        source: ScaffoldSource::Treebank,
    })
}

/// One tree per nonblank line.
pub fn parse_treebank(
    text: &str,
    source_name: &str,
    max_len: usize,
) -> Result<Vec<ScaffoldInstance>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            parse_bracketed_tree(l, max_len).map_err(|e| match e {
                Error::Data { message, .. } => Error::Data {
                    source_name: source_name.to_string(),
                    line: k + 1,
                    message,
                },
                other => other,
            })
        })
        .collect()
}

pub fn load_treebank(path: &Path, max_len: usize) -> Result<Vec<ScaffoldInstance>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_treebank(&text, &path.display().to_string(), max_len)
}
