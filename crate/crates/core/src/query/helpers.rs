//! Parsing helpers: json dot-paths, xml slash-paths, a small xpath subset,
//! and byte slicing. Helpers compose left-to-right; each consumes the
//! previous intermediate document.
//!
//! Error codes are distinct by failure class: `ParseFailure` when the input
//! text does not parse as the expected format, `PathMiss` when a path
//! addresses nothing, `OutOfBounds` for slice range violations.

use super::document::Document;
use super::QueryError;

/// Walks a dot-separated path (`result.XETHZUSD.c.0`) into a document,
/// parsing it from JSON text first if necessary. Path segments address
/// object keys; on arrays a segment must be a non-negative integer index.
pub fn helper_json(input: &Document, path: &str) -> Result<Document, QueryError> {
    let parsed;
    let mut current = match input {
        Document::Str(text) => {
            parsed = Document::from_json_str(text)?;
            &parsed
        }
        structured => structured,
    };
    if path.is_empty() {
        return Ok(current.clone());
    }
    for segment in path.split('.') {
        current = match current {
            Document::Object(map) => map
                .get(segment)
                .ok_or_else(|| QueryError::PathMiss(format!("key {segment:?}")))?,
            Document::Array(items) => {
                let index: usize = segment
                    .parse()
                    .map_err(|_| QueryError::PathMiss(format!("index {segment:?}")))?;
                items
                    .get(index)
                    .ok_or_else(|| QueryError::PathMiss(format!("index {index}")))?
            }
            other => {
                return Err(QueryError::PathMiss(format!(
                    "segment {segment:?} into {}",
                    other.shape_name()
                )))
            }
        };
    }
    Ok(current.clone())
}

/// One step of an element path: a tag name with an optional 1-based
/// positional predicate, `price` or `price[2]`.
struct XmlStep<'a> {
    name: &'a str,
    position: Option<usize>,
}

fn parse_steps(expr: &str) -> Result<Vec<XmlStep<'_>>, QueryError> {
    let trimmed = expr.strip_prefix('/').unwrap_or(expr);
    if trimmed.is_empty() {
        return Err(QueryError::ParseFailure("empty element path".into()));
    }
    trimmed
        .split('/')
        .map(|segment| {
            if segment.is_empty() {
                return Err(QueryError::ParseFailure(format!("bad path {expr:?}")));
            }
            match segment.find('[') {
                None => Ok(XmlStep { name: segment, position: None }),
                Some(i) => {
                    let name = &segment[..i];
                    let pred = segment[i..]
                        .strip_prefix('[')
                        .and_then(|s| s.strip_suffix(']'))
                        .ok_or_else(|| {
                            QueryError::ParseFailure(format!("bad predicate in {segment:?}"))
                        })?;
                    let position: usize = pred.parse().map_err(|_| {
                        QueryError::ParseFailure(format!("bad predicate in {segment:?}"))
                    })?;
                    if name.is_empty() || position == 0 {
                        return Err(QueryError::ParseFailure(format!(
                            "bad predicate in {segment:?}"
                        )));
                    }
                    Ok(XmlStep { name, position: Some(position) })
                }
            }
        })
        .collect()
}

/// Walks an element path into XML text. The first step must match the root
/// element; later steps descend the child axis. Positional predicates are
/// 1-based. Returns the text content of the first match in document order.
pub fn helper_xml_path(input: &Document, expr: &str) -> Result<Document, QueryError> {
    let text = match input {
        Document::Str(s) => s.clone(),
        other => {
            return Err(QueryError::ParseFailure(format!(
                "xml expects text input, got {}",
                other.shape_name()
            )))
        }
    };
    let tree = roxmltree::Document::parse(&text)
        .map_err(|e| QueryError::ParseFailure(format!("xml: {e}")))?;
    let steps = parse_steps(expr)?;

    let root = tree.root_element();
    let first = &steps[0];
    if root.tag_name().name() != first.name || first.position.unwrap_or(1) != 1 {
        return Err(QueryError::PathMiss(format!("root element {:?}", first.name)));
    }
    let mut matches = vec![root];
    for step in &steps[1..] {
        let mut next = Vec::new();
        for node in &matches {
            let mut position = 0;
            for child in node.children().filter(|c| c.is_element()) {
                if child.tag_name().name() != step.name {
                    continue;
                }
                position += 1;
                match step.position {
                    None => next.push(child),
                    Some(p) if p == position => next.push(child),
                    Some(_) => {}
                }
            }
        }
        if next.is_empty() {
            return Err(QueryError::PathMiss(format!("element {:?}", step.name)));
        }
        matches = next;
    }
    let node = matches[0];
    let content: String = node
        .descendants()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect();
    Ok(Document::Str(content))
}

/// Exact byte sub-range. `offset + length` must not exceed the input.
pub fn helper_slice(input: &Document, offset: u64, length: u64) -> Result<Document, QueryError> {
    let bytes = input.as_bytes()?;
    let end = offset
        .checked_add(length)
        .ok_or(QueryError::OutOfBounds { offset, length, available: bytes.len() as u64 })?;
    if end > bytes.len() as u64 {
        return Err(QueryError::OutOfBounds { offset, length, available: bytes.len() as u64 });
    }
    Ok(Document::Bytes(bytes[offset as usize..end as usize].to_vec()))
}
