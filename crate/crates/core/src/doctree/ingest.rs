//! The on-disk document format: one JSON object per document,
//! `{"doc_id", "title", "nodes": [{"kind", "text", "children": [...]}]}`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DocTree, NodeKind, NodeSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub title: String,
    #[serde(default)]
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub kind: NodeKind,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeRecord>,
}

impl DocumentRecord {
    /// Parses a record, reporting the JSON path of the first offending node.
    pub fn from_value(value: &Value) -> Result<DocumentRecord> {
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err("$", "expected an object"))?;
        let doc_id = str_field(obj, "doc_id", "$")?;
        let title = str_field(obj, "title", "$")?;
        let nodes = match obj.get("nodes") {
            None | Some(Value::Null) => Vec::new(),
            Some(v) => node_list(v, "$.nodes")?,
        };
        Ok(DocumentRecord {
            doc_id,
            title,
            nodes,
        })
    }

    pub fn from_json(line: &str) -> Result<DocumentRecord> {
        let value: Value =
            serde_json::from_str(line).map_err(|e| parse_err("$", &e.to_string()))?;
        Self::from_value(&value)
    }

    pub fn from_tree(tree: &DocTree) -> DocumentRecord {
        fn rec(spec: &NodeSpec) -> NodeRecord {
            NodeRecord {
                kind: spec.kind,
                text: spec.text.clone(),
                children: spec.children.iter().map(rec).collect(),
            }
        }
        let spec = tree.to_spec();
        DocumentRecord {
            doc_id: tree.doc_id.clone(),
            title: spec.text.clone(),
            nodes: spec.children.iter().map(rec).collect(),
        }
    }

    pub fn to_spec(&self) -> NodeSpec {
        fn spec(r: &NodeRecord) -> NodeSpec {
            NodeSpec::new(r.kind, r.text.clone())
                .with_children(r.children.iter().map(spec).collect())
        }
        NodeSpec::new(NodeKind::Title, self.title.clone())
            .with_children(self.nodes.iter().map(spec).collect())
    }
}

fn parse_err(path: &str, message: &str) -> Error {
    Error::Parse {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn str_field(obj: &serde_json::Map<String, Value>, key: &str, path: &str) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(parse_err(&format!("{path}.{key}"), "expected a string")),
        None => Err(parse_err(path, &format!("missing field `{key}`"))),
    }
}

fn node_list(value: &Value, path: &str) -> Result<Vec<NodeRecord>> {
    let arr = value
        .as_array()
        .ok_or_else(|| parse_err(path, "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| node(v, &format!("{path}[{i}]")))
        .collect()
}

fn node(value: &Value, path: &str) -> Result<NodeRecord> {
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err(path, "expected an object"))?;
    let kind_name = str_field(obj, "kind", path)?;
    let kind = NodeKind::parse(&kind_name).ok_or_else(|| {
        parse_err(
            &format!("{path}.kind"),
            &format!("unknown node kind `{kind_name}`"),
        )
    })?;
    let text = match obj.get("text") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(parse_err(&format!("{path}.text"), "expected a string")),
    };
    let children = match obj.get("children") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => node_list(v, &format!("{path}.children"))?,
    };
    Ok(NodeRecord {
        kind,
        text,
        children,
    })
}

/// Builds a validated tree from a document record.
pub fn ingest_document(record: &DocumentRecord) -> Result<DocTree> {
    let tree = DocTree::build(record.doc_id.clone(), record.to_spec()).map_err(|e| match e {
        Error::Nesting {
            path,
            parent,
            child,
        } => Error::Nesting {
            path: path.replacen("root.children", "$.nodes", 1),
            parent,
            child,
        },
        other => other,
    })?;
    Ok(tree)
}
