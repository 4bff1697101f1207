//! Line-oriented JSON persistence.
//!
//! ```text
//! lios-graph v1
//! {"t":"n","id":0,"l":"Program","p":{"name":"demo"}}
//! {"t":"e","s":0,"d":1,"l":"has_func","p":{}}
//! ```
//!
//! Node lines come first, ordered by id; ids are dense from 0. Edge lines
//! follow in edge-id order. Property values are JSON strings, integers and
//! booleans; byte blobs are written as `{"b64":"..."}`.

use std::io::{self, BufRead, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Map, Value as Json};

use super::{EdgeLabel, GraphError, Label, NodeId, PropertyGraph, Props, Value};

pub const GRAPH_HEADER: &str = "lios-graph v1";

fn props_json(p: &Props) -> Json {
    let mut m = Map::new();
    for (k, v) in p {
        let j = match v {
            Value::Text(s) => Json::String(s.clone()),
            Value::Int(i) => json!(i),
            Value::Bool(b) => Json::Bool(*b),
            Value::Bytes(b) => json!({ "b64": STANDARD.encode(b) }),
        };
        m.insert(k.clone(), j);
    }
    Json::Object(m)
}

pub fn dump(g: &PropertyGraph, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{GRAPH_HEADER}")?;
    for n in g.nodes() {
        writeln!(out, r#"{{"t":"n","id":{},"l":"{}","p":{}}}"#, n.id.0, n.label, props_json(&n.props))?;
    }
    for e in g.edges() {
        writeln!(out, r#"{{"t":"e","s":{},"d":{},"l":"{}","p":{}}}"#, e.src.0, e.dst.0, e.label, props_json(&e.props))?;
    }
    Ok(())
}

pub fn dump_to_string(g: &PropertyGraph) -> String {
    let mut buf = Vec::new();
    dump(g, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("dump is UTF-8")
}

fn props_from(j: &Json, line: usize) -> Result<Props, GraphError> {
    let bad = |reason: String| GraphError::MalformedDump { line, reason };
    let Json::Object(m) = j else { return Err(bad("`p` must be an object".into())) };
    let mut p = Props::new();
    for (k, v) in m {
        let value = match v {
            Json::String(s) => Value::Text(s.clone()),
            Json::Bool(b) => Value::Bool(*b),
            Json::Number(n) => Value::Int(n.as_i64().ok_or_else(|| bad(format!("property `{k}` is not an integer")))?),
            Json::Object(o) if o.len() == 1 && o.get("b64").is_some_and(Json::is_string) => {
                let text = o["b64"].as_str().unwrap();
                Value::Bytes(STANDARD.decode(text).map_err(|e| bad(format!("property `{k}`: {e}")))?)
            }
            _ => return Err(bad(format!("property `{k}` has an unsupported value"))),
        };
        p.insert(k.clone(), value);
    }
    Ok(p)
}

fn field<'a>(o: &'a Map<String, Json>, key: &str, line: usize) -> Result<&'a Json, GraphError> {
    o.get(key).ok_or_else(|| GraphError::MalformedDump { line, reason: format!("missing `{key}`") })
}

fn id_field(o: &Map<String, Json>, key: &str, line: usize) -> Result<u64, GraphError> {
    field(o, key, line)?
        .as_u64()
        .ok_or_else(|| GraphError::MalformedDump { line, reason: format!("`{key}` must be a non-negative integer") })
}

pub fn load(input: impl BufRead) -> Result<PropertyGraph, GraphError> {
    let mut g = PropertyGraph::new();
    let mut seen_edge = false;
    let mut saw_header = false;
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        let bad = |reason: String| GraphError::MalformedDump { line, reason };
        let text = raw.map_err(|e| bad(e.to_string()))?;
        if line == 1 {
            if text != GRAPH_HEADER {
                return Err(bad(format!("expected header `{GRAPH_HEADER}`")));
            }
            saw_header = true;
            continue;
        }
        if text.is_empty() {
            continue;
        }
        let j: Json = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let Json::Object(o) = j else { return Err(bad("expected a JSON object".into())) };
        let label = field(&o, "l", line)?.as_str().ok_or_else(|| bad("`l` must be a string".into()))?;
        let props = props_from(field(&o, "p", line)?, line)?;
        match field(&o, "t", line)?.as_str() {
            Some("n") => {
                if seen_edge {
                    return Err(bad("node after the first edge".into()));
                }
                let id = id_field(&o, "id", line)?;
                if id != g.node_count() as u64 {
                    return Err(bad(format!("node id {id} out of sequence, expected {}", g.node_count())));
                }
                let label: Label = label.parse().map_err(|e: GraphError| bad(e.to_string()))?;
                g.add_labeled(label, props).map_err(|e| bad(e.to_string()))?;
            }
            Some("e") => {
                seen_edge = true;
                let s = NodeId(id_field(&o, "s", line)?);
                let d = NodeId(id_field(&o, "d", line)?);
                let label: EdgeLabel = label.parse().map_err(|e: GraphError| bad(e.to_string()))?;
                g.add_labeled_edge(s, d, label, props).map_err(|e| bad(e.to_string()))?;
            }
            _ => return Err(bad("`t` must be \"n\" or \"e\"".into())),
        }
    }
    if !saw_header {
        return Err(GraphError::MalformedDump { line: 1, reason: format!("expected header `{GRAPH_HEADER}`") });
    }
    Ok(g)
}

pub fn load_str(s: &str) -> Result<PropertyGraph, GraphError> {
    load(s.as_bytes())
}
