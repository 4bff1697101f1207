//! Query evaluation for `lios query`.

use std::io::{BufRead, IsTerminal, Write};
use std::process::ExitCode;

use anyhow::Result;
use lios_core::analyses::verbs;
use lios_core::supergraph::PropertyGraph;
use lios_core::traverse::parse_query_with;
use serde_json::json;

const HELP: &str = "\
queries:   functions() | classes() | entrypoints(), followed by .step(...)
steps:     calling(\"N\") named(\"N\") implementing(\"P\") has(\"key\", value)
           out(\"label\") in(\"label\") dedup() limit(n) tainted(src, \"sink\"[, arg])
commands:  :help  :stats  :quit";

/// Evaluates one query, writing one JSON line per result. Errors go out as a
/// JSON line too; the return value says whether the query parsed.
fn eval_line(g: &PropertyGraph, text: &str, out: &mut impl Write) -> Result<bool> {
    match parse_query_with(text, &verbs()) {
        Ok(q) => {
            for e in q.eval(g) {
                writeln!(out, "{}", e.to_json(g))?;
            }
            Ok(true)
        }
        Err(e) => {
            writeln!(out, "{}", json!({ "error": e.to_string() }))?;
            Ok(false)
        }
    }
}

pub fn one_shot(g: &PropertyGraph, text: &str, out: &mut impl Write) -> Result<ExitCode> {
    Ok(if eval_line(g, text, out)? { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn stats(g: &PropertyGraph) -> serde_json::Value {
    json!({
        "nodes": g.node_count(),
        "edges": g.edge_count(),
        "properties": g.property_count(),
        "nodes_by_label": g.node_counts(),
        "edges_by_label": g.edge_counts(),
    })
}

pub fn interactive(g: &PropertyGraph, input: impl BufRead, out: &mut impl Write) -> Result<()> {
    let prompt = std::io::stdin().is_terminal();
    let mut lines = input.lines();
    loop {
        if prompt {
            write!(out, "lios> ")?;
            out.flush()?;
        }
        let Some(line) = lines.next() else { break };
        let line = line?;
        match line.trim() {
            "" => {}
            ":quit" | ":q" => break,
            ":help" => writeln!(out, "{HELP}")?,
            ":stats" => writeln!(out, "{}", stats(g))?,
            cmd if cmd.starts_with(':') => writeln!(out, "{}", json!({ "error": format!("unknown command {cmd}") }))?,
            q => {
                eval_line(g, q, out)?;
            }
        }
        out.flush()?;
    }
    Ok(())
}
