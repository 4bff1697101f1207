//! `lios`: lift iOS binaries into a property graph, query it and report findings.

mod objc_dump;
mod repl;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lios_core::analyses::{Report, RuleSet, Severity};
use lios_core::pipeline::{lift_ingested, LiftOptions};
use lios_core::supergraph::{dump, load, PropertyGraph};
use serde_json::json;

#[derive(Parser)]
#[command(name = "lios", version, about = "Lift iOS arm64 binaries into a queryable property graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lift an .ipa or Mach-O, run the rules and write graph, findings and stats.
    Lift {
        input: PathBuf,
        /// Entitlements plist used instead of the one in the code signature.
        #[arg(long)]
        entitlements: Option<PathBuf>,
        /// Rule file; the bundled rules are used when absent.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Longest data-flow path followed by taint rules.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        lmax: Option<u64>,
        /// Interprocedural depth for call target resolution.
        #[arg(long, default_value_t = 2)]
        depth: usize,
    },
    /// Evaluate queries against a graph dump, from `-e` or interactively.
    Query {
        graph: PathBuf,
        #[arg(short = 'e', long = "expr")]
        expr: Option<String>,
    },
    /// Print the findings report for a graph dump.
    Report {
        graph: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Print the Objective-C class hierarchy of a binary.
    DumpObjc { input: PathBuf },
    /// Build a fixture binary, its .ipa and expected graph from a manifest.
    Fixturegen {
        /// Manifest file, or the name of a bundled manifest.
        manifest: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LIOS_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain joined by `: `, leaving out causes already quoted by the message before them.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !last.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        last = text;
    }
    out
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Lift { input, entitlements, rules, out, lmax, depth } => {
            lift(&input, entitlements.as_deref(), rules.as_deref(), &out, lmax.map(|n| n as usize), depth)
        }
        Command::Query { graph, expr } => {
            let g = load_graph(&graph)?;
            match expr {
                Some(e) => repl::one_shot(&g, &e, &mut std::io::stdout().lock()),
                None => {
                    repl::interactive(&g, std::io::stdin().lock(), &mut std::io::stdout().lock())?;
                    Ok(ExitCode::SUCCESS)
                }
            }
        }
        Command::Report { graph, rules } => {
            let g = load_graph(&graph)?;
            let rules = load_rules(rules.as_deref(), None)?;
            let report = Report::build(&g, &rules);
            println!("{}", serde_json::to_string_pretty(&report.to_json(&g))?);
            Ok(exit_for(&report))
        }
        Command::DumpObjc { input } => {
            let app = lios_core::ingest::ingest(&input).context("ingest")?;
            let model = lios_core::objc::analyze(&app.image);
            print!("{}", objc_dump::render(&model));
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixturegen { manifest, out } => fixturegen(&manifest, &out),
    }
}

fn exit_for(report: &Report) -> ExitCode {
    if report.max_severity() >= Some(Severity::Critical) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn load_graph(path: &Path) -> Result<PropertyGraph> {
    let f = fs::File::open(path).with_context(|| format!("load: {}", path.display()))?;
    load(BufReader::new(f)).with_context(|| format!("load: {}", path.display()))
}

fn load_rules(path: Option<&Path>, lmax: Option<usize>) -> Result<RuleSet> {
    let mut rules = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("rules: {}", p.display()))?;
            RuleSet::from_json(&text).with_context(|| format!("rules: {}", p.display()))?
        }
        None => RuleSet::default(),
    };
    if lmax.is_some() {
        rules.lmax = lmax;
    }
    Ok(rules)
}

fn lift(
    input: &Path,
    entitlements: Option<&Path>,
    rules: Option<&Path>,
    out: &Path,
    lmax: Option<usize>,
    depth: usize,
) -> Result<ExitCode> {
    let rules = load_rules(rules, lmax)?;
    let entitlements = entitlements
        .map(|p| fs::read_to_string(p).with_context(|| format!("entitlements: {}", p.display())))
        .transpose()?;

    let start = Instant::now();
    let app = lios_core::ingest::ingest(input).context("ingest")?;
    let ingest_time = start.elapsed();
    let opts = LiftOptions { depth, ..Default::default() };
    let lifted = lift_ingested(&app, entitlements, &opts);
    for w in &lifted.warnings {
        log::warn!("{w}");
    }
    let g = &lifted.graph;

    let start = Instant::now();
    let report = Report::build(g, &rules);
    let analysis_time = start.elapsed();

    fs::create_dir_all(out).with_context(|| format!("output: {}", out.display()))?;
    let graph_path = out.join(format!("{}.graph.jsonl", app.name));
    let mut w = std::io::BufWriter::new(fs::File::create(&graph_path).context("dump")?);
    dump(g, &mut w).context("dump")?;
    w.flush().context("dump")?;
    let dump_bytes = fs::metadata(&graph_path).map(|m| m.len()).unwrap_or(0);

    let findings_path = out.join(format!("{}.findings.json", app.name));
    fs::write(&findings_path, serde_json::to_string_pretty(&report.to_json(g))? + "\n").context("report")?;

    let mut timings = serde_json::Map::new();
    timings.insert("ingest".into(), json!(ingest_time.as_secs_f64() * 1e3));
    for (stage, d) in &lifted.timings {
        timings.insert((*stage).into(), json!(d.as_secs_f64() * 1e3));
    }
    timings.insert("analyses".into(), json!(analysis_time.as_secs_f64() * 1e3));
    let stats = json!({
        "program": app.name,
        "nodes": g.node_count(),
        "edges": g.edge_count(),
        "properties": g.property_count(),
        "nodes_by_label": g.node_counts(),
        "edges_by_label": g.edge_counts(),
        "dump_bytes": dump_bytes,
        "warnings": lifted.warnings.len(),
        "findings": report.findings.len(),
        "timings_ms": timings,
    });
    let stats_path = out.join(format!("{}.stats.json", app.name));
    fs::write(&stats_path, serde_json::to_string_pretty(&stats)? + "\n").context("stats")?;

    println!("{}", serde_json::to_string(&stats)?);
    for f in &report.findings {
        log::info!("{} [{}] {}", f.rule, f.severity.as_str(), f.message);
    }
    Ok(exit_for(&report))
}

fn fixturegen(manifest: &str, out: &Path) -> Result<ExitCode> {
    let m = match lios_fixturegen::builtin(manifest) {
        Some(m) if !Path::new(manifest).exists() => m,
        _ => {
            let text = fs::read_to_string(manifest).with_context(|| format!("manifest: {manifest}"))?;
            lios_fixturegen::parse_manifest(&text).context("manifest")?
        }
    };
    if m.name.is_empty() || m.name.contains(['/', '\\']) {
        bail!("manifest: name must be a plain file name");
    }
    let fx = lios_fixturegen::generate(&m).context("generate")?;
    fs::create_dir_all(out).with_context(|| format!("output: {}", out.display()))?;
    fs::write(out.join(&m.name), &fx.binary)?;
    fs::write(out.join(format!("{}.ipa", m.name)), lios_fixturegen::package_ipa(&m, &fx.binary)?)?;
    fs::write(out.join(format!("{}.expected.json", m.name)), serde_json::to_string_pretty(&fx.expected)? + "\n")?;
    println!("{}", out.join(&m.name).display());
    Ok(ExitCode::SUCCESS)
}
