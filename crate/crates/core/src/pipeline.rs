//! Orchestration: frontends, graph build and passes.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use crate::disasm::resolve::analyse_functions;
use crate::disasm::{CallInfo, CallSite, FunctionBody, Resolver};
use crate::macho::MachoImage;
use crate::objc::{self, ObjcModel};
use crate::supergraph::{build_from_frontends, link_pass, mark_entrypoints, EntrypointConfig, Frontends, PropertyGraph};

#[derive(Debug, Clone)]
pub struct LiftOptions {
    /// Interprocedural depth for value backtracing.
    pub depth: usize,
    pub threads: usize,
    pub objc: bool,
    pub disasm: bool,
    pub entrypoints: EntrypointConfig,
}

impl Default for LiftOptions {
    fn default() -> Self {
        LiftOptions {
            depth: 2,
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8),
            objc: true,
            disasm: true,
            entrypoints: EntrypointConfig::default(),
        }
    }
}

/// Metadata that does not come from the binary.
#[derive(Debug, Clone, Default)]
pub struct AppMetadata {
    pub name: String,
    /// Info.plist as canonical JSON.
    pub info: Option<String>,
    /// Replaces the entitlements embedded in the code signature.
    pub entitlements: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Lifted {
    pub graph: PropertyGraph,
    pub warnings: Vec<String>,
    pub timings: Vec<(&'static str, Duration)>,
}

fn timed<T>(timings: &mut Vec<(&'static str, Duration)>, stage: &'static str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.push((stage, start.elapsed()));
    out
}

/// Lifts a parsed image into a linked graph with entry points marked.
pub fn lift_image(image: &MachoImage, meta: &AppMetadata, opts: &LiftOptions) -> Lifted {
    let mut timings = Vec::new();
    let mut warnings: Vec<String> = image.warnings.clone();
    let info = CallInfo::from_image(image);

    // Class hierarchy and function bodies are independent of each other.
    let start = Instant::now();
    let (model, (bodies, body_warnings)) = std::thread::scope(|s| {
        let model = s.spawn(|| if opts.objc { objc::analyze(image) } else { ObjcModel::default() });
        let bodies = if opts.disasm { analyse_functions(image, &info, opts.threads) } else { Default::default() };
        (model.join().expect("objc frontend panicked"), bodies)
    });
    timings.push(("frontends", start.elapsed()));
    warnings.extend(model.warnings.iter().cloned());
    warnings.extend(body_warnings);

    let resolver = Resolver::with_bodies(image, &model, info, bodies, opts.depth);
    let call_sites: Vec<CallSite> =
        timed(&mut timings, "devirtualize", || resolver.bodies().values().flat_map(|b| resolver.call_sites(b)).collect());
    let bodies: BTreeMap<u64, FunctionBody> = resolver.into_bodies();

    let mut frontends = Frontends::from_image(&meta.name, image);
    frontends.info = meta.info.clone();
    if meta.entitlements.is_some() {
        frontends.entitlements = meta.entitlements.clone();
    }
    if opts.objc {
        frontends.model = Some(&model);
    }
    frontends.bodies = Some(&bodies);
    frontends.call_sites = &call_sites;
    let (mut graph, build_warnings) = timed(&mut timings, "build", || build_from_frontends(&frontends));
    warnings.extend(build_warnings);

    let linked = timed(&mut timings, "link", || link_pass(&mut graph));
    warnings.extend(linked.warnings);
    timed(&mut timings, "entrypoints", || mark_entrypoints(&mut graph, &opts.entrypoints));
    Lifted { graph, warnings, timings }
}

/// Lifts an ingested app, carrying its Info.plist into the graph.
pub fn lift_ingested(app: &crate::ingest::Ingested, entitlements: Option<String>, opts: &LiftOptions) -> Lifted {
    let meta = AppMetadata { name: app.name.clone(), info: app.info.as_ref().map(|i| i.canonical_json()), entitlements };
    lift_image(&app.image, &meta, opts)
}
