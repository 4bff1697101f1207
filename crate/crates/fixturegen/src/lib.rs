//! Generator for small arm64 Mach-O binaries with known ground truth.
//!
//! A [`Manifest`] describes functions as assembly text plus Objective-C
//! metadata; [`generate`] lays out a complete 64-bit Mach-O image and returns
//! it together with an [`Expected`] record of everything a correct lifter
//! should recover from it.

pub mod asm;
pub mod build;
pub mod container;
pub mod expected;
pub mod manifest;

pub use build::{Fixture, TEXT_BASE};
pub use expected::*;
pub use manifest::*;

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("assembler: {0}")]
    Asm(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("zip: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn generate(m: &Manifest) -> Result<Fixture, FixtureError> {
    build::build(m)
}

pub fn parse_manifest(text: &str) -> Result<Manifest, FixtureError> {
    Ok(serde_json::from_str(text)?)
}

macro_rules! builtins {
    ($($name:literal),* $(,)?) => {
        const BUILTINS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../manifests/", $name, ".json")))),*
        ];
    };
}

builtins!(
    "plain",
    "hierarchy",
    "external_root",
    "root_cycle",
    "superclass_cycle",
    "dangling",
    "relative",
    "msgsend",
    "cfg",
    "webview_vuln",
    "webview_sanitized",
    "webview_nodelegate",
    "ats_arbitrary",
    "ats_domain",
    "ats_absent",
    "inventory",
    "entitled",
    "malformed_signature",
    "encrypted",
    "large",
);

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(n, _)| *n)
}

/// One of the manifests shipped with the crate.
pub fn builtin(name: &str) -> Option<Manifest> {
    BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| parse_manifest(text).unwrap_or_else(|e| panic!("builtin manifest {n}: {e}")))
}

/// Packages a generated binary as an .ipa using the manifest's Info.plist.
pub fn package_ipa(m: &Manifest, binary: &[u8]) -> Result<Vec<u8>, FixtureError> {
    let info = m
        .info_plist
        .clone()
        .unwrap_or_else(|| serde_json::json!({ "CFBundleExecutable": m.name }));
    let exe = info
        .get("CFBundleExecutable")
        .and_then(|v| v.as_str())
        .unwrap_or(&m.name)
        .to_string();
    let xml = container::plist_xml(&info);
    container::ipa(&m.name, &exe, binary, xml.as_bytes())
}
