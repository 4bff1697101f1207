//! Declarative fixture description.
//!
//! A manifest lists functions (as assembly text), imports, Objective-C
//! metadata and a few layout knobs. Everything the generator emits is derived
//! from it, so the same manifest doubles as ground truth for tests.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    /// Imported C symbols, with their leading underscore (`_objc_msgSend`).
    #[serde(default)]
    pub imports: Vec<String>,
    #[serde(default)]
    pub functions: Vec<FunctionDecl>,
    #[serde(default)]
    pub classes: Vec<ClassDecl>,
    #[serde(default)]
    pub protocols: Vec<ProtocolDecl>,
    #[serde(default)]
    pub categories: Vec<CategoryDecl>,
    /// Extra `__objc_selrefs` slots beyond the ones code references.
    /// Repeating a selector yields several slots sharing one string.
    #[serde(default)]
    pub selrefs: Vec<String>,
    /// Embedded entitlements XML, written into a code-signature superblob.
    #[serde(default)]
    pub entitlements: Option<String>,
    /// Write a superblob whose entitlements slot overruns the blob.
    #[serde(default)]
    pub malformed_signature: bool,
    /// Info.plist content used when packaging an .ipa.
    #[serde(default)]
    pub info_plist: Option<serde_json::Value>,
    /// Size of a zero-fill `__DATA,__bss` tail.
    #[serde(default)]
    pub zerofill: u64,
    /// Bytes of opaque `__TEXT,__const` padding (for size-scaled fixtures).
    #[serde(default)]
    pub padding: u64,
    /// Emit an LC_ENCRYPTION_INFO_64 with this cryptid.
    #[serde(default)]
    pub cryptid: Option<u32>,
    /// Emit an unknown load command with this id.
    #[serde(default)]
    pub unknown_load_command: Option<u32>,
    /// Class names whose `__objc_classlist` slot is redirected into unmapped memory.
    #[serde(default)]
    pub dangling_classlist: Vec<String>,
    /// Number of synthetic leaf functions appended after the declared ones.
    #[serde(default)]
    pub synthetic_functions: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDecl {
    /// Symbol name: `_main`, `_helper`, or an Objective-C style `-[A doWork]`.
    pub name: String,
    #[serde(default)]
    pub exported: bool,
    /// Omit the symbol table entry entirely.
    #[serde(default)]
    pub stripped: bool,
    /// Assembly lines. Labels end with `:`; `; expect: ...` annotates call targets.
    pub code: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDecl {
    pub name: String,
    /// In-image class name, external class name, or absent for an in-image root.
    #[serde(default)]
    pub superclass: Option<String>,
    #[serde(default)]
    pub methods: Vec<MethodDecl>,
    #[serde(default)]
    pub class_methods: Vec<MethodDecl>,
    #[serde(default)]
    pub ivars: Vec<IvarDecl>,
    #[serde(default)]
    pub properties: Vec<PropertyDecl>,
    #[serde(default)]
    pub protocols: Vec<String>,
    /// Emit method lists in the relative (small) format.
    #[serde(default)]
    pub relative_methods: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodDecl {
    pub sel: String,
    /// Name of the implementing function.
    #[serde(rename = "impl")]
    pub imp: String,
    #[serde(default = "default_types")]
    pub types: String,
}

fn default_types() -> String {
    "v16@0:8".to_string()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvarDecl {
    pub name: String,
    #[serde(rename = "type", default = "default_ivar_type")]
    pub ty: String,
    pub offset: u32,
}

fn default_ivar_type() -> String {
    "@".to_string()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyDecl {
    pub name: String,
    pub attributes: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolDecl {
    pub name: String,
    #[serde(default)]
    pub required: Vec<String>,
    #[serde(default)]
    pub optional: Vec<String>,
    #[serde(default)]
    pub inherits: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryDecl {
    pub name: String,
    /// Target class: in-image or external.
    pub class: String,
    #[serde(default)]
    pub methods: Vec<MethodDecl>,
    #[serde(default)]
    pub class_methods: Vec<MethodDecl>,
}
