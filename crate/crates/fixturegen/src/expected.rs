//! Ground truth emitted alongside every generated binary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpRef {
    Nil,
    Local(u64),
    External(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpMethod {
    pub sel: String,
    pub imp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpClass {
    pub name: String,
    pub address: u64,
    pub is_meta: bool,
    pub isa: ExpRef,
    pub superclass: ExpRef,
    pub methods: Vec<ExpMethod>,
    pub ivars: Vec<(String, String, u32)>,
    pub properties: Vec<(String, String)>,
    pub protocols: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpPlaceholder {
    pub name: String,
    pub is_meta: bool,
    pub methods: Vec<ExpMethod>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpProtocol {
    pub name: String,
    pub address: u64,
    pub required: Vec<String>,
    pub optional: Vec<String>,
    pub inherits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpBlock {
    pub start: u64,
    pub end: u64,
    pub succs: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpFunction {
    /// Name the lifted graph should carry after linking.
    pub name: String,
    pub symbol: Option<String>,
    pub address: u64,
    pub end: u64,
    pub exported: bool,
    pub instructions: usize,
    pub blocks: Vec<ExpBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExpTarget {
    Internal(u64),
    External { name: String, sel: Option<String>, rcv: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpCallSite {
    pub caller: u64,
    pub site: u64,
    pub targets: Vec<ExpTarget>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expected {
    pub name: String,
    pub image_base: u64,
    /// `__TEXT,__text` address and size.
    pub text: (u64, u64),
    pub function_starts: Vec<u64>,
    pub functions: Vec<ExpFunction>,
    /// Import names without the leading underscore.
    pub imports: Vec<String>,
    pub stubs: BTreeMap<u64, String>,
    pub classes: Vec<ExpClass>,
    pub placeholders: Vec<ExpPlaceholder>,
    /// Superclass edges (class, superclass) that close a cycle and are dropped.
    pub dropped_superclass: Vec<(u64, u64)>,
    pub protocols: Vec<ExpProtocol>,
    pub selrefs: BTreeMap<String, Vec<u64>>,
    pub methname: BTreeMap<String, u64>,
    pub classlist_len: usize,
    pub call_sites: Vec<ExpCallSite>,
    pub node_counts: BTreeMap<String, usize>,
    pub edge_counts: BTreeMap<String, usize>,
    pub entitlements: Option<String>,
    /// `__DATA` segment: vm address, file size, vm size.
    pub data_segment: (u64, u64, u64),
    pub file_size: usize,
}

impl Expected {
    pub fn function(&self, name: &str) -> Option<&ExpFunction> {
        self.functions
            .iter()
            .find(|f| f.name == name || f.symbol.as_deref() == Some(name))
    }

    pub fn class(&self, name: &str, is_meta: bool) -> Option<&ExpClass> {
        self.classes.iter().find(|c| c.name == name && c.is_meta == is_meta)
    }

    /// Function-level call edges: (caller address, target), deduplicated.
    pub fn call_edges(&self) -> std::collections::BTreeSet<(u64, ExpTarget)> {
        self.call_sites
            .iter()
            .flat_map(|s| s.targets.iter().map(move |t| (s.caller, t.clone())))
            .collect()
    }
}
