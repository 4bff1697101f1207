//! Declarative rule files.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::taint::{Sink, Source, TaintSpec};
use super::Severity;

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("rule file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rule {id}: {reason}")]
    Invalid { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    /// Taint from a delegate method's request argument into class or selector lookup, plus an invocation.
    WebviewBridge,
    /// Taint paths in any function, or in implementations of the listed selectors.
    Taint,
    /// App Transport Security settings in Info.plist.
    Ats,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum SourceDecl {
    Arg { arg: u8 },
    Return { returns: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkDecl {
    pub callee: String,
    #[serde(default)]
    pub arg: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    pub kind: RuleKind,
    pub severity: Severity,
    #[serde(default)]
    pub message: String,
    /// Selector fragments picking the methods a rule looks at.
    #[serde(default)]
    pub selectors: Vec<String>,
    #[serde(default)]
    pub sources: Vec<SourceDecl>,
    #[serde(default)]
    pub sinks: Vec<SinkDecl>,
    #[serde(default)]
    pub sanitizers: Vec<String>,
    /// Callee name -> argument registers its result depends on.
    #[serde(default)]
    pub summaries: BTreeMap<String, Vec<u8>>,
    /// Calls that execute a dynamically chosen method (`Class.selector` or selector).
    #[serde(default)]
    pub invokers: Vec<String>,
}

impl Rule {
    pub fn taint_spec(&self) -> TaintSpec {
        TaintSpec {
            sources: self
                .sources
                .iter()
                .map(|s| match s {
                    SourceDecl::Arg { arg } => Source::Arg(*arg),
                    SourceDecl::Return { returns } => Source::Return(returns.clone()),
                })
                .collect(),
            sinks: self.sinks.iter().map(|s| Sink { callee: s.callee.clone(), arg: s.arg }).collect(),
            sanitizers: self.sanitizers.clone(),
            summaries: self.summaries.clone(),
            lmax: None,
        }
    }

    fn check(&self) -> Result<(), RuleError> {
        let bad = |reason: &str| Err(RuleError::Invalid { id: self.id.clone(), reason: reason.to_string() });
        if self.id.is_empty() {
            return bad("empty id");
        }
        let names = self.sinks.iter().map(|s| &s.callee).chain(&self.sanitizers).chain(&self.selectors).chain(&self.invokers);
        if names.into_iter().any(String::is_empty) {
            return bad("empty name");
        }
        if self.sources.iter().any(|s| matches!(s, SourceDecl::Return { returns } if returns.is_empty())) {
            return bad("empty source name");
        }
        if self.sources.iter().any(|s| matches!(s, SourceDecl::Arg { arg } if *arg > 7))
            || self.sinks.iter().any(|s| s.arg > 7)
        {
            return bad("argument index above x7");
        }
        match self.kind {
            RuleKind::WebviewBridge | RuleKind::Taint if self.sources.is_empty() || self.sinks.is_empty() => {
                bad("taint rules need sources and sinks")
            }
            RuleKind::WebviewBridge if self.selectors.is_empty() => bad("needs selectors"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    /// Path length bound for every taint rule in the set.
    #[serde(default)]
    pub lmax: Option<usize>,
}

impl RuleSet {
    pub fn from_json(text: &str) -> Result<RuleSet, RuleError> {
        let set: RuleSet = serde_json::from_str(text)?;
        if set.lmax == Some(0) {
            return Err(RuleError::Invalid { id: "*".into(), reason: "lmax must be at least 1".into() });
        }
        for r in &set.rules {
            r.check()?;
        }
        Ok(set)
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::from_json(include_str!("rules.json")).expect("bundled rules are valid")
    }
}
