//! The linked class/protocol model.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::parse::ObjcCategory;
use super::{ClassLink, ObjcClass, ObjcError, ObjcMethod, ObjcProtocol, SelectorMap};

/// Outcome of the root meta-class self-cycle check for an in-image root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootCheck {
    pub class: String,
    /// The root meta-class's isa is itself.
    pub isa_self_cycle: bool,
    /// The root meta-class's superclass is the root class.
    pub superclass_is_root: bool,
}

impl RootCheck {
    pub fn holds(&self) -> bool {
        self.isa_self_cycle && self.superclass_is_root
    }
}

#[derive(Debug, Clone, Default)]
pub struct ObjcModel {
    /// In-image classes by address, then external placeholders.
    pub classes: Vec<ObjcClass>,
    pub protocols: Vec<ObjcProtocol>,
    pub selectors: SelectorMap,
    pub root_checks: Vec<RootCheck>,
    /// Superclass edges dropped because they closed a cycle: (class, superclass).
    pub dropped_superclass_edges: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
    superclass: Vec<Option<usize>>,
    isa: Vec<Option<usize>>,
    by_address: HashMap<u64, usize>,
    by_name: HashMap<(String, bool), usize>,
    protocol_by_address: HashMap<u64, usize>,
    impls: BTreeMap<u64, Vec<(usize, usize)>>,
}

fn placeholder_index(
    classes: &mut Vec<ObjcClass>,
    externals: &mut HashMap<(String, bool), usize>,
    name: &str,
    meta: bool,
    slot: u64,
) -> usize {
    let key = (name.to_string(), meta);
    if let Some(i) = externals.get(&key) {
        return *i;
    }
    classes.push(ObjcClass::placeholder(name.to_string(), slot, meta));
    externals.insert(key, classes.len() - 1);
    classes.len() - 1
}

/// Links parsed classes, protocols and categories into a navigable model.
pub fn build_hierarchy(
    mut classes: Vec<ObjcClass>,
    mut protocols: Vec<ObjcProtocol>,
    categories: Vec<ObjcCategory>,
    selectors: SelectorMap,
) -> ObjcModel {
    let mut warnings = Vec::new();
    let mut externals: HashMap<(String, bool), usize> = HashMap::new();
    for (i, c) in classes.iter().enumerate() {
        if c.is_external {
            externals.insert((c.name.clone(), c.is_metaclass), i);
        }
    }

    // Merge categories into their targets.
    for cat in &categories {
        match &cat.target {
            ClassLink::Local(a) => {
                let Some(ci) = classes.iter().position(|c| !c.is_external && c.address == *a) else {
                    warnings.push(format!("category {} targets unknown class {a:#x}", cat.name));
                    continue;
                };
                classes[ci].methods.extend(cat.instance_methods.iter().cloned());
                for p in &cat.protocol_refs {
                    if !classes[ci].protocol_refs.contains(p) {
                        classes[ci].protocol_refs.push(*p);
                    }
                }
                if !cat.class_methods.is_empty() {
                    let meta = match &classes[ci].metaclass_ref {
                        ClassLink::Local(m) => classes.iter().position(|c| !c.is_external && c.address == *m),
                        _ => None,
                    };
                    match meta {
                        Some(mi) => classes[mi].methods.extend(cat.class_methods.iter().cloned()),
                        None => warnings.push(format!("category {} class methods have no meta-class", cat.name)),
                    }
                }
            }
            ClassLink::External(name) => {
                let ci = placeholder_index(&mut classes, &mut externals, name, false, cat.target_slot);
                classes[ci].methods.extend(cat.instance_methods.iter().cloned());
                classes[ci].protocol_refs.extend(cat.protocol_refs.iter().copied());
                if !cat.class_methods.is_empty() {
                    let mi = placeholder_index(&mut classes, &mut externals, name, true, cat.target_slot);
                    classes[mi].methods.extend(cat.class_methods.iter().cloned());
                }
            }
            ClassLink::Nil => warnings.push(format!("category {} has no target class", cat.name)),
        }
    }

    // Make sure every external reference has a placeholder.
    let mut missing = Vec::new();
    for c in classes.iter().filter(|c| !c.is_external) {
        for (link, meta, slot) in [(&c.metaclass_ref, true, c.address), (&c.superclass_ref, c.is_metaclass, c.address + 8)] {
            if let ClassLink::External(n) = link {
                if !externals.contains_key(&(n.clone(), meta)) {
                    missing.push((n.clone(), meta, slot));
                }
            }
        }
    }
    for (n, meta, slot) in missing {
        placeholder_index(&mut classes, &mut externals, &n, meta, slot);
    }

    classes.sort_by(|a, b| {
        (a.is_external, a.address, &a.name, a.is_metaclass).cmp(&(b.is_external, b.address, &b.name, b.is_metaclass))
    });
    protocols.sort_by_key(|p| p.address);

    let mut by_address = HashMap::new();
    let mut by_name = HashMap::new();
    for (i, c) in classes.iter().enumerate() {
        if !c.is_external {
            by_address.entry(c.address).or_insert(i);
        }
        if !c.malformed {
            let key = (c.name.clone(), c.is_metaclass);
            // In-image definitions win over placeholders of the same name.
            by_name.entry(key).or_insert(i);
        }
    }

    let resolve = |link: &ClassLink, meta: bool| -> Option<usize> {
        match link {
            ClassLink::Nil => None,
            ClassLink::Local(a) => by_address.get(a).copied(),
            ClassLink::External(n) => by_name.get(&(n.clone(), meta)).copied(),
        }
    };
    let mut superclass: Vec<Option<usize>> = Vec::with_capacity(classes.len());
    let mut isa: Vec<Option<usize>> = Vec::with_capacity(classes.len());
    for c in &classes {
        let s = resolve(&c.superclass_ref, c.is_metaclass);
        if s.is_none() && c.superclass_ref != ClassLink::Nil {
            warnings.push(format!("superclass of {} is not a known class", c.name));
        }
        superclass.push(s);
        isa.push(if c.is_external { None } else { resolve(&c.metaclass_ref, true) });
    }

    // Drop the edge that closes each superclass cycle, walking classes in address order.
    let mut dropped = Vec::new();
    let mut done = vec![false; classes.len()];
    for start in 0..classes.len() {
        let mut path = BTreeSet::new();
        let mut cur = start;
        loop {
            if done[cur] {
                break;
            }
            path.insert(cur);
            match superclass[cur] {
                None => break,
                Some(next) if path.contains(&next) => {
                    warnings.push(
                        ObjcError::CyclicSuperclassChain(classes[cur].name.clone(), classes[next].name.clone())
                            .to_string(),
                    );
                    superclass[cur] = None;
                    dropped.push((cur, next));
                    break;
                }
                Some(next) => cur = next,
            }
        }
        for p in path {
            done[p] = true;
        }
    }

    // Root meta-class self-cycle validation for in-image roots.
    let mut root_checks = Vec::new();
    for (i, c) in classes.iter().enumerate() {
        if c.is_external || c.is_metaclass || c.malformed || c.superclass_ref != ClassLink::Nil {
            continue;
        }
        let check = match isa[i] {
            Some(m) => RootCheck {
                class: c.name.clone(),
                isa_self_cycle: classes[m].metaclass_ref == ClassLink::Local(classes[m].address),
                superclass_is_root: classes[m].superclass_ref == ClassLink::Local(c.address),
            },
            None => RootCheck { class: c.name.clone(), isa_self_cycle: false, superclass_is_root: false },
        };
        if !check.holds() {
            warnings.push(format!("root class {} does not close the meta-class cycle", c.name));
        }
        root_checks.push(check);
    }

    let mut impls: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    for (ci, c) in classes.iter().enumerate() {
        for (mi, m) in c.methods.iter().enumerate() {
            if let Some(a) = m.impl_address {
                impls.entry(a).or_default().push((ci, mi));
            }
        }
    }
    let protocol_by_address = protocols.iter().enumerate().map(|(i, p)| (p.address, i)).collect();

    ObjcModel {
        classes,
        protocols,
        selectors,
        root_checks,
        dropped_superclass_edges: dropped,
        warnings,
        superclass,
        isa,
        by_address,
        by_name,
        protocol_by_address,
        impls,
    }
}

impl ObjcModel {
    pub fn superclass_of(&self, class: usize) -> Option<usize> {
        self.superclass.get(class).copied().flatten()
    }

    pub fn isa_of(&self, class: usize) -> Option<usize> {
        self.isa.get(class).copied().flatten()
    }

    pub fn class_at(&self, address: u64) -> Option<usize> {
        self.by_address.get(&address).copied()
    }

    pub fn class_named(&self, name: &str, is_metaclass: bool) -> Option<usize> {
        self.by_name.get(&(name.to_string(), is_metaclass)).copied()
    }

    pub fn protocol_at(&self, address: u64) -> Option<usize> {
        self.protocol_by_address.get(&address).copied()
    }

    /// Walks from `class` up the superclass chain looking for `selector`.
    pub fn lookup_method(&self, class: usize, selector: &str) -> Option<(usize, &ObjcMethod)> {
        let mut cur = Some(class);
        let mut seen = BTreeSet::new();
        while let Some(c) = cur {
            if !seen.insert(c) {
                break;
            }
            if let Some(m) = self.classes[c].methods.iter().find(|m| m.selector == selector) {
                return Some((c, m));
            }
            cur = self.superclass_of(c);
        }
        None
    }

    /// Methods implemented at `address`: (class index, method index).
    pub fn methods_at(&self, address: u64) -> &[(usize, usize)] {
        self.impls.get(&address).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn impl_addresses(&self) -> impl Iterator<Item = u64> + '_ {
        self.impls.keys().copied()
    }

    /// `-[Class sel]` for the first method implemented at `address`.
    pub fn signature_at(&self, address: u64) -> Option<String> {
        let (c, m) = *self.methods_at(address).first()?;
        let class = &self.classes[c];
        Some(class.method_signature(&class.methods[m].selector))
    }

    /// Names of protocols adopted by a class, including protocol inheritance
    /// and adoptions of superclasses.
    pub fn adopted_protocols(&self, class: usize) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<u64> = Vec::new();
        let mut cur = Some(class);
        let mut seen_classes = BTreeSet::new();
        while let Some(c) = cur {
            if !seen_classes.insert(c) {
                break;
            }
            stack.extend(self.classes[c].protocol_refs.iter().copied());
            cur = self.superclass_of(c);
        }
        let mut seen = BTreeSet::new();
        while let Some(a) = stack.pop() {
            if !seen.insert(a) {
                continue;
            }
            if let Some(p) = self.protocol_at(a) {
                out.insert(self.protocols[p].name.clone());
                stack.extend(self.protocols[p].inherited_protocol_refs.iter().copied());
            }
        }
        out
    }

    /// The concrete class a meta-class belongs to (same name, not meta).
    pub fn instance_class_of(&self, meta: usize) -> Option<usize> {
        let c = &self.classes[meta];
        if !c.is_metaclass {
            return Some(meta);
        }
        self.class_named(&c.name, false)
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty() && self.protocols.is_empty() && self.selectors.by_selref_address.is_empty()
    }
}
