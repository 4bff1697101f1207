//! Mach-O image writer.
//!
//! Layout: `__PAGEZERO`, `__TEXT` (code, stubs, strings), `__DATA` (GOT,
//! Objective-C metadata, optional zero-fill tail) and `__LINKEDIT` (bind
//! opcodes, function starts, symbols, code signature). Pointers are written as
//! plain virtual addresses; references to imported symbols are left zero and
//! described by classic dyld bind opcodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::asm::{self, Inst, Line, Resolver, SymRef};
use crate::expected::*;
use crate::manifest::{ClassDecl, Manifest, MethodDecl};
use crate::FixtureError;

pub const TEXT_BASE: u64 = 0x1_0000_0000;
pub const PAGE: u64 = 0x4000;
pub const CPU_TYPE_ARM64: u32 = 0x0100_000C;
/// Classlist slots of dangling entries point here; nothing is mapped there.
pub const DANGLING_ADDR: u64 = 0x7777_0000_0000;

const LC_SEGMENT_64: u32 = 0x19;
const LC_SYMTAB: u32 = 0x2;
const LC_DYSYMTAB: u32 = 0xB;
const LC_LOAD_DYLIB: u32 = 0xC;
const LC_CODE_SIGNATURE: u32 = 0x1D;
const LC_FUNCTION_STARTS: u32 = 0x26;
const LC_ENCRYPTION_INFO_64: u32 = 0x2C;
const LC_DYLD_INFO_ONLY: u32 = 0x8000_0022;
const LC_MAIN: u32 = 0x8000_0028;

const S_ZEROFILL: u32 = 0x1;
const S_CSTRING_LITERALS: u32 = 0x2;
const S_NON_LAZY_SYMBOL_POINTERS: u32 = 0x6;
const S_SYMBOL_STUBS: u32 = 0x8;
const S_ATTR_PURE_INSTRUCTIONS: u32 = 0x8000_0000;
const S_ATTR_SOME_INSTRUCTIONS: u32 = 0x400;

const DYLIB_PATH: &str = "/System/Library/Frameworks/Foundation.framework/Foundation";

pub struct Fixture {
    pub binary: Vec<u8>,
    pub expected: Expected,
}

fn align(v: u64, a: u64) -> u64 {
    v.div_ceil(a) * a
}

fn uleb(mut v: u64, out: &mut Vec<u8>) {
    loop {
        let byte = (v & 0x7F) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            break;
        }
        out.push(byte | 0x80);
    }
}

fn strip_underscore(s: &str) -> String {
    s.strip_prefix('_').unwrap_or(s).to_string()
}

/// A function after parsing: instructions with attached labels and expectations.
struct ParsedFn {
    name: String,
    exported: bool,
    stripped: bool,
    insts: Vec<Inst>,
    expects: Vec<Option<String>>,
    labels: HashMap<String, usize>,
}

fn parse_function(name: &str, exported: bool, stripped: bool, code: &[String]) -> Result<ParsedFn, FixtureError> {
    let mut f = ParsedFn {
        name: name.to_string(),
        exported,
        stripped,
        insts: Vec::new(),
        expects: Vec::new(),
        labels: HashMap::new(),
    };
    let mut pending: Vec<String> = Vec::new();
    for src in code {
        let Line { label, inst, expect } = asm::parse_line(src)?;
        if let Some(l) = label {
            pending.push(l);
        }
        if let Some(inst) = inst {
            for l in pending.drain(..) {
                if f.labels.insert(l.clone(), f.insts.len()).is_some() {
                    return Err(FixtureError::Asm(format!("duplicate label {l} in {name}")));
                }
            }
            f.insts.push(inst);
            f.expects.push(expect);
        }
    }
    if !pending.is_empty() {
        return Err(FixtureError::Asm(format!("dangling label {:?} in {name}", pending)));
    }
    if f.insts.is_empty() {
        return Err(FixtureError::Manifest(format!("function {name} has no instructions")));
    }
    Ok(f)
}

fn synthetic_code(i: usize, total: usize, has_nslog: bool) -> Vec<String> {
    let mut code = vec![
        "stp x29, x30, [sp, #-16]!".to_string(),
        "mov x29, sp".to_string(),
        format!("mov x0, #{}", i),
        "cbz x0, Lskip".to_string(),
        "sub x0, x0, #1".to_string(),
    ];
    if i > 0 {
        code.push(format!("bl _synth_{}", i - 1));
    }
    if has_nslog && i + 1 == total {
        code.push("bl _NSLog".to_string());
    }
    code.extend([
        "Lskip: ldp x29, x30, [sp], #16".to_string(),
        "ret".to_string(),
    ]);
    code
}

/// NUL-terminated, deduplicated string pool.
#[derive(Default)]
struct StrPool {
    bytes: Vec<u8>,
    index: BTreeMap<String, u64>,
}

impl StrPool {
    fn add(&mut self, s: &str) {
        if !self.index.contains_key(s) {
            self.index.insert(s.to_string(), self.bytes.len() as u64);
            self.bytes.extend_from_slice(s.as_bytes());
            self.bytes.push(0);
        }
    }
    fn off(&self, s: &str) -> u64 {
        self.index[s]
    }
}

struct SectionPlan {
    seg: &'static str,
    name: &'static str,
    flags: u32,
    align_log2: u32,
    size: u64,
    addr: u64,
    reserved1: u32,
    reserved2: u32,
}

/// Addresses of everything code or metadata may point at.
#[derive(Default)]
struct Symbols {
    functions: HashMap<String, u64>,
    stubs: HashMap<String, u64>,
    selrefs: HashMap<String, u64>,
    methname: HashMap<String, u64>,
    classes: HashMap<String, u64>,
    metas: HashMap<String, u64>,
    classrefs: HashMap<String, u64>,
    cfstrs: HashMap<String, u64>,
    ivars: HashMap<String, u64>,
    protocols: HashMap<String, u64>,
}

struct FnResolver<'a> {
    syms: &'a Symbols,
    labels: &'a HashMap<String, usize>,
    fn_base: u64,
}

impl Resolver for FnResolver<'_> {
    fn resolve(&self, sym: &SymRef) -> Result<u64, FixtureError> {
        let missing = || FixtureError::Asm(format!("unresolved symbol {sym:?}"));
        let s = self.syms;
        match sym {
            SymRef::Name(n) => {
                if let Some(i) = self.labels.get(n) {
                    return Ok(self.fn_base + 4 * *i as u64);
                }
                s.functions.get(n).or_else(|| s.stubs.get(n)).copied().ok_or_else(missing)
            }
            SymRef::Sel(n) => s.selrefs.get(n).copied().ok_or_else(missing),
            SymRef::Methname(n) => s.methname.get(n).copied().ok_or_else(missing),
            SymRef::Class(n) => s.classes.get(n).copied().ok_or_else(missing),
            SymRef::Classref(n) => s.classrefs.get(n).copied().ok_or_else(missing),
            SymRef::Cfstr(n) => s.cfstrs.get(n).copied().ok_or_else(missing),
            SymRef::Ivar(n) => s.ivars.get(n).copied().ok_or_else(missing),
        }
    }
}

/// Little-endian writer over a fixed-size region.
struct Region {
    base: u64,
    bytes: Vec<u8>,
}

impl Region {
    fn new(base: u64, size: u64) -> Self {
        Region { base, bytes: vec![0; size as usize] }
    }
    fn u32(&mut self, addr: u64, v: u32) {
        let o = (addr - self.base) as usize;
        self.bytes[o..o + 4].copy_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, addr: u64, v: i32) {
        self.u32(addr, v as u32)
    }
    fn u64(&mut self, addr: u64, v: u64) {
        let o = (addr - self.base) as usize;
        self.bytes[o..o + 8].copy_from_slice(&v.to_le_bytes());
    }
    fn put(&mut self, addr: u64, data: &[u8]) {
        let o = (addr - self.base) as usize;
        self.bytes[o..o + data.len()].copy_from_slice(data);
    }
}

/// Bump allocator for `__objc_const`-style sections, keyed by name.
#[derive(Default)]
struct Alloc {
    size: u64,
    keys: HashMap<String, u64>,
}

impl Alloc {
    fn alloc(&mut self, key: String, size: u64) {
        self.size = align(self.size, 8);
        self.keys.insert(key, self.size);
        self.size += size;
    }
}

fn method_list_size(methods: &[MethodDecl], relative: bool) -> u64 {
    8 + methods.len() as u64 * if relative { 12 } else { 24 }
}

pub fn build(m: &Manifest) -> Result<Fixture, FixtureError> {
    // ---- parse code ----
    let mut fns = Vec::new();
    for f in &m.functions {
        fns.push(parse_function(&f.name, f.exported, f.stripped, &f.code)?);
    }
    let has_nslog = m.imports.iter().any(|i| i == "_NSLog");
    for i in 0..m.synthetic_functions {
        let code = synthetic_code(i, m.synthetic_functions, has_nslog);
        fns.push(parse_function(&format!("_synth_{i}"), false, false, &code)?);
    }
    let fn_names: BTreeSet<&str> = fns.iter().map(|f| f.name.as_str()).collect();
    if fn_names.len() != fns.len() {
        return Err(FixtureError::Manifest("duplicate function name".into()));
    }
    let class_names: BTreeSet<&str> = m.classes.iter().map(|c| c.name.as_str()).collect();
    let proto_names: BTreeSet<&str> = m.protocols.iter().map(|p| p.name.as_str()).collect();
    for c in &m.classes {
        for p in &c.protocols {
            if !proto_names.contains(p.as_str()) {
                return Err(FixtureError::Manifest(format!("class {} adopts undeclared protocol {p}", c.name)));
            }
        }
        for md in c.methods.iter().chain(&c.class_methods) {
            if !fn_names.contains(md.imp.as_str()) {
                return Err(FixtureError::Manifest(format!("method {} names unknown function {}", md.sel, md.imp)));
            }
        }
    }

    // ---- collect referenced metadata ----
    let mut sel_slots: Vec<String> = m.selrefs.clone();
    let mut classref_names: Vec<String> = Vec::new();
    let mut cfstr_texts: Vec<String> = Vec::new();
    let mut extra_methnames: Vec<String> = Vec::new();
    let push_unique = |v: &mut Vec<String>, s: &str| {
        if !v.iter().any(|x| x == s) {
            v.push(s.to_string());
        }
    };
    for f in &fns {
        for inst in &f.insts {
            for s in inst.symbols() {
                match s {
                    SymRef::Sel(n) => push_unique(&mut sel_slots, n),
                    SymRef::Classref(n) => push_unique(&mut classref_names, n),
                    SymRef::Cfstr(n) => push_unique(&mut cfstr_texts, n),
                    SymRef::Methname(n) => push_unique(&mut extra_methnames, n),
                    SymRef::Class(n) if !class_names.contains(n.as_str()) => {
                        return Err(FixtureError::Manifest(format!("class:{n} is not an in-image class")))
                    }
                    _ => {}
                }
            }
        }
    }
    for c in m.classes.iter().filter(|c| c.relative_methods) {
        for md in c.methods.iter().chain(&c.class_methods) {
            push_unique(&mut sel_slots, &md.sel);
        }
    }

    let mut methname = StrPool::default();
    let mut classname = StrPool::default();
    let mut methtype = StrPool::default();
    let mut cstring = StrPool::default();
    for s in &sel_slots {
        methname.add(s);
    }
    for s in &extra_methnames {
        methname.add(s);
    }
    for c in &m.classes {
        classname.add(&c.name);
        for md in c.methods.iter().chain(&c.class_methods) {
            methname.add(&md.sel);
            methtype.add(&md.types);
        }
        for iv in &c.ivars {
            methname.add(&iv.name);
            methtype.add(&iv.ty);
        }
        for p in &c.properties {
            cstring.add(&p.name);
            cstring.add(&p.attributes);
        }
    }
    for p in &m.protocols {
        classname.add(&p.name);
        for s in p.required.iter().chain(&p.optional) {
            methname.add(s);
            methtype.add("v16@0:8");
        }
    }
    for cat in &m.categories {
        classname.add(&cat.name);
        for md in cat.methods.iter().chain(&cat.class_methods) {
            methname.add(&md.sel);
            methtype.add(&md.types);
        }
    }
    for t in &cfstr_texts {
        cstring.add(t);
    }

    // ---- __objc_const plan ----
    let mut oconst = Alloc::default();
    for c in &m.classes {
        oconst.alloc(format!("ro:{}", c.name), 72);
        oconst.alloc(format!("rometa:{}", c.name), 72);
        if !c.methods.is_empty() {
            oconst.alloc(format!("ml:{}", c.name), method_list_size(&c.methods, c.relative_methods));
        }
        if !c.class_methods.is_empty() {
            oconst.alloc(format!("cml:{}", c.name), method_list_size(&c.class_methods, c.relative_methods));
        }
        if !c.ivars.is_empty() {
            oconst.alloc(format!("ivl:{}", c.name), 8 + 32 * c.ivars.len() as u64);
        }
        if !c.properties.is_empty() {
            oconst.alloc(format!("pl:{}", c.name), 8 + 16 * c.properties.len() as u64);
        }
        if !c.protocols.is_empty() {
            oconst.alloc(format!("prl:{}", c.name), 8 + 8 * c.protocols.len() as u64);
        }
    }
    for p in &m.protocols {
        if !p.inherits.is_empty() {
            oconst.alloc(format!("pinh:{}", p.name), 8 + 8 * p.inherits.len() as u64);
        }
        if !p.required.is_empty() {
            oconst.alloc(format!("preq:{}", p.name), 8 + 24 * p.required.len() as u64);
        }
        if !p.optional.is_empty() {
            oconst.alloc(format!("popt:{}", p.name), 8 + 24 * p.optional.len() as u64);
        }
    }
    for cat in &m.categories {
        oconst.alloc(format!("cat:{}", cat.name), 48);
        if !cat.methods.is_empty() {
            oconst.alloc(format!("catml:{}", cat.name), method_list_size(&cat.methods, false));
        }
        if !cat.class_methods.is_empty() {
            oconst.alloc(format!("catcml:{}", cat.name), method_list_size(&cat.class_methods, false));
        }
    }
    let ivar_count: usize = m.classes.iter().map(|c| c.ivars.len()).sum();
    let has_objc = !m.classes.is_empty() || !m.protocols.is_empty() || !m.categories.is_empty() || !sel_slots.is_empty();
    let total_insts: u64 = fns.iter().map(|f| f.insts.len() as u64).sum();

    // ---- section plans ----
    let sp = |seg, name, flags, align_log2, size| SectionPlan {
        seg,
        name,
        flags,
        align_log2,
        size,
        addr: 0,
        reserved1: 0,
        reserved2: 0,
    };
    let nimports = m.imports.len() as u64;
    let mut text_secs = vec![sp("__TEXT", "__text", S_ATTR_PURE_INSTRUCTIONS | S_ATTR_SOME_INSTRUCTIONS, 2, total_insts * 4)];
    if nimports > 0 {
        let mut s = sp("__TEXT", "__stubs", S_SYMBOL_STUBS | S_ATTR_PURE_INSTRUCTIONS | S_ATTR_SOME_INSTRUCTIONS, 2, 12 * nimports);
        s.reserved2 = 12;
        text_secs.push(s);
    }
    for (name, pool) in [("__objc_methname", &methname), ("__objc_classname", &classname), ("__objc_methtype", &methtype), ("__cstring", &cstring)] {
        if !pool.bytes.is_empty() {
            text_secs.push(sp("__TEXT", name, S_CSTRING_LITERALS, 0, pool.bytes.len() as u64));
        }
    }
    if m.padding > 0 {
        text_secs.push(sp("__TEXT", "__const", 0, 3, m.padding));
    }
    let mut data_secs = Vec::new();
    if nimports > 0 {
        let mut s = sp("__DATA", "__got", S_NON_LAZY_SYMBOL_POINTERS, 3, 8 * nimports);
        s.reserved1 = nimports as u32;
        data_secs.push(s);
    }
    let plan: [(&'static str, u64); 11] = [
        ("__cfstring", 32 * cfstr_texts.len() as u64),
        ("__objc_classlist", 8 * m.classes.len() as u64),
        ("__objc_catlist", 8 * m.categories.len() as u64),
        ("__objc_protolist", 8 * m.protocols.len() as u64),
        ("__objc_imageinfo", if has_objc { 8 } else { 0 }),
        ("__objc_const", oconst.size),
        ("__objc_selrefs", 8 * sel_slots.len() as u64),
        ("__objc_classrefs", 8 * classref_names.len() as u64),
        ("__objc_ivar", 4 * ivar_count as u64),
        ("__objc_data", 80 * m.classes.len() as u64),
        ("__data", 96 * m.protocols.len() as u64),
    ];
    for (name, size) in plan {
        if size > 0 {
            data_secs.push(sp("__DATA", name, 0, 3, size));
        }
    }

    // ---- load command sizes ----
    let main_fn = fns.iter().position(|f| f.name == "_main");
    let dylib_cmd_size = align(24 + DYLIB_PATH.len() as u64 + 1, 8);
    let mut sizeofcmds = 72 * 4 + 80 * (text_secs.len() + data_secs.len() + usize::from(m.zerofill > 0)) as u64;
    sizeofcmds += 48 + 24 + 80 + dylib_cmd_size + 16;
    if main_fn.is_some() {
        sizeofcmds += 24;
    }
    if m.cryptid.is_some() {
        sizeofcmds += 24;
    }
    let signed = m.entitlements.is_some() || m.malformed_signature;
    if signed {
        sizeofcmds += 16;
    }
    if m.unknown_load_command.is_some() {
        sizeofcmds += 16;
    }
    let header_end = 32 + sizeofcmds;

    // ---- assign addresses ----
    let mut cursor = TEXT_BASE + align(header_end, 16);
    for s in text_secs.iter_mut() {
        cursor = align(cursor, 1 << s.align_log2);
        s.addr = cursor;
        cursor += s.size;
    }
    let text_size = align(cursor - TEXT_BASE, PAGE);
    let data_base = TEXT_BASE + text_size;
    cursor = data_base;
    for s in data_secs.iter_mut() {
        cursor = align(cursor, 1 << s.align_log2);
        s.addr = cursor;
        cursor += s.size;
    }
    let data_file_size = align((cursor - data_base).max(1), PAGE);
    let mut data_vm_size = data_file_size;
    if m.zerofill > 0 {
        let mut s = sp("__DATA", "__bss", S_ZEROFILL, 3, m.zerofill);
        s.addr = data_base + data_file_size;
        data_vm_size += align(m.zerofill, PAGE);
        data_secs.push(s);
    }
    let linkedit_base = data_base + data_vm_size;
    let linkedit_off = text_size + data_file_size;
    let sec = |secs: &[SectionPlan], name: &str| secs.iter().find(|s| s.name == name).map(|s| s.addr).unwrap_or(0);

    // ---- symbol addresses ----
    let mut syms = Symbols::default();
    let text_addr = text_secs[0].addr;
    let mut fn_addrs = Vec::new();
    {
        let mut a = text_addr;
        for f in &fns {
            syms.functions.insert(f.name.clone(), a);
            fn_addrs.push(a);
            a += 4 * f.insts.len() as u64;
        }
    }
    let stubs_addr = sec(&text_secs, "__stubs");
    let got_addr = sec(&data_secs, "__got");
    for (i, imp) in m.imports.iter().enumerate() {
        syms.stubs.insert(imp.clone(), stubs_addr + 12 * i as u64);
    }
    let methname_addr = sec(&text_secs, "__objc_methname");
    for (s, off) in &methname.index {
        syms.methname.insert(s.clone(), methname_addr + off);
    }
    let selrefs_addr = sec(&data_secs, "__objc_selrefs");
    let mut selref_slots: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (i, s) in sel_slots.iter().enumerate() {
        let a = selrefs_addr + 8 * i as u64;
        syms.selrefs.entry(s.clone()).or_insert(a);
        selref_slots.entry(s.clone()).or_default().push(a);
    }
    let objc_data = sec(&data_secs, "__objc_data");
    for (i, c) in m.classes.iter().enumerate() {
        syms.classes.insert(c.name.clone(), objc_data + 80 * i as u64);
        syms.metas.insert(c.name.clone(), objc_data + 80 * i as u64 + 40);
    }
    let classrefs_addr = sec(&data_secs, "__objc_classrefs");
    for (i, n) in classref_names.iter().enumerate() {
        syms.classrefs.insert(n.clone(), classrefs_addr + 8 * i as u64);
    }
    let cfstring_addr = sec(&data_secs, "__cfstring");
    for (i, t) in cfstr_texts.iter().enumerate() {
        syms.cfstrs.insert(t.clone(), cfstring_addr + 32 * i as u64);
    }
    let ivar_addr = sec(&data_secs, "__objc_ivar");
    {
        let mut i = 0;
        for c in &m.classes {
            for iv in &c.ivars {
                syms.ivars.insert(format!("{}.{}", c.name, iv.name), ivar_addr + 4 * i);
                i += 1;
            }
        }
    }
    let data_addr = sec(&data_secs, "__data");
    for (i, p) in m.protocols.iter().enumerate() {
        syms.protocols.insert(p.name.clone(), data_addr + 96 * i as u64);
    }
    let oconst_addr = sec(&data_secs, "__objc_const");
    let ok = |k: &str| oconst.keys.get(k).map(|o| oconst_addr + o);

    // ---- write __TEXT ----
    let mut text = Region::new(TEXT_BASE, text_size);
    for (f, base) in fns.iter().zip(&fn_addrs) {
        let res = FnResolver { syms: &syms, labels: &f.labels, fn_base: *base };
        for (i, inst) in f.insts.iter().enumerate() {
            let pc = base + 4 * i as u64;
            let w = asm::encode(inst, pc, &res)?;
            text.u32(pc, w);
        }
    }
    for (i, _) in m.imports.iter().enumerate() {
        let stub = stubs_addr + 12 * i as u64;
        let slot = got_addr + 8 * i as u64;
        let page = ((slot >> 12) as i64 - (stub >> 12) as i64) as u32 & 0x1F_FFFF;
        text.u32(stub, 0x9000_0010 | (page & 3) << 29 | (page >> 2) << 5);
        text.u32(stub + 4, 0xF940_0210 | (((slot & 0xFFF) / 8) as u32) << 10);
        text.u32(stub + 8, 0xD61F_0200);
    }
    for (name, pool) in [("__objc_methname", &methname), ("__objc_classname", &classname), ("__objc_methtype", &methtype), ("__cstring", &cstring)] {
        if !pool.bytes.is_empty() {
            text.put(sec(&text_secs, name), &pool.bytes);
        }
    }
    if m.padding > 0 {
        let pad: Vec<u8> = (0..m.padding).map(|i| (i.wrapping_mul(2_654_435_761) >> 13) as u8).collect();
        text.put(sec(&text_secs, "__const"), &pad);
    }
    let classname_addr = sec(&text_secs, "__objc_classname");
    let methtype_addr = sec(&text_secs, "__objc_methtype");
    let cstring_addr = sec(&text_secs, "__cstring");
    let cn = |s: &str| classname_addr + classname.off(s);
    let mn = |s: &str| methname_addr + methname.off(s);
    let mt = |s: &str| methtype_addr + methtype.off(s);
    let cs = |s: &str| cstring_addr + cstring.off(s);

    // ---- write __DATA ----
    let mut data = Region::new(data_base, data_file_size);
    let mut binds: Vec<(u64, String)> = Vec::new();
    for (i, imp) in m.imports.iter().enumerate() {
        binds.push((got_addr + 8 * i as u64, imp.clone()));
    }
    for (i, t) in cfstr_texts.iter().enumerate() {
        let a = cfstring_addr + 32 * i as u64;
        binds.push((a, "___CFConstantStringClassReference".into()));
        data.u64(a + 8, 0x7C8);
        data.u64(a + 16, cs(t));
        data.u64(a + 24, t.len() as u64);
    }
    let classlist_addr = sec(&data_secs, "__objc_classlist");
    for (i, c) in m.classes.iter().enumerate() {
        let target = if m.dangling_classlist.contains(&c.name) { DANGLING_ADDR } else { syms.classes[&c.name] };
        data.u64(classlist_addr + 8 * i as u64, target);
    }
    let catlist_addr = sec(&data_secs, "__objc_catlist");
    for (i, cat) in m.categories.iter().enumerate() {
        data.u64(catlist_addr + 8 * i as u64, ok(&format!("cat:{}", cat.name)).unwrap());
    }
    let protolist_addr = sec(&data_secs, "__objc_protolist");
    for (i, p) in m.protocols.iter().enumerate() {
        data.u64(protolist_addr + 8 * i as u64, syms.protocols[&p.name]);
    }
    for (i, s) in sel_slots.iter().enumerate() {
        data.u64(selrefs_addr + 8 * i as u64, mn(s));
    }
    for (i, n) in classref_names.iter().enumerate() {
        let a = classrefs_addr + 8 * i as u64;
        match syms.classes.get(n) {
            Some(c) => data.u64(a, *c),
            None => binds.push((a, format!("_OBJC_CLASS_$_{n}"))),
        }
    }
    {
        let mut i = 0;
        for c in &m.classes {
            for iv in &c.ivars {
                data.u32(ivar_addr + 4 * i, iv.offset);
                i += 1;
            }
        }
    }

    let write_methods = |data: &mut Region, at: u64, methods: &[MethodDecl], relative: bool| {
        if relative {
            data.u32(at, 12 | 0x8000_0000);
        } else {
            data.u32(at, 24);
        }
        data.u32(at + 4, methods.len() as u32);
        for (j, md) in methods.iter().enumerate() {
            let imp = syms.functions[&md.imp];
            if relative {
                let e = at + 8 + 12 * j as u64;
                data.i32(e, (syms.selrefs[&md.sel] as i64 - e as i64) as i32);
                data.i32(e + 4, (mt(&md.types) as i64 - (e + 4) as i64) as i32);
                data.i32(e + 8, (imp as i64 - (e + 8) as i64) as i32);
            } else {
                let e = at + 8 + 24 * j as u64;
                data.u64(e, mn(&md.sel));
                data.u64(e + 8, mt(&md.types));
                data.u64(e + 16, imp);
            }
        }
    };

    let by_name: HashMap<&str, &ClassDecl> = m.classes.iter().map(|c| (c.name.as_str(), c)).collect();
    // Top of the in-image chain; Err(name) when it continues into an external class.
    let chain_root = |c: &ClassDecl| -> Result<String, String> {
        let mut cur = c;
        let mut seen = BTreeSet::new();
        loop {
            if !seen.insert(cur.name.clone()) {
                return Ok(cur.name.clone());
            }
            match &cur.superclass {
                None => return Ok(cur.name.clone()),
                Some(s) => match by_name.get(s.as_str()) {
                    Some(next) => cur = next,
                    None => return Err(s.clone()),
                },
            }
        }
    };

    for c in &m.classes {
        let cls = syms.classes[&c.name];
        let meta = syms.metas[&c.name];
        let ro = ok(&format!("ro:{}", c.name)).unwrap();
        let rometa = ok(&format!("rometa:{}", c.name)).unwrap();
        let is_root = c.superclass.is_none();
        // class_t
        data.u64(cls, meta);
        match &c.superclass {
            None => {}
            Some(s) => match syms.classes.get(s) {
                Some(a) => data.u64(cls + 8, *a),
                None => binds.push((cls + 8, format!("_OBJC_CLASS_$_{s}"))),
            },
        }
        data.u64(cls + 32, ro);
        // meta class_t
        match chain_root(c) {
            Ok(root) => data.u64(meta, syms.metas[&root]),
            Err(_) => binds.push((meta, "_OBJC_METACLASS_$_NSObject".into())),
        }
        match &c.superclass {
            None => data.u64(meta + 8, cls),
            Some(s) => match syms.metas.get(s) {
                Some(a) => data.u64(meta + 8, *a),
                None => binds.push((meta + 8, format!("_OBJC_METACLASS_$_{s}"))),
            },
        }
        data.u64(meta + 32, rometa);
        // class_ro_t
        let root_flag = if is_root { 2 } else { 0 };
        data.u32(ro, root_flag);
        data.u32(ro + 4, 8);
        data.u32(ro + 8, 8 + 8 * c.ivars.len() as u32);
        data.u64(ro + 24, cn(&c.name));
        data.u32(rometa, 1 | root_flag);
        data.u32(rometa + 4, 40);
        data.u32(rometa + 8, 40);
        data.u64(rometa + 24, cn(&c.name));
        if let Some(at) = ok(&format!("ml:{}", c.name)) {
            write_methods(&mut data, at, &c.methods, c.relative_methods);
            data.u64(ro + 32, at);
        }
        if let Some(at) = ok(&format!("cml:{}", c.name)) {
            write_methods(&mut data, at, &c.class_methods, c.relative_methods);
            data.u64(rometa + 32, at);
        }
        if let Some(at) = ok(&format!("prl:{}", c.name)) {
            data.u64(at, c.protocols.len() as u64);
            for (j, p) in c.protocols.iter().enumerate() {
                data.u64(at + 8 + 8 * j as u64, syms.protocols[p]);
            }
            data.u64(ro + 40, at);
            data.u64(rometa + 40, at);
        }
        if let Some(at) = ok(&format!("ivl:{}", c.name)) {
            data.u32(at, 32);
            data.u32(at + 4, c.ivars.len() as u32);
            for (j, iv) in c.ivars.iter().enumerate() {
                let e = at + 8 + 32 * j as u64;
                data.u64(e, syms.ivars[&format!("{}.{}", c.name, iv.name)]);
                data.u64(e + 8, mn(&iv.name));
                data.u64(e + 16, mt(&iv.ty));
                data.u32(e + 24, 3);
                data.u32(e + 28, 8);
            }
            data.u64(ro + 48, at);
        }
        if let Some(at) = ok(&format!("pl:{}", c.name)) {
            data.u32(at, 16);
            data.u32(at + 4, c.properties.len() as u32);
            for (j, p) in c.properties.iter().enumerate() {
                let e = at + 8 + 16 * j as u64;
                data.u64(e, cs(&p.name));
                data.u64(e + 8, cs(&p.attributes));
            }
            data.u64(ro + 64, at);
        }
    }

    let write_proto_methods = |data: &mut Region, at: u64, sels: &[String]| {
        data.u32(at, 24);
        data.u32(at + 4, sels.len() as u32);
        for (j, s) in sels.iter().enumerate() {
            let e = at + 8 + 24 * j as u64;
            data.u64(e, mn(s));
            data.u64(e + 8, mt("v16@0:8"));
        }
    };
    for p in &m.protocols {
        let a = syms.protocols[&p.name];
        data.u64(a + 8, cn(&p.name));
        if let Some(at) = ok(&format!("pinh:{}", p.name)) {
            data.u64(at, p.inherits.len() as u64);
            for (j, q) in p.inherits.iter().enumerate() {
                let qa = syms
                    .protocols
                    .get(q)
                    .ok_or_else(|| FixtureError::Manifest(format!("protocol {} inherits unknown {q}", p.name)))?;
                data.u64(at + 8 + 8 * j as u64, *qa);
            }
            data.u64(a + 16, at);
        }
        if let Some(at) = ok(&format!("preq:{}", p.name)) {
            write_proto_methods(&mut data, at, &p.required);
            data.u64(a + 24, at);
        }
        if let Some(at) = ok(&format!("popt:{}", p.name)) {
            write_proto_methods(&mut data, at, &p.optional);
            data.u64(a + 40, at);
        }
        data.u32(a + 64, 96);
    }
    for cat in &m.categories {
        let a = ok(&format!("cat:{}", cat.name)).unwrap();
        data.u64(a, cn(&cat.name));
        match syms.classes.get(&cat.class) {
            Some(c) => data.u64(a + 8, *c),
            None => binds.push((a + 8, format!("_OBJC_CLASS_$_{}", cat.class))),
        }
        if let Some(at) = ok(&format!("catml:{}", cat.name)) {
            write_methods(&mut data, at, &cat.methods, false);
            data.u64(a + 16, at);
        }
        if let Some(at) = ok(&format!("catcml:{}", cat.name)) {
            write_methods(&mut data, at, &cat.class_methods, false);
            data.u64(a + 24, at);
        }
    }

    // ---- symbols ----
    struct Nlist {
        name: String,
        n_type: u8,
        n_sect: u8,
        n_desc: u16,
        value: u64,
    }
    let text_sect_index = 1u8;
    let objc_data_index = data_secs
        .iter()
        .position(|s| s.name == "__objc_data")
        .map(|i| (text_secs.len() + i + 1) as u8)
        .unwrap_or(0);
    let mut locals = vec![Nlist { name: "fixture.m".into(), n_type: 0x64, n_sect: 0, n_desc: 0, value: 0 }];
    let mut extdefs = Vec::new();
    for (f, a) in fns.iter().zip(&fn_addrs) {
        if f.stripped {
            continue;
        }
        let entry = Nlist { name: f.name.clone(), n_type: 0x0E, n_sect: text_sect_index, n_desc: 0, value: *a };
        if f.exported {
            extdefs.push(Nlist { n_type: 0x0F, ..entry });
        } else {
            locals.push(entry);
        }
    }
    for c in &m.classes {
        extdefs.push(Nlist { name: format!("_OBJC_CLASS_$_{}", c.name), n_type: 0x0F, n_sect: objc_data_index, n_desc: 0, value: syms.classes[&c.name] });
        extdefs.push(Nlist { name: format!("_OBJC_METACLASS_$_{}", c.name), n_type: 0x0F, n_sect: objc_data_index, n_desc: 0, value: syms.metas[&c.name] });
    }
    let mut undef_names: Vec<String> = m.imports.clone();
    for (_, n) in &binds {
        if !undef_names.contains(n) {
            undef_names.push(n.clone());
        }
    }
    let undefs: Vec<Nlist> = undef_names
        .iter()
        .map(|n| Nlist { name: n.clone(), n_type: 0x01, n_sect: 0, n_desc: 1 << 8, value: 0 })
        .collect();
    let (nlocal, nextdef, nundef) = (locals.len(), extdefs.len(), undefs.len());
    let all_syms: Vec<Nlist> = locals.into_iter().chain(extdefs).chain(undefs).collect();
    let sym_index = |name: &str| all_syms.iter().position(|s| s.name == name).unwrap() as u32;

    // ---- __LINKEDIT ----
    let mut linkedit = Vec::new();
    let bind_off = linkedit.len() as u64;
    binds.sort();
    for (addr, name) in &binds {
        linkedit.push(0x11); // SET_DYLIB_ORDINAL_IMM 1
        linkedit.push(0x40);
        linkedit.extend_from_slice(name.as_bytes());
        linkedit.push(0);
        linkedit.push(0x51); // SET_TYPE_IMM pointer
        linkedit.push(0x72); // SET_SEGMENT_AND_OFFSET_ULEB seg 2
        uleb(addr - data_base, &mut linkedit);
        linkedit.push(0x90); // DO_BIND
    }
    linkedit.push(0x00);
    let bind_size = linkedit.len() as u64 - bind_off;
    while linkedit.len() % 8 != 0 {
        linkedit.push(0);
    }
    let fstarts_off = linkedit.len() as u64;
    let mut starts: Vec<u64> = fn_addrs.clone();
    starts.sort_unstable();
    let mut prev = TEXT_BASE;
    for s in &starts {
        uleb(s - prev, &mut linkedit);
        prev = *s;
    }
    linkedit.push(0);
    while linkedit.len() % 8 != 0 {
        linkedit.push(0);
    }
    let fstarts_size = linkedit.len() as u64 - fstarts_off;
    let mut strtab = vec![b' ', 0];
    let mut strx = Vec::new();
    for s in &all_syms {
        strx.push(strtab.len() as u32);
        strtab.extend_from_slice(s.name.as_bytes());
        strtab.push(0);
    }
    while strtab.len() % 8 != 0 {
        strtab.push(0);
    }
    let symoff = linkedit.len() as u64;
    for (s, x) in all_syms.iter().zip(&strx) {
        linkedit.extend_from_slice(&x.to_le_bytes());
        linkedit.push(s.n_type);
        linkedit.push(s.n_sect);
        linkedit.extend_from_slice(&s.n_desc.to_le_bytes());
        linkedit.extend_from_slice(&s.value.to_le_bytes());
    }
    let indirect_off = linkedit.len() as u64;
    for _pass in 0..2 {
        for imp in &m.imports {
            linkedit.extend_from_slice(&sym_index(imp).to_le_bytes());
        }
    }
    let nindirect = 2 * m.imports.len() as u64;
    while linkedit.len() % 8 != 0 {
        linkedit.push(0);
    }
    let stroff = linkedit.len() as u64;
    linkedit.extend_from_slice(&strtab);
    let mut sig_range = (0u64, 0u64);
    if signed {
        while linkedit.len() % 16 != 0 {
            linkedit.push(0);
        }
        let off = linkedit.len() as u64;
        let xml = m.entitlements.clone().unwrap_or_default();
        let blob_len = 8 + xml.len() as u32;
        let total = 12 + 8 + blob_len;
        let be = |v: u32, out: &mut Vec<u8>| out.extend_from_slice(&v.to_be_bytes());
        be(0xFADE_0CC0, &mut linkedit);
        be(total, &mut linkedit);
        be(1, &mut linkedit);
        be(5, &mut linkedit);
        be(20, &mut linkedit);
        be(0xFADE_7171, &mut linkedit);
        be(if m.malformed_signature { blob_len + 0x1000 } else { blob_len }, &mut linkedit);
        linkedit.extend_from_slice(xml.as_bytes());
        sig_range = (off, linkedit.len() as u64 - off);
    }
    let linkedit_size = linkedit.len() as u64;

    // ---- header and load commands ----
    let mut out = Vec::new();
    let put32 = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    let put64 = |out: &mut Vec<u8>, v: u64| out.extend_from_slice(&v.to_le_bytes());
    let name16 = |out: &mut Vec<u8>, s: &str| {
        let mut b = [0u8; 16];
        b[..s.len()].copy_from_slice(s.as_bytes());
        out.extend_from_slice(&b);
    };
    let mut ncmds = 0u32;
    put32(&mut out, 0xFEED_FACF);
    put32(&mut out, CPU_TYPE_ARM64);
    put32(&mut out, 0);
    put32(&mut out, 2);
    put32(&mut out, 0); // ncmds patched below
    put32(&mut out, sizeofcmds as u32);
    put32(&mut out, 0x0020_0085);
    put32(&mut out, 0);

    let segment = |out: &mut Vec<u8>, name: &str, vm: u64, vmsize: u64, fileoff: u64, filesize: u64, prot: u32, secs: &[SectionPlan]| {
        put32(out, LC_SEGMENT_64);
        put32(out, 72 + 80 * secs.len() as u32);
        name16(out, name);
        put64(out, vm);
        put64(out, vmsize);
        put64(out, fileoff);
        put64(out, filesize);
        put32(out, prot);
        put32(out, prot);
        put32(out, secs.len() as u32);
        put32(out, 0);
        for s in secs {
            name16(out, s.name);
            name16(out, s.seg);
            put64(out, s.addr);
            put64(out, s.size);
            let off = if s.flags & S_ZEROFILL != 0 { 0 } else { s.addr - vm + fileoff };
            put32(out, off as u32);
            put32(out, s.align_log2);
            put32(out, 0);
            put32(out, 0);
            put32(out, s.flags);
            put32(out, s.reserved1);
            put32(out, s.reserved2);
            put32(out, 0);
        }
    };
    segment(&mut out, "__PAGEZERO", 0, TEXT_BASE, 0, 0, 0, &[]);
    segment(&mut out, "__TEXT", TEXT_BASE, text_size, 0, text_size, 5, &text_secs);
    segment(&mut out, "__DATA", data_base, data_vm_size, text_size, data_file_size, 3, &data_secs);
    segment(&mut out, "__LINKEDIT", linkedit_base, align(linkedit_size, PAGE), linkedit_off, linkedit_size, 1, &[]);
    ncmds += 4;

    put32(&mut out, LC_DYLD_INFO_ONLY);
    put32(&mut out, 48);
    for v in [0, 0, (linkedit_off + bind_off) as u32, bind_size as u32, 0, 0, 0, 0, 0, 0] {
        put32(&mut out, v);
    }
    put32(&mut out, LC_SYMTAB);
    put32(&mut out, 24);
    put32(&mut out, (linkedit_off + symoff) as u32);
    put32(&mut out, all_syms.len() as u32);
    put32(&mut out, (linkedit_off + stroff) as u32);
    put32(&mut out, strtab.len() as u32);
    put32(&mut out, LC_DYSYMTAB);
    put32(&mut out, 80);
    for v in [
        0,
        nlocal as u32,
        nlocal as u32,
        nextdef as u32,
        (nlocal + nextdef) as u32,
        nundef as u32,
        0,
        0,
        0,
        0,
        0,
        0,
        (linkedit_off + indirect_off) as u32,
        nindirect as u32,
        0,
        0,
        0,
        0,
    ] {
        put32(&mut out, v);
    }
    put32(&mut out, LC_LOAD_DYLIB);
    put32(&mut out, dylib_cmd_size as u32);
    put32(&mut out, 24);
    put32(&mut out, 2);
    put32(&mut out, 0x0001_0000);
    put32(&mut out, 0x0001_0000);
    let mut path = DYLIB_PATH.as_bytes().to_vec();
    path.resize((dylib_cmd_size - 24) as usize, 0);
    out.extend_from_slice(&path);
    ncmds += 4;
    if let Some(i) = main_fn {
        put32(&mut out, LC_MAIN);
        put32(&mut out, 24);
        put64(&mut out, fn_addrs[i] - TEXT_BASE);
        put64(&mut out, 0);
        ncmds += 1;
    }
    put32(&mut out, LC_FUNCTION_STARTS);
    put32(&mut out, 16);
    put32(&mut out, (linkedit_off + fstarts_off) as u32);
    put32(&mut out, fstarts_size as u32);
    ncmds += 1;
    if let Some(id) = m.cryptid {
        put32(&mut out, LC_ENCRYPTION_INFO_64);
        put32(&mut out, 24);
        put32(&mut out, (text_addr - TEXT_BASE) as u32);
        put32(&mut out, (total_insts * 4) as u32);
        put32(&mut out, id);
        put32(&mut out, 0);
        ncmds += 1;
    }
    if signed {
        put32(&mut out, LC_CODE_SIGNATURE);
        put32(&mut out, 16);
        put32(&mut out, (linkedit_off + sig_range.0) as u32);
        put32(&mut out, sig_range.1 as u32);
        ncmds += 1;
    }
    if let Some(cmd) = m.unknown_load_command {
        put32(&mut out, cmd);
        put32(&mut out, 16);
        put64(&mut out, 0xAAAA_AAAA_AAAA_AAAA);
        ncmds += 1;
    }
    debug_assert_eq!(out.len() as u64, header_end);
    out[16..20].copy_from_slice(&ncmds.to_le_bytes());
    // header bytes live inside the text region
    text.bytes[..out.len()].copy_from_slice(&out);
    let mut binary = text.bytes;
    binary.extend_from_slice(&data.bytes);
    binary.extend_from_slice(&linkedit);

    // ---- expectations ----
    let expected = expectations(
        m,
        &fns,
        &fn_addrs,
        &syms,
        &selref_slots,
        &data_secs,
        ExpectCtx {
            text: (text_addr, total_insts * 4),
            data_segment: (data_base, data_file_size, data_vm_size),
            file_size: binary.len(),
            starts,
        },
    )?;
    Ok(Fixture { binary, expected })
}

struct ExpectCtx {
    text: (u64, u64),
    data_segment: (u64, u64, u64),
    file_size: usize,
    starts: Vec<u64>,
}

fn parse_expect(spec: &str, syms: &Symbols) -> Result<Vec<ExpTarget>, FixtureError> {
    let mut out = Vec::new();
    for part in spec.split('|') {
        let part = part.trim();
        let mut words = part.split_whitespace();
        let head = words.next().unwrap_or("");
        if let Some(name) = head.strip_prefix("fn:") {
            let rest: Vec<&str> = std::iter::once(name).chain(words).collect();
            let name = rest.join(" ");
            let a = syms
                .functions
                .get(&name)
                .ok_or_else(|| FixtureError::Manifest(format!("expect names unknown function {name}")))?;
            out.push(ExpTarget::Internal(*a));
        } else if let Some(name) = head.strip_prefix("ext:") {
            let mut sel = None;
            let mut rcv = None;
            for w in words {
                match w.split_once('=') {
                    Some(("sel", v)) => sel = Some(v.to_string()),
                    Some(("rcv", v)) => rcv = Some(v.to_string()),
                    _ => return Err(FixtureError::Manifest(format!("bad expect token {w}"))),
                }
            }
            out.push(ExpTarget::External { name: name.to_string(), sel, rcv });
        } else {
            return Err(FixtureError::Manifest(format!("bad expect target `{part}`")));
        }
    }
    Ok(out)
}

fn expectations(
    m: &Manifest,
    fns: &[ParsedFn],
    fn_addrs: &[u64],
    syms: &Symbols,
    selref_slots: &BTreeMap<String, Vec<u64>>,
    data_secs: &[SectionPlan],
    ctx: ExpectCtx,
) -> Result<Expected, FixtureError> {
    let _ = data_secs;
    let by_name: HashMap<&str, &ClassDecl> = m.classes.iter().map(|c| (c.name.as_str(), c)).collect();
    let live = |c: &ClassDecl| !m.dangling_classlist.contains(&c.name);

    // Method signature names used for stripped functions.
    let mut method_names: HashMap<u64, String> = HashMap::new();
    let mut note_method = |cls: &str, md: &MethodDecl, class_method: bool| {
        let a = syms.functions[&md.imp];
        let sign = if class_method { '+' } else { '-' };
        method_names.entry(a).or_insert_with(|| format!("{sign}[{cls} {}]", md.sel));
    };
    for c in m.classes.iter().filter(|c| live(c)) {
        c.methods.iter().for_each(|md| note_method(&c.name, md, false));
        c.class_methods.iter().for_each(|md| note_method(&c.name, md, true));
    }
    for cat in &m.categories {
        cat.methods.iter().for_each(|md| note_method(&cat.class, md, false));
        cat.class_methods.iter().for_each(|md| note_method(&cat.class, md, true));
    }

    let mut functions = Vec::new();
    let mut call_sites = Vec::new();
    for (f, base) in fns.iter().zip(fn_addrs) {
        let n = f.insts.len();
        let end = base + 4 * n as u64;
        let local_target = |inst: &Inst| -> Option<usize> {
            match inst {
                Inst::B { target } | Inst::BCond { target, .. } | Inst::Cb { target, .. } | Inst::Tb { target, .. } => {
                    match target {
                        SymRef::Name(l) => f.labels.get(l).copied(),
                        _ => None,
                    }
                }
                _ => None,
            }
        };
        let mut leaders = BTreeSet::from([0usize]);
        for (i, inst) in f.insts.iter().enumerate() {
            if let Some(t) = local_target(inst) {
                leaders.insert(t);
            }
            if inst.ends_block() && i + 1 < n {
                leaders.insert(i + 1);
            }
        }
        let leaders: Vec<usize> = leaders.into_iter().collect();
        let mut blocks = Vec::new();
        for (k, &start) in leaders.iter().enumerate() {
            let stop = leaders.get(k + 1).copied().unwrap_or(n);
            let last = &f.insts[stop - 1];
            let mut succs = Vec::new();
            let addr = |i: usize| base + 4 * i as u64;
            if last.ends_block() {
                if let Some(t) = local_target(last) {
                    succs.push(addr(t));
                }
                if last.is_conditional() && stop < n {
                    succs.push(addr(stop));
                }
            } else if stop < n {
                succs.push(addr(stop));
            }
            succs.sort_unstable();
            succs.dedup();
            blocks.push(ExpBlock { start: addr(start), end: addr(stop), succs });
        }

        for (i, inst) in f.insts.iter().enumerate() {
            let site = base + 4 * i as u64;
            let target = match inst {
                Inst::Bl { target: SymRef::Name(t) } => Some(t),
                Inst::B { target: SymRef::Name(t) } if !f.labels.contains_key(t) => Some(t),
                _ => None,
            };
            let targets = match (&f.expects[i], target) {
                (Some(spec), _) => parse_expect(spec, syms)?,
                (None, Some(t)) => {
                    if let Some(a) = syms.functions.get(t) {
                        vec![ExpTarget::Internal(*a)]
                    } else if t == "_objc_msgSend" {
                        return Err(FixtureError::Manifest(format!(
                            "{}: objc_msgSend call at {site:#x} needs an `expect:` annotation",
                            f.name
                        )));
                    } else if syms.stubs.contains_key(t) {
                        vec![ExpTarget::External { name: strip_underscore(t), sel: None, rcv: None }]
                    } else {
                        return Err(FixtureError::Asm(format!("unknown call target {t}")));
                    }
                }
                (None, None) => continue,
            };
            call_sites.push(ExpCallSite { caller: *base, site, targets });
        }

        let name = if f.stripped {
            method_names.get(base).cloned().unwrap_or_else(|| format!("sub_{:x}", base))
        } else {
            strip_underscore(&f.name)
        };
        functions.push(ExpFunction {
            name,
            symbol: (!f.stripped).then(|| f.name.clone()),
            address: *base,
            end,
            exported: f.exported && !f.stripped,
            instructions: n,
            blocks,
        });
    }

    // Classes, meta-classes and external placeholders.
    let methods_of = |list: &[MethodDecl]| -> Vec<ExpMethod> {
        list.iter().map(|md| ExpMethod { sel: md.sel.clone(), imp: syms.functions[&md.imp] }).collect()
    };
    let mut classes = Vec::new();
    let mut placeholders: BTreeMap<(String, bool), Vec<ExpMethod>> = BTreeMap::new();
    for c in m.classes.iter().filter(|c| live(c)) {
        let mut methods = methods_of(&c.methods);
        let mut class_methods = methods_of(&c.class_methods);
        for cat in m.categories.iter().filter(|k| k.class == c.name) {
            methods.extend(methods_of(&cat.methods));
            class_methods.extend(methods_of(&cat.class_methods));
        }
        let superclass = match &c.superclass {
            None => ExpRef::Nil,
            Some(s) if by_name.contains_key(s.as_str()) => ExpRef::Local(syms.classes[s]),
            Some(s) => {
                placeholders.entry((s.clone(), false)).or_default();
                placeholders.entry((s.clone(), true)).or_default();
                ExpRef::External(s.clone())
            }
        };
        // root of the in-image chain
        let mut cur = c;
        let mut seen = BTreeSet::new();
        let meta_isa = loop {
            if !seen.insert(cur.name.clone()) {
                break ExpRef::Local(syms.metas[&cur.name]);
            }
            match &cur.superclass {
                None => break ExpRef::Local(syms.metas[&cur.name]),
                Some(s) => match by_name.get(s.as_str()) {
                    Some(next) => cur = next,
                    None => {
                        placeholders.entry(("NSObject".into(), true)).or_default();
                        break ExpRef::External("NSObject".into());
                    }
                },
            }
        };
        let meta_super = match &c.superclass {
            None => ExpRef::Local(syms.classes[&c.name]),
            Some(s) if by_name.contains_key(s.as_str()) => ExpRef::Local(syms.metas[s]),
            Some(s) => ExpRef::External(s.clone()),
        };
        classes.push(ExpClass {
            name: c.name.clone(),
            address: syms.classes[&c.name],
            is_meta: false,
            isa: ExpRef::Local(syms.metas[&c.name]),
            superclass,
            methods,
            ivars: c.ivars.iter().map(|i| (i.name.clone(), i.ty.clone(), i.offset)).collect(),
            properties: c.properties.iter().map(|p| (p.name.clone(), p.attributes.clone())).collect(),
            protocols: c.protocols.clone(),
        });
        classes.push(ExpClass {
            name: c.name.clone(),
            address: syms.metas[&c.name],
            is_meta: true,
            isa: meta_isa,
            superclass: meta_super,
            methods: class_methods,
            ivars: vec![],
            properties: vec![],
            protocols: c.protocols.clone(),
        });
    }
    for cat in m.categories.iter().filter(|k| !by_name.contains_key(k.class.as_str())) {
        placeholders.entry((cat.class.clone(), false)).or_default().extend(methods_of(&cat.methods));
        if !cat.class_methods.is_empty() {
            placeholders.entry((cat.class.clone(), true)).or_default().extend(methods_of(&cat.class_methods));
        }
    }
    let placeholders: Vec<ExpPlaceholder> = placeholders
        .into_iter()
        .map(|((name, is_meta), methods)| ExpPlaceholder { name, is_meta, methods })
        .collect();
    let protocols: Vec<ExpProtocol> = m
        .protocols
        .iter()
        .map(|p| ExpProtocol {
            name: p.name.clone(),
            address: syms.protocols[&p.name],
            required: p.required.clone(),
            optional: p.optional.clone(),
            inherits: p.inherits.clone(),
        })
        .collect();

    // Graph shape.
    let mut nodes: BTreeMap<String, usize> = BTreeMap::new();
    let mut edges: BTreeMap<String, usize> = BTreeMap::new();
    let blocks: usize = functions.iter().map(|f| f.blocks.len()).sum();
    let insts: usize = functions.iter().map(|f| f.instructions).sum();
    let succ: usize = functions.iter().flat_map(|f| &f.blocks).map(|b| b.succs.len()).sum();
    let nfuncs = functions.len() + m.imports.len();
    let class_methods: usize = classes.iter().map(|c| c.methods.len()).sum::<usize>()
        + placeholders.iter().map(|p| p.methods.len()).sum::<usize>();
    let proto_methods: usize = protocols.iter().map(|p| p.required.len() + p.optional.len()).sum();
    let ivars: usize = classes.iter().map(|c| c.ivars.len()).sum();
    nodes.insert("Program".into(), 1);
    nodes.insert("Function".into(), nfuncs);
    nodes.insert("BasicBlock".into(), blocks);
    nodes.insert("Instruction".into(), insts);
    // Dangling classlist entries still become (malformed) Class nodes.
    nodes.insert("Class".into(), classes.len() + placeholders.len() + m.dangling_classlist.len());
    nodes.insert("Protocol".into(), protocols.len());
    nodes.insert("Method".into(), class_methods + proto_methods);
    nodes.insert("Ivar".into(), ivars);
    edges.insert("has_func".into(), nfuncs);
    edges.insert("has_bb".into(), blocks);
    edges.insert("instr".into(), insts);
    edges.insert("succ".into(), succ);
    // A superclass cycle loses the edge that closes it, walking classes in address order.
    let mut sup: BTreeMap<u64, u64> = BTreeMap::new();
    for c in &classes {
        if let ExpRef::Local(s) = c.superclass {
            sup.insert(c.address, s);
        }
    }
    let mut dropped_superclass = Vec::new();
    let mut done = BTreeSet::new();
    let mut order: Vec<u64> = classes.iter().map(|c| c.address).collect();
    order.sort_unstable();
    for start in order {
        let mut path = BTreeSet::new();
        let mut cur = start;
        while !done.contains(&cur) {
            path.insert(cur);
            match sup.get(&cur).copied() {
                None => break,
                Some(next) if path.contains(&next) => {
                    sup.remove(&cur);
                    dropped_superclass.push((cur, next));
                    break;
                }
                Some(next) => cur = next,
            }
        }
        done.extend(path);
    }
    edges.insert(
        "has_superclass".into(),
        classes.iter().filter(|c| c.superclass != ExpRef::Nil).count() - dropped_superclass.len(),
    );
    edges.insert("isa".into(), classes.len());
    edges.insert(
        "has_protocol".into(),
        classes.iter().filter(|c| !c.is_meta).map(|c| c.protocols.len()).sum::<usize>()
            + protocols.iter().map(|p| p.inherits.len()).sum::<usize>(),
    );
    edges.insert("has_meth".into(), class_methods + proto_methods);
    edges.insert("has_ivar".into(), ivars);
    edges.insert("implements".into(), class_methods);
    let site_edges: usize = call_sites.iter().map(|s| s.targets.len()).sum();
    let fn_edges = call_sites
        .iter()
        .flat_map(|s| s.targets.iter().map(move |t| (s.caller, t.clone())))
        .collect::<BTreeSet<_>>()
        .len();
    edges.insert("calls".into(), site_edges + fn_edges);

    let stubs = m
        .imports
        .iter()
        .map(|i| (syms.stubs[i], strip_underscore(i)))
        .collect();
    Ok(Expected {
        name: m.name.clone(),
        image_base: TEXT_BASE,
        text: ctx.text,
        function_starts: ctx.starts,
        functions,
        imports: m.imports.iter().map(|i| strip_underscore(i)).collect(),
        stubs,
        classes,
        placeholders,
        dropped_superclass,
        protocols,
        selrefs: selref_slots.clone(),
        methname: syms.methname.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        classlist_len: m.classes.len(),
        call_sites,
        node_counts: nodes,
        edge_counts: edges,
        entitlements: if m.malformed_signature { None } else { m.entitlements.clone() },
        data_segment: ctx.data_segment,
        file_size: ctx.file_size,
    })
}
