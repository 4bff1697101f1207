//! A tiny two-pass arm64 assembler for fixture code.
//!
//! Supports exactly the instruction forms the fixtures need, with symbolic
//! operands for Objective-C metadata (`sel:init@PAGEOFF`, `classref:A@PAGE`,
//! ...). Encodings follow the A64 base instruction set.

use crate::FixtureError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reg {
    pub num: u8,
    pub wide: bool,
    /// Register 31 names the stack pointer rather than the zero register.
    pub is_sp: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymRef {
    /// Function-local label or function/import symbol.
    Name(String),
    /// `__objc_selrefs` slot for a selector.
    Sel(String),
    /// Selector string in `__objc_methname`.
    Methname(String),
    /// `class_t` record of an in-image class.
    Class(String),
    /// `__objc_classrefs` slot for a class (bound when external).
    Classref(String),
    /// `__cfstring` object.
    Cfstr(String),
    /// Ivar offset variable, `Class.ivar`.
    Ivar(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reloc {
    Page,
    PageOff,
    Abs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Imm {
    Value(i64),
    Sym(SymRef, Reloc),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddrMode {
    Offset,
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MovOp {
    Z,
    N,
    K,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inst {
    MovWide { op: MovOp, rd: Reg, imm: u16, shift: u8 },
    MovReg { rd: Reg, rm: Reg },
    Adrp { rd: Reg, target: SymRef },
    Adr { rd: Reg, target: SymRef },
    AddSubImm { sub: bool, flags: bool, rd: Reg, rn: Reg, imm: Imm, lsl12: bool },
    AddSubReg { sub: bool, flags: bool, rd: Reg, rn: Reg, rm: Reg, lsl: u8 },
    Mem { load: bool, rt: Reg, rn: Reg, offset: Imm, mode: AddrMode, unscaled: bool },
    LdrLit { rt: Reg, target: SymRef },
    Pair { load: bool, rt: Reg, rt2: Reg, rn: Reg, offset: i64, mode: AddrMode },
    B { target: SymRef },
    BCond { cond: u8, target: SymRef },
    Bl { target: SymRef },
    Blr { rn: Reg },
    Br { rn: Reg },
    Ret { rn: Reg },
    Cb { nz: bool, rt: Reg, target: SymRef },
    Tb { nz: bool, rt: Reg, bit: u8, target: SymRef },
    Nop,
    Word(u32),
}

impl Inst {
    /// Control-flow transfer that ends a basic block.
    pub fn ends_block(&self) -> bool {
        matches!(
            self,
            Inst::B { .. }
                | Inst::BCond { .. }
                | Inst::Br { .. }
                | Inst::Ret { .. }
                | Inst::Cb { .. }
                | Inst::Tb { .. }
        )
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self, Inst::BCond { .. } | Inst::Cb { .. } | Inst::Tb { .. })
    }

    pub fn branch_target(&self) -> Option<&SymRef> {
        match self {
            Inst::B { target }
            | Inst::BCond { target, .. }
            | Inst::Bl { target }
            | Inst::Cb { target, .. }
            | Inst::Tb { target, .. } => Some(target),
            _ => None,
        }
    }

    /// Every symbol this instruction refers to.
    pub fn symbols(&self) -> Vec<&SymRef> {
        let mut out = Vec::new();
        match self {
            Inst::Adrp { target, .. } | Inst::Adr { target, .. } | Inst::LdrLit { target, .. } => {
                out.push(target)
            }
            Inst::AddSubImm { imm: Imm::Sym(s, _), .. } | Inst::Mem { offset: Imm::Sym(s, _), .. } => {
                out.push(s)
            }
            _ => {
                if let Some(t) = self.branch_target() {
                    out.push(t);
                }
            }
        }
        out
    }
}

/// One parsed source line.
#[derive(Debug, Clone, Default)]
pub struct Line {
    pub label: Option<String>,
    pub inst: Option<Inst>,
    /// Raw text after `; expect:`.
    pub expect: Option<String>,
}

pub fn parse_line(src: &str) -> Result<Line, FixtureError> {
    let err = |msg: &str| FixtureError::Asm(format!("{msg}: `{src}`"));
    let (body, comment) = split_comment(src);
    let mut line = Line::default();
    if let Some(c) = comment {
        let c = c.trim();
        if let Some(rest) = c.strip_prefix("expect:") {
            line.expect = Some(rest.trim().to_string());
        }
    }
    let mut body = body.trim();
    if let Some(idx) = label_end(body) {
        line.label = Some(body[..idx].trim().to_string());
        body = body[idx + 1..].trim();
    }
    if body.is_empty() {
        return Ok(line);
    }
    let (mnem, rest) = match body.find(char::is_whitespace) {
        Some(i) => (&body[..i], body[i..].trim()),
        None => (body, ""),
    };
    let mnem = mnem.to_ascii_lowercase();
    let ops = split_operands(rest);
    line.inst = Some(parse_inst(&mnem, &ops).map_err(|e| err(&e))?);
    Ok(line)
}

fn split_comment(src: &str) -> (&str, Option<&str>) {
    let mut in_quote = false;
    let bytes = src.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'"' => in_quote = !in_quote,
            b';' if !in_quote => return (&src[..i], Some(&src[i + 1..])),
            b'/' if !in_quote && bytes.get(i + 1) == Some(&b'/') => {
                return (&src[..i], Some(&src[i + 2..]))
            }
            _ => {}
        }
    }
    (src, None)
}

/// A label is an identifier followed by `:` at the start of the line.
fn label_end(body: &str) -> Option<usize> {
    let idx = body.find(':')?;
    let head = &body[..idx];
    if !head.is_empty()
        && head
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$')
        && !head.contains(char::is_whitespace)
    {
        // `sel:foo` style operands never start a line, mnemonics never contain ':'.
        Some(idx)
    } else {
        None
    }
}

fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut in_quote = false;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '"' => {
                in_quote = !in_quote;
                cur.push(c);
            }
            '[' if !in_quote => {
                depth += 1;
                cur.push(c);
            }
            ']' if !in_quote => {
                depth -= 1;
                cur.push(c);
            }
            ',' if !in_quote && depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_reg(s: &str) -> Result<Reg, String> {
    let s = s.trim().to_ascii_lowercase();
    let r = |num, wide, is_sp| Ok(Reg { num, wide, is_sp });
    match s.as_str() {
        "sp" => return r(31, true, true),
        "wsp" => return r(31, false, true),
        "xzr" => return r(31, true, false),
        "wzr" => return r(31, false, false),
        "fp" => return r(29, true, false),
        "lr" => return r(30, true, false),
        _ => {}
    }
    let (wide, num) = if let Some(n) = s.strip_prefix('x') {
        (true, n)
    } else if let Some(n) = s.strip_prefix('w') {
        (false, n)
    } else {
        return Err(format!("bad register {s}"));
    };
    let num: u8 = num.parse().map_err(|_| format!("bad register {s}"))?;
    if num > 30 {
        return Err(format!("bad register {s}"));
    }
    r(num, wide, false)
}

fn parse_int(s: &str) -> Result<i64, String> {
    let s = s.trim().trim_start_matches('#');
    let (neg, s) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let v = if let Some(h) = s.strip_prefix("0x") {
        i64::from_str_radix(h, 16)
    } else {
        s.parse::<i64>()
    }
    .map_err(|_| format!("bad immediate {s}"))?;
    Ok(if neg { -v } else { v })
}

fn parse_symref(s: &str) -> Result<SymRef, String> {
    let s = s.trim();
    let unquote = |v: &str| -> String {
        let v = v.trim();
        if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
            v[1..v.len() - 1].to_string()
        } else {
            v.to_string()
        }
    };
    if s.starts_with('"') {
        return Ok(SymRef::Name(unquote(s)));
    }
    if let Some((kind, rest)) = s.split_once(':') {
        let rest = unquote(rest);
        return match kind {
            "sel" => Ok(SymRef::Sel(rest)),
            "methname" => Ok(SymRef::Methname(rest)),
            "class" => Ok(SymRef::Class(rest)),
            "classref" => Ok(SymRef::Classref(rest)),
            "cfstr" => Ok(SymRef::Cfstr(rest)),
            "ivar" => Ok(SymRef::Ivar(rest)),
            _ => Err(format!("unknown symbol kind {kind}")),
        };
    }
    if s.is_empty() {
        return Err("empty symbol".into());
    }
    Ok(SymRef::Name(s.to_string()))
}

/// `SYM@PAGE`, `SYM@PAGEOFF`, `#imm`.
fn parse_imm(s: &str) -> Result<Imm, String> {
    let s = s.trim();
    if s.starts_with('#') {
        return parse_int(s).map(Imm::Value);
    }
    if let Some(sym) = s.strip_suffix("@PAGEOFF") {
        return Ok(Imm::Sym(parse_symref(sym)?, Reloc::PageOff));
    }
    if let Some(sym) = s.strip_suffix("@PAGE") {
        return Ok(Imm::Sym(parse_symref(sym)?, Reloc::Page));
    }
    Ok(Imm::Sym(parse_symref(s)?, Reloc::Abs))
}

fn parse_cond(s: &str) -> Result<u8, String> {
    Ok(match s {
        "eq" => 0,
        "ne" => 1,
        "cs" | "hs" => 2,
        "cc" | "lo" => 3,
        "mi" => 4,
        "pl" => 5,
        "vs" => 6,
        "vc" => 7,
        "hi" => 8,
        "ls" => 9,
        "ge" => 10,
        "lt" => 11,
        "gt" => 12,
        "le" => 13,
        "al" => 14,
        _ => return Err(format!("bad condition {s}")),
    })
}

fn want(ops: &[String], n: usize) -> Result<(), String> {
    if ops.len() == n {
        Ok(())
    } else {
        Err(format!("expected {n} operands, got {}", ops.len()))
    }
}

/// `[xn]`, `[xn, #imm]`, `[xn, #imm]!`, `[xn, SYM@PAGEOFF]`; post-index passes the trailing operand.
fn parse_mem(base: &str, post: Option<&String>) -> Result<(Reg, Imm, AddrMode), String> {
    let base = base.trim();
    let (inner, pre) = if let Some(b) = base.strip_suffix('!') {
        (b.trim(), true)
    } else {
        (base, false)
    };
    let inner = inner
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or_else(|| format!("bad memory operand {base}"))?;
    let parts = split_operands(inner);
    let rn = parse_reg(&parts[0])?;
    let off = match parts.get(1) {
        Some(p) => parse_imm(p)?,
        None => Imm::Value(0),
    };
    let mode = if pre {
        AddrMode::Pre
    } else if post.is_some() {
        AddrMode::Post
    } else {
        AddrMode::Offset
    };
    let off = match post {
        Some(p) => parse_imm(p)?,
        None => off,
    };
    Ok((rn, off, mode))
}

fn parse_inst(mnem: &str, ops: &[String]) -> Result<Inst, String> {
    if let Some(c) = mnem.strip_prefix("b.") {
        want(ops, 1)?;
        return Ok(Inst::BCond { cond: parse_cond(c)?, target: parse_symref(&ops[0])? });
    }
    Ok(match mnem {
        "nop" => Inst::Nop,
        ".word" => {
            want(ops, 1)?;
            Inst::Word(parse_int(&ops[0])? as u32)
        }
        "ret" => Inst::Ret {
            rn: match ops.first() {
                Some(r) => parse_reg(r)?,
                None => parse_reg("x30")?,
            },
        },
        "br" => {
            want(ops, 1)?;
            Inst::Br { rn: parse_reg(&ops[0])? }
        }
        "blr" => {
            want(ops, 1)?;
            Inst::Blr { rn: parse_reg(&ops[0])? }
        }
        "b" => {
            want(ops, 1)?;
            Inst::B { target: parse_symref(&ops[0])? }
        }
        "bl" => {
            want(ops, 1)?;
            Inst::Bl { target: parse_symref(&ops[0])? }
        }
        "cbz" | "cbnz" => {
            want(ops, 2)?;
            Inst::Cb { nz: mnem == "cbnz", rt: parse_reg(&ops[0])?, target: parse_symref(&ops[1])? }
        }
        "tbz" | "tbnz" => {
            want(ops, 3)?;
            let bit = parse_int(&ops[1])?;
            Inst::Tb {
                nz: mnem == "tbnz",
                rt: parse_reg(&ops[0])?,
                bit: u8::try_from(bit).map_err(|_| "bad bit".to_string())?,
                target: parse_symref(&ops[2])?,
            }
        }
        "mov" => {
            want(ops, 2)?;
            let rd = parse_reg(&ops[0])?;
            if ops[1].trim().starts_with('#') {
                let v = parse_int(&ops[1])?;
                mov_imm(rd, v)?
            } else {
                Inst::MovReg { rd, rm: parse_reg(&ops[1])? }
            }
        }
        "movz" | "movn" | "movk" => {
            let rd = parse_reg(&ops[0])?;
            let imm = parse_int(&ops[1])?;
            let shift = match ops.get(2) {
                Some(s) => parse_int(s.trim().trim_start_matches("lsl").trim())? as u8,
                None => 0,
            };
            let op = match mnem {
                "movz" => MovOp::Z,
                "movn" => MovOp::N,
                _ => MovOp::K,
            };
            Inst::MovWide { op, rd, imm: imm as u16, shift }
        }
        "adrp" => {
            want(ops, 2)?;
            let sym = ops[1].trim().strip_suffix("@PAGE").unwrap_or(&ops[1]);
            Inst::Adrp { rd: parse_reg(&ops[0])?, target: parse_symref(sym)? }
        }
        "adr" => {
            want(ops, 2)?;
            Inst::Adr { rd: parse_reg(&ops[0])?, target: parse_symref(&ops[1])? }
        }
        "add" | "sub" | "adds" | "subs" => {
            want(ops, 3).or_else(|_| want(ops, 4))?;
            let sub = mnem.starts_with("sub");
            let flags = mnem.ends_with('s');
            let rd = parse_reg(&ops[0])?;
            let rn = parse_reg(&ops[1])?;
            let third = ops[2].trim();
            let lsl = match ops.get(3) {
                Some(s) => parse_int(s.trim().trim_start_matches("lsl").trim())? as u8,
                None => 0,
            };
            if third.starts_with('#') || third.contains('@') {
                Inst::AddSubImm { sub, flags, rd, rn, imm: parse_imm(third)?, lsl12: lsl == 12 }
            } else {
                Inst::AddSubReg { sub, flags, rd, rn, rm: parse_reg(third)?, lsl }
            }
        }
        "cmp" | "cmn" => {
            want(ops, 2)?;
            let rn = parse_reg(&ops[0])?;
            let zr = Reg { num: 31, wide: rn.wide, is_sp: false };
            let sub = mnem == "cmp";
            if ops[1].trim().starts_with('#') {
                Inst::AddSubImm { sub, flags: true, rd: zr, rn, imm: parse_imm(&ops[1])?, lsl12: false }
            } else {
                Inst::AddSubReg { sub, flags: true, rd: zr, rn, rm: parse_reg(&ops[1])?, lsl: 0 }
            }
        }
        "ldr" | "str" | "ldur" | "stur" => {
            let load = mnem.starts_with("ld");
            let rt = parse_reg(&ops[0])?;
            if load && !ops.get(1).map(|o| o.trim().starts_with('[')).unwrap_or(false) {
                want(ops, 2)?;
                return Ok(Inst::LdrLit { rt, target: parse_symref(&ops[1])? });
            }
            if ops.len() < 2 {
                return Err("missing memory operand".into());
            }
            let (rn, offset, mode) = parse_mem(&ops[1], ops.get(2))?;
            Inst::Mem { load, rt, rn, offset, mode, unscaled: mnem.ends_with("ur") }
        }
        "ldp" | "stp" => {
            if ops.len() < 3 {
                return Err("ldp/stp need 3 operands".into());
            }
            let (rn, offset, mode) = parse_mem(&ops[2], ops.get(3))?;
            let offset = match offset {
                Imm::Value(v) => v,
                Imm::Sym(..) => return Err("symbolic pair offset".into()),
            };
            Inst::Pair {
                load: mnem == "ldp",
                rt: parse_reg(&ops[0])?,
                rt2: parse_reg(&ops[1])?,
                rn,
                offset,
                mode,
            }
        }
        _ => return Err(format!("unsupported mnemonic {mnem}")),
    })
}

fn mov_imm(rd: Reg, v: i64) -> Result<Inst, String> {
    let bits = if rd.wide { 64 } else { 32 };
    let mask: u64 = if rd.wide { u64::MAX } else { u32::MAX as u64 };
    let uv = (v as u64) & mask;
    for shift in (0..bits).step_by(16) {
        if uv & !(0xFFFFu64 << shift) == 0 {
            return Ok(Inst::MovWide { op: MovOp::Z, rd, imm: (uv >> shift) as u16, shift: shift as u8 });
        }
    }
    let inv = !uv & mask;
    for shift in (0..bits).step_by(16) {
        if inv & !(0xFFFFu64 << shift) == 0 {
            return Ok(Inst::MovWide { op: MovOp::N, rd, imm: (inv >> shift) as u16, shift: shift as u8 });
        }
    }
    Err(format!("immediate {v:#x} not encodable as a single mov"))
}

/// Resolves symbolic operands during encoding.
pub trait Resolver {
    fn resolve(&self, sym: &SymRef) -> Result<u64, FixtureError>;
}

fn field(value: i64, bits: u32, what: &str) -> Result<u32, FixtureError> {
    let min = -(1i64 << (bits - 1));
    let max = (1i64 << (bits - 1)) - 1;
    if value < min || value > max {
        return Err(FixtureError::Asm(format!("{what} out of range: {value}")));
    }
    Ok((value as u32) & ((1u32 << bits) - 1))
}

fn sf(r: Reg) -> u32 {
    if r.wide {
        1 << 31
    } else {
        0
    }
}

pub fn encode(inst: &Inst, pc: u64, res: &dyn Resolver) -> Result<u32, FixtureError> {
    let rel = |t: &SymRef| -> Result<i64, FixtureError> { Ok(res.resolve(t)? as i64 - pc as i64) };
    let value = |imm: &Imm| -> Result<i64, FixtureError> {
        match imm {
            Imm::Value(v) => Ok(*v),
            Imm::Sym(s, Reloc::PageOff) => Ok((res.resolve(s)? & 0xFFF) as i64),
            Imm::Sym(s, Reloc::Page) => Ok((res.resolve(s)? & !0xFFF) as i64),
            Imm::Sym(s, Reloc::Abs) => Ok(res.resolve(s)? as i64),
        }
    };
    let w = match inst {
        Inst::Nop => 0xD503_201F,
        Inst::Word(w) => *w,
        Inst::Ret { rn } => 0xD65F_0000 | (rn.num as u32) << 5,
        Inst::Br { rn } => 0xD61F_0000 | (rn.num as u32) << 5,
        Inst::Blr { rn } => 0xD63F_0000 | (rn.num as u32) << 5,
        Inst::B { target } => {
            let off = rel(target)?;
            0x1400_0000 | field(off >> 2, 26, "b")?
        }
        Inst::Bl { target } => {
            let off = rel(target)?;
            0x9400_0000 | field(off >> 2, 26, "bl")?
        }
        Inst::BCond { cond, target } => {
            let off = rel(target)?;
            0x5400_0000 | field(off >> 2, 19, "b.cond")? << 5 | *cond as u32
        }
        Inst::Cb { nz, rt, target } => {
            let off = rel(target)?;
            let base = if *nz { 0x3500_0000 } else { 0x3400_0000 };
            base | sf(*rt) | field(off >> 2, 19, "cbz")? << 5 | rt.num as u32
        }
        Inst::Tb { nz, rt, bit, target } => {
            let off = rel(target)?;
            let base = if *nz { 0x3700_0000 } else { 0x3600_0000 };
            base | ((*bit as u32 >> 5) & 1) << 31
                | (*bit as u32 & 0x1F) << 19
                | field(off >> 2, 14, "tbz")? << 5
                | rt.num as u32
        }
        Inst::MovWide { op, rd, imm, shift } => {
            let opc = match op {
                MovOp::N => 0x1280_0000,
                MovOp::Z => 0x5280_0000,
                MovOp::K => 0x7280_0000,
            };
            opc | sf(*rd) | ((*shift as u32) / 16) << 21 | (*imm as u32) << 5 | rd.num as u32
        }
        Inst::MovReg { rd, rm } => {
            if rd.is_sp || rm.is_sp {
                0x1100_0000 | sf(*rd) | (rm.num as u32) << 5 | rd.num as u32
            } else {
                0x2A00_03E0 | sf(*rd) | (rm.num as u32) << 16 | rd.num as u32
            }
        }
        Inst::Adrp { rd, target } => {
            let t = res.resolve(target)? as i64;
            let page = (t >> 12) - (pc as i64 >> 12);
            let imm = field(page, 21, "adrp")?;
            0x9000_0000 | (imm & 3) << 29 | (imm >> 2) << 5 | rd.num as u32
        }
        Inst::Adr { rd, target } => {
            let imm = field(rel(target)?, 21, "adr")?;
            0x1000_0000 | (imm & 3) << 29 | (imm >> 2) << 5 | rd.num as u32
        }
        Inst::AddSubImm { sub, flags, rd, rn, imm, lsl12 } => {
            let v = value(imm)?;
            if !(0..4096).contains(&v) {
                return Err(FixtureError::Asm(format!("add/sub immediate out of range: {v}")));
            }
            let mut base = 0x1100_0000u32;
            if *sub {
                base |= 1 << 30;
            }
            if *flags {
                base |= 1 << 29;
            }
            base | sf(*rd) | (*lsl12 as u32) << 22 | (v as u32) << 10 | (rn.num as u32) << 5 | rd.num as u32
        }
        Inst::AddSubReg { sub, flags, rd, rn, rm, lsl } => {
            let mut base = 0x0B00_0000u32;
            if *sub {
                base |= 1 << 30;
            }
            if *flags {
                base |= 1 << 29;
            }
            base | sf(*rd) | (rm.num as u32) << 16 | (*lsl as u32) << 10 | (rn.num as u32) << 5 | rd.num as u32
        }
        Inst::LdrLit { rt, target } => {
            let off = rel(target)?;
            let base = if rt.wide { 0x5800_0000 } else { 0x1800_0000 };
            base | field(off >> 2, 19, "ldr literal")? << 5 | rt.num as u32
        }
        Inst::Mem { load, rt, rn, offset, mode, unscaled } => {
            let v = value(offset)?;
            let size: i64 = if rt.wide { 8 } else { 4 };
            let sz = if rt.wide { 0xC000_0000u32 } else { 0x8000_0000u32 };
            let opc = if *load { 1u32 << 22 } else { 0 };
            let regs = (rn.num as u32) << 5 | rt.num as u32;
            match mode {
                AddrMode::Offset if !unscaled && v >= 0 && v % size == 0 && v / size < 4096 => {
                    sz | 0x3900_0000 | opc | ((v / size) as u32) << 10 | regs
                }
                AddrMode::Offset => sz | 0x3800_0000 | opc | field(v, 9, "ldur")? << 12 | regs,
                AddrMode::Post => sz | 0x3800_0400 | opc | field(v, 9, "post")? << 12 | regs,
                AddrMode::Pre => sz | 0x3800_0C00 | opc | field(v, 9, "pre")? << 12 | regs,
            }
        }
        Inst::Pair { load, rt, rt2, rn, offset, mode } => {
            let size: i64 = if rt.wide { 8 } else { 4 };
            if offset % size != 0 {
                return Err(FixtureError::Asm(format!("misaligned pair offset {offset}")));
            }
            let opc = if rt.wide { 0x8000_0000u32 } else { 0 };
            let kind = match mode {
                AddrMode::Post => 0x2880_0000u32,
                AddrMode::Offset => 0x2900_0000,
                AddrMode::Pre => 0x2980_0000,
            };
            let l = if *load { 1 << 22 } else { 0 };
            opc | kind | l | field(offset / size, 7, "pair")? << 15
                | (rt2.num as u32) << 10
                | (rn.num as u32) << 5
                | rt.num as u32
        }
    };
    Ok(w)
}

struct Labels(std::collections::BTreeMap<String, u64>);

impl Resolver for Labels {
    fn resolve(&self, sym: &SymRef) -> Result<u64, FixtureError> {
        match sym {
            SymRef::Name(n) => self.0.get(n).copied().ok_or_else(|| FixtureError::Asm(format!("unknown label {n}"))),
            other => Err(FixtureError::Asm(format!("symbol {other:?} needs a full fixture build"))),
        }
    }
}

/// Assembles a snippet at `base` whose only symbols are its own labels.
pub fn assemble(src: &[&str], base: u64) -> Result<Vec<u32>, FixtureError> {
    let mut labels = std::collections::BTreeMap::new();
    let mut insts = Vec::new();
    for s in src {
        let line = parse_line(s)?;
        if let Some(l) = line.label {
            labels.insert(l, base + 4 * insts.len() as u64);
        }
        if let Some(i) = line.inst {
            insts.push(i);
        }
    }
    let labels = Labels(labels);
    insts
        .iter()
        .enumerate()
        .map(|(k, i)| encode(i, base + 4 * k as u64, &labels))
        .collect()
}
