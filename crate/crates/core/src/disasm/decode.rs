//! Decoder for the aarch64 integer subset used by compiled Objective-C code.

use std::collections::BTreeSet;
use std::fmt;

/// A storage location tracked by the data-flow analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    /// x0..x30; wN aliases xN.
    Reg(u8),
    Sp,
    /// Stack slot, as a byte offset from the stack pointer at function entry.
    Stack(i64),
    /// Absolute memory.
    Mem(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Reg(r) => write!(f, "x{r}"),
            Location::Sp => write!(f, "sp"),
            Location::Stack(o) => write!(f, "stack[{o}]"),
            Location::Mem(a) => write!(f, "mem[{a:#x}]"),
        }
    }
}

impl std::str::FromStr for Location {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("not a location: {s}");
        if s == "sp" || s == "wsp" {
            return Ok(Location::Sp);
        }
        if let Some(inner) = s.strip_prefix("stack[").and_then(|r| r.strip_suffix(']')) {
            return inner.parse().map(Location::Stack).map_err(|_| bad());
        }
        if let Some(inner) = s.strip_prefix("mem[").and_then(|r| r.strip_suffix(']')) {
            let hex = inner.strip_prefix("0x").ok_or_else(bad)?;
            return u64::from_str_radix(hex, 16).map(Location::Mem).map_err(|_| bad());
        }
        if let Some(n) = s.strip_prefix('x').or_else(|| s.strip_prefix('w')) {
            if !n.is_empty() {
                let r: u8 = n.parse().map_err(|_| bad())?;
                if r <= 30 {
                    return Ok(Location::Reg(r));
                }
            }
        }
        match s {
            "fp" => Ok(Location::Reg(29)),
            "lr" => Ok(Location::Reg(30)),
            _ => Err(bad()),
        }
    }
}

/// Register operand as encoded: number 31 means sp or the zero register
/// depending on the operand position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum R {
    X(u8),
    Sp,
    Zr,
}

impl R {
    fn sp_or(n: u32) -> R {
        if n == 31 {
            R::Sp
        } else {
            R::X(n as u8)
        }
    }
    fn zr_or(n: u32) -> R {
        if n == 31 {
            R::Zr
        } else {
            R::X(n as u8)
        }
    }
    pub fn loc(self) -> Option<Location> {
        match self {
            R::X(n) => Some(Location::Reg(n)),
            R::Sp => Some(Location::Sp),
            R::Zr => None,
        }
    }
    fn name(self, wide: bool) -> String {
        match (self, wide) {
            (R::X(n), true) => format!("x{n}"),
            (R::X(n), false) => format!("w{n}"),
            (R::Sp, true) => "sp".into(),
            (R::Sp, false) => "wsp".into(),
            (R::Zr, true) => "xzr".into(),
            (R::Zr, false) => "wzr".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddrMode {
    Offset,
    PreIndex,
    PostIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Index {
    Imm(i64),
    /// Register offset: index register, sign-extend a 32-bit index, shift amount.
    Reg { rm: R, extend: Extend, shift: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extend {
    Uxtw,
    Lsl,
    Sxtw,
    Sxtx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    /// MOVZ/MOVN and their `mov` alias; `value` is the resulting register value.
    MovImm { rd: R, value: u64, wide: bool },
    Movk { rd: R, imm16: u16, shift: u8, wide: bool },
    MovReg { rd: R, rm: R, wide: bool },
    Adr { rd: R, addr: u64 },
    Adrp { rd: R, page: u64 },
    /// ADD/SUB/ADDS/SUBS (immediate); `imm` is negative for subtraction.
    AddImm { rd: R, rn: R, imm: i64, flags: bool, wide: bool },
    AddReg { rd: R, rn: R, rm: R, sub: bool, flags: bool, wide: bool },
    Load { rt: R, rn: R, index: Index, mode: AddrMode, size: u8, signed: bool, wide: bool },
    Store { rt: R, rn: R, index: Index, mode: AddrMode, size: u8, wide: bool },
    LoadLiteral { rt: R, addr: u64, size: u8, signed: bool },
    LoadPair { rt: R, rt2: R, rn: R, offset: i64, mode: AddrMode, size: u8 },
    StorePair { rt: R, rt2: R, rn: R, offset: i64, mode: AddrMode, size: u8 },
    B { target: u64 },
    BCond { cond: u8, target: u64 },
    Bl { target: u64 },
    Blr { rn: R },
    Br { rn: R },
    Ret { rn: R },
    Cbz { rt: R, nonzero: bool, target: u64 },
    Tbz { rt: R, bit: u8, nonzero: bool, target: u64 },
    /// CMP/CMN, immediate or register form.
    Compare { rn: R, rm: Option<R>, imm: Option<i64> },
    Nop,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Assignment,
    Branch,
    Call,
    Return,
    Compare,
    Nop,
    Other,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Assignment => "assignment",
            Kind::Branch => "branch",
            Kind::Call => "call",
            Kind::Return => "return",
            Kind::Compare => "compare",
            Kind::Nop => "nop",
            Kind::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub ea: u64,
    pub bytes: [u8; 4],
    pub asm: String,
    pub kind: Kind,
    pub op: Op,
    pub defs: BTreeSet<Location>,
    pub uses: BTreeSet<Location>,
    pub branch_target: Option<u64>,
    pub immediate: Option<i64>,
    pub xref: Option<u64>,
}

impl Instruction {
    pub fn word(&self) -> u32 {
        u32::from_le_bytes(self.bytes)
    }

    /// Ends its basic block: branches of every kind and returns.
    pub fn ends_block(&self) -> bool {
        matches!(
            self.op,
            Op::B { .. } | Op::BCond { .. } | Op::Br { .. } | Op::Ret { .. } | Op::Cbz { .. } | Op::Tbz { .. }
        )
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self.op, Op::BCond { .. } | Op::Cbz { .. } | Op::Tbz { .. })
    }

    pub fn is_call(&self) -> bool {
        self.kind == Kind::Call
    }
}

pub const CONDITIONS: [&str; 16] =
    ["eq", "ne", "hs", "lo", "mi", "pl", "vs", "vc", "hi", "ls", "ge", "lt", "gt", "le", "al", "nv"];

const UNSCALED_MASK: u32 = 0x3F20_0C00;
const UNSCALED: u32 = 0x3800_0000;

fn bits(w: u32, lo: u32, n: u32) -> u32 {
    (w >> lo) & ((1u32 << n) - 1)
}

fn sext(v: u64, width: u32) -> i64 {
    let shift = 64 - width;
    ((v << shift) as i64) >> shift
}

fn rel(ea: u64, off: i64) -> u64 {
    ea.wrapping_add_signed(off)
}

fn decode_op(w: u32, ea: u64) -> Op {
    // Move wide.
    if w & 0x1F80_0000 == 0x1280_0000 {
        let wide = w >> 31 == 1;
        let opc = bits(w, 29, 2);
        let hw = bits(w, 21, 2);
        let imm16 = bits(w, 5, 16) as u64;
        let rd = R::zr_or(bits(w, 0, 5));
        if !wide && hw > 1 {
            return Op::Other;
        }
        let shift = hw * 16;
        return match opc {
            0 => {
                let mut v = !(imm16 << shift);
                if !wide {
                    v &= 0xFFFF_FFFF;
                }
                Op::MovImm { rd, value: v, wide }
            }
            2 => Op::MovImm { rd, value: imm16 << shift, wide },
            3 => Op::Movk { rd, imm16: imm16 as u16, shift: shift as u8, wide },
            _ => Op::Other,
        };
    }
    // PC-relative addressing.
    if w & 0x1F00_0000 == 0x1000_0000 {
        let imm = sext(((bits(w, 5, 19) << 2) | bits(w, 29, 2)) as u64, 21);
        let rd = R::zr_or(bits(w, 0, 5));
        return if w >> 31 == 1 {
            Op::Adrp { rd, page: rel(ea & !0xFFF, imm << 12) }
        } else {
            Op::Adr { rd, addr: rel(ea, imm) }
        };
    }
    // Add/subtract immediate.
    if w & 0x1F80_0000 == 0x1100_0000 {
        let wide = w >> 31 == 1;
        let sub = bits(w, 30, 1) == 1;
        let flags = bits(w, 29, 1) == 1;
        let mut imm = bits(w, 10, 12) as i64;
        if bits(w, 22, 1) == 1 {
            imm <<= 12;
        }
        let rn = R::sp_or(bits(w, 5, 5));
        let imm = if sub { -imm } else { imm };
        let rd_n = bits(w, 0, 5);
        if flags && rd_n == 31 {
            // cmp x, #imm is subs xzr; cmn is adds xzr.
            return Op::Compare { rn, rm: None, imm: Some(imm) };
        }
        let rd = if flags { R::zr_or(rd_n) } else { R::sp_or(rd_n) };
        if !flags && imm == 0 && (rd == R::Sp || rn == R::Sp) && bits(w, 22, 1) == 0 && !sub {
            return Op::MovReg { rd, rm: rn, wide };
        }
        return Op::AddImm { rd, rn, imm, flags, wide };
    }
    // Add/subtract shifted register (LSL only).
    if w & 0x1F20_0000 == 0x0B00_0000 {
        let wide = w >> 31 == 1;
        let sub = bits(w, 30, 1) == 1;
        let flags = bits(w, 29, 1) == 1;
        let shift_type = bits(w, 22, 2);
        let amount = bits(w, 10, 6);
        if shift_type != 0 || amount != 0 || (!wide && amount > 31) {
            return Op::Other;
        }
        let rd_n = bits(w, 0, 5);
        let rn = R::zr_or(bits(w, 5, 5));
        let rm = R::zr_or(bits(w, 16, 5));
        if flags && rd_n == 31 {
            if sub {
                return Op::Compare { rn, rm: Some(rm), imm: None };
            }
            return Op::Other;
        }
        return Op::AddReg { rd: R::zr_or(rd_n), rn, rm, sub, flags, wide };
    }
    // Logical shifted register: only the `mov` alias of ORR.
    if w & 0x7FE0_FFE0 == 0x2A00_03E0 {
        let wide = w >> 31 == 1;
        return Op::MovReg { rd: R::zr_or(bits(w, 0, 5)), rm: R::zr_or(bits(w, 16, 5)), wide };
    }
    // Load/store register, unsigned immediate.
    if w & 0x3F00_0000 == 0x3900_0000 {
        let size = bits(w, 30, 2);
        let opc = bits(w, 22, 2);
        let scale = 1i64 << size;
        let offset = bits(w, 10, 12) as i64 * scale;
        return load_store(size, opc, bits(w, 0, 5), bits(w, 5, 5), Index::Imm(offset), AddrMode::Offset);
    }
    // Load/store register, unscaled / pre / post index.
    if w & 0x3F20_0000 == 0x3800_0000 {
        let size = bits(w, 30, 2);
        let opc = bits(w, 22, 2);
        let imm = sext(bits(w, 12, 9) as u64, 9);
        let mode = match bits(w, 10, 2) {
            0 => AddrMode::Offset,
            1 => AddrMode::PostIndex,
            3 => AddrMode::PreIndex,
            _ => return Op::Other,
        };
        return load_store(size, opc, bits(w, 0, 5), bits(w, 5, 5), Index::Imm(imm), mode);
    }
    // Load/store register, register offset.
    if w & 0x3F20_0C00 == 0x3820_0800 {
        let size = bits(w, 30, 2);
        let opc = bits(w, 22, 2);
        let extend = match bits(w, 13, 3) {
            0b010 => Extend::Uxtw,
            0b011 => Extend::Lsl,
            0b110 => Extend::Sxtw,
            0b111 => Extend::Sxtx,
            _ => return Op::Other,
        };
        let shift = if bits(w, 12, 1) == 1 { size as u8 } else { 0 };
        let rm = R::zr_or(bits(w, 16, 5));
        return load_store(size, opc, bits(w, 0, 5), bits(w, 5, 5), Index::Reg { rm, extend, shift }, AddrMode::Offset);
    }
    // Load register (literal).
    if w & 0x3F00_0000 == 0x1800_0000 {
        let addr = rel(ea, sext(bits(w, 5, 19) as u64, 19) << 2);
        let rt = R::zr_or(bits(w, 0, 5));
        return match bits(w, 30, 2) {
            0 => Op::LoadLiteral { rt, addr, size: 4, signed: false },
            1 => Op::LoadLiteral { rt, addr, size: 8, signed: false },
            2 => Op::LoadLiteral { rt, addr, size: 4, signed: true },
            _ => Op::Other,
        };
    }
    // Load/store pair.
    if w & 0x3E00_0000 == 0x2800_0000 {
        let opc = bits(w, 30, 2);
        let load = bits(w, 22, 1) == 1;
        let mode = match bits(w, 23, 2) {
            1 => AddrMode::PostIndex,
            2 => AddrMode::Offset,
            3 => AddrMode::PreIndex,
            _ => return Op::Other,
        };
        let size: u8 = match opc {
            0 => 4,
            2 => 8,
            _ => return Op::Other,
        };
        let offset = sext(bits(w, 15, 7) as u64, 7) * i64::from(size);
        let rt = R::zr_or(bits(w, 0, 5));
        let rt2 = R::zr_or(bits(w, 10, 5));
        let rn = R::sp_or(bits(w, 5, 5));
        return if load {
            Op::LoadPair { rt, rt2, rn, offset, mode, size }
        } else {
            Op::StorePair { rt, rt2, rn, offset, mode, size }
        };
    }
    // Unconditional branch (immediate).
    if w & 0x7C00_0000 == 0x1400_0000 {
        let target = rel(ea, sext(bits(w, 0, 26) as u64, 26) << 2);
        return if w >> 31 == 1 { Op::Bl { target } } else { Op::B { target } };
    }
    if w & 0xFF00_0010 == 0x5400_0000 {
        let target = rel(ea, sext(bits(w, 5, 19) as u64, 19) << 2);
        return Op::BCond { cond: bits(w, 0, 4) as u8, target };
    }
    if w & 0x7E00_0000 == 0x3400_0000 {
        let target = rel(ea, sext(bits(w, 5, 19) as u64, 19) << 2);
        return Op::Cbz { rt: R::zr_or(bits(w, 0, 5)), nonzero: bits(w, 24, 1) == 1, target };
    }
    if w & 0x7E00_0000 == 0x3600_0000 {
        let target = rel(ea, sext(bits(w, 5, 14) as u64, 14) << 2);
        let bit = ((w >> 31) << 5 | bits(w, 19, 5)) as u8;
        return Op::Tbz { rt: R::zr_or(bits(w, 0, 5)), bit, nonzero: bits(w, 24, 1) == 1, target };
    }
    // Unconditional branch (register), including the pointer-authenticating forms.
    if w & 0xFE1F_0000 == 0xD61F_0000 {
        let opc = bits(w, 21, 4);
        let op3 = bits(w, 10, 6);
        let rn = R::zr_or(bits(w, 5, 5));
        let plain = op3 == 0 && bits(w, 0, 5) == 0;
        let pac = (op3 == 2 || op3 == 3) && (opc >= 8 || bits(w, 0, 5) == 31);
        if !(plain || pac) {
            return Op::Other;
        }
        return match opc {
            0 | 8 => Op::Br { rn },
            1 | 9 => Op::Blr { rn },
            2 if plain || bits(w, 5, 5) == 31 => Op::Ret { rn: if pac { R::X(30) } else { rn } },
            _ => Op::Other,
        };
    }
    if w == 0xD503_201F {
        return Op::Nop;
    }
    Op::Other
}

fn load_store(size: u32, opc: u32, rt: u32, rn: u32, index: Index, mode: AddrMode) -> Op {
    let rt = R::zr_or(rt);
    let rn = R::sp_or(rn);
    let bytes = 1u8 << size;
    match opc {
        0 => Op::Store { rt, rn, index, mode, size: bytes, wide: size == 3 },
        1 => Op::Load { rt, rn, index, mode, size: bytes, signed: false, wide: size == 3 },
        // Sign-extending loads: opc 2 extends to 64 bits, opc 3 to 32 bits.
        2 if size < 3 => Op::Load { rt, rn, index, mode, size: bytes, signed: true, wide: true },
        3 if size < 2 => Op::Load { rt, rn, index, mode, size: bytes, signed: true, wide: false },
        _ => Op::Other,
    }
}

fn mem_operand(rn: R, index: &Index, mode: AddrMode) -> String {
    let base = rn.name(true);
    match (index, mode) {
        (Index::Imm(0), AddrMode::Offset) => format!("[{base}]"),
        (Index::Imm(o), AddrMode::Offset) => format!("[{base}, #{o}]"),
        (Index::Imm(o), AddrMode::PreIndex) => format!("[{base}, #{o}]!"),
        (Index::Imm(o), AddrMode::PostIndex) => format!("[{base}], #{o}"),
        (Index::Reg { rm, extend, shift }, _) => {
            let idx_wide = matches!(extend, Extend::Lsl | Extend::Sxtx);
            let idx = rm.name(idx_wide);
            match (extend, shift) {
                (Extend::Lsl, 0) => format!("[{base}, {idx}]"),
                (Extend::Lsl, s) => format!("[{base}, {idx}, lsl #{s}]"),
                (e, 0) => format!("[{base}, {idx}, {}]", ext_name(*e)),
                (e, s) => format!("[{base}, {idx}, {} #{s}]", ext_name(*e)),
            }
        }
    }
}

fn ext_name(e: Extend) -> &'static str {
    match e {
        Extend::Uxtw => "uxtw",
        Extend::Lsl => "lsl",
        Extend::Sxtw => "sxtw",
        Extend::Sxtx => "sxtx",
    }
}

fn load_mnemonic(size: u8, signed: bool, wide: bool) -> &'static str {
    match (size, signed, wide) {
        (1, false, _) => "ldrb",
        (2, false, _) => "ldrh",
        (1, true, true) | (1, true, false) => "ldrsb",
        (2, true, _) => "ldrsh",
        (4, true, _) => "ldrsw",
        _ => "ldr",
    }
}

fn store_mnemonic(size: u8) -> &'static str {
    match size {
        1 => "strb",
        2 => "strh",
        _ => "str",
    }
}

/// `movz` can produce this value in one instruction.
fn movz_encodable(v: u64, wide: bool) -> bool {
    let slots = if wide { 4 } else { 2 };
    (0..slots).any(|i| v & !(0xFFFFu64 << (16 * i)) == 0)
}

fn render(op: &Op, w: u32) -> String {
    match op {
        Op::MovImm { rd, value, wide } => {
            let is_movn = bits(w, 29, 2) == 0;
            let hw = bits(w, 21, 2) * 16;
            let imm16 = bits(w, 5, 16);
            let shift = if hw > 0 { format!(", lsl #{hw}") } else { String::new() };
            if is_movn && movz_encodable(*value, *wide) {
                return format!("movn {}, #{imm16}{shift}", rd.name(*wide));
            }
            if !is_movn && imm16 == 0 && hw > 0 {
                return format!("movz {}, #0{shift}", rd.name(*wide));
            }
            let shown = match (is_movn, *wide) {
                (true, true) => (*value as i64).to_string(),
                (true, false) => (*value as u32 as i32).to_string(),
                (false, _) => value.to_string(),
            };
            format!("mov {}, #{shown}", rd.name(*wide))
        }
        Op::Movk { rd, imm16, shift, wide } => {
            if *shift == 0 {
                format!("movk {}, #{imm16}", rd.name(*wide))
            } else {
                format!("movk {}, #{imm16}, lsl #{shift}", rd.name(*wide))
            }
        }
        Op::MovReg { rd, rm, wide } => format!("mov {}, {}", rd.name(*wide), rm.name(*wide)),
        Op::Adr { rd, addr } => format!("adr {}, {addr:#x}", rd.name(true)),
        Op::Adrp { rd, page } => format!("adrp {}, {page:#x}", rd.name(true)),
        Op::AddImm { rd, rn, imm, flags, wide } => {
            let m = match (*imm < 0 || bits(w, 30, 1) == 1, flags) {
                (false, false) => "add",
                (true, false) => "sub",
                (false, true) => "adds",
                (true, true) => "subs",
            };
            let mut mag = imm.unsigned_abs();
            let mut suffix = String::new();
            if bits(w, 22, 1) == 1 {
                mag >>= 12;
                suffix = ", lsl #12".into();
            }
            format!("{m} {}, {}, #{mag}{suffix}", rd.name(*wide), rn.name(*wide))
        }
        Op::AddReg { rd, rn, rm, sub, flags, wide } => {
            if *sub && *rn == R::Zr {
                let m = if *flags { "negs" } else { "neg" };
                return format!("{m} {}, {}", rd.name(*wide), rm.name(*wide));
            }
            let m = match (sub, flags) {
                (false, false) => "add",
                (true, false) => "sub",
                (false, true) => "adds",
                (true, true) => "subs",
            };
            format!("{m} {}, {}, {}", rd.name(*wide), rn.name(*wide), rm.name(*wide))
        }
        Op::Load { rt, rn, index, mode, size, signed, wide } => {
            let mut m = load_mnemonic(*size, *signed, *wide).to_string();
            if w & UNSCALED_MASK == UNSCALED {
                m = m.replacen("ldr", "ldur", 1);
            }
            format!("{m} {}, {}", rt.name(*wide), mem_operand(*rn, index, *mode))
        }
        Op::Store { rt, rn, index, mode, size, wide } => {
            let mut m = store_mnemonic(*size).to_string();
            if w & UNSCALED_MASK == UNSCALED {
                m = m.replacen("str", "stur", 1);
            }
            format!("{m} {}, {}", rt.name(*wide), mem_operand(*rn, index, *mode))
        }
        Op::LoadLiteral { rt, addr, size, signed } => {
            let m = if *signed { "ldrsw" } else { "ldr" };
            format!("{m} {}, {addr:#x}", rt.name(*size == 8 || *signed))
        }
        Op::LoadPair { rt, rt2, rn, offset, mode, size } | Op::StorePair { rt, rt2, rn, offset, mode, size } => {
            let m = if matches!(op, Op::LoadPair { .. }) { "ldp" } else { "stp" };
            let wide = *size == 8;
            format!("{m} {}, {}, {}", rt.name(wide), rt2.name(wide), mem_operand(*rn, &Index::Imm(*offset), *mode))
        }
        Op::B { target } => format!("b {target:#x}"),
        Op::Bl { target } => format!("bl {target:#x}"),
        Op::BCond { cond, target } => format!("b.{} {target:#x}", CONDITIONS[*cond as usize]),
        Op::Cbz { rt, nonzero, target } => {
            let m = if *nonzero { "cbnz" } else { "cbz" };
            format!("{m} {}, {target:#x}", rt.name(w >> 31 == 1))
        }
        Op::Tbz { rt, bit, nonzero, target } => {
            let m = if *nonzero { "tbnz" } else { "tbz" };
            format!("{m} {}, #{bit}, {target:#x}", rt.name(*bit >= 32))
        }
        Op::Blr { rn } | Op::Br { rn } | Op::Ret { rn } => {
            let base = match op {
                Op::Blr { .. } => "blr",
                Op::Br { .. } => "br",
                _ => "ret",
            };
            let opc = bits(w, 21, 4);
            let op3 = bits(w, 10, 6);
            let key = if op3 == 3 { "b" } else { "a" };
            let pac = op3 == 2 || op3 == 3;
            match (base, pac) {
                ("ret", false) if *rn == R::X(30) => "ret".into(),
                ("ret", false) => format!("ret {}", rn.name(true)),
                ("ret", true) => format!("reta{key}"),
                (_, false) => format!("{base} {}", rn.name(true)),
                (_, true) if opc >= 8 => format!("{base}a{key} {}, {}", rn.name(true), R::sp_or(bits(w, 0, 5)).name(true)),
                (_, true) => format!("{base}a{key}z {}", rn.name(true)),
            }
        }
        Op::Compare { rn, rm, imm } => {
            let wide = w >> 31 == 1;
            match (rm, imm) {
                (Some(rm), _) => format!("cmp {}, {}", rn.name(wide), rm.name(wide)),
                (None, Some(i)) => {
                    let m = if bits(w, 30, 1) == 1 { "cmp" } else { "cmn" };
                    let mut mag = i.unsigned_abs();
                    let mut suffix = String::new();
                    if bits(w, 22, 1) == 1 {
                        mag >>= 12;
                        suffix = ", lsl #12".into();
                    }
                    format!("{m} {}, #{mag}{suffix}", rn.name(wide))
                }
                _ => unreachable!(),
            }
        }
        Op::Nop => "nop".into(),
        Op::Other => format!(".word {w:#010x}"),
    }
}

fn add_reg(set: &mut BTreeSet<Location>, r: R) {
    if let Some(l) = r.loc() {
        set.insert(l);
    }
}

/// Register-level effects; memory operands are resolved later with stack
/// and address tracking.
fn register_effects(op: &Op) -> (BTreeSet<Location>, BTreeSet<Location>) {
    let mut defs = BTreeSet::new();
    let mut uses = BTreeSet::new();
    match op {
        Op::MovImm { rd, .. } | Op::Adr { rd, .. } | Op::Adrp { rd, .. } => add_reg(&mut defs, *rd),
        Op::Movk { rd, .. } => {
            add_reg(&mut defs, *rd);
            add_reg(&mut uses, *rd);
        }
        Op::MovReg { rd, rm, .. } => {
            add_reg(&mut defs, *rd);
            add_reg(&mut uses, *rm);
        }
        Op::AddImm { rd, rn, .. } => {
            add_reg(&mut defs, *rd);
            add_reg(&mut uses, *rn);
        }
        Op::AddReg { rd, rn, rm, .. } => {
            add_reg(&mut defs, *rd);
            add_reg(&mut uses, *rn);
            add_reg(&mut uses, *rm);
        }
        Op::Load { rt, rn, index, mode, .. } => {
            add_reg(&mut defs, *rt);
            add_reg(&mut uses, *rn);
            if let Index::Reg { rm, .. } = index {
                add_reg(&mut uses, *rm);
            }
            if *mode != AddrMode::Offset {
                add_reg(&mut defs, *rn);
            }
        }
        Op::Store { rt, rn, index, mode, .. } => {
            add_reg(&mut uses, *rt);
            add_reg(&mut uses, *rn);
            if let Index::Reg { rm, .. } = index {
                add_reg(&mut uses, *rm);
            }
            if *mode != AddrMode::Offset {
                add_reg(&mut defs, *rn);
            }
        }
        Op::LoadLiteral { rt, .. } => add_reg(&mut defs, *rt),
        Op::LoadPair { rt, rt2, rn, mode, .. } => {
            add_reg(&mut defs, *rt);
            add_reg(&mut defs, *rt2);
            add_reg(&mut uses, *rn);
            if *mode != AddrMode::Offset {
                add_reg(&mut defs, *rn);
            }
        }
        Op::StorePair { rt, rt2, rn, mode, .. } => {
            add_reg(&mut uses, *rt);
            add_reg(&mut uses, *rt2);
            add_reg(&mut uses, *rn);
            if *mode != AddrMode::Offset {
                add_reg(&mut defs, *rn);
            }
        }
        Op::Bl { .. } => {
            defs.insert(Location::Reg(30));
        }
        Op::Blr { rn } => {
            defs.insert(Location::Reg(30));
            add_reg(&mut uses, *rn);
        }
        Op::Br { rn } => add_reg(&mut uses, *rn),
        Op::Ret { rn } => {
            add_reg(&mut uses, *rn);
            uses.insert(Location::Reg(0));
        }
        Op::Cbz { rt, .. } | Op::Tbz { rt, .. } => add_reg(&mut uses, *rt),
        Op::Compare { rn, rm, .. } => {
            add_reg(&mut uses, *rn);
            if let Some(rm) = rm {
                add_reg(&mut uses, *rm);
            }
        }
        Op::B { .. } | Op::BCond { .. } | Op::Nop | Op::Other => {}
    }
    (defs, uses)
}

fn kind_of(op: &Op) -> Kind {
    match op {
        Op::MovImm { .. }
        | Op::Movk { .. }
        | Op::MovReg { .. }
        | Op::Adr { .. }
        | Op::Adrp { .. }
        | Op::AddImm { .. }
        | Op::AddReg { .. }
        | Op::Load { .. }
        | Op::Store { .. }
        | Op::LoadLiteral { .. }
        | Op::LoadPair { .. }
        | Op::StorePair { .. } => Kind::Assignment,
        Op::B { .. } | Op::BCond { .. } | Op::Br { .. } | Op::Cbz { .. } | Op::Tbz { .. } => Kind::Branch,
        Op::Bl { .. } | Op::Blr { .. } => Kind::Call,
        Op::Ret { .. } => Kind::Return,
        Op::Compare { .. } => Kind::Compare,
        Op::Nop => Kind::Nop,
        Op::Other => Kind::Other,
    }
}

/// Decodes one instruction. Unsupported encodings come back as
/// `kind = other` with `.word` text and no effects.
pub fn decode(bytes: [u8; 4], ea: u64) -> Instruction {
    let w = u32::from_le_bytes(bytes);
    let op = decode_op(w, ea);
    let asm = render(&op, w);
    let kind = kind_of(&op);
    let (defs, uses) = register_effects(&op);
    let branch_target = match op {
        Op::B { target } | Op::Bl { target } | Op::BCond { target, .. } => Some(target),
        Op::Cbz { target, .. } | Op::Tbz { target, .. } => Some(target),
        _ => None,
    };
    let immediate = match op {
        Op::MovImm { value, wide, .. } => Some(if wide { value as i64 } else { value as u32 as i32 as i64 }),
        Op::Movk { imm16, .. } => Some(i64::from(imm16)),
        Op::AddImm { imm, .. } => Some(imm),
        Op::Compare { imm, .. } => imm,
        Op::Tbz { bit, .. } => Some(i64::from(bit)),
        Op::Load { index: Index::Imm(o), .. } | Op::Store { index: Index::Imm(o), .. } => Some(o),
        Op::LoadPair { offset, .. } | Op::StorePair { offset, .. } => Some(offset),
        _ => None,
    };
    let xref = match op {
        Op::Adr { addr, .. } | Op::LoadLiteral { addr, .. } => Some(addr),
        _ => None,
    };
    Instruction { ea, bytes, asm, kind, op, defs, uses, branch_target, immediate, xref }
}

pub fn decode_word(word: u32, ea: u64) -> Instruction {
    decode(word.to_le_bytes(), ea)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ret_and_mov() {
        let i = decode_word(0xD65F_03C0, 0x1000);
        assert_eq!(i.kind, Kind::Return);
        assert_eq!(i.asm, "ret");
        let i = decode_word(0xD280_0020, 0x1000);
        assert_eq!(i.asm, "mov x0, #1");
        assert_eq!(i.defs, BTreeSet::from([Location::Reg(0)]));
        assert_eq!(i.immediate, Some(1));
        assert!(i.uses.is_empty());
    }

    #[test]
    fn invalid_word() {
        let i = decode_word(0, 0x1000);
        assert_eq!(i.kind, Kind::Other);
        assert_eq!(i.asm, ".word 0x00000000");
        assert!(i.defs.is_empty() && i.uses.is_empty());
    }

    #[test]
    fn location_text_round_trip() {
        for l in [Location::Reg(0), Location::Reg(30), Location::Sp, Location::Stack(-16), Location::Stack(8), Location::Mem(0x1000_0800)] {
            assert_eq!(l.to_string().parse::<Location>(), Ok(l));
        }
        assert_eq!("w8".parse::<Location>(), Ok(Location::Reg(8)));
        assert!("x31".parse::<Location>().is_err());
        assert!("q0".parse::<Location>().is_err());
    }

    #[test]
    fn branch_targets_are_absolute() {
        // b #-8 at 0x100
        let i = decode_word(0x17FF_FFFE, 0x100);
        assert_eq!(i.branch_target, Some(0xF8));
        assert_eq!(i.asm, "b 0xf8");
        // adrp x8, #4096 at 0x1234 -> page of pc + 0x1000
        let i = decode_word(0xB000_0008, 0x1234);
        assert_eq!(i.op, Op::Adrp { rd: R::X(8), page: 0x2000 });
    }
}
