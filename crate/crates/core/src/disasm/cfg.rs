//! Function bodies: linear decoding, basic blocks, stack-slot and address
//! resolution for memory operands, and call-site effects.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::decode::{decode, AddrMode, Index, Instruction, Kind, Location, Op, R};
use crate::macho::{strip_pointer_tags, MachoImage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DisasmError {
    #[error("empty or unreadable function range {0:#x}..{1:#x}")]
    EmptyRange(u64, u64),
    #[error("listing line {line}: {reason}")]
    BadListing { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub ea: u64,
    pub instructions: Vec<Instruction>,
    pub successors: Vec<u64>,
}

impl BasicBlock {
    pub fn last(&self) -> &Instruction {
        self.instructions.last().expect("blocks are non-empty")
    }
    pub fn end(&self) -> u64 {
        self.last().ea + 4
    }
}

/// A use-def edge: the instruction at `use_ea` reads `loc`, last written by `def_ea`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UseDef {
    pub use_ea: u64,
    pub def_ea: u64,
    pub loc: Location,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionBody {
    pub entry_ea: u64,
    pub end_ea: u64,
    pub name: String,
    pub blocks: Vec<BasicBlock>,
    pub use_def: BTreeSet<UseDef>,
    /// Uses reached by the value a location held on function entry.
    pub param_uses: BTreeSet<(u64, Location)>,
    index: BTreeMap<u64, (usize, usize)>,
    preds: BTreeMap<u64, Vec<u64>>,
}

impl FunctionBody {
    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.instructions.iter())
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instructions.len()).sum()
    }

    pub fn instruction(&self, ea: u64) -> Option<&Instruction> {
        let (b, i) = *self.index.get(&ea)?;
        Some(&self.blocks[b].instructions[i])
    }

    pub fn block(&self, ea: u64) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.ea == ea)
    }

    /// Block containing the instruction at `ea`.
    pub fn block_of(&self, ea: u64) -> Option<&BasicBlock> {
        self.index.get(&ea).map(|(b, _)| &self.blocks[*b])
    }

    pub fn predecessors(&self, block_ea: u64) -> &[u64] {
        self.preds.get(&block_ea).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, ea: u64) -> bool {
        ea >= self.entry_ea && ea < self.end_ea
    }

    /// Instructions preceding `ea` in control flow: the previous instruction
    /// in its block, or the last instruction of every predecessor block.
    pub fn previous(&self, ea: u64) -> Vec<u64> {
        let Some(&(b, i)) = self.index.get(&ea) else { return Vec::new() };
        if i > 0 {
            return vec![self.blocks[b].instructions[i - 1].ea];
        }
        self.predecessors(self.blocks[b].ea)
            .iter()
            .filter_map(|p| self.block(*p).map(|blk| blk.last().ea))
            .collect()
    }

    /// Whether the entry value of `loc` reaches its use at `ea`.
    pub fn param_reaches(&self, ea: u64, loc: Location) -> bool {
        self.param_uses.contains(&(ea, loc))
    }

    /// Defs reaching the use of `loc` at `ea`.
    pub fn defs_of(&self, ea: u64, loc: Location) -> Vec<u64> {
        self.use_def
            .range(UseDef { use_ea: ea, def_ea: 0, loc: Location::Reg(0) }..)
            .take_while(|e| e.use_ea == ea)
            .filter(|e| e.loc == loc)
            .map(|e| e.def_ea)
            .collect()
    }

    /// Tail calls: unconditional `b` leaving the function.
    pub fn tail_calls(&self) -> impl Iterator<Item = (&Instruction, u64)> {
        self.instructions().filter_map(move |i| match i.op {
            Op::B { target } if !self.contains(target) => Some((i, target)),
            _ => None,
        })
    }

    /// Calls and tail calls with a direct target.
    pub fn direct_calls(&self) -> impl Iterator<Item = (&Instruction, u64)> {
        self.instructions().filter_map(move |i| match i.op {
            Op::Bl { target } => Some((i, target)),
            Op::B { target } if !self.contains(target) => Some((i, target)),
            _ => None,
        })
    }
}

/// Where instruction bytes come from.
pub trait CodeSource {
    fn word_at(&self, ea: u64) -> Option<[u8; 4]>;
}

impl CodeSource for MachoImage {
    fn word_at(&self, ea: u64) -> Option<[u8; 4]> {
        self.read_at(ea, 4).map(|b| b.try_into().unwrap())
    }
}

impl CodeSource for BTreeMap<u64, [u8; 4]> {
    fn word_at(&self, ea: u64) -> Option<[u8; 4]> {
        self.get(&ea).copied()
    }
}

/// Number of argument registers a callee reads.
#[derive(Debug, Clone, Default)]
pub struct CallInfo {
    /// Stub address -> imported name (no leading underscore).
    pub stubs: BTreeMap<u64, String>,
    /// Known C functions and their argument counts.
    pub arity: BTreeMap<String, u8>,
}

pub const MSGSEND_FAMILY: &[&str] = &["objc_msgSend", "objc_msgSendSuper", "objc_msgSendSuper2"];

fn default_arity() -> BTreeMap<String, u8> {
    [
        ("NSClassFromString", 1),
        ("NSSelectorFromString", 1),
        ("NSStringFromClass", 1),
        ("NSStringFromSelector", 1),
        ("NSLog", 1),
        ("objc_retain", 1),
        ("objc_release", 1),
        ("objc_autorelease", 1),
        ("objc_retainAutorelease", 1),
        ("objc_retainAutoreleasedReturnValue", 1),
        ("objc_autoreleaseReturnValue", 1),
        ("objc_retainAutoreleaseReturnValue", 1),
        ("objc_unsafeClaimAutoreleasedReturnValue", 1),
        ("objc_claimAutoreleasedReturnValue", 1),
        ("objc_alloc", 1),
        ("objc_alloc_init", 1),
        ("objc_opt_new", 1),
        ("objc_opt_class", 1),
        ("objc_opt_self", 1),
        ("objc_storeStrong", 2),
        ("objc_loadWeakRetained", 1),
        ("objc_storeWeak", 2),
        ("objc_destroyWeak", 1),
        ("objc_autoreleasePoolPush", 0),
        ("objc_autoreleasePoolPop", 1),
        ("objc_getClass", 1),
        ("UIApplicationMain", 4),
        ("dlopen", 2),
        ("dlsym", 2),
        ("CCCrypt", 11),
    ]
    .into_iter()
    .map(|(n, a)| (n.to_string(), a.min(8)))
    .collect()
}

impl CallInfo {
    pub fn from_image(image: &MachoImage) -> Self {
        CallInfo { stubs: image.stub_names(), arity: default_arity() }
    }
}

/// Selector string referenced by a selref slot, read straight from the image.
pub fn selector_at_slot(image: &MachoImage, slot: u64) -> Option<String> {
    let s = image.section_containing(slot)?;
    if s.section_name != "__objc_selrefs" {
        return None;
    }
    image.read_cstr(strip_pointer_tags(image.read_u64(slot)?))
}

fn arg_regs(n: u8) -> impl Iterator<Item = Location> {
    (0..n.min(8)).map(Location::Reg)
}

/// Decodes `[entry, end)` and builds the CFG with memory operands resolved.
pub fn build_function<S: CodeSource + ?Sized>(
    code: &S,
    entry: u64,
    end: u64,
    name: &str,
) -> Result<FunctionBody, DisasmError> {
    let mut insts = Vec::new();
    let mut ea = entry;
    while ea < end && ea.checked_add(4).is_some_and(|e| e <= end) {
        match code.word_at(ea) {
            Some(w) => insts.push(decode(w, ea)),
            None => break,
        }
        ea += 4;
    }
    if insts.is_empty() || !entry.is_multiple_of(4) {
        return Err(DisasmError::EmptyRange(entry, end));
    }
    let end = ea;
    let in_range = |t: u64| t >= entry && t < end && t.is_multiple_of(4);

    let mut leaders = BTreeSet::from([entry]);
    for i in &insts {
        if let Op::B { target } | Op::BCond { target, .. } | Op::Cbz { target, .. } | Op::Tbz { target, .. } = i.op {
            if in_range(target) {
                leaders.insert(target);
            }
        }
        if i.ends_block() && i.ea + 4 < end {
            leaders.insert(i.ea + 4);
        }
    }
    let mut blocks: Vec<BasicBlock> = Vec::new();
    for inst in insts {
        if leaders.contains(&inst.ea) || blocks.is_empty() {
            blocks.push(BasicBlock { ea: inst.ea, instructions: Vec::new(), successors: Vec::new() });
        }
        blocks.last_mut().unwrap().instructions.push(inst);
    }
    for b in &mut blocks {
        let last = b.last();
        let next = last.ea + 4;
        let mut succ = Vec::new();
        if last.ends_block() {
            if let Some(t) = last.branch_target.filter(|t| in_range(*t)) {
                succ.push(t);
            }
            if last.is_conditional() && next < end {
                succ.push(next);
            }
        } else if next < end {
            succ.push(next);
        }
        succ.sort_unstable();
        succ.dedup();
        b.successors = succ;
    }

    let mut index = BTreeMap::new();
    let mut preds: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for (bi, b) in blocks.iter().enumerate() {
        for (ii, i) in b.instructions.iter().enumerate() {
            index.insert(i.ea, (bi, ii));
        }
        for s in &b.successors {
            preds.entry(*s).or_default().push(b.ea);
        }
    }
    let mut body = FunctionBody {
        entry_ea: entry,
        end_ea: end,
        name: name.to_string(),
        blocks,
        use_def: BTreeSet::new(),
        param_uses: BTreeSet::new(),
        index,
        preds,
    };
    resolve_memory(&mut body);
    Ok(body)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Frame {
    sp: Option<i64>,
    fp: Option<i64>,
}

fn merge(a: Frame, b: Frame) -> Frame {
    Frame { sp: if a.sp == b.sp { a.sp } else { None }, fp: if a.fp == b.fp { a.fp } else { None } }
}

fn step_frame(f: &mut Frame, op: &Op, defs: &BTreeSet<Location>) {
    let before = *f;
    let mut sp_set = false;
    let mut fp_set = false;
    let reg_val = |r: R, fr: &Frame| match r {
        R::Sp => fr.sp,
        R::X(29) => fr.fp,
        _ => None,
    };
    match op {
        Op::AddImm { rd, rn, imm, flags: false, .. } => {
            let v = reg_val(*rn, &before).map(|b| b + imm);
            match rd {
                R::Sp => {
                    f.sp = v;
                    sp_set = true;
                }
                R::X(29) => {
                    f.fp = v;
                    fp_set = true;
                }
                _ => {}
            }
        }
        Op::MovReg { rd, rm, .. } => match rd {
            R::Sp => {
                f.sp = reg_val(*rm, &before);
                sp_set = true;
            }
            R::X(29) => {
                f.fp = reg_val(*rm, &before);
                fp_set = true;
            }
            _ => {}
        },
        Op::Load { rn: R::Sp, index: Index::Imm(o), mode, .. }
        | Op::Store { rn: R::Sp, index: Index::Imm(o), mode, .. }
        | Op::LoadPair { rn: R::Sp, offset: o, mode, .. }
        | Op::StorePair { rn: R::Sp, offset: o, mode, .. }
            if *mode != AddrMode::Offset =>
        {
            f.sp = before.sp.map(|s| s + o);
            sp_set = true;
        }
        Op::Load { rn: R::X(29), index: Index::Imm(o), mode, .. }
        | Op::Store { rn: R::X(29), index: Index::Imm(o), mode, .. }
        | Op::LoadPair { rn: R::X(29), offset: o, mode, .. }
        | Op::StorePair { rn: R::X(29), offset: o, mode, .. }
            if *mode != AddrMode::Offset =>
        {
            f.fp = before.fp.map(|s| s + o);
            fp_set = true;
        }
        _ => {}
    }
    if !sp_set && defs.contains(&Location::Sp) {
        f.sp = None;
    }
    if !fp_set && defs.contains(&Location::Reg(29)) {
        f.fp = None;
    }
}

/// Effective address of a memory operand relative to entry sp, if known.
fn slot_base(rn: R, f: &Frame) -> Option<i64> {
    match rn {
        R::Sp => f.sp,
        R::X(29) => f.fp,
        _ => None,
    }
}

fn address_offset(o: i64, mode: AddrMode) -> i64 {
    if mode == AddrMode::PostIndex {
        0
    } else {
        o
    }
}

/// Replaces register-relative memory operands with stack slots or absolute
/// addresses, and fuses ADRP pairs into xrefs.
fn resolve_memory(body: &mut FunctionBody) {
    // Frame state at each block entry, propagated to a fixpoint.
    let mut at_entry: BTreeMap<u64, Frame> = BTreeMap::new();
    at_entry.insert(body.entry_ea, Frame { sp: Some(0), fp: None });
    let mut work: VecDeque<u64> = VecDeque::from([body.entry_ea]);
    let block_pos: BTreeMap<u64, usize> = body.blocks.iter().enumerate().map(|(i, b)| (b.ea, i)).collect();
    let mut visits = 0usize;
    while let Some(bea) = work.pop_front() {
        visits += 1;
        if visits > 64 * body.blocks.len() + 64 {
            break;
        }
        let mut f = at_entry[&bea];
        let b = &body.blocks[block_pos[&bea]];
        for i in &b.instructions {
            step_frame(&mut f, &i.op, &i.defs);
        }
        for s in &b.successors {
            let new = match at_entry.get(s) {
                None => f,
                Some(old) => merge(*old, f),
            };
            if at_entry.get(s) != Some(&new) {
                at_entry.insert(*s, new);
                work.push_back(*s);
            }
        }
    }

    for b in &mut body.blocks {
        let mut f = at_entry.get(&b.ea).copied().unwrap_or(Frame { sp: None, fp: None });
        let mut consts: BTreeMap<u8, u64> = BTreeMap::new();
        for i in &mut b.instructions {
            let frame = f;
            let const_of = |r: R, consts: &BTreeMap<u8, u64>| match r {
                R::X(n) => consts.get(&n).copied(),
                _ => None,
            };
            let mut new_const: Option<(u8, u64)> = None;
            match &i.op {
                Op::Adrp { rd: R::X(n), page } => new_const = Some((*n, *page)),
                Op::Adr { rd: R::X(n), addr } => new_const = Some((*n, *addr)),
                Op::AddImm { rd, rn, imm, flags: false, .. } => {
                    if let Some(c) = const_of(*rn, &consts) {
                        let v = c.wrapping_add_signed(*imm);
                        i.xref = Some(v);
                        if let R::X(n) = rd {
                            new_const = Some((*n, v));
                        }
                    }
                }
                _ => {}
            }
            // Memory operands.
            let mut mem_uses: Vec<Location> = Vec::new();
            let mut mem_defs: Vec<Location> = Vec::new();
            let mut drop_base: Option<Location> = None;
            match &i.op {
                Op::Load { rn, index: Index::Imm(o), mode, .. } | Op::Store { rn, index: Index::Imm(o), mode, .. } => {
                    let is_load = matches!(i.op, Op::Load { .. });
                    let off = address_offset(*o, *mode);
                    let loc = if let Some(base) = slot_base(*rn, &frame) {
                        if *mode == AddrMode::Offset {
                            drop_base = rn.loc();
                        }
                        Some(Location::Stack(base + off))
                    } else if let Some(c) = const_of(*rn, &consts) {
                        let a = c.wrapping_add_signed(off);
                        i.xref = Some(a);
                        Some(Location::Mem(a))
                    } else {
                        None
                    };
                    if let Some(l) = loc {
                        if is_load {
                            mem_uses.push(l);
                        } else {
                            mem_defs.push(l);
                        }
                    }
                }
                Op::LoadPair { rn, offset, mode, size, .. } | Op::StorePair { rn, offset, mode, size, .. } => {
                    let is_load = matches!(i.op, Op::LoadPair { .. });
                    let off = address_offset(*offset, *mode);
                    if let Some(base) = slot_base(*rn, &frame) {
                        if *mode == AddrMode::Offset {
                            drop_base = rn.loc();
                        }
                        for k in 0..2 {
                            let l = Location::Stack(base + off + k * i64::from(*size));
                            if is_load {
                                mem_uses.push(l);
                            } else {
                                mem_defs.push(l);
                            }
                        }
                    }
                }
                Op::LoadLiteral { addr, .. } => mem_uses.push(Location::Mem(*addr)),
                _ => {}
            }
            if let Some(b) = drop_base {
                i.uses.remove(&b);
            }
            i.uses.extend(mem_uses);
            i.defs.extend(mem_defs);

            // Registers redefined here lose their constant.
            for d in &i.defs {
                if let Location::Reg(n) = d {
                    consts.remove(n);
                }
            }
            if let Some((n, v)) = new_const {
                consts.insert(n, v);
            }
            step_frame(&mut f, &i.op, &i.defs);
        }
    }
}

/// Sets call-site register effects: every call also defines x0 (its
/// return value) and reads as many argument registers as the callee takes.
pub fn annotate_calls(body: &mut FunctionBody, info: &CallInfo, image: Option<&MachoImage>) {
    for bi in 0..body.blocks.len() {
        for ii in 0..body.blocks[bi].instructions.len() {
            let (op, ea) = {
                let i = &body.blocks[bi].instructions[ii];
                (i.op.clone(), i.ea)
            };
            let target = match op {
                Op::Bl { target } => Some(target),
                Op::B { target } if !body.contains(target) => Some(target),
                Op::Blr { .. } => None,
                _ => continue,
            };
            let callee = target.and_then(|t| info.stubs.get(&t)).cloned();
            let nargs = match callee.as_deref() {
                Some(n) if MSGSEND_FAMILY.contains(&n) => {
                    let sel = image.and_then(|img| local_selector(&body.blocks[bi].instructions[..ii], img));
                    match sel {
                        Some(s) => 2 + s.matches(':').count() as u8,
                        None => 8,
                    }
                }
                Some(n) => info.arity.get(n).copied().unwrap_or(8),
                None => 8,
            };
            let i = &mut body.blocks[bi].instructions[ii];
            debug_assert_eq!(i.ea, ea);
            i.uses.extend(arg_regs(nargs));
            if i.kind == Kind::Call {
                i.defs.insert(Location::Reg(0));
            }
        }
    }
}

/// Selector loaded into x1 earlier in the same block, if it comes straight
/// from a selref slot.
fn local_selector(before: &[Instruction], image: &MachoImage) -> Option<String> {
    let mut want = Location::Reg(1);
    for i in before.iter().rev() {
        if !i.defs.contains(&want) {
            continue;
        }
        match &i.op {
            Op::Load { .. } => return selector_at_slot(image, i.xref?),
            Op::MovReg { rm, .. } => want = rm.loc()?,
            _ => return None,
        }
    }
    None
}
