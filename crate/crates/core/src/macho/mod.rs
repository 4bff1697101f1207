//! Mach-O loader: fat containers, 64-bit arm64 images, symbols, function starts.

pub mod bind;
pub mod codesign;
pub mod function_starts;
pub mod uleb;

use std::collections::BTreeMap;
use std::ops::Range;

pub use bind::Bind;
pub use function_starts::decode_function_starts;
pub use uleb::{decode_uleb128, UlebError};

pub const MH_MAGIC_64: u32 = 0xFEED_FACF;
pub const MH_MAGIC: u32 = 0xFEED_FACE;
pub const FAT_MAGIC: u32 = 0xCAFE_BABE;
pub const FAT_MAGIC_64: u32 = 0xCAFE_BABF;

pub const CPU_TYPE_ARM64: u32 = 0x0100_000C;
pub const CPU_TYPE_ARM: u32 = 12;
pub const CPU_TYPE_X86_64: u32 = 0x0100_0007;
pub const CPU_SUBTYPE_ARM64E: u32 = 2;

pub const LC_SEGMENT_64: u32 = 0x19;
pub const LC_SYMTAB: u32 = 0x2;
pub const LC_DYSYMTAB: u32 = 0xB;
pub const LC_LOAD_DYLIB: u32 = 0xC;
pub const LC_CODE_SIGNATURE: u32 = 0x1D;
pub const LC_FUNCTION_STARTS: u32 = 0x26;
pub const LC_ENCRYPTION_INFO_64: u32 = 0x2C;
pub const LC_DYLD_INFO: u32 = 0x22;
pub const LC_DYLD_INFO_ONLY: u32 = 0x8000_0022;
pub const LC_MAIN: u32 = 0x8000_0028;
pub const LC_LOAD_WEAK_DYLIB: u32 = 0x8000_0018;

pub const S_SYMBOL_STUBS: u32 = 0x8;
pub const S_ZEROFILL: u32 = 0x1;
pub const S_ATTR_PURE_INSTRUCTIONS: u32 = 0x8000_0000;
pub const S_ATTR_SOME_INSTRUCTIONS: u32 = 0x400;

const VM_PROT_EXECUTE: u32 = 0x4;
const N_STAB: u8 = 0xE0;
const N_TYPE: u8 = 0x0E;
const N_EXT: u8 = 0x01;
const N_UNDF: u8 = 0x0;
const INDIRECT_SYMBOL_LOCAL: u32 = 0x8000_0000;
const INDIRECT_SYMBOL_ABS: u32 = 0x4000_0000;

/// Address bits kept when dereferencing data-section pointers; everything
/// above bit 47 carries pointer-authentication or tag bits.
pub const POINTER_MASK: u64 = 0x0000_FFFF_FFFF_FFFF;

pub fn strip_pointer_tags(v: u64) -> u64 {
    v & POINTER_MASK
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MachoError {
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("malformed load command #{index}: {reason}")]
    MalformedLoadCommand { index: usize, reason: String },
    #[error("unsupported architecture (cputype {0:#x}); only 64-bit arm64 images are lifted")]
    UnsupportedArch(u32),
    #[error("duplicate section {0},{1}")]
    DuplicateSection(String, String),
    #[error("no arm64 slice in fat file")]
    NoArm64Slice,
}

/// One architecture slice of a (possibly thin) file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FatSlice {
    pub cputype: u32,
    pub cpusubtype: u32,
    pub range: Range<usize>,
}

impl FatSlice {
    pub fn arch_name(&self) -> String {
        arch_name(self.cputype, self.cpusubtype)
    }
}

pub fn arch_name(cputype: u32, cpusubtype: u32) -> String {
    match (cputype, cpusubtype & 0x00FF_FFFF) {
        (CPU_TYPE_ARM64, CPU_SUBTYPE_ARM64E) => "arm64e".into(),
        (CPU_TYPE_ARM64, _) => "arm64".into(),
        (CPU_TYPE_ARM, _) => "armv7".into(),
        (CPU_TYPE_X86_64, _) => "x86_64".into(),
        (t, s) => format!("cpu{t:#x}/{s:#x}"),
    }
}

fn be32(b: &[u8], off: usize) -> Option<u32> {
    b.get(off..off.checked_add(4)?).map(|s| u32::from_be_bytes(s.try_into().unwrap()))
}

fn be64(b: &[u8], off: usize) -> Option<u64> {
    b.get(off..off.checked_add(8)?).map(|s| u64::from_be_bytes(s.try_into().unwrap()))
}

fn le16(b: &[u8], off: usize) -> Option<u16> {
    b.get(off..off.checked_add(2)?).map(|s| u16::from_le_bytes(s.try_into().unwrap()))
}

pub(crate) fn le32(b: &[u8], off: usize) -> Option<u32> {
    b.get(off..off.checked_add(4)?).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
}

pub(crate) fn le64(b: &[u8], off: usize) -> Option<u64> {
    b.get(off..off.checked_add(8)?).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
}

fn fixed_name(b: &[u8]) -> String {
    let end = b.iter().position(|c| *c == 0).unwrap_or(b.len());
    String::from_utf8_lossy(&b[..end]).into_owned()
}

fn cstr_at(b: &[u8], off: usize) -> Option<String> {
    let rest = b.get(off..)?;
    let end = rest.iter().position(|c| *c == 0)?;
    Some(String::from_utf8_lossy(&rest[..end]).into_owned())
}

/// Enumerates architecture slices. Thin images yield one full-range slice.
pub fn parse_fat(bytes: &[u8]) -> Result<Vec<FatSlice>, MachoError> {
    let be = be32(bytes, 0).ok_or_else(|| MachoError::TruncatedFile("no magic".into()))?;
    if be == FAT_MAGIC || be == FAT_MAGIC_64 {
        let wide = be == FAT_MAGIC_64;
        let n = be32(bytes, 4).ok_or_else(|| MachoError::TruncatedFile("fat header".into()))? as usize;
        let entry = if wide { 32 } else { 20 };
        let mut out = Vec::new();
        for i in 0..n {
            let e = 8 + i * entry;
            let trunc = || MachoError::TruncatedFile(format!("fat arch entry {i}"));
            let cputype = be32(bytes, e).ok_or_else(trunc)?;
            let cpusubtype = be32(bytes, e + 4).ok_or_else(trunc)?;
            let (offset, size) = if wide {
                (be64(bytes, e + 8).ok_or_else(trunc)?, be64(bytes, e + 16).ok_or_else(trunc)?)
            } else {
                (
                    u64::from(be32(bytes, e + 8).ok_or_else(trunc)?),
                    u64::from(be32(bytes, e + 12).ok_or_else(trunc)?),
                )
            };
            let end = offset
                .checked_add(size)
                .filter(|end| *end <= bytes.len() as u64)
                .ok_or_else(|| MachoError::TruncatedFile(format!("slice {i} extends past end of file")))?;
            out.push(FatSlice { cputype, cpusubtype, range: offset as usize..end as usize });
        }
        return Ok(out);
    }
    let le = le32(bytes, 0).unwrap();
    if le == MH_MAGIC_64 || le == MH_MAGIC {
        let cputype = le32(bytes, 4).ok_or_else(|| MachoError::TruncatedFile("mach header".into()))?;
        let cpusubtype = le32(bytes, 8).ok_or_else(|| MachoError::TruncatedFile("mach header".into()))?;
        return Ok(vec![FatSlice { cputype, cpusubtype, range: 0..bytes.len() }]);
    }
    Err(MachoError::BadMagic(be))
}

/// Picks the arm64 (or arm64e) slice from thin or fat input.
pub fn select_arm64(bytes: &[u8]) -> Result<&[u8], MachoError> {
    let slices = parse_fat(bytes)?;
    if slices.len() == 1 && slices[0].range == (0..bytes.len()) {
        return Ok(bytes);
    }
    slices
        .iter()
        .find(|s| s.cputype == CPU_TYPE_ARM64)
        .map(|s| &bytes[s.range.clone()])
        .ok_or(MachoError::NoArm64Slice)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Protections {
    pub read: bool,
    pub write: bool,
    pub execute: bool,
}

impl Protections {
    fn from_bits(p: u32) -> Self {
        Protections { read: p & 1 != 0, write: p & 2 != 0, execute: p & VM_PROT_EXECUTE != 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub vm_addr: u64,
    pub vm_size: u64,
    pub file_offset: u64,
    pub file_size: u64,
    pub protections: Protections,
}

impl Segment {
    pub fn contains(&self, va: u64) -> bool {
        va >= self.vm_addr && va - self.vm_addr < self.vm_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub segment_name: String,
    pub section_name: String,
    pub vm_addr: u64,
    pub size: u64,
    pub file_offset: u64,
    pub flags: u32,
    pub reserved1: u32,
    pub reserved2: u32,
    /// Index into [`MachoImage::segments`].
    pub segment: usize,
}

impl Section {
    pub fn contains(&self, va: u64) -> bool {
        va >= self.vm_addr && va - self.vm_addr < self.size
    }
    pub fn end(&self) -> u64 {
        self.vm_addr.saturating_add(self.size)
    }
    pub fn is_zerofill(&self) -> bool {
        matches!(self.flags & 0xFF, S_ZEROFILL | 0xC | 0x10)
    }
    pub fn is_code(&self) -> bool {
        self.flags & (S_ATTR_PURE_INSTRUCTIONS | S_ATTR_SOME_INSTRUCTIONS) != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolEntry {
    pub name: String,
    /// Absent for undefined (imported) symbols.
    pub address: Option<u64>,
    /// Undefined here, provided by another image.
    pub is_external: bool,
    /// Defined and visible outside the image.
    pub is_exported: bool,
    pub is_debug: bool,
    pub n_type: u8,
    pub n_sect: u8,
    pub n_desc: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadCommand {
    pub cmd: u32,
    pub offset: usize,
    /// The full command including its 8-byte header.
    pub raw: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct MachoImage {
    data: Vec<u8>,
    pub cpu_type: u32,
    pub cpu_subtype: u32,
    pub file_type: u32,
    pub segments: Vec<Segment>,
    pub sections: Vec<Section>,
    pub symbols: Vec<SymbolEntry>,
    pub load_commands: Vec<LoadCommand>,
    pub function_starts: Vec<u64>,
    pub entitlements: Option<String>,
    pub image_base: u64,
    /// Entry point from `LC_MAIN`, as a virtual address.
    pub entry_point: Option<u64>,
    pub dylibs: Vec<String>,
    pub binds: Vec<Bind>,
    pub indirect_symbols: Vec<u32>,
    /// `cryptid` of `LC_ENCRYPTION_INFO_64`, when present.
    pub cryptid: Option<u32>,
    /// Non-fatal problems found while parsing.
    pub warnings: Vec<String>,
    bind_index: BTreeMap<u64, usize>,
}

struct RawSymtab {
    symoff: u32,
    nsyms: u32,
    stroff: u32,
    strsize: u32,
}

/// Parses a thin 64-bit arm64 Mach-O image.
pub fn parse_macho(bytes: &[u8]) -> Result<MachoImage, MachoError> {
    let magic = le32(bytes, 0).ok_or_else(|| MachoError::TruncatedFile("no magic".into()))?;
    if magic == MH_MAGIC {
        let cpu = le32(bytes, 4).unwrap_or(0);
        return Err(MachoError::UnsupportedArch(cpu));
    }
    if magic != MH_MAGIC_64 {
        return Err(MachoError::BadMagic(magic));
    }
    if bytes.len() < 32 {
        return Err(MachoError::TruncatedFile("mach header".into()));
    }
    let cpu_type = le32(bytes, 4).unwrap();
    if cpu_type != CPU_TYPE_ARM64 {
        return Err(MachoError::UnsupportedArch(cpu_type));
    }
    let cpu_subtype = le32(bytes, 8).unwrap();
    let file_type = le32(bytes, 12).unwrap();
    let ncmds = le32(bytes, 16).unwrap() as usize;
    let sizeofcmds = le32(bytes, 20).unwrap() as usize;
    let lc_end = 32usize
        .checked_add(sizeofcmds)
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| MachoError::TruncatedFile("load commands extend past end of file".into()))?;

    let mut img = MachoImage {
        data: bytes.to_vec(),
        cpu_type,
        cpu_subtype,
        file_type,
        segments: Vec::new(),
        sections: Vec::new(),
        symbols: Vec::new(),
        load_commands: Vec::new(),
        function_starts: Vec::new(),
        entitlements: None,
        image_base: 0,
        entry_point: None,
        dylibs: Vec::new(),
        binds: Vec::new(),
        indirect_symbols: Vec::new(),
        cryptid: None,
        warnings: Vec::new(),
        bind_index: BTreeMap::new(),
    };

    let mut off = 32usize;
    for index in 0..ncmds {
        let malformed = |reason: &str| MachoError::MalformedLoadCommand { index, reason: reason.to_string() };
        if off + 8 > lc_end {
            return Err(malformed("header extends past the load-command region"));
        }
        let cmd = le32(bytes, off).unwrap();
        let cmdsize = le32(bytes, off + 4).unwrap() as usize;
        if cmdsize < 8 {
            return Err(malformed("cmdsize smaller than the command header"));
        }
        let end = off
            .checked_add(cmdsize)
            .filter(|e| *e <= lc_end)
            .ok_or_else(|| malformed("cmdsize extends past the load-command region"))?;
        img.load_commands.push(LoadCommand { cmd, offset: off, raw: bytes[off..end].to_vec() });
        off = end;
    }

    let mut symtab = None;
    let mut dysym: Option<(u32, u32)> = None;
    let mut fstarts: Option<(u32, u32)> = None;
    let mut codesig: Option<(u32, u32)> = None;
    let mut dyld_info: Option<[u32; 10]> = None;
    let mut entryoff = None;
    for (index, lc) in img.load_commands.iter().enumerate() {
        let raw = &lc.raw;
        let malformed = |reason: &str| MachoError::MalformedLoadCommand { index, reason: reason.to_string() };
        let need = |n: usize| if raw.len() < n { Err(malformed("cmdsize smaller than the command's fixed fields")) } else { Ok(()) };
        match lc.cmd {
            LC_SEGMENT_64 => {
                need(72)?;
                let nsects = le32(raw, 64).unwrap() as usize;
                if nsects.checked_mul(80).and_then(|s| s.checked_add(72)).is_none_or(|n| n > raw.len()) {
                    return Err(malformed("section headers extend past cmdsize"));
                }
                let seg = Segment {
                    name: fixed_name(&raw[8..24]),
                    vm_addr: le64(raw, 24).unwrap(),
                    vm_size: le64(raw, 32).unwrap(),
                    file_offset: le64(raw, 40).unwrap(),
                    file_size: le64(raw, 48).unwrap(),
                    protections: Protections::from_bits(le32(raw, 60).unwrap()),
                };
                let seg_index = img.segments.len();
                for s in 0..nsects {
                    let h = 72 + 80 * s;
                    let section = Section {
                        section_name: fixed_name(&raw[h..h + 16]),
                        segment_name: fixed_name(&raw[h + 16..h + 32]),
                        vm_addr: le64(raw, h + 32).unwrap(),
                        size: le64(raw, h + 40).unwrap(),
                        file_offset: u64::from(le32(raw, h + 48).unwrap()),
                        flags: le32(raw, h + 64).unwrap(),
                        reserved1: le32(raw, h + 68).unwrap(),
                        reserved2: le32(raw, h + 72).unwrap(),
                        segment: seg_index,
                    };
                    if img
                        .sections
                        .iter()
                        .any(|o| o.segment_name == section.segment_name && o.section_name == section.section_name)
                    {
                        return Err(MachoError::DuplicateSection(section.segment_name, section.section_name));
                    }
                    img.sections.push(section);
                }
                img.segments.push(seg);
            }
            LC_SYMTAB => {
                need(24)?;
                symtab = Some(RawSymtab {
                    symoff: le32(raw, 8).unwrap(),
                    nsyms: le32(raw, 12).unwrap(),
                    stroff: le32(raw, 16).unwrap(),
                    strsize: le32(raw, 20).unwrap(),
                });
            }
            LC_DYSYMTAB => {
                need(80)?;
                dysym = Some((le32(raw, 56).unwrap(), le32(raw, 60).unwrap()));
            }
            LC_FUNCTION_STARTS => {
                need(16)?;
                fstarts = Some((le32(raw, 8).unwrap(), le32(raw, 12).unwrap()));
            }
            LC_CODE_SIGNATURE => {
                need(16)?;
                codesig = Some((le32(raw, 8).unwrap(), le32(raw, 12).unwrap()));
            }
            LC_DYLD_INFO | LC_DYLD_INFO_ONLY => {
                need(48)?;
                let mut v = [0u32; 10];
                for (i, w) in v.iter_mut().enumerate() {
                    *w = le32(raw, 8 + 4 * i).unwrap();
                }
                dyld_info = Some(v);
            }
            LC_MAIN => {
                need(24)?;
                entryoff = Some(le64(raw, 8).unwrap());
            }
            LC_LOAD_DYLIB | LC_LOAD_WEAK_DYLIB => {
                need(24)?;
                let name_off = le32(raw, 8).unwrap() as usize;
                img.dylibs.push(cstr_at(raw, name_off).unwrap_or_default());
            }
            LC_ENCRYPTION_INFO_64 => {
                need(24)?;
                img.cryptid = Some(le32(raw, 16).unwrap());
            }
            _ => {}
        }
    }

    // Segments must not overlap in the file.
    let mut spans: Vec<(u64, u64, &str)> = img
        .segments
        .iter()
        .filter(|s| s.file_size > 0)
        .map(|s| (s.file_offset, s.file_offset.saturating_add(s.file_size), s.name.as_str()))
        .collect();
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            img.warnings.push(format!("segments {} and {} overlap in the file", w[0].2, w[1].2));
        }
    }
    for s in &img.sections {
        let seg = &img.segments[s.segment];
        if s.size > 0 && (s.vm_addr < seg.vm_addr || s.end() > seg.vm_addr.saturating_add(seg.vm_size)) {
            img.warnings.push(format!("section {},{} lies outside its segment", s.segment_name, s.section_name));
        }
    }

    img.image_base = img
        .segments
        .iter()
        .find(|s| s.name == "__TEXT")
        .or_else(|| img.segments.iter().find(|s| s.file_offset == 0 && s.file_size > 0))
        .map(|s| s.vm_addr)
        .unwrap_or(0);
    if let Some(off) = entryoff {
        img.entry_point = img.offset_to_va(off);
    }

    if let Some(st) = symtab {
        img.symbols = parse_symbols(bytes, &st, &mut img.warnings);
    }
    if let Some((indirectoff, n)) = dysym {
        let start = indirectoff as usize;
        for i in 0..n as usize {
            match le32(bytes, start + 4 * i) {
                Some(v) => img.indirect_symbols.push(v),
                None => {
                    img.warnings.push("indirect symbol table truncated".into());
                    break;
                }
            }
        }
    }
    if let Some((dataoff, size)) = fstarts {
        match bytes.get(dataoff as usize..(dataoff as usize).saturating_add(size as usize)) {
            Some(payload) => match decode_function_starts(payload, img.image_base) {
                Ok(starts) => {
                    let before = starts.len();
                    let execs: Vec<(u64, u64)> = img.executable_ranges();
                    img.function_starts = starts
                        .into_iter()
                        .filter(|a| execs.iter().any(|(lo, hi)| a >= lo && a < hi))
                        .collect();
                    if img.function_starts.len() != before {
                        img.warnings.push(format!(
                            "{} function starts outside executable sections dropped",
                            before - img.function_starts.len()
                        ));
                    }
                }
                Err(e) => img.warnings.push(format!("function starts: {e}")),
            },
            None => img.warnings.push("LC_FUNCTION_STARTS payload outside file".into()),
        }
    }
    if let Some((dataoff, size)) = codesig {
        match bytes.get(dataoff as usize..(dataoff as usize).saturating_add(size as usize)) {
            Some(blob) => match codesign::entitlements_from_superblob(blob) {
                Ok(e) => img.entitlements = e,
                Err(e) => {
                    log::warn!("{e}");
                    img.warnings.push(e.to_string());
                }
            },
            None => img.warnings.push("code signature outside file".into()),
        }
    }
    if let Some(info) = dyld_info {
        let seg_addrs: Vec<u64> = img.segments.iter().map(|s| s.vm_addr).collect();
        for (off, size, lazy) in [(info[2], info[3], false), (info[4], info[5], false), (info[6], info[7], true)] {
            if size == 0 {
                continue;
            }
            match bytes.get(off as usize..(off as usize).saturating_add(size as usize)) {
                Some(stream) => {
                    let (binds, warn) = bind::parse_binds(stream, &seg_addrs, lazy);
                    img.binds.extend(binds);
                    if let Some(w) = warn {
                        img.warnings.push(format!("bind opcodes: {w}"));
                    }
                }
                None => img.warnings.push("bind opcodes outside file".into()),
            }
        }
    }
    for (i, b) in img.binds.iter().enumerate() {
        img.bind_index.entry(b.address).or_insert(i);
    }
    Ok(img)
}

fn parse_symbols(bytes: &[u8], st: &RawSymtab, warnings: &mut Vec<String>) -> Vec<SymbolEntry> {
    let strtab = match bytes.get(st.stroff as usize..(st.stroff as usize).saturating_add(st.strsize as usize)) {
        Some(s) => s,
        None => {
            warnings.push("string table outside file".into());
            return Vec::new();
        }
    };
    let mut out = Vec::new();
    for i in 0..st.nsyms as usize {
        let e = (st.symoff as usize).saturating_add(16 * i);
        let (Some(strx), Some(n_desc), Some(value)) = (le32(bytes, e), le16(bytes, e + 6), le64(bytes, e + 8)) else {
            warnings.push("symbol table truncated".into());
            break;
        };
        let n_type = bytes[e + 4];
        let n_sect = bytes[e + 5];
        let name = cstr_at(strtab, strx as usize).unwrap_or_default();
        let is_debug = n_type & N_STAB != 0;
        let undefined = !is_debug && n_type & N_TYPE == N_UNDF;
        out.push(SymbolEntry {
            name,
            address: if undefined || is_debug { None } else { Some(value) },
            is_external: undefined,
            is_exported: !is_debug && !undefined && n_type & N_EXT != 0,
            is_debug,
            n_type,
            n_sect,
            n_desc,
        });
    }
    out
}

impl MachoImage {
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn section(&self, segment: &str, section: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.segment_name == segment && s.section_name == section)
    }

    /// Finds a section by name in any segment (`__objc_*` moves between `__DATA` and `__DATA_CONST`).
    pub fn section_named(&self, section: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.section_name == section)
    }

    /// File bytes of a section; zero-fill sections have none.
    pub fn section_bytes(&self, segment: &str, section: &str) -> Option<&[u8]> {
        self.section(segment, section).and_then(|s| self.bytes_of(s))
    }

    pub fn bytes_of(&self, s: &Section) -> Option<&[u8]> {
        if s.is_zerofill() {
            return None;
        }
        let start = s.file_offset as usize;
        self.data.get(start..start.checked_add(s.size as usize)?)
    }

    pub fn segment_containing(&self, va: u64) -> Option<&Segment> {
        self.segments.iter().find(|s| s.contains(va))
    }

    pub fn section_containing(&self, va: u64) -> Option<&Section> {
        self.sections.iter().find(|s| s.contains(va))
    }

    /// File offset of a virtual address; zero-fill tails map to nothing.
    pub fn va_to_offset(&self, va: u64) -> Option<u64> {
        let seg = self.segment_containing(va)?;
        let rel = va - seg.vm_addr;
        (rel < seg.file_size).then(|| seg.file_offset.checked_add(rel)).flatten()
    }

    pub fn offset_to_va(&self, off: u64) -> Option<u64> {
        self.segments
            .iter()
            .find(|s| s.vm_size > 0 && off >= s.file_offset && off - s.file_offset < s.file_size.min(s.vm_size))
            .and_then(|s| s.vm_addr.checked_add(off - s.file_offset))
    }

    pub fn read_at(&self, va: u64, len: usize) -> Option<&[u8]> {
        let off = self.va_to_offset(va)? as usize;
        let seg = self.segment_containing(va)?;
        let seg_end = seg.file_offset.saturating_add(seg.file_size) as usize;
        let end = off.checked_add(len)?;
        (end <= seg_end).then(|| self.data.get(off..end)).flatten()
    }

    pub fn read_u32(&self, va: u64) -> Option<u32> {
        self.read_at(va, 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn read_u64(&self, va: u64) -> Option<u64> {
        self.read_at(va, 8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    /// Reads a pointer-sized word with tag bits stripped.
    pub fn read_pointer(&self, va: u64) -> Option<u64> {
        self.read_u64(va).map(strip_pointer_tags)
    }

    /// NUL-terminated string at `va`, bounded by the containing section.
    pub fn read_cstr(&self, va: u64) -> Option<String> {
        let sect = self.section_containing(va)?;
        let bytes = self.bytes_of(sect)?;
        let start = (va - sect.vm_addr) as usize;
        let rest = bytes.get(start..)?;
        let end = rest.iter().position(|c| *c == 0)?;
        Some(String::from_utf8_lossy(&rest[..end]).into_owned())
    }

    pub fn is_mapped(&self, va: u64) -> bool {
        self.segment_containing(va).is_some()
    }

    pub fn executable_ranges(&self) -> Vec<(u64, u64)> {
        self.sections
            .iter()
            .filter(|s| {
                s.is_code() || self.segments.get(s.segment).map(|g| g.protections.execute).unwrap_or(false)
            })
            .filter(|s| s.flags & 0xFF != S_SYMBOL_STUBS && s.flags & 0xFF != 0x2)
            .map(|s| (s.vm_addr, s.end()))
            .collect()
    }

    pub fn is_executable(&self, va: u64) -> bool {
        self.sections.iter().any(|s| {
            s.contains(va)
                && (s.is_code() || self.segments.get(s.segment).map(|g| g.protections.execute).unwrap_or(false))
        })
    }

    /// Symbol bound into the pointer slot at `va`, if any.
    pub fn bind_at(&self, va: u64) -> Option<&str> {
        self.bind_index.get(&va).map(|i| self.binds[*i].symbol.as_str())
    }

    /// Maps each stub address to the imported symbol it jumps to (leading
    /// underscore removed). Unresolvable stubs are named `stub_<hex>`.
    pub fn stub_names(&self) -> BTreeMap<u64, String> {
        let mut out = BTreeMap::new();
        for s in self.sections.iter().filter(|s| s.flags & 0xFF == S_SYMBOL_STUBS) {
            let stride = u64::from(s.reserved2);
            if stride == 0 {
                continue;
            }
            // Each stub needs an indirect symbol slot, which bounds the count.
            let slots = self.indirect_symbols.len().saturating_sub(s.reserved1 as usize) as u64;
            for i in 0..(s.size / stride).min(slots) {
                let Some(addr) = s.vm_addr.checked_add(i * stride) else { break };
                let name = self
                    .indirect_symbols
                    .get(s.reserved1 as usize + i as usize)
                    .filter(|ix| **ix & (INDIRECT_SYMBOL_LOCAL | INDIRECT_SYMBOL_ABS) == 0)
                    .and_then(|ix| self.symbols.get(*ix as usize))
                    .map(|sym| strip_underscore(&sym.name).to_string())
                    .unwrap_or_else(|| format!("stub_{addr:x}"));
                out.insert(addr, name);
            }
        }
        out
    }

    /// Defined, named code symbols by address (first name wins).
    pub fn code_symbols(&self) -> BTreeMap<u64, &SymbolEntry> {
        let mut out = BTreeMap::new();
        for s in &self.symbols {
            if let Some(a) = s.address {
                if !s.is_debug && !s.name.is_empty() && self.is_executable(a) {
                    out.entry(a).or_insert(s);
                }
            }
        }
        out
    }

    /// Function ranges: consecutive function starts, the last one ending at
    /// the end of its section.
    pub fn function_ranges(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        for (i, &start) in self.function_starts.iter().enumerate() {
            let sect_end = self.section_containing(start).map(|s| s.end()).unwrap_or(start);
            let end = match self.function_starts.get(i + 1) {
                Some(&next) if next <= sect_end => next,
                _ => sect_end,
            };
            if end > start {
                out.push((start, end));
            }
        }
        out
    }
}

pub fn strip_underscore(s: &str) -> &str {
    s.strip_prefix('_').unwrap_or(s)
}
