mod common;

use common::{toolchain_binary, LinkMap};
use lios_core::macho::{
    parse_fat, parse_macho, select_arm64, FatSlice, MachoError, CPU_TYPE_ARM, CPU_TYPE_ARM64, LC_ENCRYPTION_INFO_64,
};
use lios_fixturegen::container::{fat, Slice, CPU_TYPE_ARMV7};
use lios_fixturegen::{builtin, builtin_names, generate, TEXT_BASE};

#[test]
fn function_starts_match_every_fixture() {
    for name in builtin_names() {
        let fx = generate(&builtin(name).unwrap()).unwrap();
        let img = parse_macho(&fx.binary).unwrap();
        assert_eq!(img.function_starts, fx.expected.function_starts, "{name}");
        assert_eq!(img.image_base, fx.expected.image_base);
        assert!(img.function_starts.windows(2).all(|w| w[0] < w[1]));
        assert!(img.function_starts.iter().all(|a| img.is_executable(*a)));
        let text = img.section("__TEXT", "__text").unwrap();
        assert_eq!((text.vm_addr, text.size), fx.expected.text, "{name}");
        assert_eq!(img.stub_names(), fx.expected.stubs, "{name}");
        assert_eq!(img.entitlements, fx.expected.entitlements, "{name}");
        for s in &img.sections {
            let seg = &img.segments[s.segment];
            assert!(s.vm_addr >= seg.vm_addr && s.end() <= seg.vm_addr + seg.vm_size, "{name}: {}", s.section_name);
            if let Some(off) = img.va_to_offset(s.vm_addr) {
                assert_eq!(img.offset_to_va(off), Some(s.vm_addr), "{name}: {}", s.section_name);
            }
        }
        assert!(img.warnings.is_empty() || name == "malformed_signature", "{name}: {:?}", img.warnings);
    }
}

#[test]
fn three_function_fixture() {
    let fx = generate(&builtin("plain").unwrap()).unwrap();
    let img = parse_macho(&fx.binary).unwrap();
    assert_eq!(img.function_starts.len(), 3);
    assert_eq!(img.entry_point, Some(fx.expected.function("main").unwrap().address));
    assert_eq!(img.dylibs, vec!["/System/Library/Frameworks/Foundation.framework/Foundation".to_string()]);
    // Unknown command kept verbatim.
    let unknown = img.load_commands.iter().find(|lc| lc.cmd == 0x99).unwrap();
    assert_eq!(unknown.raw.len(), 16);
}

#[test]
fn section_lookup() {
    let fx = generate(&builtin("hierarchy").unwrap()).unwrap();
    let img = parse_macho(&fx.binary).unwrap();
    assert!(!img.section_bytes("__TEXT", "__text").unwrap().is_empty());
    assert!(img.section_bytes("__DATA", "__nope").is_none());
    let classlist = img.section_bytes("__DATA", "__objc_classlist").unwrap();
    assert_eq!(classlist.len(), 8 * fx.expected.classlist_len);
}

#[test]
fn address_translation() {
    let fx = generate(&builtin("plain").unwrap()).unwrap();
    let img = parse_macho(&fx.binary).unwrap();
    let text_seg = img.segments.iter().find(|s| s.name == "__TEXT").unwrap();
    assert_eq!(img.va_to_offset(TEXT_BASE), Some(text_seg.file_offset));
    assert_eq!(img.va_to_offset(0x1000), None);
    let (data_va, data_file, data_vm) = fx.expected.data_segment;
    assert!(data_vm > data_file);
    assert!(img.va_to_offset(data_va + data_file - 8).is_some());
    assert_eq!(img.va_to_offset(data_va + data_file), None);
    assert_eq!(img.va_to_offset(data_va + data_vm - 8), None);
    assert!(img.section_bytes("__DATA", "__bss").is_none());
}

#[test]
fn empty_function_starts_payload() {
    let mut m = builtin("plain").unwrap();
    m.functions.clear();
    m.imports.clear();
    let fx = generate(&m).unwrap();
    let img = parse_macho(&fx.binary).unwrap();
    assert!(img.function_starts.is_empty());
}

#[test]
fn entitlements_from_signature() {
    let fx = generate(&builtin("entitled").unwrap()).unwrap();
    let img = parse_macho(&fx.binary).unwrap();
    let ent = img.entitlements.unwrap();
    assert!(ent.contains("get-task-allow"));
    assert_eq!(Some(ent), fx.expected.entitlements);

    let fx = generate(&builtin("malformed_signature").unwrap()).unwrap();
    let img = parse_macho(&fx.binary).unwrap();
    assert_eq!(img.entitlements, None);
    assert!(img.warnings.iter().any(|w| w.contains("signature")), "{:?}", img.warnings);

    let fx = generate(&builtin("plain").unwrap()).unwrap();
    assert_eq!(parse_macho(&fx.binary).unwrap().entitlements, None);
}

#[test]
fn encryption_is_detected() {
    let fx = generate(&builtin("encrypted").unwrap()).unwrap();
    let img = parse_macho(&fx.binary).unwrap();
    assert_eq!(img.cryptid, Some(1));
    assert!(img.load_commands.iter().any(|lc| lc.cmd == LC_ENCRYPTION_INFO_64));
}

fn be(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

#[test]
fn hand_written_fat_header() {
    let arm64 = generate(&builtin("plain").unwrap()).unwrap().binary;
    let armv7 = vec![0xAAu8; 0x1000];
    let mut bytes = be(&[0xCAFE_BABE, 2, CPU_TYPE_ARM64, 0, 0x4000, arm64.len() as u32, 14]);
    bytes.extend(be(&[CPU_TYPE_ARM, 9, 0x24000, 0x1000, 14]));
    bytes.resize(0x4000, 0);
    bytes.extend_from_slice(&arm64);
    bytes.resize(0x24000, 0);
    bytes.extend_from_slice(&armv7);
    let slices = parse_fat(&bytes).unwrap();
    assert_eq!(
        slices,
        vec![
            FatSlice { cputype: CPU_TYPE_ARM64, cpusubtype: 0, range: 0x4000..0x4000 + arm64.len() },
            FatSlice { cputype: CPU_TYPE_ARM, cpusubtype: 9, range: 0x24000..0x25000 },
        ]
    );
    assert_eq!(select_arm64(&bytes).unwrap(), &arm64[..]);
    let armv7_slice = &bytes[slices[1].range.clone()];
    assert!(matches!(parse_macho(armv7_slice), Err(MachoError::BadMagic(_))));

    // The generator's container writer lays out the same slices.
    let generated = fat(
        &[
            Slice { cputype: CPU_TYPE_ARM64, cpusubtype: 0, bytes: &arm64, align: 14 },
            Slice { cputype: CPU_TYPE_ARMV7, cpusubtype: 9, bytes: &armv7, align: 14 },
        ],
        false,
    );
    let gen_slices = parse_fat(&generated).unwrap();
    assert_eq!(gen_slices[0].range, 0x4000..0x4000 + arm64.len());
    let armv7_at = (0x4000 + arm64.len()).div_ceil(0x4000) * 0x4000;
    assert_eq!(gen_slices[1].range, armv7_at..armv7_at + 0x1000);
}

#[test]
fn wide_fat_header() {
    let arm64 = generate(&builtin("plain").unwrap()).unwrap().binary;
    let bytes = fat(&[Slice { cputype: CPU_TYPE_ARM64, cpusubtype: 0, bytes: &arm64, align: 14 }], true);
    assert_eq!(&bytes[..4], &[0xCA, 0xFE, 0xBA, 0xBF]);
    let slices = parse_fat(&bytes).unwrap();
    assert_eq!(slices[0].range, 0x4000..0x4000 + arm64.len());
    assert!(parse_macho(select_arm64(&bytes).unwrap()).is_ok());
}

#[test]
fn fat_slice_past_end_is_truncated() {
    let bytes = be(&[0xCAFE_BABE, 1, CPU_TYPE_ARM64, 0, 0x4000, 0x100, 14]);
    assert!(matches!(parse_fat(&bytes), Err(MachoError::TruncatedFile(_))));
}

#[test]
fn fat_without_arm64() {
    let bytes = fat(&[Slice { cputype: CPU_TYPE_ARMV7, cpusubtype: 9, bytes: &[0; 64], align: 12 }], false);
    assert_eq!(select_arm64(&bytes), Err(MachoError::NoArm64Slice));
}

#[test]
fn linker_built_c_binary() {
    let img = parse_macho(&toolchain_binary("two.exe")).unwrap();
    let map = LinkMap::load("two.map");
    let want: Vec<u64> = map.functions().iter().map(|f| f.0).collect();
    assert_eq!(want, vec![map.symbol("_helper"), map.symbol("_entry")]);
    assert_eq!(img.function_starts, want);
    assert_eq!(img.entry_point, Some(map.symbol("_entry")));
    let text = img.section("__TEXT", "__text").unwrap();
    assert_eq!((text.vm_addr, text.size), map.section("__text"));
}

#[test]
fn linker_built_objc_binary() {
    let img = parse_macho(&toolchain_binary("objc.exe")).unwrap();
    let map = LinkMap::load("objc.map");
    for (addr, size, seg, sect) in &map.sections {
        let s = img.section(seg, sect).unwrap_or_else(|| panic!("{seg},{sect}"));
        assert_eq!((s.vm_addr, s.size), (*addr, *size), "{seg},{sect}");
    }
    assert_eq!(img.sections.len(), map.sections.len());
    let want: Vec<u64> = map.functions().iter().map(|f| f.0).collect();
    assert_eq!(want.len(), 7);
    assert_eq!(img.function_starts, want);
    assert_eq!(img.entry_point, Some(map.symbol("_main")));
    let named: Vec<(u64, String)> = img
        .code_symbols()
        .into_iter()
        .filter(|(_, s)| !s.name.starts_with('l'))
        .map(|(a, s)| (a, s.name.clone()))
        .collect();
    assert_eq!(named, map.functions());
    assert!(img.warnings.is_empty(), "{:?}", img.warnings);
}
