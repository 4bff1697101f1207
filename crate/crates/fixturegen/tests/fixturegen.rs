use std::io::{Cursor, Read};

use lios_fixturegen::asm::assemble;
use lios_fixturegen::{builtin, builtin_names, container, generate, package_ipa, parse_manifest, FixtureError};

/// (word, text) pairs produced by clang for the disassembler tests.
fn reference_encodings() -> Vec<(u32, String)> {
    include_str!("../../core/tests/data/a64_vectors.txt")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (w, text) = l.split_once("  ").unwrap();
            (u32::from_str_radix(w.trim_start_matches("0x"), 16).unwrap(), text.trim().to_string())
        })
        .collect()
}

#[test]
fn assembler_matches_reference_encodings() {
    let mut accepted = 0;
    for (word, text) in reference_encodings() {
        // The assembler covers the subset fixtures use; whatever it accepts must encode exactly.
        if let Ok(words) = assemble(&[text.as_str()], 0) {
            assert_eq!(words, vec![word], "{text}");
            accepted += 1;
        }
    }
    assert!(accepted >= 60, "only {accepted} reference instructions assembled");
}

#[test]
fn builtins_generate_deterministically() {
    for name in builtin_names() {
        let m = builtin(name).unwrap();
        let a = generate(&m).unwrap();
        let b = generate(&m).unwrap();
        assert_eq!(a.binary, b.binary, "{name}");
        assert_eq!(a.expected, b.expected, "{name}");
        assert_eq!(a.expected.name, name);
        assert!(a.expected.function_starts.windows(2).all(|w| w[0] < w[1]), "{name}");
        assert_eq!(&a.binary[..4], &0xFEED_FACFu32.to_le_bytes());
    }
}

#[test]
fn bad_manifests_are_rejected() {
    assert!(matches!(parse_manifest(r#"{"name": "x", "colour": 1}"#), Err(FixtureError::Json(_))));
    let m = parse_manifest(r#"{"name": "x", "functions": [{"name": "_f", "code": ["frobnicate x0"]}]}"#).unwrap();
    assert!(matches!(generate(&m), Err(FixtureError::Asm(_))));
    let m = parse_manifest(r#"{"name": "x", "functions": [{"name": "_f", "code": ["b Lnowhere"]}]}"#).unwrap();
    assert!(generate(&m).is_err());
}

#[test]
fn ipa_layout() {
    let m = builtin("webview_vuln").unwrap();
    let fx = generate(&m).unwrap();
    let ipa = package_ipa(&m, &fx.binary).unwrap();
    let mut z = zip::ZipArchive::new(Cursor::new(ipa)).unwrap();
    let mut exe = Vec::new();
    z.by_name("Payload/webview_vuln.app/Bridge").unwrap().read_to_end(&mut exe).unwrap();
    assert_eq!(exe, fx.binary);
    let mut info = String::new();
    z.by_name("Payload/webview_vuln.app/Info.plist").unwrap().read_to_string(&mut info).unwrap();
    assert!(info.contains("<key>CFBundleExecutable</key>"));
}

#[test]
fn plist_text_is_escaped() {
    let xml = container::plist_xml(&serde_json::json!({ "a<b": "x & y", "n": 3, "t": true, "l": [1.5] }));
    assert!(xml.contains("<key>a&lt;b</key>"));
    assert!(xml.contains("<string>x &amp; y</string>"));
    assert!(xml.contains("<integer>3</integer>"));
    assert!(xml.contains("<true/>"));
    assert!(xml.contains("<real>1.5</real>"));
}
