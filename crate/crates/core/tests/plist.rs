use std::collections::BTreeMap;
use std::time::{Duration, SystemTime};

use lios_core::plist::{parse_plist, MalformedPlist, PlistValue};
use proptest::prelude::*;

const PLIST_EPOCH: u64 = 978_307_200;

fn xml_of(v: &plist::Value) -> Vec<u8> {
    let mut out = Vec::new();
    v.to_writer_xml(&mut out).unwrap();
    out
}

fn binary_of(v: &plist::Value) -> Vec<u8> {
    let mut out = Vec::new();
    v.to_writer_binary(&mut out).unwrap();
    out
}

/// The tree a correct parser must produce for a value written by the reference writer.
fn expected(v: &plist::Value) -> PlistValue {
    match v {
        plist::Value::Dictionary(d) => PlistValue::Dictionary(d.iter().map(|(k, v)| (k.clone(), expected(v))).collect()),
        plist::Value::Array(a) => PlistValue::Array(a.iter().map(expected).collect()),
        plist::Value::String(s) => PlistValue::String(s.clone()),
        plist::Value::Integer(i) => PlistValue::Integer(i.as_signed().map(i128::from).unwrap_or_else(|| i.as_unsigned().unwrap().into())),
        plist::Value::Real(r) => PlistValue::Real(*r),
        plist::Value::Boolean(b) => PlistValue::Boolean(*b),
        plist::Value::Date(d) => {
            let t: SystemTime = (*d).into();
            PlistValue::Date(t.duration_since(SystemTime::UNIX_EPOCH).unwrap().as_secs_f64() - PLIST_EPOCH as f64)
        }
        plist::Value::Data(b) => PlistValue::Data(b.clone()),
        other => panic!("not generated: {other:?}"),
    }
}

#[test]
fn xml_dictionary() {
    let text = r#"<?xml version="1.0" encoding="UTF-8"?>
<!DOCTYPE plist PUBLIC "-//Apple//DTD PLIST 1.0//EN" "http://www.apple.com/DTDs/PropertyList-1.0.dtd">
<plist version="1.0">
<dict>
	<key>CFBundleExecutable</key>
	<string>demo</string>
</dict>
</plist>
"#;
    let v = parse_plist(text.as_bytes()).unwrap();
    assert_eq!(v, PlistValue::Dictionary(BTreeMap::from([("CFBundleExecutable".into(), PlistValue::String("demo".into()))])));
    assert_eq!(v.canonical_json(), r#"{"CFBundleExecutable":"demo"}"#);

    let mut d = plist::Dictionary::new();
    d.insert("CFBundleExecutable".into(), plist::Value::String("demo".into()));
    assert_eq!(parse_plist(&binary_of(&plist::Value::Dictionary(d))).unwrap(), v);
}

#[test]
fn xml_scalars_and_escapes() {
    let text = r#"<plist version="1.0"><array>
        <string>a &amp; b &lt;c&gt; &#x41;&#66;</string>
        <string><![CDATA[raw <x>]]></string>
        <string/>
        <integer>-42</integer>
        <integer>0x10</integer>
        <real>2.5</real>
        <true/><false/>
        <date>2001-01-01T00:01:00Z</date>
        <data>
            AAEC
            Aw==
        </data>
        <dict/>
        <array/>
    </array></plist>"#;
    let v = parse_plist(text.as_bytes()).unwrap();
    let PlistValue::Array(items) = &v else { panic!() };
    assert_eq!(
        items,
        &vec![
            PlistValue::String("a & b <c> AB".into()),
            PlistValue::String("raw <x>".into()),
            PlistValue::String(String::new()),
            PlistValue::Integer(-42),
            PlistValue::Integer(16),
            PlistValue::Real(2.5),
            PlistValue::Boolean(true),
            PlistValue::Boolean(false),
            PlistValue::Date(60.0),
            PlistValue::Data(vec![0, 1, 2, 3]),
            PlistValue::Dictionary(BTreeMap::new()),
            PlistValue::Array(Vec::new()),
        ]
    );
    assert_eq!(
        v.canonical_json(),
        r#"["a & b <c> AB","raw <x>","",-42,16,2.5,true,false,"2001-01-01T00:01:00Z","AAECAw==",{},[]]"#
    );
}

#[test]
fn malformed_xml() {
    for text in [
        "",
        "<plist>",
        "<plist><dict><key>a</key></dict></plist>",
        "<plist><dict><key>a</key><true/><key>a</key><false/></dict></plist>",
        "<plist><dict><string>v</string></dict></plist>",
        "<plist><banana/></plist>",
        "<plist><integer>12x</integer></plist>",
        "<plist><true>yes</true></plist>",
        "<plist><string>x</string><string>y</string></plist>",
        "<plist><string>&bogus;</string></plist>",
        "<plist><date>yesterday</date></plist>",
        "<plist><data>!!!</data></plist>",
        "<plist><string>x</string></plist><more/>",
    ] {
        assert!(parse_plist(text.as_bytes()).is_err(), "{text:?}");
    }
}

#[test]
fn malformed_binary() {
    let mut d = plist::Dictionary::new();
    d.insert("k".into(), plist::Value::Array(vec![plist::Value::Integer(7.into())]));
    let good = binary_of(&plist::Value::Dictionary(d));
    assert!(parse_plist(&good).is_ok());

    // Truncated trailer.
    let cut = &good[..good.len() - 5];
    assert!(matches!(parse_plist(cut), Err(MalformedPlist(_))));
    assert!(parse_plist(b"bplist00").is_err());

    // Offset table pointing past the objects.
    let mut bad = good.clone();
    let n = bad.len();
    bad[n - 8..].copy_from_slice(&(n as u64).to_be_bytes());
    assert!(parse_plist(&bad).is_err());

    // An array holding itself: header, one object, offset table, trailer.
    let mut cyc = b"bplist00".to_vec();
    cyc.extend([0xA1, 0x00]);
    let table = cyc.len() as u64;
    cyc.push(8);
    let mut trailer = vec![0u8; 6];
    trailer.extend([1, 1]);
    trailer.extend(1u64.to_be_bytes());
    trailer.extend(0u64.to_be_bytes());
    trailer.extend(table.to_be_bytes());
    cyc.extend(trailer);
    assert!(parse_plist(&cyc).unwrap_err().0.contains("itself"));
}

#[test]
fn fixture_info_plists_parse() {
    for name in lios_fixturegen::builtin_names() {
        let m = lios_fixturegen::builtin(name).unwrap();
        let Some(info) = &m.info_plist else { continue };
        let xml = lios_fixturegen::container::plist_xml(info);
        let v = parse_plist(xml.as_bytes()).unwrap();
        assert_eq!(v.to_json(), *info, "{name}");
    }
}

fn arb_value() -> impl Strategy<Value = plist::Value> {
    let leaf = prop_oneof![
        "\\PC{0,12}".prop_map(plist::Value::String),
        any::<i64>().prop_map(|i| plist::Value::Integer(i.into())),
        (u64::MAX / 2..u64::MAX).prop_map(|i| plist::Value::Integer(i.into())),
        (-1e12f64..1e12).prop_map(plist::Value::Real),
        any::<bool>().prop_map(plist::Value::Boolean),
        (0u64..2_000_000_000).prop_map(|s| {
            plist::Value::Date((SystemTime::UNIX_EPOCH + Duration::from_secs(PLIST_EPOCH + s)).into())
        }),
        prop::collection::vec(any::<u8>(), 0..40).prop_map(plist::Value::Data),
    ];
    leaf.prop_recursive(4, 48, 8, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..8).prop_map(plist::Value::Array),
            prop::collection::btree_map("\\PC{0,8}", inner, 0..8)
                .prop_map(|m| plist::Value::Dictionary(m.into_iter().collect())),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn xml_and_binary_encodings_give_the_same_tree(v in arb_value()) {
        let want = expected(&v);
        let from_xml = parse_plist(&xml_of(&v)).unwrap();
        let from_bin = parse_plist(&binary_of(&v)).unwrap();
        prop_assert_eq!(&from_xml, &want);
        prop_assert_eq!(&from_bin, &want);
        prop_assert_eq!(from_xml.canonical_json(), from_bin.canonical_json());
    }

    #[test]
    fn mutated_binary_never_panics(v in arb_value(), flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6)) {
        let mut bytes = binary_of(&v);
        for (i, b) in flips {
            let at = i.index(bytes.len());
            bytes[at] = b;
        }
        let _ = parse_plist(&bytes);
    }
}
