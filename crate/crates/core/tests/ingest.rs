use std::io::{Cursor, Write};

use lios_core::ingest::{ingest, ingest_bytes, IngestError};
use lios_core::plist::PlistValue;
use lios_fixturegen::{builtin, container, generate, package_ipa};
use zip::write::SimpleFileOptions;

fn zip_of(files: &[(&str, &[u8])]) -> Vec<u8> {
    let mut z = zip::ZipWriter::new(Cursor::new(Vec::new()));
    for (name, data) in files {
        z.start_file(*name, SimpleFileOptions::default()).unwrap();
        z.write_all(data).unwrap();
    }
    z.finish().unwrap().into_inner()
}

#[test]
fn ipa_yields_image_and_info() {
    let m = builtin("webview_vuln").unwrap();
    let fx = generate(&m).unwrap();
    let ipa = package_ipa(&m, &fx.binary).unwrap();
    let got = ingest_bytes(&ipa, "ignored").unwrap();
    assert_eq!(got.name, "webview_vuln");
    assert_eq!(got.image.function_starts, fx.expected.function_starts);
    let info = got.info.unwrap();
    assert_eq!(info.get("CFBundleExecutable"), Some(&PlistValue::String("Bridge".into())));
    assert_eq!(info.to_json(), m.info_plist.unwrap());
}

#[test]
fn bare_macho_has_no_plist() {
    let fx = generate(&builtin("plain").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plain.bin");
    std::fs::write(&path, &fx.binary).unwrap();
    let got = ingest(&path).unwrap();
    assert_eq!(got.name, "plain");
    assert!(got.info.is_none());
}

#[test]
fn archive_errors() {
    let no_payload = zip_of(&[("readme.txt", b"hi")]);
    assert!(matches!(ingest_bytes(&no_payload, "x"), Err(IngestError::NotAnIpa(_))));

    let info = container::plist_xml(&serde_json::json!({ "CFBundleExecutable": "Gone" }));
    let missing = zip_of(&[("Payload/A.app/Info.plist", info.as_bytes())]);
    assert!(matches!(ingest_bytes(&missing, "x"), Err(IngestError::MissingExecutable(_))));

    let no_key = container::plist_xml(&serde_json::json!({ "CFBundleName": "A" }));
    let nameless = zip_of(&[("Payload/A.app/Info.plist", no_key.as_bytes())]);
    assert!(matches!(ingest_bytes(&nameless, "x"), Err(IngestError::MissingExecutable(_))));

    let bad_plist = zip_of(&[("Payload/A.app/Info.plist", b"<plist><dict>")]);
    assert!(matches!(ingest_bytes(&bad_plist, "x"), Err(IngestError::InfoPlist(_))));

    assert!(matches!(ingest_bytes(b"PK\x03\x04garbage", "x"), Err(IngestError::NotAnIpa(_))));
    assert!(matches!(ingest_bytes(b"\x7fELF", "x"), Err(IngestError::Macho(_))));
    assert!(matches!(ingest(std::path::Path::new("/nonexistent/app.ipa")), Err(IngestError::Io(_))));
}

#[test]
fn encrypted_images_are_rejected() {
    let fx = generate(&builtin("encrypted").unwrap()).unwrap();
    let err = ingest_bytes(&fx.binary, "enc").unwrap_err();
    assert!(matches!(err, IngestError::Encrypted(c) if c != 0));
    assert!(err.to_string().contains("decrypt"));
}
