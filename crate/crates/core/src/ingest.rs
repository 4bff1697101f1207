//! Reading an app: an .ipa archive or a bare Mach-O file.

use std::io::{Cursor, Read};
use std::path::Path;

use crate::macho::{parse_macho, MachoError, MachoImage};
use crate::plist::{parse_plist, MalformedPlist, PlistValue};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("not an .ipa: {0}")]
    NotAnIpa(String),
    #[error("missing executable: {0}")]
    MissingExecutable(String),
    #[error("Info.plist: {0}")]
    InfoPlist(#[from] MalformedPlist),
    #[error(transparent)]
    Macho(#[from] MachoError),
    #[error("the executable is encrypted (cryptid {0}); decrypt it first, this tool does not")]
    Encrypted(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct Ingested {
    /// App bundle name for archives, file stem for bare binaries.
    pub name: String,
    pub image: MachoImage,
    pub info: Option<PlistValue>,
}

const ZIP_MAGIC: &[u8] = b"PK\x03\x04";

pub fn ingest(path: &Path) -> Result<Ingested, IngestError> {
    let bytes = std::fs::read(path)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ingest_bytes(&bytes, &stem)
}

/// Like [`ingest`], for bytes already in memory. `name` is used for bare binaries.
pub fn ingest_bytes(bytes: &[u8], name: &str) -> Result<Ingested, IngestError> {
    let (name, binary, info) = if bytes.starts_with(ZIP_MAGIC) {
        let (app, binary, info) = unpack_ipa(bytes)?;
        (app, binary, Some(info))
    } else {
        (name.to_string(), bytes.to_vec(), None)
    };
    let image = parse_macho(&binary)?;
    if let Some(c) = image.cryptid.filter(|c| *c != 0) {
        return Err(IngestError::Encrypted(c));
    }
    Ok(Ingested { name, image, info })
}

fn read_entry(zip: &mut zip::ZipArchive<Cursor<&[u8]>>, name: &str) -> Result<Option<Vec<u8>>, IngestError> {
    let mut f = match zip.by_name(name) {
        Ok(f) => f,
        Err(zip::result::ZipError::FileNotFound) => return Ok(None),
        Err(e) => return Err(IngestError::NotAnIpa(e.to_string())),
    };
    let mut out = Vec::new();
    f.read_to_end(&mut out)?;
    Ok(Some(out))
}

/// Finds `Payload/<App>.app/`, its Info.plist and the executable it names.
fn unpack_ipa(bytes: &[u8]) -> Result<(String, Vec<u8>, PlistValue), IngestError> {
    let mut zip = zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| IngestError::NotAnIpa(e.to_string()))?;
    let mut apps: Vec<String> = zip
        .file_names()
        .filter_map(|n| {
            let n = n.ok()?;
            let rest = n.strip_prefix("Payload/")?;
            let (dir, _) = rest.split_once('/')?;
            dir.strip_suffix(".app").filter(|a| !a.is_empty()).map(|_| dir.to_string())
        })
        .collect();
    apps.sort();
    apps.dedup();
    let app = match apps.as_slice() {
        [] => return Err(IngestError::NotAnIpa("no Payload/<name>.app directory".into())),
        [one] => one.clone(),
        many => return Err(IngestError::NotAnIpa(format!("several app bundles: {}", many.join(", ")))),
    };
    let info_bytes = read_entry(&mut zip, &format!("Payload/{app}/Info.plist"))?
        .ok_or_else(|| IngestError::MissingExecutable(format!("{app} has no Info.plist")))?;
    let info = parse_plist(&info_bytes)?;
    let exe = info
        .get("CFBundleExecutable")
        .and_then(PlistValue::as_str)
        .ok_or_else(|| IngestError::MissingExecutable(format!("{app}/Info.plist has no CFBundleExecutable")))?
        .to_string();
    if exe.contains('/') {
        return Err(IngestError::MissingExecutable(format!("CFBundleExecutable {exe:?} is not a file name")));
    }
    let binary = read_entry(&mut zip, &format!("Payload/{app}/{exe}"))?
        .ok_or_else(|| IngestError::MissingExecutable(format!("{app}/{exe} is not in the archive")))?;
    let name = app.trim_end_matches(".app").to_string();
    Ok((name, binary, info))
}
