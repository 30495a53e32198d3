//! Two-file containers (`manifest.json` plus one binary payload) stored either
//! as a directory or as a zip archive.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::error::{Error, Result};

const ZIP_MAGIC: &[u8; 4] = b"PK\x03\x04";

/// Reads the named entries from a directory or a zip file at `path`.
pub(crate) fn read_entries(path: &Path, names: &[&str]) -> Result<Vec<Vec<u8>>> {
    if path.is_dir() {
        return names
            .iter()
            .map(|name| {
                let p = path.join(name);
                std::fs::read(&p).map_err(|e| Error::io(p, e))
            })
            .collect();
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_zip_entries(&bytes, names)
}

pub(crate) fn read_zip_entries(bytes: &[u8], names: &[&str]) -> Result<Vec<Vec<u8>>> {
    if !bytes.starts_with(ZIP_MAGIC) {
        return Err(Error::Manifest(
            "container is neither a directory nor a zip archive".into(),
        ));
    }
    let mut archive = ZipArchive::new(Cursor::new(bytes))?;
    names
        .iter()
        .map(|name| {
            let mut file = archive.by_name(name)?;
            let mut buf = Vec::with_capacity(file.size() as usize);
            file.read_to_end(&mut buf).map_err(|e| Error::io(*name, e))?;
            Ok(buf)
        })
        .collect()
}

/// Stored (uncompressed) zip with fixed timestamps, so identical entries
/// always give identical bytes.
pub(crate) fn zip_bytes(entries: &[(&str, &[u8])]) -> Result<Vec<u8>> {
    let mut writer = ZipWriter::new(Cursor::new(Vec::new()));
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    for (name, data) in entries {
        writer.start_file(*name, options)?;
        writer.write_all(data).map_err(|e| Error::io(*name, e))?;
    }
    Ok(writer.finish()?.into_inner())
}

/// Writes entries as a zip when `path` ends in `.zip`, else as a directory.
pub(crate) fn write_entries(path: &Path, entries: &[(&str, &[u8])]) -> Result<()> {
    let is_zip = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("zip"));
    if is_zip {
        let bytes = zip_bytes(entries)?;
        return std::fs::write(path, bytes).map_err(|e| Error::io(path, e));
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    for (name, data) in entries {
        let p = path.join(name);
        std::fs::write(&p, data).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}
