//! MNIST download with checksum verification, or a synthetic stand-in.

use std::io::Read;
use std::path::{Path, PathBuf};

use compseg_core::mnist::{self, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use md5::{Digest, Md5};
use serde::Serialize;

use crate::CliError;

pub const MIRROR: &str = "https://ossci-datasets.s3.amazonaws.com/mnist/";

/// File stem and md5 of the gzipped original.
pub const FILES: [(&str, &str); 4] = [
    (TRAIN_IMAGES, "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
    (TRAIN_LABELS, "d53e105ee54ea40749a09fcbcd1e9432"),
    (TEST_IMAGES, "9fb629c4189551a2d022fa330f9573f3"),
    (TEST_LABELS, "ec29112dd5afa0611ce80d1b7f02629c"),
];

/// Sizes of the synthetic stand-in.
pub const SYNTHETIC_TRAIN: usize = 6000;
pub const SYNTHETIC_TEST: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FetchedFile {
    pub path: PathBuf,
    pub md5: String,
    /// "downloaded", "cached" or "synthetic".
    pub status: String,
}

pub fn md5_hex(bytes: &[u8]) -> String {
    Md5::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Downloads any missing file and verifies every file against its known
/// digest. A file already on disk with the wrong digest is an error, not
/// silently replaced.
pub fn fetch_mnist(dir: &Path, base_url: &str) -> Result<Vec<FetchedFile>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for (stem, expected) in FILES {
        let path = dir.join(format!("{stem}.gz"));
        let status = if path.is_file() {
            "cached"
        } else {
            let url = format!("{base_url}{stem}.gz");
            let bytes = download(&url)?;
            let actual = md5_hex(&bytes);
            if actual != expected {
                return Err(CliError::ChecksumMismatch { path: url.into(), expected: expected.into(), actual });
            }
            let tmp = dir.join(format!("{stem}.gz.part"));
            std::fs::write(&tmp, &bytes).map_err(|e| CliError::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
            "downloaded"
        };
        let actual = md5_hex(&read(&path)?);
        if actual != expected {
            return Err(CliError::ChecksumMismatch { path, expected: expected.into(), actual });
        }
        out.push(FetchedFile { path, md5: actual, status: status.into() });
    }
    Ok(out)
}

fn download(url: &str) -> Result<Vec<u8>, CliError> {
    let response = ureq::get(url).call().map_err(|e| match e {
        ureq::Error::Status(code, _) => CliError::Io(format!("{url}: HTTP {code}")),
        ureq::Error::Transport(t) => CliError::NetworkUnavailable { url: url.into(), reason: t.to_string() },
    })?;
    let mut bytes = Vec::new();
    response
        .into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::NetworkUnavailable { url: url.into(), reason: e.to_string() })?;
    Ok(bytes)
}

/// Writes the synthetic digit corpus. Deterministic in `seed`, so repeated
/// calls leave identical files.
pub fn write_offline(dir: &Path, seed: u64) -> Result<Vec<FetchedFile>, CliError> {
    let paths = mnist::write_synthetic_corpus(dir, SYNTHETIC_TRAIN, SYNTHETIC_TEST, seed)
        .map_err(|e| CliError::Data(e.to_string()))?;
    paths
        .into_iter()
        .map(|path| Ok(FetchedFile { md5: md5_hex(&read(&path)?), path, status: "synthetic".into() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn md5_known_vector() {
        assert_eq!(md5_hex(b""), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(md5_hex(b"abc"), "900150983cd24fb0d6963f7d28e17f72");
    }

    #[test]
    fn corrupted_file_reports_both_digests() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(format!("{TRAIN_IMAGES}.gz")), b"garbage").unwrap();
        match fetch_mnist(dir.path(), "http://127.0.0.1:9/") {
            Err(CliError::ChecksumMismatch { expected, actual, .. }) => {
                assert_eq!(expected, FILES[0].1);
                assert_eq!(actual, md5_hex(b"garbage"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_host_suggests_offline() {
        let dir = tempfile::tempdir().unwrap();
        let err = fetch_mnist(dir.path(), "http://127.0.0.1:9/").unwrap_err();
        assert!(matches!(err, CliError::NetworkUnavailable { .. }), "{err:?}");
        assert!(err.to_string().contains("--offline"));
    }

    #[test]
    fn offline_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_offline(dir.path(), 3).unwrap();
        let b = write_offline(dir.path(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }
}
