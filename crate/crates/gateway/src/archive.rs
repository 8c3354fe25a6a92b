use std::path::{Component, Path};

/// Default ceiling on the total unpacked size of one task archive (2 GiB).
pub const DEFAULT_MAX_UNPACKED_BYTES: u64 = 2 << 30;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive unpacks to more than {limit} bytes")]
    TooLarge { limit: u64 },
    #[error("unsafe path in archive: {0}")]
    UnsafePath(String),
    #[error("corrupt archive: {0}")]
    Corrupt(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractSummary {
    pub files: usize,
    pub bytes: u64,
    /// Links and special files are not extracted.
    pub skipped: usize,
}

/// Unpacks a gzip-compressed tar into `dest`. Only regular files and
/// directories are written; absolute paths and `..` components abort the
/// whole extraction. The size check uses header sizes before any byte of
/// an entry is written.
pub fn extract_tar_gz(data: &[u8], dest: &Path, max_unpacked: u64) -> Result<ExtractSummary, ArchiveError> {
    std::fs::create_dir_all(dest)?;
    let mut archive = tar::Archive::new(flate2::read::GzDecoder::new(data));
    let mut summary = ExtractSummary::default();
    for entry in archive.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.into_owned();
        if path.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
            return Err(ArchiveError::UnsafePath(path.display().to_string()));
        }
        let kind = entry.header().entry_type();
        if !(kind.is_file() || kind.is_dir()) {
            summary.skipped += 1;
            continue;
        }
        let size = entry.header().size()?;
        summary.bytes = summary.bytes.saturating_add(size);
        if summary.bytes > max_unpacked {
            return Err(ArchiveError::TooLarge { limit: max_unpacked });
        }
        entry.unpack_in(dest)?;
        if kind.is_file() {
            summary.files += 1;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(entries: &[(&str, &[u8], tar::EntryType)]) -> Vec<u8> {
        let enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        let mut b = tar::Builder::new(enc);
        for (name, body, kind) in entries {
            let mut h = tar::Header::new_gnu();
            h.set_entry_type(*kind);
            h.set_size(body.len() as u64);
            h.set_mode(0o644);
            // bypass the builder's own path checks to produce hostile names
            let raw = &mut h.as_old_mut().name;
            raw[..name.len()].copy_from_slice(name.as_bytes());
            if *kind == tar::EntryType::Symlink {
                h.set_link_name("/etc/passwd").unwrap();
            }
            h.set_cksum();
            b.append(&h, *body).unwrap();
        }
        b.into_inner().unwrap().finish().unwrap()
    }

    #[test]
    fn extracts_regular_files_and_skips_links() {
        let dir = tempfile::tempdir().unwrap();
        let data = build(&[
            ("comp/train.csv", b"id,y\n1,0\n", tar::EntryType::Regular),
            ("comp/link", b"", tar::EntryType::Symlink),
        ]);
        let s = extract_tar_gz(&data, dir.path(), 1024).unwrap();
        assert_eq!((s.files, s.skipped, s.bytes), (1, 1, 9));
        assert_eq!(std::fs::read_to_string(dir.path().join("comp/train.csv")).unwrap(), "id,y\n1,0\n");
        assert!(!dir.path().join("comp/link").exists());
    }

    #[test]
    fn rejects_traversal_and_oversize() {
        let dir = tempfile::tempdir().unwrap();
        let evil = build(&[("../escape.txt", b"x", tar::EntryType::Regular)]);
        assert!(matches!(extract_tar_gz(&evil, &dir.path().join("a"), 1024), Err(ArchiveError::UnsafePath(_))));
        assert!(!dir.path().join("escape.txt").exists());

        let abs = build(&[("/tmp/abs.txt", b"x", tar::EntryType::Regular)]);
        assert!(matches!(extract_tar_gz(&abs, &dir.path().join("b"), 1024), Err(ArchiveError::UnsafePath(_))));

        let big = build(&[("a", &[0u8; 600], tar::EntryType::Regular), ("b", &[0u8; 600], tar::EntryType::Regular)]);
        assert!(matches!(extract_tar_gz(&big, &dir.path().join("c"), 1000), Err(ArchiveError::TooLarge { limit: 1000 })));
        assert!(matches!(extract_tar_gz(b"garbage", &dir.path().join("d"), 1000), Err(ArchiveError::Corrupt(_))));
    }
}
