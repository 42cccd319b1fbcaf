//! Append-only run directories and their output checksums.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const OUTPUTS_FILE: &str = "outputs.sha256";
pub const CONFIG_FILE: &str = "config.toml";

/// Creates `<root>/<command>-<hash12>-s<seed>`, adding `-2`, `-3`, … when a
/// directory of that name already exists.
pub fn create(root: &Path, command: &str, hash: &str, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let base = format!("{command}-{}-s{seed}", &hash[..12]);
    for n in 1.. {
        let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn collect(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut items: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    items.sort();
    for p in items {
        if p.is_dir() {
            collect(&p, root, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("inside root").to_path_buf());
        }
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `outputs.sha256`: one `<hex>  <relative path>` line per file,
/// sorted by path. The config copy and the checksum file itself are inputs
/// and bookkeeping, not outputs, and are left out.
pub fn write_checksums(dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    let mut text = String::new();
    for rel in files {
        if rel == Path::new(OUTPUTS_FILE) || rel == Path::new(CONFIG_FILE) {
            continue;
        }
        let bytes = fs::read(dir.join(&rel))?;
        let name = rel.to_string_lossy().replace('\\', "/");
        text.push_str(&format!("{}  {name}\n", sha256_hex(&bytes)));
    }
    fs::write(dir.join(OUTPUTS_FILE), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_reuses_a_directory() {
        let root = tempfile::tempdir().unwrap();
        let h = "0123456789abcdef";
        let a = create(root.path(), "eval", h, 1).unwrap();
        let b = create(root.path(), "eval", h, 1).unwrap();
        assert_ne!(a, b);
        assert!(b.ends_with("eval-0123456789ab-s1-2"));
    }

    #[test]
    fn checksums_skip_bookkeeping_files() {
        let root = tempfile::tempdir().unwrap();
        fs::write(root.path().join(CONFIG_FILE), "x").unwrap();
        fs::create_dir(root.path().join("sub")).unwrap();
        fs::write(root.path().join("sub/a.txt"), "abc").unwrap();
        write_checksums(root.path()).unwrap();
        let text = fs::read_to_string(root.path().join(OUTPUTS_FILE)).unwrap();
        assert_eq!(
            text,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad  sub/a.txt\n"
        );
    }
}
