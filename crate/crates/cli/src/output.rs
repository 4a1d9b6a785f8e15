//! File outputs, grid hashing and the result cache.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use spacelike_core::{Grid, GridField};

use crate::Failure;

/// Files written by `solve`, in write order.
pub const SOLVE_FILES: [&str; 4] = [
    "solution.csv",
    "subsolution.csv",
    "supersolution.csv",
    "report.json",
];

/// SHA-256 over the header, coordinate and mask columns of a field CSV.
/// Two fields hash equal exactly when they live on the same grid.
pub fn csv_grid_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if let Some(header) = lines.next() {
        hasher.update(header.trim().as_bytes());
        hasher.update(b"\n");
    }
    for line in lines {
        let mut cols: Vec<&str> = line.split(',').collect();
        if cols.len() >= 2 {
            cols.remove(cols.len() - 2);
        }
        hasher.update(cols.join(",").as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

pub fn grid_hash(grid: &std::sync::Arc<Grid>) -> String {
    csv_grid_hash(&GridField::from_fn(grid, |_| 0.0).to_csv())
}

pub fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

pub fn cache_dir(out: &Path, key: &str) -> PathBuf {
    out.join(".cache").join(key)
}

/// Contents of a complete cache entry, or `None`.
pub fn cache_lookup(dir: &Path) -> Option<Vec<(String, String)>> {
    let manifest = fs::read_to_string(dir.join("manifest")).ok()?;
    manifest
        .lines()
        .filter(|l| !l.is_empty())
        .map(|name| {
            fs::read_to_string(dir.join(name))
                .ok()
                .map(|c| (name.to_string(), c))
        })
        .collect()
}

pub fn cache_store(dir: &Path, files: &[(String, String)]) -> Result<(), Failure> {
    for (name, contents) in files {
        write(&dir.join(name), contents)?;
    }
    // the manifest goes last so a partial entry is never read back
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    write(&dir.join("manifest"), &(names.join("\n") + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use spacelike_core::DomainSpec;

    #[test]
    fn hash_ignores_values_only() {
        let g = Grid::build(&DomainSpec::disk(vec![0.0, 0.0], 0.5), 0.1).unwrap();
        let a = GridField::from_fn(&g, |x| x[0]).to_csv();
        assert_eq!(csv_grid_hash(&a), grid_hash(&g));
        let g2 = Grid::build(&DomainSpec::disk(vec![0.0, 0.0], 0.5), 0.09).unwrap();
        assert_ne!(grid_hash(&g2), grid_hash(&g));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let files = vec![
            ("a.csv".to_string(), "x\n1\n".to_string()),
            ("b.json".to_string(), "{}".to_string()),
        ];
        assert!(cache_lookup(dir.path()).is_none());
        cache_store(dir.path(), &files).unwrap();
        assert_eq!(cache_lookup(dir.path()).unwrap(), files);
        fs::remove_file(dir.path().join("b.json")).unwrap();
        assert!(cache_lookup(dir.path()).is_none());
    }
}
