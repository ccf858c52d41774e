//! Content-addressed artifact cache under `<workspace>/cache`.

use std::cell::Cell;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Incremental builder for cache keys. Every part is length-prefixed so that
/// distinct part sequences never collide.
#[derive(Clone)]
pub struct KeyBuilder(Sha256);

impl KeyBuilder {
    pub fn new(kind: &str) -> Self {
        let mut k = KeyBuilder(Sha256::new());
        k.part(env!("CARGO_PKG_VERSION").as_bytes()).part(kind.as_bytes());
        k
    }

    pub fn part(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.part(s.as_bytes())
    }

    pub fn finish(&self) -> String {
        hex::encode(self.0.clone().finalize())
    }
}

pub struct Cache {
    root: PathBuf,
    hits: Cell<usize>,
    misses: Cell<usize>,
}

impl Cache {
    pub fn new(workspace: &Path) -> Self {
        Cache {
            root: workspace.join("cache"),
            hits: Cell::new(0),
            misses: Cell::new(0),
        }
    }

    pub fn path_for(&self, kind: &str, key: &str) -> PathBuf {
        self.root.join(kind).join(key)
    }

    pub fn hits(&self) -> usize {
        self.hits.get()
    }

    pub fn misses(&self) -> usize {
        self.misses.get()
    }

    /// Returns the cached bytes, or computes, stores and returns them.
    /// Entries that `validate` rejects are recomputed.
    pub fn get_or_compute<E>(
        &self,
        kind: &str,
        key: &str,
        validate: impl Fn(&[u8]) -> bool,
        compute: impl FnOnce() -> Result<Vec<u8>, E>,
    ) -> Result<Vec<u8>, E>
    where
        E: From<std::io::Error>,
    {
        let path = self.path_for(kind, key);
        if let Ok(bytes) = fs::read(&path) {
            if validate(&bytes) {
                self.hits.set(self.hits.get() + 1);
                return Ok(bytes);
            }
        }
        self.misses.set(self.misses.get() + 1);
        let bytes = compute()?;
        write_atomic(&path, &bytes)?;
        Ok(bytes)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_prefix_free() {
        let a = KeyBuilder::new("k").text("ab").text("c").finish();
        let b = KeyBuilder::new("k").text("a").text("bc").finish();
        assert_ne!(a, b);
        assert_eq!(a, KeyBuilder::new("k").text("ab").text("c").finish());
    }

    #[test]
    fn second_lookup_hits() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let get = || {
            cache.get_or_compute::<std::io::Error>("x", "abc", |_| true, || Ok(vec![1, 2, 3]))
        };
        assert_eq!(get().unwrap(), vec![1, 2, 3]);
        assert_eq!(get().unwrap(), vec![1, 2, 3]);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
    }
}
