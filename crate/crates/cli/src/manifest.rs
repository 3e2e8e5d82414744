//! Output bundles: in-memory files plus a manifest of hashes, seeds and status,
//! written to disk by a single writer and checked by `verify`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";
const HEADER: &str = "# run-manifest v1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some realizations or sweep points failed; the rest were written.
    Partial,
    Failed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Partial => "partial",
            Status::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(Status::Ok),
            "partial" => Some(Status::Partial),
            "failed" => Some(Status::Failed),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// `run`, `sweep` or `spectrum-scan`.
    pub kind: String,
    pub code_version: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub status: Status,
    /// Named seeds actually used, e.g. one per realization.
    pub seeds: Vec<(String, u64)>,
    pub failures: Vec<String>,
    /// Non-fatal analysis problems.
    pub notes: Vec<String>,
    /// `(relative path, sha256)`, sorted by path.
    pub files: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(kind: &str, config_text: &str, master_seed: u64) -> Self {
        Self {
            kind: kind.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            master_seed,
            status: Status::Ok,
            seeds: Vec::new(),
            failures: Vec::new(),
            notes: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "kind = {}", self.kind);
        let _ = writeln!(out, "code_version = {}", self.code_version);
        let _ = writeln!(out, "config_sha256 = {}", self.config_sha256);
        let _ = writeln!(out, "master_seed = {}", self.master_seed);
        let _ = writeln!(out, "status = {}", self.status.as_str());
        for (name, seed) in &self.seeds {
            let _ = writeln!(out, "seed {name} = {seed}");
        }
        for f in &self.failures {
            let _ = writeln!(out, "failure = {}", one_line(f));
        }
        for n in &self.notes {
            let _ = writeln!(out, "note = {}", one_line(n));
        }
        for (path, hash) in &self.files {
            let _ = writeln!(out, "file {hash} {path}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err("not a run manifest".into());
        }
        let mut m = Manifest::new("", "", 0);
        m.code_version.clear();
        m.config_sha256.clear();
        for line in lines {
            if let Some(rest) = line.strip_prefix("file ") {
                let (hash, path) = rest.split_once(' ').ok_or_else(|| format!("bad file line: {line}"))?;
                m.files.push((path.to_string(), hash.to_string()));
            } else if let Some(rest) = line.strip_prefix("seed ") {
                let (name, seed) = rest.split_once(" = ").ok_or_else(|| format!("bad seed line: {line}"))?;
                let seed = seed.parse().map_err(|_| format!("bad seed line: {line}"))?;
                m.seeds.push((name.to_string(), seed));
            } else if let Some((key, value)) = line.split_once(" = ") {
                match key {
                    "kind" => m.kind = value.to_string(),
                    "code_version" => m.code_version = value.to_string(),
                    "config_sha256" => m.config_sha256 = value.to_string(),
                    "master_seed" => m.master_seed = value.parse().map_err(|_| format!("bad seed: {value}"))?,
                    "status" => m.status = Status::parse(value).ok_or_else(|| format!("bad status: {value}"))?,
                    "failure" => m.failures.push(value.to_string()),
                    "note" => m.notes.push(value.to_string()),
                    _ => return Err(format!("unknown manifest key {key}")),
                }
            } else if !line.trim().is_empty() {
                return Err(format!("unparsable manifest line: {line}"));
            }
        }
        Ok(m)
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// Files of one invocation, keyed by path relative to the output directory.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub files: BTreeMap<String, String>,
    pub manifest: Manifest,
}

impl Bundle {
    pub fn new(manifest: Manifest) -> Self {
        Self {
            files: BTreeMap::new(),
            manifest,
        }
    }

    pub fn add(&mut self, path: impl Into<String>, contents: impl Into<String>) {
        self.files.insert(path.into(), contents.into());
    }

    /// Moves another bundle's files under `prefix/`.
    pub fn nest(&mut self, prefix: &str, other: &Bundle) {
        for (p, c) in &other.files {
            self.files.insert(format!("{prefix}/{p}"), c.clone());
        }
        self.files
            .insert(format!("{prefix}/{MANIFEST_FILE}"), other.finalized_manifest().render());
    }

    /// The manifest with the hashes of the current files filled in.
    pub fn finalized_manifest(&self) -> Manifest {
        let mut m = self.manifest.clone();
        m.files = self
            .files
            .iter()
            .map(|(p, c)| (p.clone(), sha256_hex(c.as_bytes())))
            .collect();
        m
    }

    /// Writes every file and then the manifest. Files listed by a manifest
    /// already present in `dir` are removed first, so reruns leave no stale output.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let old = dir.join(MANIFEST_FILE);
        if old.exists() {
            if let Ok(m) = Manifest::parse(&fs::read_to_string(&old)?) {
                for (p, _) in m.files {
                    let path = dir.join(&p);
                    if path.starts_with(dir) && path.is_file() {
                        fs::remove_file(path)?;
                    }
                }
            }
        }
        for (p, c) in &self.files {
            let path = dir.join(p);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, c)?;
        }
        fs::write(old, self.finalized_manifest().render())
    }
}

/// Result of checking a directory against its manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Verification {
    pub checked: usize,
    pub modified: Vec<String>,
    pub missing: Vec<String>,
    pub unlisted: Vec<String>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.modified.is_empty() && self.missing.is_empty() && self.unlisted.is_empty()
    }

    pub fn report(&self) -> String {
        let mut out = format!("checked {} files\n", self.checked);
        for (label, list) in [("modified", &self.modified), ("missing", &self.missing), ("unlisted", &self.unlisted)] {
            for p in list {
                let _ = writeln!(out, "{label}: {p}");
            }
        }
        out
    }
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else {
            let rel: PathBuf = path.strip_prefix(root).expect("inside root").to_path_buf();
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Rehashes every file listed in `dir/manifest.txt` and looks for files the
/// manifest does not know about.
pub fn verify_dir(dir: &Path) -> Result<(Manifest, Verification), String> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| format!("{}: {e}", dir.display()))?;
    let manifest = Manifest::parse(&text)?;
    let mut v = Verification::default();
    let mut listed = std::collections::BTreeSet::new();
    for (path, hash) in &manifest.files {
        listed.insert(path.clone());
        v.checked += 1;
        match fs::read(dir.join(path)) {
            Ok(bytes) if sha256_hex(&bytes) == *hash => {}
            Ok(_) => v.modified.push(path.clone()),
            Err(_) => v.missing.push(path.clone()),
        }
    }
    let mut present = Vec::new();
    walk(dir, dir, &mut present).map_err(|e| e.to_string())?;
    present.sort();
    v.unlisted = present
        .into_iter()
        .filter(|p| p != MANIFEST_FILE && !listed.contains(p))
        .collect();
    Ok((manifest, v))
}

/// Compares two bundles file by file; returns the paths that differ.
pub fn diff_bundles(a: &Manifest, b: &Manifest) -> Vec<String> {
    let ma: BTreeMap<_, _> = a.files.iter().cloned().collect();
    let mb: BTreeMap<_, _> = b.files.iter().cloned().collect();
    let mut out: Vec<String> = ma
        .iter()
        .filter(|(p, h)| mb.get(*p) != Some(*h))
        .map(|(p, _)| p.clone())
        .collect();
    out.extend(mb.keys().filter(|p| !ma.contains_key(*p)).cloned());
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let mut b = Bundle::new(Manifest::new("run", "x = 1\n", 9));
        b.manifest.seeds.push(("realization_0000".into(), 42));
        b.manifest.failures.push("realization 1: boom\nagain".into());
        b.manifest.notes.push("fit skipped".into());
        b.add("a.csv", "1,2\n");
        let m = b.finalized_manifest();
        let parsed = Manifest::parse(&m.render()).unwrap();
        assert_eq!(parsed.files, m.files);
        assert_eq!(parsed.seeds, m.seeds);
        assert_eq!(parsed.failures, vec!["realization 1: boom again".to_string()]);
        assert_eq!(parsed.master_seed, 9);
        assert_eq!(parsed.config_sha256, m.config_sha256);
    }

    #[test]
    fn verification_catches_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = Bundle::new(Manifest::new("run", "", 0));
        b.add("a.csv", "1\n");
        b.add("sub/b.csv", "2\n");
        b.write(dir.path()).unwrap();
        assert!(verify_dir(dir.path()).unwrap().1.passed());

        fs::write(dir.path().join("a.csv"), "3\n").unwrap();
        fs::write(dir.path().join("extra.txt"), "").unwrap();
        fs::remove_file(dir.path().join("sub/b.csv")).unwrap();
        let v = verify_dir(dir.path()).unwrap().1;
        assert_eq!(v.modified, vec!["a.csv"]);
        assert_eq!(v.missing, vec!["sub/b.csv"]);
        assert_eq!(v.unlisted, vec!["extra.txt"]);
    }

    #[test]
    fn rewrite_removes_stale_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = Bundle::new(Manifest::new("run", "", 0));
        b.add("old.csv", "1\n");
        b.write(dir.path()).unwrap();
        let mut c = Bundle::new(Manifest::new("run", "", 0));
        c.add("new.csv", "2\n");
        c.write(dir.path()).unwrap();
        assert!(!dir.path().join("old.csv").exists());
        assert!(verify_dir(dir.path()).unwrap().1.passed());
    }
}
