//! Tab-separated response manifests.
//!
//! One stimulus per line: `stimulus_id <TAB> image path <TAB> response <TAB> split`.
//! Image paths are relative to the manifest's directory, `#` starts a
//! comment line, and split is one of `train`, `val`, `test` or `ooc`
//! (out-of-category candidates). A response of `NA` marks an unrecorded
//! stimulus and is only accepted on `ooc` rows.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    Ooc,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "ooc" => Ok(Split::Ooc),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Ooc => "ooc",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub stimulus_id: String,
    /// Path as written in the manifest.
    pub relative_path: String,
    /// `relative_path` resolved against the manifest directory.
    pub image: PathBuf,
    pub response: Option<f64>,
    pub split: Split,
    /// 1-based source line.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResponseManifest {
    path: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ResponseManifest {
    pub fn parse(text: &str, base_dir: &Path, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |reason: String| Error::Manifest {
                path: path.to_path_buf(),
                line,
                reason,
            };
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 tab-separated columns, found {}", cols.len())));
            }
            let id = cols[0].trim();
            if id.is_empty() {
                return Err(err("empty stimulus id".into()));
            }
            if !seen.insert(id.to_string()) {
                return Err(err(format!("duplicate stimulus id {id:?}")));
            }
            let split: Split = cols[3].trim().parse().map_err(err)?;
            let response = match cols[2].trim() {
                "NA" if split == Split::Ooc => None,
                "NA" => return Err(err(format!("{id}: {split} rows need a response"))),
                s => {
                    let v: f64 = s
                        .parse()
                        .map_err(|_| err(format!("response {s:?} is not a decimal number")))?;
                    if !v.is_finite() {
                        return Err(err(format!("response {s:?} is not finite")));
                    }
                    Some(v)
                }
            };
            let rel = cols[1].trim();
            entries.push(ManifestEntry {
                stimulus_id: id.to_string(),
                relative_path: rel.to_string(),
                image: base_dir.join(rel),
                response,
                split,
                line,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    pub fn from_entries(path: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            path: path.into(),
            entries,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# stimulus_id\timage\tresponse\tsplit\n");
        for e in &self.entries {
            let resp = e.response.map_or_else(|| "NA".to_string(), |r| format!("{r:?}"));
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.stimulus_id, e.relative_path, resp, e.split
            ));
        }
        out
    }

    /// Fail unless every listed image exists and each named split is non-empty.
    pub fn validate(&self, required: &[Split]) -> Result<()> {
        for e in &self.entries {
            if !e.image.is_file() {
                return Err(Error::Manifest {
                    path: self.path.clone(),
                    line: e.line,
                    reason: format!("image {} not found", e.image.display()),
                });
            }
        }
        for &s in required {
            if self.split(s).next().is_none() {
                return Err(Error::Manifest {
                    path: self.path.clone(),
                    line: 0,
                    reason: format!("{s} split is empty"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ResponseManifest> {
        ResponseManifest::parse(text, Path::new("/data"), Path::new("/data/m.tsv"))
    }

    #[test]
    fn parses_rows_and_comments() {
        let m = parse("# header\nb01\timg/b01.ppm\t12.5\ttrain\n\no7\tobj/o7.ppm\tNA\tooc\n").unwrap();
        assert_eq!(m.entries().len(), 2);
        let e = &m.entries()[0];
        assert_eq!(e.image, Path::new("/data/img/b01.ppm"));
        assert_eq!(e.response, Some(12.5));
        assert_eq!(e.line, 2);
        assert_eq!(m.entries()[1].response, None);
        assert_eq!(m.split(Split::Ooc).count(), 1);
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(parse("a\tx.ppm\t1.0\n").is_err());
        assert!(parse("a\tx.ppm\tfoo\ttrain\n").is_err());
        assert!(parse("a\tx.ppm\t1.0\tholdout\n").is_err());
        assert!(parse("a\tx.ppm\tNA\ttrain\n").is_err());
        let dup = parse("a\tx.ppm\t1\ttrain\na\ty.ppm\t2\tval\n").unwrap_err();
        assert!(dup.to_string().contains(":2:"), "{dup}");
    }

    #[test]
    fn tsv_round_trip() {
        let m = parse("a\tx.ppm\t0.1\ttrain\nb\ty.ppm\tNA\tooc\n").unwrap();
        let back = parse(&m.to_tsv()).unwrap();
        assert_eq!(back.entries().len(), 2);
        assert_eq!(back.entries()[0].response, Some(0.1));
    }
}
