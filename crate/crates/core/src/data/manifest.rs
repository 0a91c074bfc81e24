//! Line-oriented dataset manifests.
//!
//! One record per line, tab-separated, paths relative to the manifest's
//! directory:
//!
//! ```text
//! # comment
//! SPLIT	test
//! blurry/0001.png	sharp/0001.png
//! SEQ	scenes/street	7
//! ```
//!
//! A `SEQ` record names a directory of PNG frames (sorted by file name)
//! and the number of frames averaged into each blurry image; it yields one
//! pair per non-overlapping window.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{decode_image, synthesize_blur, BlurPair, FrameSequence};
use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Record {
    Pair { blurry: PathBuf, sharp: PathBuf },
    Sequence { dir: PathBuf, frames: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// 1-based line number in the manifest file.
    pub line: usize,
    pub record: Record,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    /// Directory that relative paths resolve against.
    pub root: PathBuf,
    pub split: Option<Split>,
    pub entries: Vec<ManifestEntry>,
}

/// A decoded pair together with where it came from.
#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub id: String,
    pub line: usize,
    pub pair: BlurPair,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordProblem {
    pub line: usize,
    pub message: String,
}

/// Per-record problems found while loading a manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub records: usize,
    pub problems: Vec<RecordProblem>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} of {} records invalid", self.problems.len(), self.records)?;
        for p in &self.problems {
            writeln!(f, "  line {}: {}", p.line, p.message)?;
        }
        Ok(())
    }
}

/// Parses a manifest. Syntax errors fail the whole file; missing or
/// undecodable images surface later from [`Manifest::load`].
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::parse(&text, root).map_err(|(line, message)| CoreError::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    })
}

impl Manifest {
    pub fn parse(text: &str, root: PathBuf) -> std::result::Result<Self, (usize, String)> {
        let mut manifest = Manifest {
            root,
            split: None,
            entries: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            match fields.as_slice() {
                ["SPLIT", tag] => {
                    if manifest.split.is_some() {
                        return Err((line, "split declared twice".into()));
                    }
                    manifest.split = Some(tag.parse().map_err(|e| (line, e))?);
                }
                ["SEQ", dir, m] => {
                    let frames = m
                        .parse()
                        .map_err(|_| (line, format!("frame count {m:?} is not a positive integer")))?;
                    manifest.entries.push(ManifestEntry {
                        line,
                        record: Record::Sequence {
                            dir: PathBuf::from(dir),
                            frames,
                        },
                    });
                }
                [blurry, sharp] if !blurry.is_empty() && !sharp.is_empty() => {
                    manifest.entries.push(ManifestEntry {
                        line,
                        record: Record::Pair {
                            blurry: PathBuf::from(blurry),
                            sharp: PathBuf::from(sharp),
                        },
                    });
                }
                _ => {
                    return Err((
                        line,
                        format!("expected `blurry<TAB>sharp` or `SEQ<TAB>dir<TAB>M`, got {trimmed:?}"),
                    ))
                }
            }
        }
        Ok(manifest)
    }

    /// Manifest text; parsing it back yields `self` (with the same root).
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(split) = self.split {
            out.push_str(&format!("SPLIT\t{split}\n"));
        }
        for e in &self.entries {
            match &e.record {
                Record::Pair { blurry, sharp } => out.push_str(&format!("{}\t{}\n", blurry.display(), sharp.display())),
                Record::Sequence { dir, frames } => out.push_str(&format!("SEQ\t{}\t{frames}\n", dir.display())),
            }
        }
        out
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    fn load_entry(&self, entry: &ManifestEntry) -> std::result::Result<Vec<LoadedPair>, String> {
        match &entry.record {
            Record::Pair { blurry, sharp } => {
                let b = decode_image(&self.resolve(blurry)).map_err(|e| e.to_string())?;
                let s = decode_image(&self.resolve(sharp)).map_err(|e| e.to_string())?;
                let pair = BlurPair::new(b, s).map_err(|e| e.to_string())?;
                Ok(vec![LoadedPair {
                    id: blurry.display().to_string(),
                    line: entry.line,
                    pair,
                }])
            }
            Record::Sequence { dir, frames } => {
                let m = *frames;
                if m == 0 || m % 2 == 0 {
                    return Err(format!("frame count must be odd, got {m}"));
                }
                let files = list_frames(&self.resolve(dir))?;
                if files.len() < m {
                    return Err(format!("{} holds {} frames, fewer than {m}", dir.display(), files.len()));
                }
                let decoded = files
                    .iter()
                    .map(|f| decode_image(f).map_err(|e| e.to_string()))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let seq = FrameSequence::new(decoded).map_err(|e| e.to_string())?;
                seq.windows(m)
                    .enumerate()
                    .map(|(i, w)| {
                        Ok(LoadedPair {
                            id: format!("{}#{i}", dir.display()),
                            line: entry.line,
                            pair: synthesize_blur(&w, m).map_err(|e| e.to_string())?,
                        })
                    })
                    .collect()
            }
        }
    }

    /// Decodes every record. Records that fail are listed in the report and
    /// contribute no pairs.
    pub fn load(&self) -> (Vec<LoadedPair>, ValidationReport) {
        let mut pairs = Vec::new();
        let mut report = ValidationReport {
            records: self.entries.len(),
            problems: Vec::new(),
        };
        for entry in &self.entries {
            match self.load_entry(entry) {
                Ok(p) => pairs.extend(p),
                Err(message) => report.problems.push(RecordProblem {
                    line: entry.line,
                    message,
                }),
            }
        }
        (pairs, report)
    }

    /// Like [`load`](Self::load) but keeps one slot per record, so callers
    /// can report failures in place.
    pub fn load_each(&self) -> Vec<(ManifestEntry, std::result::Result<Vec<LoadedPair>, String>)> {
        self.entries.iter().map(|e| (e.clone(), self.load_entry(e))).collect()
    }

    pub fn validate(&self) -> ValidationReport {
        self.load().1
    }
}

fn list_frames(dir: &Path) -> std::result::Result<Vec<PathBuf>, String> {
    let read = fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut files: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}
