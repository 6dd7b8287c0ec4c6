//! Target manifests.
//!
//! A manifest is plain text: `key = value` lines at the top, then sections.
//!
//! ```text
//! id = offbyone
//! exec = ./offbyone @@          # or `mock` for an in-process mock target
//! input_mode = FileArg          # FileArg | Stdin
//! timeout_ms = 1000
//! crash_signals = 11 6 7 8      # optional, these are the defaults
//! crash_exit_codes =            # optional, empty by default
//! seeds = seeds/crash.bin hex:04
//!
//! [block_map]                   # <id> <file>:<line> [cond]
//! 1 offbyone.c:10
//! 2 offbyone.c:14 cond
//!
//! [value_map]                   # <site_id> <file>:<line>
//! 1 offbyone.c:14
//!
//! [ground_truth]                # <file>:<line> <note...>
//! offbyone.c:14 guard admits count == 4
//!
//! [mock]                        # only with `exec = mock`
//! EMIT 1; LOAD 0; VAL 1; IF == 4 GOTO C; EXIT 0; C: EMIT 2; CRASH 11
//! ```
//!
//! `cond` marks blocks whose execution depends on a branch outcome. Seeds are
//! paths relative to the manifest, or `hex:<bytes>` literals. `#` starts a
//! comment everywhere except inside `[mock]`, where it is handled by the mock
//! parser.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mock::{MockError, MockProgram};
use crate::model::{BlockSite, GroundTruth, Location};

/// The input placeholder substituted in `exec` under [`InputMode::FileArg`].
pub const INPUT_PLACEHOLDER: &str = "@@";

/// SIGSEGV, SIGABRT, SIGBUS, SIGFPE.
pub const DEFAULT_CRASH_SIGNALS: [i32; 4] = [11, 6, 7, 8];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mock(#[from] MockError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    FileArg,
    Stdin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Exec {
    Native(Vec<String>),
    Mock(MockProgram),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeedSource {
    File(PathBuf),
    Inline(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRef {
    pub id: String,
    pub source: SeedSource,
}

impl SeedRef {
    /// Resolves a seed reference: `hex:<bytes>` or a path relative to `base`.
    pub fn parse(reference: &str, base: &Path) -> Result<SeedRef, String> {
        if let Some(hex) = reference.strip_prefix("hex:") {
            let bytes = decode_hex(hex).ok_or_else(|| format!("bad hex seed {reference:?}"))?;
            let mut id = format!("hex{hex}");
            id.truncate(19);
            return Ok(SeedRef {
                id,
                source: SeedSource::Inline(bytes),
            });
        }
        let path = base.join(reference);
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| format!("seed path {reference:?} has no file name"))?
            .to_owned();
        Ok(SeedRef {
            id,
            source: SeedSource::File(path),
        })
    }

    pub fn load(&self) -> io::Result<Vec<u8>> {
        match &self.source {
            SeedSource::File(path) => fs::read(path),
            SeedSource::Inline(bytes) => Ok(bytes.clone()),
        }
    }
}

fn decode_hex(hex: &str) -> Option<Vec<u8>> {
    if hex.len() % 2 != 0 {
        return None;
    }
    (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(hex.get(i..i + 2)?, 16).ok())
        .collect()
}

/// A validated benchmark target.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    pub id: String,
    pub exec: Exec,
    pub input_mode: InputMode,
    pub timeout_ms: u64,
    pub crash_signals: BTreeSet<i32>,
    pub crash_exit_codes: BTreeSet<i32>,
    pub block_map: Vec<BlockSite>,
    pub value_map: Vec<BlockSite>,
    pub ground_truth: GroundTruth,
    pub seeds: Vec<SeedRef>,
    /// Directory the manifest was loaded from; relative `exec` paths and the
    /// working directory of native targets resolve against it.
    pub base_dir: PathBuf,
    block_index: HashMap<u32, usize>,
    value_index: HashMap<u32, usize>,
}

impl TargetSpec {
    pub fn block(&self, id: u32) -> Option<&BlockSite> {
        self.block_index.get(&id).map(|&i| &self.block_map[i])
    }

    pub fn value_site(&self, id: u32) -> Option<&BlockSite> {
        self.value_index.get(&id).map(|&i| &self.value_map[i])
    }

    /// Distinct block locations in `(file, line)` order.
    pub fn block_locations(&self) -> Vec<Location> {
        let set: BTreeSet<&Location> = self.block_map.iter().map(|b| &b.location).collect();
        set.into_iter().cloned().collect()
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.exec, Exec::Mock(_))
    }
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<TargetSpec, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &base)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Header,
    BlockMap,
    ValueMap,
    GroundTruth,
    Mock,
}

/// Parses and validates manifest text; relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<TargetSpec, ManifestError> {
    let mut keys: HashMap<&str, (usize, usize, &str)> = HashMap::new();
    let mut block_map = Vec::new();
    let mut value_map = Vec::new();
    let mut gt_entries = Vec::new();
    let mut mock_text = String::new();
    let mut mock_first_line = None;
    let mut seen_sections = HashSet::new();
    let mut section = Section::Header;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if section == Section::Mock && !raw.trim_start().starts_with('[') {
            mock_first_line.get_or_insert(line_no);
            mock_text.push_str(raw);
            mock_text.push('\n');
            continue;
        }
        let content = raw.split('#').next().unwrap_or_default();
        let indent = content.len() - content.trim_start().len();
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let err = |column: usize, message: String| ManifestError::Parse {
            line: line_no,
            column: column + 1,
            message,
        };

        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(indent, "unterminated section header".into()))?;
            section = match name.trim() {
                "block_map" => Section::BlockMap,
                "value_map" => Section::ValueMap,
                "ground_truth" => Section::GroundTruth,
                "mock" => Section::Mock,
                other => return Err(err(indent + 1, format!("unknown section [{other}]"))),
            };
            if !seen_sections.insert(name.trim().to_owned()) {
                return Err(err(indent, format!("duplicate section [{}]", name.trim())));
            }
            continue;
        }

        match section {
            Section::Header => {
                let eq = content
                    .find('=')
                    .ok_or_else(|| err(indent, "expected `key = value`".into()))?;
                let key = content[..eq].trim();
                let value = content[eq + 1..].trim();
                const KNOWN: [&str; 7] = [
                    "id",
                    "exec",
                    "input_mode",
                    "timeout_ms",
                    "crash_signals",
                    "crash_exit_codes",
                    "seeds",
                ];
                if !KNOWN.contains(&key) {
                    return Err(err(indent, format!("unknown key `{key}`")));
                }
                let value_col = indent + eq + 1 + (content[eq + 1..].len() - content[eq + 1..].trim_start().len());
                if keys.insert(key, (line_no, value_col, value)).is_some() {
                    return Err(err(indent, format!("duplicate key `{key}`")));
                }
            }
            Section::BlockMap | Section::ValueMap => {
                let fields: Vec<&str> = content.split_whitespace().collect();
                let (id, loc, flag) = match fields.as_slice() {
                    [id, loc] => (*id, *loc, None),
                    [id, loc, flag] => (*id, *loc, Some(*flag)),
                    _ => return Err(err(indent, "expected `<id> <file>:<line> [cond]`".into())),
                };
                let id: u32 = id
                    .parse()
                    .map_err(|_| err(indent, format!("bad site id {id:?}")))?;
                let loc_col = indent + content.find(loc).unwrap_or(0);
                let location: Location = loc.parse().map_err(|e| err(loc_col, format!("{e}")))?;
                let conditional = match flag {
                    None => false,
                    Some("cond") if section == Section::BlockMap => true,
                    Some(other) => {
                        let col = indent + content.rfind(other).unwrap_or(0);
                        return Err(err(col, format!("unexpected flag {other:?}")));
                    }
                };
                let site = BlockSite {
                    id,
                    location,
                    conditional,
                };
                if section == Section::BlockMap {
                    block_map.push(site);
                } else {
                    value_map.push(site);
                }
            }
            Section::GroundTruth => {
                let (loc, note) = content.split_once(char::is_whitespace).unwrap_or((content, ""));
                let location: Location = loc.parse().map_err(|e| err(indent, format!("{e}")))?;
                gt_entries.push((location, note.trim().to_owned()));
            }
            Section::Mock => unreachable!(),
        }
    }

    let require = |key: &str| {
        keys.get(key)
            .copied()
            .ok_or_else(|| ManifestError::Invalid(format!("missing key `{key}`")))
    };
    let at = |(line, col, _): (usize, usize, &str), message: String| ManifestError::Parse {
        line,
        column: col + 1,
        message,
    };

    let id = require("id")?.2.to_owned();
    if id.is_empty() || id.contains(|c: char| c.is_whitespace() || c == ',' || c == '/') {
        return Err(ManifestError::Invalid(format!("bad target id {id:?}")));
    }

    let input_mode = match keys.get("input_mode") {
        None => InputMode::FileArg,
        Some(&entry) => match entry.2 {
            "FileArg" => InputMode::FileArg,
            "Stdin" => InputMode::Stdin,
            other => return Err(at(entry, format!("input_mode must be FileArg or Stdin, got {other:?}"))),
        },
    };

    let exec_entry = require("exec")?;
    let exec = if exec_entry.2 == "mock" {
        let Some(first) = mock_first_line else {
            return Err(ManifestError::Invalid("`exec = mock` needs a [mock] section".into()));
        };
        Exec::Mock(MockProgram::parse(&mock_text, first)?)
    } else {
        if mock_first_line.is_some() {
            return Err(ManifestError::Invalid("[mock] section given for a native target".into()));
        }
        let argv: Vec<String> = exec_entry.2.split_whitespace().map(str::to_owned).collect();
        if argv.is_empty() {
            return Err(at(exec_entry, "empty exec command".into()));
        }
        let placeholders: usize = argv.iter().map(|a| a.matches(INPUT_PLACEHOLDER).count()).sum();
        match (input_mode, placeholders) {
            (InputMode::FileArg, 1) | (InputMode::Stdin, 0) => {}
            (InputMode::FileArg, n) => {
                return Err(ManifestError::Invalid(format!(
                    "FileArg targets need exactly one `{INPUT_PLACEHOLDER}` in exec, found {n}"
                )))
            }
            (InputMode::Stdin, _) => {
                return Err(ManifestError::Invalid(format!(
                    "Stdin targets must not use `{INPUT_PLACEHOLDER}`"
                )))
            }
        }
        Exec::Native(argv)
    };

    let timeout_ms = match keys.get("timeout_ms") {
        None => 1000,
        Some(&entry) => entry
            .2
            .parse::<u64>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| at(entry, "timeout_ms must be a positive integer".into()))?,
    };

    let int_set = |key: &str, default: &[i32]| -> Result<BTreeSet<i32>, ManifestError> {
        match keys.get(key) {
            None => Ok(default.iter().copied().collect()),
            Some(&entry) => entry
                .2
                .split_whitespace()
                .map(|n| n.parse().map_err(|_| at(entry, format!("bad integer {n:?} in {key}"))))
                .collect(),
        }
    };
    let crash_signals = int_set("crash_signals", &DEFAULT_CRASH_SIGNALS)?;
    let crash_exit_codes = int_set("crash_exit_codes", &[])?;

    let seeds_entry = require("seeds")?;
    let seeds = seeds_entry
        .2
        .split_whitespace()
        .map(|s| SeedRef::parse(s, base).map_err(|m| at(seeds_entry, m)))
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err(ManifestError::Invalid("seeds must list at least one seed".into()));
    }

    if block_map.is_empty() {
        return Err(ManifestError::Invalid("[block_map] must list at least one block".into()));
    }
    let index = |sites: &[BlockSite], what: &str| -> Result<HashMap<u32, usize>, ManifestError> {
        let mut index = HashMap::new();
        for (i, site) in sites.iter().enumerate() {
            if index.insert(site.id, i).is_some() {
                return Err(ManifestError::Invalid(format!("duplicate {what} id {}", site.id)));
            }
        }
        Ok(index)
    };
    let block_index = index(&block_map, "block")?;
    let value_index = index(&value_map, "value site")?;

    let known: HashSet<&Location> = block_map.iter().map(|b| &b.location).collect();
    if let Some((loc, _)) = gt_entries.iter().find(|(loc, _)| !known.contains(loc)) {
        return Err(ManifestError::Invalid(format!(
            "ground-truth location {loc} does not resolve to any block in [block_map]"
        )));
    }
    let ground_truth = GroundTruth::new(gt_entries)
        .map_err(|_| ManifestError::Invalid("[ground_truth] must list at least one location".into()))?;

    if let Exec::Mock(program) = &exec {
        if let Some(id) = program.emitted_blocks().find(|id| !block_index.contains_key(id)) {
            return Err(ManifestError::Invalid(format!("mock emits block {id} missing from [block_map]")));
        }
        if let Some(id) = program.value_sites().find(|id| !value_index.contains_key(id)) {
            return Err(ManifestError::Invalid(format!("mock records value site {id} missing from [value_map]")));
        }
    }

    Ok(TargetSpec {
        id,
        exec,
        input_mode,
        timeout_ms,
        crash_signals,
        crash_exit_codes,
        block_map,
        value_map,
        ground_truth,
        seeds,
        base_dir: base.to_owned(),
        block_index,
        value_index,
    })
}
