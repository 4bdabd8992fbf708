use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{Episode, EpisodeMeta, Experiment};
use crate::scan::{parse_pair_line, ScanError};

/// Writes an episode as `SUPPORT` and `QUERY` sections of `IN:/OUT:` lines,
/// preceded by `#` metadata comments.
pub fn write_episode<W: Write>(mut w: W, episode: &Episode) -> std::io::Result<()> {
    if let Some(e) = episode.meta.experiment {
        writeln!(w, "# experiment: {e}")?;
    }
    if let Some(a) = &episode.meta.assignment {
        let maps: Vec<String> =
            a.primitive_map.iter().chain(&a.direction_map).map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(w, "# assignment: {}", maps.join(" "))?;
    }
    writeln!(w, "SUPPORT")?;
    for p in &episode.support {
        writeln!(w, "{p}")?;
    }
    writeln!(w, "QUERY")?;
    for p in &episode.query {
        writeln!(w, "{p}")?;
    }
    Ok(())
}

/// Reads the format produced by [`write_episode`]. Vocabularies are the
/// symbols that occur in the pairs.
pub fn read_episode<R: BufRead>(r: R) -> Result<Episode, ScanError> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Support,
        Query,
    }
    let mut section = Section::None;
    let mut support = Vec::new();
    let mut query = Vec::new();
    let mut experiment = None;
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| ScanError::Format { line: line_no, message: e.to_string() })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(name) = comment.trim().strip_prefix("experiment:") {
                experiment = name.trim().parse::<Experiment>().ok();
            }
            continue;
        }
        match trimmed {
            "SUPPORT" => section = Section::Support,
            "QUERY" => section = Section::Query,
            _ => {
                let pair = parse_pair_line(trimmed, line_no)?;
                match section {
                    Section::Support => support.push(pair),
                    Section::Query => query.push(pair),
                    Section::None => {
                        return Err(ScanError::Format { line: line_no, message: "pair outside a section".into() })
                    }
                }
            }
        }
    }
    Ok(Episode::from_pairs(support, query, EpisodeMeta { experiment, assignment: None }))
}

/// Flat `key=value` file; `#` starts a comment line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub entries: BTreeMap<String, String>,
}

impl GeneratorConfig {
    pub fn parse(text: &str) -> Result<Self, ScanError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ScanError::Format { line: i + 1, message: "expected key=value".into() })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
