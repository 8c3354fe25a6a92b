//! Entity manifest documents.
//!
//! A manifest is the interchange format between whatever vision stack
//! enumerates a scene and the graph builder. Grammar:
//!
//! ```text
//! document   := (blank | comment | section)*
//! section    := "entities:" NEWLINE entry*
//!             | "counts:" NEWLINE count*
//! entry      := label "@" "(" number "," number ")" field*
//! field      := key "=" value          ; value may be "double quoted"
//! count      := label ":" unsigned-integer
//! comment    := "#" any-text
//! ```
//!
//! Labels may contain spaces (`fire extinguisher @ (1, 2)`). The field keys
//! `zone` and `count` are reserved: `zone` sets the entity's semantic zone and
//! `count` carries a per-entry count hint. Every other field becomes an
//! attribute. Section headers are matched case-insensitively; any other
//! header (a line ending in `:` that is not indented and not inside a
//! section body) is rejected.

use std::collections::BTreeMap;

use super::{normalize_label, SceneError};

/// One line of the `entities:` section.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub label: String,
    pub pos: [f64; 2],
    pub attrs: BTreeMap<String, String>,
    pub zone: Option<String>,
    pub count_hint: Option<u32>,
}

/// Structured product of scene extraction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntityManifest {
    pub entries: Vec<ManifestEntry>,
    /// Normalized label -> count reported by the detection pass.
    pub detector_counts: BTreeMap<String, u32>,
}

impl EntityManifest {
    pub fn new(entries: Vec<ManifestEntry>, detector_counts: BTreeMap<String, u32>) -> Result<Self, SceneError> {
        for (i, e) in entries.iter().enumerate() {
            if !e.pos.iter().all(|c| c.is_finite()) {
                return Err(SceneError::InvalidPosition {
                    line: i + 1,
                    text: format!("({}, {})", e.pos[0], e.pos[1]),
                });
            }
            if normalize_label(&e.label).is_empty() {
                return Err(SceneError::Malformed {
                    line: i + 1,
                    reason: "empty label".into(),
                });
            }
        }
        let detector_counts = detector_counts
            .into_iter()
            .map(|(k, v)| (normalize_label(&k), v))
            .collect();
        Ok(Self { entries, detector_counts })
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Entities,
    Counts,
}

pub fn parse_entity_manifest(text: &str) -> Result<EntityManifest, SceneError> {
    let mut manifest = EntityManifest::default();
    let mut section = Section::None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }

        if let Some(header) = section_header(raw) {
            section = match header.to_ascii_lowercase().as_str() {
                "entities" => Section::Entities,
                "counts" => Section::Counts,
                other => {
                    return Err(SceneError::Malformed {
                        line: line_no,
                        reason: format!("unknown section `{other}`"),
                    })
                }
            };
            continue;
        }

        match section {
            Section::None => {
                return Err(SceneError::Malformed {
                    line: line_no,
                    reason: "content outside of a section".into(),
                })
            }
            Section::Entities => manifest.entries.push(parse_entry(line, line_no)?),
            Section::Counts => {
                let (label, n) = parse_count(line, line_no)?;
                manifest.detector_counts.insert(label, n);
            }
        }
    }
    Ok(manifest)
}

fn strip_comment(line: &str) -> &str {
    // `#` inside a quoted value is kept.
    let mut in_quotes = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

/// A section header is an unindented `word:` with nothing after the colon.
fn section_header(raw: &str) -> Option<&str> {
    if raw.starts_with(char::is_whitespace) {
        return None;
    }
    let line = strip_comment(raw).trim_end();
    let name = line.strip_suffix(':')?;
    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        Some(name)
    } else {
        None
    }
}

fn parse_entry(line: &str, line_no: usize) -> Result<ManifestEntry, SceneError> {
    let malformed = |reason: &str| SceneError::Malformed {
        line: line_no,
        reason: reason.to_string(),
    };

    let (label, rest) = line.split_once('@').ok_or_else(|| malformed("expected `label @ (x, y)`"))?;
    let label = label.trim();
    if label.is_empty() {
        return Err(malformed("empty label"));
    }

    let rest = rest.trim_start();
    let rest = rest.strip_prefix('(').ok_or_else(|| malformed("expected `(` after `@`"))?;
    let close = rest.find(')').ok_or_else(|| malformed("unclosed position"))?;
    let coords = &rest[..close];
    let tail = &rest[close + 1..];

    let mut parts = coords.split(',');
    let (Some(xs), Some(ys), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(malformed("position must have exactly two coordinates"));
    };
    let x = parse_coord(xs, coords, line_no)?;
    let y = parse_coord(ys, coords, line_no)?;

    let mut entry = ManifestEntry {
        label: label.to_string(),
        pos: [x, y],
        attrs: BTreeMap::new(),
        zone: None,
        count_hint: None,
    };

    for field in split_fields(tail, line_no)? {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| malformed(&format!("field `{field}` is not key=value")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = unquote(value.trim()).to_string();
        if key.is_empty() {
            return Err(malformed("empty field key"));
        }
        match key.as_str() {
            "zone" => entry.zone = Some(value),
            "count" => {
                let n = value
                    .parse::<u32>()
                    .map_err(|_| malformed(&format!("count hint `{value}` is not a non-negative integer")))?;
                entry.count_hint = Some(n);
            }
            _ => {
                entry.attrs.insert(key, value);
            }
        }
    }
    Ok(entry)
}

fn parse_coord(text: &str, whole: &str, line_no: usize) -> Result<f64, SceneError> {
    let t = text.trim();
    let value = t.parse::<f64>().map_err(|_| SceneError::Malformed {
        line: line_no,
        reason: format!("coordinate `{t}` is not a number"),
    })?;
    if !value.is_finite() {
        return Err(SceneError::InvalidPosition {
            line: line_no,
            text: format!("({})", whole.trim()),
        });
    }
    Ok(value)
}

/// Splits `key=value key="quoted value"` on whitespace outside quotes.
fn split_fields(text: &str, line_no: usize) -> Result<Vec<String>, SceneError> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    for ch in text.chars() {
        match ch {
            '"' => {
                in_quotes = !in_quotes;
                current.push(ch);
            }
            c if c.is_whitespace() && !in_quotes => {
                if !current.is_empty() {
                    fields.push(std::mem::take(&mut current));
                }
            }
            c => current.push(c),
        }
    }
    if in_quotes {
        return Err(SceneError::Malformed {
            line: line_no,
            reason: "unterminated quote".into(),
        });
    }
    if !current.is_empty() {
        fields.push(current);
    }
    Ok(fields)
}

fn unquote(value: &str) -> &str {
    value
        .strip_prefix('"')
        .and_then(|v| v.strip_suffix('"'))
        .unwrap_or(value)
}

fn parse_count(line: &str, line_no: usize) -> Result<(String, u32), SceneError> {
    let (label, n) = line.rsplit_once(':').ok_or_else(|| SceneError::Malformed {
        line: line_no,
        reason: "expected `label: n`".into(),
    })?;
    let label = normalize_label(label);
    if label.is_empty() {
        return Err(SceneError::Malformed {
            line: line_no,
            reason: "empty label in counts".into(),
        });
    }
    let n = n.trim().parse::<u32>().map_err(|_| SceneError::Malformed {
        line: line_no,
        reason: format!("count `{}` is not a non-negative integer", n.trim()),
    })?;
    Ok((label, n))
}
