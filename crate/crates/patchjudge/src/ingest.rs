//! Unified-diff ingestion: parsing patches into buggy/patched snippet
//! pairs, whitespace-insensitive deduplication, and the JSON Lines
//! dataset format.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth assessment of a plausible patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Overfitting,
}

/// One patch as it arrives from a dataset file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawPatch {
    pub id: String,
    #[serde(rename = "diff")]
    pub diff_text: String,
    #[serde(default)]
    pub label: Option<Label>,
}

/// The two code snippets a patch describes: the file region before
/// the change and the same region after it, context lines included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnippetPair {
    pub buggy_text: String,
    pub patched_text: String,
}

/// Parses hunk header counts out of a line like `@@ -3,2 +3,4 @@`.
/// Omitted counts default to 1.
fn parse_hunk_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix("@@ -")?;
    let (old_part, rest) = rest.split_once(" +")?;
    let (new_part, _) = rest.split_once(" @@")?;
    let old_count = match old_part.split_once(',') {
        Some((start, count)) => {
            start.parse::<usize>().ok()?;
            count.parse::<usize>().ok()?
        }
        None => {
            old_part.parse::<usize>().ok()?;
            1
        }
    };
    let new_count = match new_part.split_once(',') {
        Some((start, count)) => {
            start.parse::<usize>().ok()?;
            count.parse::<usize>().ok()?
        }
        None => {
            new_part.parse::<usize>().ok()?;
            1
        }
    };
    Some((old_count, new_count))
}

fn is_file_metadata(line: &str) -> bool {
    line.starts_with("diff ")
        || line.starts_with("index ")
        || line.starts_with("---")
        || line.starts_with("+++")
        || line.starts_with("new file")
        || line.starts_with("deleted file")
        || line.starts_with("old mode")
        || line.starts_with("new mode")
        || line.starts_with("similarity")
        || line.starts_with("rename ")
        || line.starts_with("Binary files")
}

/// Strips the marker character and one following space, if present.
fn body_content(line: &str) -> String {
    let after_marker = &line[1..];
    match after_marker.strip_prefix(' ') {
        Some(rest) => rest.to_string(),
        None => after_marker.to_string(),
    }
}

/// Extracts the buggy and patched snippets from a unified diff.
///
/// Context and `-` lines make up the buggy side; context and `+`
/// lines make up the patched side. Hunk bodies are consumed by the
/// line counts declared in their headers, and hunks are joined in
/// file order with single newlines.
pub fn parse_unified_diff(diff_text: &str) -> Result<SnippetPair> {
    let mut buggy: Vec<String> = Vec::new();
    let mut patched: Vec<String> = Vec::new();
    let mut saw_hunk = false;

    let mut lines = diff_text.lines().peekable();
    while let Some(line) = lines.next() {
        if let Some((mut old_left, mut new_left)) = parse_hunk_header(line) {
            saw_hunk = true;
            while old_left > 0 || new_left > 0 {
                let body = lines.next().ok_or_else(|| {
                    Error::MalformedDiff("hunk body shorter than header counts".into())
                })?;
                if body.starts_with('\\') {
                    continue;
                }
                if body.is_empty() {
                    // Some tools emit blank context lines with the
                    // marker space trimmed away.
                    if old_left == 0 || new_left == 0 {
                        return Err(Error::MalformedDiff(
                            "context line overruns hunk counts".into(),
                        ));
                    }
                    old_left -= 1;
                    new_left -= 1;
                    buggy.push(String::new());
                    patched.push(String::new());
                    continue;
                }
                match body.as_bytes()[0] {
                    b' ' => {
                        if old_left == 0 || new_left == 0 {
                            return Err(Error::MalformedDiff(
                                "context line overruns hunk counts".into(),
                            ));
                        }
                        old_left -= 1;
                        new_left -= 1;
                        let content = body_content(body);
                        buggy.push(content.clone());
                        patched.push(content);
                    }
                    b'-' => {
                        if old_left == 0 {
                            return Err(Error::MalformedDiff(
                                "removed line overruns hunk counts".into(),
                            ));
                        }
                        old_left -= 1;
                        buggy.push(body_content(body));
                    }
                    b'+' => {
                        if new_left == 0 {
                            return Err(Error::MalformedDiff(
                                "added line overruns hunk counts".into(),
                            ));
                        }
                        new_left -= 1;
                        patched.push(body_content(body));
                    }
                    other => {
                        return Err(Error::MalformedDiff(format!(
                            "unexpected marker {:?} in hunk body",
                            other as char
                        )));
                    }
                }
            }
        } else if is_file_metadata(line) || line.is_empty() {
            continue;
        } else if line.starts_with('@') {
            return Err(Error::MalformedDiff(format!(
                "unparseable hunk header: {line}"
            )));
        } else if matches!(line.as_bytes()[0], b'+' | b'-') {
            return Err(Error::MalformedDiff(format!(
                "marker line outside any hunk: {line}"
            )));
        }
    }

    if !saw_hunk {
        return Err(Error::MalformedDiff("no hunk header found".into()));
    }
    Ok(SnippetPair {
        buggy_text: buggy.join("\n"),
        patched_text: patched.join("\n"),
    })
}

fn whitespace_stripped(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Drops patches whose diff text matches an earlier one once every
/// whitespace character is removed. Keeps first occurrences, in
/// input order.
pub fn deduplicate(patches: Vec<RawPatch>) -> Vec<RawPatch> {
    let mut seen = HashSet::new();
    patches
        .into_iter()
        .filter(|p| seen.insert(whitespace_stripped(&p.diff_text)))
        .collect()
}

fn text_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        Vec::new()
    } else {
        text.split('\n').collect()
    }
}

/// Longest common subsequence of two line slices, as index pairs.
fn lcs_pairs(a: &[&str], b: &[&str]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut table = vec![0u32; (n + 1) * (m + 1)];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i * (m + 1) + j] = if a[i] == b[j] {
                table[(i + 1) * (m + 1) + j + 1] + 1
            } else {
                table[(i + 1) * (m + 1) + j].max(table[i * (m + 1) + j + 1])
            };
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if table[(i + 1) * (m + 1) + j] >= table[i * (m + 1) + j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    pairs
}

/// Renders a unified diff turning `buggy` into `patched`: one hunk
/// with full context, every body line written as marker, space,
/// content. Parsing the result recovers both texts exactly.
pub fn render_unified_diff(buggy: &str, patched: &str) -> String {
    let old_lines = text_lines(buggy);
    let new_lines = text_lines(patched);
    let common = lcs_pairs(&old_lines, &new_lines);

    let mut body = Vec::new();
    let (mut i, mut j) = (0, 0);
    for &(ci, cj) in &common {
        while i < ci {
            body.push(format!("- {}", old_lines[i]));
            i += 1;
        }
        while j < cj {
            body.push(format!("+ {}", new_lines[j]));
            j += 1;
        }
        body.push(format!("  {}", old_lines[ci]));
        i += 1;
        j += 1;
    }
    while i < old_lines.len() {
        body.push(format!("- {}", old_lines[i]));
        i += 1;
    }
    while j < new_lines.len() {
        body.push(format!("+ {}", new_lines[j]));
        j += 1;
    }

    let old_start = if old_lines.is_empty() { 0 } else { 1 };
    let new_start = if new_lines.is_empty() { 0 } else { 1 };
    let mut out = format!(
        "@@ -{},{} +{},{} @@\n",
        old_start,
        old_lines.len(),
        new_start,
        new_lines.len()
    );
    out.push_str(&body.join("\n"));
    out
}

/// Reads a JSON Lines dataset. Blank lines are skipped; ids must be
/// unique.
pub fn read_jsonl(path: &Path) -> Result<Vec<RawPatch>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut patches = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let patch: RawPatch = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if !ids.insert(patch.id.clone()) {
            return Err(Error::Data(format!(
                "duplicate patch id {:?} in {}",
                patch.id,
                path.display()
            )));
        }
        patches.push(patch);
    }
    Ok(patches)
}

pub fn write_jsonl(path: &Path, patches: &[RawPatch]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for patch in patches {
        serde_json::to_writer(&mut w, patch)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
