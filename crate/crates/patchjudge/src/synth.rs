//! Small synthetic corpus: two separable patch families over
//! small generated methods. "Overfitting" patches delete statements
//! (removal-only hunks); "correct" patches bump one literal or swap
//! one operator in place. Generation is deterministic per seed.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::{render_unified_diff, Label, RawPatch};

const TYPES: [&str; 2] = ["int", "long"];
const VARS: [&str; 8] = [
    "count", "total", "limit", "index", "value", "size", "offset", "sum",
];
const METHODS: [&str; 6] = [
    "update",
    "compute",
    "merge",
    "refresh",
    "adjust",
    "normalize",
];

/// One generated method body: the wrapper lines plus a run of
/// single-line statements that patches can target.
struct Method {
    lines: Vec<String>,
    first_stmt: usize,
    stmt_count: usize,
}

fn statement<R: Rng>(rng: &mut R, vars: &[&str]) -> String {
    let v = *vars.choose(rng).expect("var pool is non-empty");
    let w = *vars.choose(rng).expect("var pool is non-empty");
    let k = rng.random_range(1..100);
    match rng.random_range(0..5) {
        0 => format!("    {} {} = {};", TYPES.choose(rng).unwrap(), v, k),
        1 => format!("    {v} += {w};"),
        2 => format!("    {v} -= {k};"),
        3 => format!("    if ({v} > {k}) return {w};"),
        _ => format!("    {v} = {v} * {k};"),
    }
}

fn method<R: Rng>(rng: &mut R) -> Method {
    let name = METHODS.choose(rng).unwrap();
    let ret = VARS.choose(rng).unwrap();
    let stmt_count = rng.random_range(4..=7);
    let mut lines = vec![format!("public int {name}() {{")];
    for _ in 0..stmt_count {
        lines.push(statement(rng, &VARS));
    }
    lines.push(format!("    return {ret};"));
    lines.push("}".to_string());
    Method {
        lines,
        first_stmt: 1,
        stmt_count,
    }
}

/// Replaces the last integer literal in the line, if any, returning
/// the edited line.
fn bump_literal<R: Rng>(rng: &mut R, line: &str) -> Option<String> {
    let bytes = line.as_bytes();
    let mut end = bytes.len();
    while end > 0 && !bytes[end - 1].is_ascii_digit() {
        end -= 1;
    }
    if end == 0 {
        return None;
    }
    let mut start = end;
    while start > 0 && bytes[start - 1].is_ascii_digit() {
        start -= 1;
    }
    let old: u64 = line[start..end].parse().ok()?;
    let new = old + rng.random_range(1..=3);
    Some(format!("{}{}{}", &line[..start], new, &line[end..]))
}

fn swap_operator(line: &str) -> Option<String> {
    for (from, to) in [(" += ", " -= "), (" -= ", " += "), (" > ", " >= ")] {
        if line.contains(from) {
            return Some(line.replacen(from, to, 1));
        }
    }
    None
}

/// A correct-family patch: one statement modified in place.
fn correct_patch<R: Rng>(rng: &mut R) -> (String, String) {
    loop {
        let m = method(rng);
        let target = m.first_stmt + rng.random_range(0..m.stmt_count);
        let edited = if rng.random_range(0..2) == 0 {
            bump_literal(rng, &m.lines[target]).or_else(|| swap_operator(&m.lines[target]))
        } else {
            swap_operator(&m.lines[target]).or_else(|| bump_literal(rng, &m.lines[target]))
        };
        let Some(edited) = edited else { continue };
        let mut patched = m.lines.clone();
        patched[target] = edited;
        return (m.lines.join("\n"), patched.join("\n"));
    }
}

/// An overfitting-family patch: a contiguous run of statements
/// deleted, nothing added.
fn overfitting_patch<R: Rng>(rng: &mut R) -> (String, String) {
    let m = method(rng);
    let deletable = m.stmt_count;
    let run = rng.random_range(1..=3.min(deletable - 1));
    let start = m.first_stmt + rng.random_range(0..=deletable - run);
    let mut patched = m.lines.clone();
    patched.drain(start..start + run);
    (m.lines.join("\n"), patched.join("\n"))
}

/// Generates `n_per_class` records of each family, interleaved
/// correct-then-overfitting, with stable ids.
pub fn generate(n_per_class: usize, seed: u64) -> Vec<RawPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        let (buggy, patched) = correct_patch(&mut rng);
        records.push(RawPatch {
            id: format!("synth-{i:04}-correct"),
            diff_text: render_unified_diff(&buggy, &patched),
            label: Some(Label::Correct),
        });
        let (buggy, patched) = overfitting_patch(&mut rng);
        records.push(RawPatch {
            id: format!("synth-{i:04}-overfit"),
            diff_text: render_unified_diff(&buggy, &patched),
            label: Some(Label::Overfitting),
        });
    }
    records
}
