//! Subword tokenization of code snippets and fixed-length encoding
//! with four truncation strategies.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::SnippetPair;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Which window of an over-long token sequence survives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    Head,
    Tail,
    Mid,
    Hybrid,
}

impl Truncation {
    pub const ALL: [Truncation; 4] = [
        Truncation::Head,
        Truncation::Tail,
        Truncation::Mid,
        Truncation::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Truncation::Head => "head",
            Truncation::Tail => "tail",
            Truncation::Mid => "mid",
            Truncation::Hybrid => "hybrid",
        }
    }
}

impl FromStr for Truncation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(Truncation::Head),
            "tail" => Ok(Truncation::Tail),
            "mid" => Ok(Truncation::Mid),
            "hybrid" => Ok(Truncation::Hybrid),
            other => Err(Error::Config(format!(
                "unknown truncation strategy: {other}"
            ))),
        }
    }
}

/// A fixed-length, masked id sequence for one snippet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub real_len: usize,
}

/// Ordered subword inventory. Index equals token id; the first four
/// entries are always the specials.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    entries: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Vocabulary {
    /// Validates and indexes a token list.
    pub fn from_entries(entries: Vec<String>) -> Result<Self> {
        if entries.len() < SPECIALS.len() {
            return Err(Error::Config(format!(
                "vocabulary needs at least the {} special tokens",
                SPECIALS.len()
            )));
        }
        for (i, expected) in SPECIALS.iter().enumerate() {
            if entries[i] != *expected {
                return Err(Error::Config(format!(
                    "vocabulary entry {i} must be {expected}, found {:?}",
                    entries[i]
                )));
            }
        }
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, token) in entries.iter().enumerate() {
            if lookup.insert(token.clone(), i as u32).is_some() {
                return Err(Error::Config(format!(
                    "duplicate vocabulary token {token:?}"
                )));
            }
        }
        Ok(Vocabulary { entries, lookup })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_to_id(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn id_to_token(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        for token in &self.entries {
            writeln!(w, "{token}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let entries: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()?;
        Self::from_entries(entries)
    }

    /// Splits `text` into subword pieces: lowercase, whitespace
    /// split, alphanumeric runs kept together with punctuation as
    /// single characters, then greedy longest-prefix segmentation.
    /// Continuation pieces carry a `##` prefix; a word that cannot
    /// be segmented becomes one `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let lowered = text.to_lowercase();
        let mut pieces = Vec::new();
        for word in lowered.split_whitespace() {
            for unit in split_units(word) {
                self.segment_into(&unit, &mut pieces);
            }
        }
        pieces
    }

    fn segment_into(&self, word: &str, out: &mut Vec<String>) {
        let chars: Vec<char> = word.chars().collect();
        let mut segmented = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let mut matched = None;
            for end in (pos + 1..=chars.len()).rev() {
                let piece: String = chars[pos..end].iter().collect();
                let candidate = if pos == 0 {
                    piece
                } else {
                    format!("##{piece}")
                };
                if self.lookup.contains_key(&candidate) {
                    matched = Some((candidate, end));
                    break;
                }
            }
            match matched {
                Some((piece, end)) => {
                    segmented.push(piece);
                    pos = end;
                }
                None => {
                    out.push(SPECIALS[UNK as usize].to_string());
                    return;
                }
            }
        }
        out.append(&mut segmented);
    }

    /// Encodes one snippet: tokenize, truncate the content to
    /// `max_len - 2`, wrap in `[CLS]`/`[SEP]`, pad and mask.
    pub fn encode_text(
        &self,
        text: &str,
        strategy: Truncation,
        max_len: usize,
    ) -> Result<TokenSequence> {
        if max_len < 2 {
            return Err(Error::Config(format!(
                "max_len {max_len} leaves no room for [CLS]/[SEP]"
            )));
        }
        let pieces = self.tokenize(text);
        let kept = truncate_tokens(&pieces, strategy, max_len - 2);

        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        for piece in &kept {
            let id = self
                .token_to_id(piece)
                .expect("tokenize only emits vocabulary pieces");
            ids.push(id);
        }
        ids.push(SEP);
        let real_len = ids.len();
        ids.resize(max_len, PAD);

        let mut mask = vec![0u8; max_len];
        for m in mask.iter_mut().take(real_len) {
            *m = 1;
        }
        Ok(TokenSequence {
            ids,
            mask,
            real_len,
        })
    }

    /// Encodes both sides of a pair with one shared strategy and
    /// length budget.
    pub fn encode_pair(
        &self,
        pair: &SnippetPair,
        strategy: Truncation,
        max_len: usize,
    ) -> Result<(TokenSequence, TokenSequence)> {
        let buggy = self.encode_text(&pair.buggy_text, strategy, max_len)?;
        let patched = self.encode_text(&pair.patched_text, strategy, max_len)?;
        Ok((buggy, patched))
    }
}

/// Splits one whitespace-free word into alphanumeric runs and
/// punctuation singletons.
fn split_units(word: &str) -> Vec<String> {
    let mut units = Vec::new();
    let mut run = String::new();
    for c in word.chars() {
        if c.is_alphanumeric() {
            run.push(c);
        } else {
            if !run.is_empty() {
                units.push(std::mem::take(&mut run));
            }
            units.push(c.to_string());
        }
    }
    if !run.is_empty() {
        units.push(run);
    }
    units
}

/// Keeps at most `max_len` tokens according to `strategy`. Callers
/// must pass `max_len >= 2`; [`truncate_tokens`] is the unchecked
/// variant used internally where a zero budget is meaningful.
pub fn truncate(tokens: &[String], strategy: Truncation, max_len: usize) -> Result<Vec<String>> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len {max_len} is below 2")));
    }
    Ok(truncate_tokens(tokens, strategy, max_len))
}

fn truncate_tokens(tokens: &[String], strategy: Truncation, max_len: usize) -> Vec<String> {
    let len = tokens.len();
    if len <= max_len {
        return tokens.to_vec();
    }
    match strategy {
        Truncation::Head => tokens[..max_len].to_vec(),
        Truncation::Tail => tokens[len - max_len..].to_vec(),
        Truncation::Mid => {
            let start = (len - max_len) / 2;
            tokens[start..start + max_len].to_vec()
        }
        Truncation::Hybrid => {
            let half = max_len / 2;
            let mut out = Vec::with_capacity(2 * half);
            out.extend_from_slice(&tokens[..half]);
            out.extend_from_slice(&tokens[len - half..]);
            out
        }
    }
}

/// Deterministic frequency-based vocabulary over a corpus: specials,
/// every distinct character (plus its `##` continuation form), then
/// whole words by descending frequency. Guarantees that tokenizing
/// any corpus text never needs `[UNK]`.
pub fn build_vocab(corpus: &[String], target_size: usize) -> Result<Vocabulary> {
    let mut chars = BTreeSet::new();
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    for text in corpus {
        let lowered = text.to_lowercase();
        for word in lowered.split_whitespace() {
            for unit in split_units(word) {
                for c in unit.chars() {
                    chars.insert(c);
                }
                *word_counts.entry(unit).or_insert(0) += 1;
            }
        }
    }

    let required = SPECIALS.len() + 2 * chars.len();
    if target_size < required {
        return Err(Error::Config(format!(
            "target_size {target_size} below minimum {required} \
             (specials plus two forms of each of {} characters)",
            chars.len()
        )));
    }

    let mut entries: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    for &c in &chars {
        entries.push(c.to_string());
    }
    for &c in &chars {
        entries.push(format!("##{c}"));
    }

    let mut words: Vec<(String, u64)> = word_counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let present: BTreeSet<&String> = entries.iter().collect();
    let mut extra: Vec<String> = Vec::new();
    for (word, _) in words {
        if entries.len() + extra.len() >= target_size {
            break;
        }
        if !present.contains(&word) {
            extra.push(word);
        }
    }
    entries.extend(extra);
    Vocabulary::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_with(tokens: &[&str]) -> Vocabulary {
        let mut entries: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        entries.extend(tokens.iter().map(|s| s.to_string()));
        Vocabulary::from_entries(entries).unwrap()
    }

    fn words(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn greedy_prefix_with_continuation() {
        let vocab = vocab_with(&["int", "##eger"]);
        assert_eq!(vocab.tokenize("Integer"), ["int", "##eger"]);
    }

    #[test]
    fn unmatched_word_becomes_unk() {
        let vocab = vocab_with(&["int"]);
        assert_eq!(vocab.tokenize("float"), ["[UNK]"]);
    }

    #[test]
    fn dead_end_mid_word_becomes_unk() {
        let vocab = vocab_with(&["int"]);
        assert_eq!(vocab.tokenize("integer"), ["[UNK]"]);
    }

    #[test]
    fn punctuation_splits_to_singletons() {
        let vocab = vocab_with(&["a", "b", "+"]);
        assert_eq!(vocab.tokenize("a+b"), ["a", "+", "b"]);
    }

    #[test]
    fn longest_prefix_wins() {
        let vocab = vocab_with(&["a", "ab", "##c", "##bc"]);
        assert_eq!(vocab.tokenize("abc"), ["ab", "##c"]);
    }

    #[test]
    fn truncate_under_limit_is_identity() {
        let tokens = words(100);
        for strategy in Truncation::ALL {
            assert_eq!(truncate_tokens(&tokens, strategy, 512), tokens);
        }
    }

    #[test]
    fn truncate_head_keeps_first_window() {
        let tokens = words(600);
        let out = truncate_tokens(&tokens, Truncation::Head, 512);
        assert_eq!(out.as_slice(), &tokens[..512]);
    }

    #[test]
    fn truncate_tail_keeps_last_window() {
        let tokens = words(600);
        let out = truncate_tokens(&tokens, Truncation::Tail, 512);
        assert_eq!(out.as_slice(), &tokens[88..600]);
    }

    #[test]
    fn truncate_mid_uses_floor_offset() {
        let tokens = words(600);
        let out = truncate_tokens(&tokens, Truncation::Mid, 512);
        assert_eq!(out.as_slice(), &tokens[44..556]);
    }

    #[test]
    fn truncate_hybrid_joins_both_ends() {
        let tokens = words(600);
        let out = truncate_tokens(&tokens, Truncation::Hybrid, 512);
        assert_eq!(out.len(), 512);
        assert_eq!(out[..256], tokens[..256]);
        assert_eq!(out[256..], tokens[344..600]);
    }

    #[test]
    fn truncate_rejects_tiny_max_len() {
        let tokens = words(5);
        assert!(truncate(&tokens, Truncation::Head, 1).is_err());
    }

    #[test]
    fn unknown_strategy_string_is_config_error() {
        assert!(matches!(
            "middle".parse::<Truncation>(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn encode_empty_snippet() {
        let vocab = vocab_with(&["a"]);
        let seq = vocab.encode_text("", Truncation::Head, 8).unwrap();
        assert_eq!(seq.ids, [CLS, SEP, PAD, PAD, PAD, PAD, PAD, PAD]);
        assert_eq!(seq.mask, [1, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(seq.real_len, 2);
    }

    #[test]
    fn encode_saturates_at_max_len() {
        let vocab = vocab_with(&["a"]);
        let text = vec!["a"; 1000].join(" ");
        let seq = vocab.encode_text(&text, Truncation::Head, 512).unwrap();
        assert_eq!(seq.real_len, 512);
        assert_eq!(seq.ids.len(), 512);
        assert_eq!(seq.ids[0], CLS);
        assert_eq!(seq.ids[511], SEP);
        assert!(seq.mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn encode_pair_sides_are_independent() {
        let vocab = vocab_with(&["a", "b"]);
        let pair = SnippetPair {
            buggy_text: "a a a".into(),
            patched_text: "b".into(),
        };
        let (buggy, patched) = vocab.encode_pair(&pair, Truncation::Head, 16).unwrap();
        assert_eq!(buggy.ids.len(), 16);
        assert_eq!(patched.ids.len(), 16);
        assert_eq!(buggy.real_len, 5);
        assert_eq!(patched.real_len, 3);
    }

    #[test]
    fn mask_zero_exactly_at_padding() {
        let vocab = vocab_with(&["a"]);
        let seq = vocab.encode_text("a a", Truncation::Head, 6).unwrap();
        for (i, (&id, &m)) in seq.ids.iter().zip(&seq.mask).enumerate() {
            if i < seq.real_len {
                assert_eq!(m, 1);
            } else {
                assert_eq!(m, 0);
                assert_eq!(id, PAD);
            }
        }
    }

    #[test]
    fn build_vocab_small_corpus() {
        let corpus = vec!["aa aa b".to_string()];
        let vocab = build_vocab(&corpus, 12).unwrap();
        for token in ["a", "b", "##a", "aa"] {
            assert!(vocab.token_to_id(token).is_some(), "missing {token}");
        }
        assert_eq!(vocab.token_to_id("[PAD]"), Some(PAD));
        assert!(vocab.len() <= 12);
    }

    #[test]
    fn build_vocab_is_deterministic() {
        let corpus = vec!["x = y + 1".to_string(), "y = x * 2".to_string()];
        let a = build_vocab(&corpus, 40).unwrap();
        let b = build_vocab(&corpus, 40).unwrap();
        let ta: Vec<_> = (0..a.len() as u32)
            .map(|i| a.id_to_token(i).unwrap().to_string())
            .collect();
        let tb: Vec<_> = (0..b.len() as u32)
            .map(|i| b.id_to_token(i).unwrap().to_string())
            .collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn build_vocab_covers_corpus_without_unk() {
        let corpus = vec![
            "int foo(int x) { return x + 1; }".to_string(),
            "if (a == b) return 0;".to_string(),
        ];
        let vocab = build_vocab(&corpus, 200).unwrap();
        for text in &corpus {
            let pieces = vocab.tokenize(text);
            assert!(
                pieces.iter().all(|p| p != "[UNK]"),
                "unexpected [UNK] in {pieces:?}"
            );
        }
    }

    #[test]
    fn build_vocab_rejects_tiny_target() {
        let corpus = vec!["abcdefgh".to_string()];
        assert!(matches!(build_vocab(&corpus, 10), Err(Error::Config(_))));
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = build_vocab(&[String::from("x = y + 1")], 30).unwrap();
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.len(), vocab.len());
        assert_eq!(loaded.token_to_id("x"), vocab.token_to_id("x"));
    }

    #[test]
    fn vocab_load_rejects_missing_specials() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "[PAD]\n[UNK]\n[CLS]\nx\n").unwrap();
        assert!(matches!(Vocabulary::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn vocab_rejects_duplicates() {
        let mut entries: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        entries.push("a".into());
        entries.push("a".into());
        assert!(matches!(
            Vocabulary::from_entries(entries),
            Err(Error::Config(_))
        ));
    }
}
