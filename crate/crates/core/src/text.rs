//! Lexical text augmentation: synonym or antonym substitution with optional
//! character-level noise.
//!
//! Tokens are maximal runs of non-whitespace. Leading and trailing
//! non-alphanumeric characters are detached before lookup and reattached
//! afterwards, and the separators between tokens are reproduced exactly.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LexType {
    Synonym,
    Antonym,
}

impl LexType {
    pub fn as_str(self) -> &'static str {
        match self {
            LexType::Synonym => "synonym",
            LexType::Antonym => "antonym",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LexEntry {
    pub syn: Vec<String>,
    pub ant: Vec<String>,
}

/// Lowercase word → synonym and antonym lists. No word lists itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LexicalCache {
    map: BTreeMap<String, LexEntry>,
}

impl LexicalCache {
    /// Keys are lowercased (entries sharing a lowercase key are merged),
    /// self-references and repeated alternatives are dropped.
    pub fn new(entries: impl IntoIterator<Item = (String, LexEntry)>) -> Self {
        let mut map: BTreeMap<String, LexEntry> = BTreeMap::new();
        for (word, entry) in entries {
            let key = word.to_lowercase();
            let slot = map.entry(key.clone()).or_default();
            for (src, dst) in [(entry.syn, &mut slot.syn), (entry.ant, &mut slot.ant)] {
                for alt in src {
                    if alt.to_lowercase() != key && !dst.contains(&alt) {
                        dst.push(alt);
                    }
                }
            }
        }
        Self { map }
    }

    pub fn get(&self, word: &str) -> Option<&LexEntry> {
        self.map.get(&word.to_lowercase())
    }

    pub fn alternatives(&self, word: &str, ty: LexType) -> &[String] {
        match (self.get(word), ty) {
            (Some(e), LexType::Synonym) => &e.syn,
            (Some(e), LexType::Antonym) => &e.ant,
            (None, _) => &[],
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LexEntry)> {
        self.map.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharOp {
    Insert,
    Delete,
    Replace,
    Swap,
}

/// One recorded character edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharEdit {
    pub op: CharOp,
    pub pos: usize,
    pub ch: Option<char>,
}

const LETTERS: &[u8; 26] = b"abcdefghijklmnopqrstuvwxyz";

/// Applies `edit` to `w` (positions count chars). Delete and swap on a
/// single-char word are the identity.
pub fn apply_char_edit(w: &str, edit: CharEdit) -> String {
    let mut chars: Vec<char> = w.chars().collect();
    let len = chars.len();
    match edit.op {
        CharOp::Insert => chars.insert(edit.pos.min(len), edit.ch.expect("insert char")),
        CharOp::Delete if len > 1 => {
            chars.remove(edit.pos.min(len - 1));
        }
        CharOp::Swap if len > 1 => {
            let p = edit.pos.min(len - 2);
            chars.swap(p, p + 1);
        }
        CharOp::Replace if len > 0 => chars[edit.pos.min(len - 1)] = edit.ch.expect("replace char"),
        _ => {}
    }
    chars.into_iter().collect()
}

/// Draws a uniform operation and position, then applies it.
pub fn char_edit(w: &str, rng: &mut Rng) -> String {
    let edit = draw_char_edit(w, rng);
    apply_char_edit(w, edit)
}

fn draw_char_edit(w: &str, rng: &mut Rng) -> CharEdit {
    let chars: Vec<char> = w.chars().collect();
    let len = chars.len();
    let op = [CharOp::Insert, CharOp::Delete, CharOp::Replace, CharOp::Swap][rng.below(4)];
    match op {
        CharOp::Insert => {
            let pos = rng.below(len + 1);
            let ch = LETTERS[rng.below(26)] as char;
            CharEdit { op, pos, ch: Some(ch) }
        }
        CharOp::Replace => {
            let pos = rng.below(len.max(1));
            let orig = chars.get(pos).copied();
            // uniform over the letters that differ from the original
            let pool: Vec<char> = LETTERS.iter().map(|&b| b as char).filter(|&c| Some(c) != orig).collect();
            let ch = pool[rng.below(pool.len())];
            CharEdit { op, pos, ch: Some(ch) }
        }
        CharOp::Delete | CharOp::Swap => CharEdit {
            op,
            pos: rng.below(len.max(1)),
            ch: None,
        },
    }
}

/// One substitution made by [`text_augment_traced`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replacement {
    pub token: usize,
    pub original: String,
    pub replacement: String,
    pub edit: Option<CharEdit>,
}

struct Token<'t> {
    start: usize,
    end: usize,
    core: (usize, usize),
    text: &'t str,
}

fn tokenize(t: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in t.char_indices().chain(core::iter::once((t.len(), ' '))) {
        match (start, c.is_whitespace()) {
            (None, false) => start = Some(i),
            (Some(s), true) => {
                let text = &t[s..i];
                let lead = text.len() - text.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
                let trail = text.trim_end_matches(|c: char| !c.is_alphanumeric()).len();
                let core = if lead >= trail { (0, 0) } else { (lead, trail) };
                out.push(Token { start: s, end: i, core, text });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Number of whitespace-delimited tokens.
pub fn token_count(t: &str) -> usize {
    t.split_whitespace().count()
}

fn usable(alts: &[String]) -> Vec<&str> {
    alts.iter()
        .map(String::as_str)
        .filter(|a| !a.is_empty() && !a.chars().any(char::is_whitespace))
        .collect()
}

fn eligible(core: &str, cache: &LexicalCache, ty: LexType) -> bool {
    core.chars().count() >= 3
        && core.chars().all(char::is_alphabetic)
        && !usable(cache.alternatives(core, ty)).is_empty()
}

fn match_case(original: &str, alt: &str) -> String {
    match (original.chars().next(), alt.chars().next()) {
        (Some(o), Some(a)) if o.is_uppercase() && !a.is_uppercase() => {
            let mut s: String = a.to_uppercase().collect();
            s.push_str(&alt[a.len_utf8()..]);
            s
        }
        _ => alt.to_string(),
    }
}

/// Replaces `⌊α·|candidates|⌋` eligible tokens by cache alternatives; each
/// replacement receives one character edit with probability `p_char`.
pub fn text_augment(t: &str, ty: LexType, alpha: f64, p_char: f64, cache: &LexicalCache, rng: &mut Rng) -> String {
    text_augment_traced(t, ty, alpha, p_char, cache, rng).0
}

pub fn text_augment_traced(
    t: &str,
    ty: LexType,
    alpha: f64,
    p_char: f64,
    cache: &LexicalCache,
    rng: &mut Rng,
) -> (String, Vec<Replacement>) {
    let tokens = tokenize(t);
    let candidates: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, tok)| eligible(&tok.text[tok.core.0..tok.core.1], cache, ty))
        .map(|(k, _)| k)
        .collect();
    let count = libm::floor(alpha * candidates.len() as f64) as usize;
    if count == 0 {
        return (t.to_string(), Vec::new());
    }
    let mut picked: Vec<usize> = rng
        .sample_indices(candidates.len(), count)
        .into_iter()
        .map(|c| candidates[c])
        .collect();
    picked.sort_unstable();

    let mut trace = Vec::with_capacity(picked.len());
    for &k in &picked {
        let tok = &tokens[k];
        let core = &tok.text[tok.core.0..tok.core.1];
        let alts = usable(cache.alternatives(core, ty));
        let alt = match_case(core, alts[rng.below(alts.len())]);
        let edit = rng.bernoulli(p_char).then(|| draw_char_edit(&alt, rng));
        let replacement = match edit {
            Some(e) => apply_char_edit(&alt, e),
            None => alt,
        };
        trace.push(Replacement {
            token: k,
            original: core.to_string(),
            replacement,
            edit,
        });
    }

    let mut out = String::with_capacity(t.len() + 16);
    let mut cursor = 0;
    let mut next = trace.iter().peekable();
    for (k, tok) in tokens.iter().enumerate() {
        out.push_str(&t[cursor..tok.start]);
        match next.peek() {
            Some(r) if r.token == k => {
                out.push_str(&tok.text[..tok.core.0]);
                out.push_str(&r.replacement);
                out.push_str(&tok.text[tok.core.1..]);
                next.next();
            }
            _ => out.push_str(tok.text),
        }
        cursor = tok.end;
    }
    out.push_str(&t[cursor..]);
    (out, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cache() -> LexicalCache {
        LexicalCache::new([
            (
                "Efficient".to_string(),
                LexEntry {
                    syn: vec!["faster".into(), "efficient".into()],
                    ant: vec!["inefficient".into()],
                },
            ),
            (
                "advances".to_string(),
                LexEntry {
                    syn: vec!["progress".into(), "look into".into()],
                    ant: vec![],
                },
            ),
        ])
    }

    #[test]
    fn cache_normalizes() {
        let c = cache();
        assert_eq!(c.alternatives("EFFICIENT", LexType::Synonym), &["faster".to_string()]);
        assert!(c.alternatives("advances", LexType::Antonym).is_empty());
    }

    #[test]
    fn primitive_edits() {
        let e = |op, pos| CharEdit { op, pos, ch: Some('z') };
        assert_eq!(apply_char_edit("ab", e(CharOp::Delete, 0)), "b");
        assert_eq!(apply_char_edit("ab", e(CharOp::Swap, 0)), "ba");
        assert_eq!(apply_char_edit("abc", e(CharOp::Swap, 2)), "acb");
        assert_eq!(apply_char_edit("a", e(CharOp::Delete, 0)), "a");
        assert_eq!(apply_char_edit("a", e(CharOp::Swap, 0)), "a");
        assert_eq!(apply_char_edit("ab", e(CharOp::Insert, 2)), "abz");
        assert_eq!(apply_char_edit("ab", e(CharOp::Replace, 1)), "az");
    }

    #[test]
    fn separators_survive() {
        let c = cache();
        let t = "  Efficient,\tadvances!\n(efficient) ok ";
        let mut rng = Rng::new(1, "text");
        let (out, trace) = text_augment_traced(t, LexType::Synonym, 1.0, 0.0, &c, &mut rng);
        assert_eq!(trace.len(), 3);
        assert_eq!(out, "  Faster,\tprogress!\n(faster) ok ");
    }

    #[test]
    fn zero_alpha_is_identity() {
        let c = cache();
        let mut rng = Rng::new(1, "text");
        let t = "Efficient advances everywhere";
        assert_eq!(text_augment(t, LexType::Synonym, 0.0, 1.0, &c, &mut rng), t);
    }
}
