//! Tokenizer interface and a byte-level merge tokenizer used for tests and demos.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Index into a tokenizer vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub trait Tokenizer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn encode(&self, text: &str) -> Vec<TokenId>;

    /// Decodes a token list. Token lists that do not end on a character
    /// boundary decode lossily; callers that need exact text should trim to
    /// a boundary first (see [`Tokenizer::decode_exact`]).
    fn decode(&self, tokens: &[TokenId]) -> String;

    /// Returns `None` when the token bytes are not valid UTF-8.
    fn decode_exact(&self, tokens: &[TokenId]) -> Option<String>;
}

/// Byte-level tokenizer with an ordered table of pair merges.
///
/// Ids `0..256` are raw bytes. Merge `k` creates id `256 + k`. Encoding
/// applies the merge rules in table order; each rule scans the sequence left
/// to right and replaces every non-overlapping occurrence of its pair.
#[derive(Debug, Clone)]
pub struct ToyMergeTokenizer {
    merges: Vec<(TokenId, TokenId)>,
    pieces: Vec<Vec<u8>>,
}

/// Merge table used by [`ToyMergeTokenizer::default`].
///
/// `>` + `\n` is ranked ahead of `\n` + `<`, so a tool tag closing an action
/// fuses with the newline that opens the next observation when the two are
/// tokenized jointly.
pub const DEFAULT_MERGES: &[(&str, &str)] = &[
    (">", "\n"),
    ("\n", "<"),
    ("<", "/"),
    ("e", "r"),
    ("t", "h"),
    ("i", "n"),
    ("o", "n"),
    ("a", "n"),
    ("r", "e"),
    ("s", "t"),
    ("e", "s"),
    ("o", "u"),
    ("th", "e"),
    (" ", "t"),
    (" ", "a"),
    ("p", "y"),
    ("py", "th"),
    ("pyth", "on"),
    ("</", "python"),
    ("</python", ">"),
    ("</python", ">\n"),
    ("<", "python"),
    ("<python", ">"),
    ("re", "s"),
    ("res", "u"),
    ("l", "t"),
    ("resu", "lt"),
    ("<", "result"),
    ("\n<", "result"),
    ("`", "`"),
    ("``", "`"),
    ("s", "e"),
    ("se", "a"),
    ("sea", "r"),
    ("sear", "c"),
    ("searc", "h"),
    ("</", "search"),
    ("</search", ">"),
    ("s", "q"),
    ("sq", "l"),
    ("</", "sql"),
    ("</sql", ">"),
];

impl Default for ToyMergeTokenizer {
    fn default() -> Self {
        Self::from_string_merges(DEFAULT_MERGES).expect("default merge table is well formed")
    }
}

impl ToyMergeTokenizer {
    /// Builds a tokenizer from merges given as already-mergeable strings.
    /// Each side must be a byte or a piece produced by an earlier merge.
    pub fn from_string_merges(table: &[(&str, &str)]) -> Result<Self, String> {
        let mut tok = Self { merges: Vec::new(), pieces: (0..=255u8).map(|b| vec![b]).collect() };
        let mut lookup: HashMap<Vec<u8>, TokenId> =
            (0..256u32).map(|b| (vec![b as u8], TokenId(b))).collect();
        for (left, right) in table {
            let l = *lookup
                .get(left.as_bytes())
                .ok_or_else(|| format!("merge side {left:?} is not a known piece"))?;
            let r = *lookup
                .get(right.as_bytes())
                .ok_or_else(|| format!("merge side {right:?} is not a known piece"))?;
            let id = tok.push_merge(l, r);
            let piece = tok.pieces[id.index()].clone();
            lookup.entry(piece).or_insert(id);
        }
        Ok(tok)
    }

    fn push_merge(&mut self, left: TokenId, right: TokenId) -> TokenId {
        let id = TokenId((256 + self.merges.len()) as u32);
        let mut piece = self.pieces[left.index()].clone();
        piece.extend_from_slice(&self.pieces[right.index()]);
        self.merges.push((left, right));
        self.pieces.push(piece);
        id
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn piece(&self, id: TokenId) -> Option<&[u8]> {
        self.pieces.get(id.index()).map(Vec::as_slice)
    }
}

impl Tokenizer for ToyMergeTokenizer {
    fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut seq: Vec<TokenId> = text.bytes().map(|b| TokenId(b as u32)).collect();
        for (k, &(l, r)) in self.merges.iter().enumerate() {
            if seq.len() < 2 {
                break;
            }
            let merged = TokenId((256 + k) as u32);
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == l && seq[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            seq = out;
        }
        seq
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.bytes_of(tokens)).into_owned()
    }

    fn decode_exact(&self, tokens: &[TokenId]) -> Option<String> {
        String::from_utf8(self.bytes_of(tokens)).ok()
    }
}

impl ToyMergeTokenizer {
    fn bytes_of(&self, tokens: &[TokenId]) -> Vec<u8> {
        tokens
            .iter()
            .filter_map(|t| self.pieces.get(t.index()))
            .flat_map(|p| p.iter().copied())
            .collect()
    }
}
