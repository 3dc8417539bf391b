//! Deterministic byte-level BPE tokenizer.
//!
//! Text is split on whitespace, every word starts as its UTF-8 bytes and the
//! learned merge table is applied in rank order. Byte tokens make the
//! vocabulary total, so no input is ever out of vocabulary.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
/// Number of reserved ids before the byte tokens.
pub const NUM_SPECIAL: u32 = 3;
/// Id of the first merged token.
pub const FIRST_MERGE: u32 = NUM_SPECIAL + 256;

#[inline]
pub fn byte_token(b: u8) -> u32 {
    NUM_SPECIAL + b as u32
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TokenizerFile {
    merges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TokenizerFile", into = "TokenizerFile")]
pub struct Tokenizer {
    merges: Vec<(u32, u32)>,
    ranks: BTreeMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

impl From<TokenizerFile> for Tokenizer {
    fn from(f: TokenizerFile) -> Self {
        Tokenizer::from_merges(f.merges)
    }
}

impl From<Tokenizer> for TokenizerFile {
    fn from(t: Tokenizer) -> Self {
        TokenizerFile { merges: t.merges }
    }
}

/// Tokens of a text together with the word-boundary flags needed to turn a
/// window of them back into text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub ids: Vec<u32>,
    pub word_start: Vec<bool>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::from_merges(Vec::new())
    }
}

impl Tokenizer {
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Self {
        let mut pieces: Vec<Vec<u8>> = Vec::with_capacity(FIRST_MERGE as usize + merges.len());
        pieces.push(b"<pad>".to_vec());
        pieces.push(b"<s>".to_vec());
        pieces.push(b"</s>".to_vec());
        for b in 0..=255u8 {
            pieces.push(alloc::vec![b]);
        }
        let mut ranks = BTreeMap::new();
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let mut p = pieces[a as usize].clone();
            p.extend_from_slice(&pieces[b as usize]);
            pieces.push(p);
            ranks.insert((a, b), rank as u32);
        }
        Tokenizer { merges, ranks, pieces }
    }

    /// Learns up to `vocab_size - FIRST_MERGE` merges from `texts`.
    ///
    /// The most frequent adjacent pair wins each round; ties go to the
    /// smallest pair so training is deterministic. Pairs seen once are never
    /// merged.
    pub fn train<'a, I>(texts: I, vocab_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&'a str, u64> = BTreeMap::new();
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, u64)> = counts
            .into_iter()
            .map(|(w, c)| (w.bytes().map(byte_token).collect(), c))
            .collect();

        let mut merges = Vec::new();
        let budget = vocab_size.saturating_sub(FIRST_MERGE as usize);
        while merges.len() < budget {
            let mut pair_counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
            for (syms, c) in &words {
                for win in syms.windows(2) {
                    *pair_counts.entry((win[0], win[1])).or_insert(0) += c;
                }
            }
            let best = pair_counts
                .iter()
                .fold(None::<((u32, u32), u64)>, |acc, (&p, &c)| match acc {
                    Some((_, bc)) if bc >= c => acc,
                    _ => Some((p, c)),
                });
            let Some((pair, count)) = best else { break };
            if count < 2 {
                break;
            }
            let new_id = FIRST_MERGE + merges.len() as u32;
            merges.push(pair);
            for (syms, _) in words.iter_mut() {
                merge_pair(syms, pair, new_id);
            }
        }
        Tokenizer::from_merges(merges)
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = word.bytes().map(byte_token).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            merge_pair(&mut syms, pair, FIRST_MERGE + rank);
        }
        out.extend_from_slice(&syms);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            self.encode_word(w, &mut out);
        }
        out
    }

    pub fn encode_stream(&self, text: &str) -> TokenStream {
        let mut ids = Vec::new();
        let mut word_start = Vec::new();
        for w in text.split_whitespace() {
            let before = ids.len();
            self.encode_word(w, &mut ids);
            word_start.push(true);
            word_start.resize(ids.len(), false);
            debug_assert!(ids.len() > before);
        }
        TokenStream { ids, word_start }
    }

    /// Number of tokens `text` encodes to.
    pub fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }

    /// Re-joins `stream[start..end]` as text. Tokens flagged as word starts
    /// are separated by a single space.
    pub fn decode_span(&self, stream: &TokenStream, start: usize, end: usize) -> String {
        let mut bytes = Vec::new();
        for i in start..end {
            if i > start && stream.word_start[i] {
                bytes.push(b' ');
            }
            if let Some(p) = self.piece(stream.ids[i]) {
                bytes.extend_from_slice(p);
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

fn merge_pair(syms: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    if syms.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    *syms = out;
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn untrained_tokenizer_is_bytewise() {
        let t = Tokenizer::default();
        assert_eq!(t.encode("ab c"), vec![byte_token(b'a'), byte_token(b'b'), byte_token(b'c')]);
        assert_eq!(t.vocab_size(), FIRST_MERGE as usize);
    }

    #[test]
    fn learns_frequent_pairs() {
        let text = "the the the then there cat";
        let t = Tokenizer::train([text], 300);
        assert!(t.merges().len() >= 2);
        // "the" is frequent enough to become a single token.
        assert_eq!(t.encode("the").len(), 1);
        // unseen words still encode through bytes
        assert_eq!(t.encode("zq").len(), 2);
    }

    #[test]
    fn span_round_trip() {
        let t = Tokenizer::train(["hello world hello worlds hello"], 280);
        let s = t.encode_stream("hello worlds");
        let text = t.decode_span(&s, 0, s.len());
        assert_eq!(text, "hello worlds");
        assert_eq!(t.encode(&text), s.ids);
    }

    #[test]
    fn serde_keeps_merges() {
        let t = Tokenizer::train(["aa aa ab ab ab"], 270);
        let file: TokenizerFile = t.clone().into();
        let back: Tokenizer = file.into();
        assert_eq!(back, t);
    }
}
