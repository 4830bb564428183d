//! Byte-level BPE tokenizer.
//!
//! Ids `0..256` are raw bytes, `256..259` are the specials (pad, bos, eos),
//! and every merge adds one id after that, in training order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub const PAD_ID: u32 = 256;
pub const BOS_ID: u32 = 257;
pub const EOS_ID: u32 = 258;
pub const N_BASE: usize = 259;
pub const DEFAULT_VOCAB_SIZE: usize = 512;

/// Pairs seen fewer times than this are never merged.
const MIN_PAIR_COUNT: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        let attention_mask = ids.iter().map(|&id| id != PAD_ID).collect();
        Self { ids, attention_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Vocab {
    /// Bytes and specials only.
    pub fn base() -> Self {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.extend([Vec::new(), Vec::new(), Vec::new()]);
        Self { tokens, merges: Vec::new(), ranks: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn is_special(id: u32) -> bool {
        (PAD_ID..=EOS_ID).contains(&id)
    }

    fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let id = self.tokens.len() as u32;
        let mut bytes = self.tokens[left as usize].clone();
        bytes.extend_from_slice(&self.tokens[right as usize]);
        self.tokens.push(bytes);
        self.ranks.insert((left, right), self.merges.len() as u32);
        self.merges.push((left, right));
        id
    }

    /// Greedy BPE: repeatedly merge the most frequent adjacent pair. Ties go
    /// to the byte-wise smaller left token, then the smaller right token. A
    /// pair whose concatenation already exists as a token is skipped, so
    /// every token has a distinct byte string.
    pub fn train(corpus: &[u8], target_vocab: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if target_vocab < N_BASE {
            return Err(Error::InvalidConfig(format!("target vocabulary {target_vocab} is below {N_BASE}")));
        }
        let mut vocab = Self::base();
        let mut known: HashMap<Vec<u8>, u32> =
            (0..=255u8).map(|b| (vec![b], b as u32)).collect();
        let mut seq: Vec<u32> = corpus.iter().map(|&b| b as u32).collect();
        while vocab.len() < target_vocab {
            let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
            for w in seq.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += 1;
            }
            let best = counts
                .into_iter()
                .filter(|&(pair, n)| {
                    n >= MIN_PAIR_COUNT && {
                        let mut b = vocab.tokens[pair.0 as usize].clone();
                        b.extend_from_slice(&vocab.tokens[pair.1 as usize]);
                        !known.contains_key(&b)
                    }
                })
                .max_by(|a, b| {
                    a.1.cmp(&b.1).then_with(|| {
                        let ta = (&vocab.tokens[a.0 .0 as usize], &vocab.tokens[a.0 .1 as usize]);
                        let tb = (&vocab.tokens[b.0 .0 as usize], &vocab.tokens[b.0 .1 as usize]);
                        tb.cmp(&ta)
                    })
                });
            let Some(((left, right), _)) = best else { break };
            let id = vocab.push_merge(left, right);
            known.insert(vocab.tokens[id as usize].clone(), id);
            seq = merge_all(&seq, left, right, id);
        }
        Ok(vocab)
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence::new(self.encode_bytes(text.as_bytes()))
    }

    /// Apply merges lowest rank first until none applies.
    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut seq: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        loop {
            let best = seq
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, w[0], w[1])))
                .min();
            let Some((rank, left, right)) = best else { break };
            seq = merge_all(&seq, left, right, N_BASE as u32 + rank);
        }
        seq
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.token_bytes(id).ok_or(Error::UnknownId { id, vocab_size: self.len() })?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Specials decode to nothing; invalid UTF-8 is replaced.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Text format: `pxbpe <version> <vocab size>` then one merge per line as
    /// two space-separated hex byte strings.
    pub fn to_text(&self) -> String {
        let mut s = format!("pxbpe 1 {}\n", self.len());
        for &(l, r) in &self.merges {
            let _ = writeln!(s, "{} {}", hex(&self.tokens[l as usize]), hex(&self.tokens[r as usize]));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::CorruptVocab("missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != "pxbpe" || fields[1] != "1" {
            return Err(Error::CorruptVocab(format!("bad header `{header}`")));
        }
        let size: usize = fields[2].parse().map_err(|_| Error::CorruptVocab("bad vocabulary size".into()))?;
        let mut vocab = Self::base();
        let mut known: HashMap<Vec<u8>, u32> = (0..=255u8).map(|b| (vec![b], b as u32)).collect();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::CorruptVocab(format!("bad merge on line {}", n + 2));
            if parts.len() != 2 {
                return Err(bad());
            }
            let left = *known.get(&unhex(parts[0]).ok_or_else(bad)?).ok_or_else(bad)?;
            let right = *known.get(&unhex(parts[1]).ok_or_else(bad)?).ok_or_else(bad)?;
            let id = vocab.push_merge(left, right);
            known.insert(vocab.tokens[id as usize].clone(), id);
        }
        if vocab.len() != size {
            return Err(Error::CorruptVocab(format!("header says {size} tokens, merges give {}", vocab.len())));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn merge_all(seq: &[u32], left: u32, right: u32, id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
            out.push(id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.is_empty() || !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_on_repeated_byte() {
        let v = Vocab::train(b"aaaa", 260).unwrap();
        assert_eq!(v.merges(), &[(b'a' as u32, b'a' as u32)]);
        assert_eq!(v.len(), 260);
    }

    #[test]
    fn base_size_means_no_merges() {
        let v = Vocab::train(b"hello hello", 259).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.len(), N_BASE);
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(Vocab::train(b"", 300), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn ties_prefer_smaller_left_then_right() {
        // "ab" and "cd" both occur twice; "ab" wins on the left byte
        let v = Vocab::train(b"ab1cd2ab3cd4", 260).unwrap();
        assert_eq!(v.merges()[0], (b'a' as u32, b'b' as u32));
        // same left token, right decides
        let v = Vocab::train(b"xb1xa2xb3xa4", 260).unwrap();
        assert_eq!(v.merges()[0], (b'x' as u32, b'a' as u32));
    }

    #[test]
    fn roundtrip_and_unknown_ids() {
        let v = Vocab::train("the cat sat on the mat. the end".as_bytes(), 300).unwrap();
        let t = v.encode("the mat");
        assert!(t.len() < 7);
        assert_eq!(v.decode(&t.ids).unwrap(), "the mat");
        assert!(v.encode("").is_empty());
        let bad = v.len() as u32 + 1;
        assert!(matches!(v.decode(&[bad]), Err(Error::UnknownId { .. })));
    }

    #[test]
    fn text_format_roundtrip() {
        let v = Vocab::train("banana bandana cabana".as_bytes(), 280).unwrap();
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_text("pxbpe 1 300\n").is_err());
        assert!(Vocab::from_text("nope").is_err());
    }
}
