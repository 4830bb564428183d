use std::collections::{HashMap, HashSet};

use pixeltext::tokenizer::{TokenSequence, Vocab, BOS_ID, EOS_ID, N_BASE, PAD_ID};
use proptest::prelude::*;

/// Straightforward reference trainer over byte strings.
fn reference_merges(corpus: &[u8], target: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut seq: Vec<Vec<u8>> = corpus.iter().map(|&b| vec![b]).collect();
    let mut known: HashSet<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::new();
    while N_BASE + merges.len() < target {
        let mut counts: HashMap<(Vec<u8>, Vec<u8>), usize> = HashMap::new();
        for w in seq.windows(2) {
            *counts.entry((w[0].clone(), w[1].clone())).or_default() += 1;
        }
        let mut cands: Vec<((Vec<u8>, Vec<u8>), usize)> = counts
            .into_iter()
            .filter(|((a, b), n)| *n >= 2 && !known.contains(&[a.as_slice(), b.as_slice()].concat()))
            .collect();
        cands.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
        let Some(((a, b), _)) = cands.into_iter().next() else { break };
        let merged = [a.as_slice(), b.as_slice()].concat();
        let mut out = Vec::with_capacity(seq.len());
        let mut i = 0;
        while i < seq.len() {
            if i + 1 < seq.len() && seq[i] == a && seq[i + 1] == b {
                out.push(merged.clone());
                i += 2;
            } else {
                out.push(seq[i].clone());
                i += 1;
            }
        }
        seq = out;
        known.insert(merged);
        merges.push((a, b));
    }
    merges
}

fn merge_bytes(v: &Vocab) -> Vec<(Vec<u8>, Vec<u8>)> {
    v.merges()
        .iter()
        .map(|&(l, r)| (v.token_bytes(l).unwrap().to_vec(), v.token_bytes(r).unwrap().to_vec()))
        .collect()
}

#[test]
fn specials_sit_after_bytes() {
    assert_eq!((PAD_ID, BOS_ID, EOS_ID, N_BASE), (256, 257, 258, 259));
    let t = TokenSequence::new(vec![5, PAD_ID, 7]);
    assert_eq!(t.attention_mask, vec![true, false, true]);
}

#[test]
fn file_roundtrip() {
    let v = Vocab::train(b"low lower lowest newer wider", 280).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    v.save(&path).unwrap();
    let back = Vocab::load(&path).unwrap();
    assert_eq!(back.merges(), v.merges());
    assert!(v.to_text().starts_with(&format!("pxbpe 1 {}", v.len())));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn training_matches_reference(corpus in "[abc ]{2,60}", extra in 1usize..24) {
        let v = Vocab::train(corpus.as_bytes(), N_BASE + extra).unwrap();
        prop_assert_eq!(merge_bytes(&v), reference_merges(corpus.as_bytes(), N_BASE + extra));
    }

    #[test]
    fn encode_decode_roundtrip(train in "[a-e ]{4,80}", text in any::<String>()) {
        let v = Vocab::train(train.as_bytes(), 300).unwrap();
        let ids = v.encode(&text).ids;
        prop_assert!(ids.iter().all(|&id| (id as usize) < v.len() && !Vocab::is_special(id)));
        prop_assert_eq!(v.decode(&ids).unwrap(), text);
    }
}
