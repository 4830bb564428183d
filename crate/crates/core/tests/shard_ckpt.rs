use std::io::Cursor;

use pixeltext::model::{Checkpoint, CheckpointMeta, ModelConfig, Params};
use pixeltext::shard::{read_shard, write_shard, Modality, ShardReader, ShardRecord, ShardWriter};
use pixeltext::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PX: u16 = 2;
const CH: u8 = 3;
const DIM: usize = 12;

fn record() -> impl Strategy<Value = ShardRecord> {
    (0u8..3, 0usize..6, prop::collection::vec(any::<u32>(), 0..9)).prop_flat_map(|(tag, n_patches, tokens)| {
        let modality = Modality::from_tag(tag).unwrap();
        let (n_patches, tokens) = match modality {
            Modality::Text => (0, tokens),
            Modality::Pixel => (n_patches, vec![]),
            Modality::Pair => (n_patches, tokens),
        };
        let n = n_patches + tokens.len();
        (
            prop::collection::vec(any::<u8>(), n_patches * DIM),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(move |(patches, attention_mask, loss_mask)| ShardRecord {
                modality,
                n_patches,
                patches,
                tokens: tokens.clone(),
                attention_mask,
                loss_mask,
            })
    })
}

fn encode(records: &[ShardRecord]) -> Vec<u8> {
    let mut w = ShardWriter::new(Cursor::new(Vec::new()), PX, CH).unwrap();
    for r in records {
        w.push(r).unwrap();
    }
    w.finish().unwrap().into_inner()
}

fn decode(bytes: &[u8]) -> pixeltext::Result<Vec<ShardRecord>> {
    ShardReader::new(Cursor::new(bytes))?.collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shard_round_trip(records in prop::collection::vec(record(), 0..8)) {
        let bytes = encode(&records);
        let reader = ShardReader::new(Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(reader.header().record_count as usize, records.len());
        prop_assert_eq!(reader.header().patch_dim(), DIM);
        prop_assert_eq!(decode(&bytes).unwrap(), records);
    }

    #[test]
    fn truncated_shard_is_corrupt(records in prop::collection::vec(record(), 1..5), cut in 1usize..64) {
        let bytes = encode(&records);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(matches!(decode(&bytes[..keep]), Err(Error::CorruptShard(_))));
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pxshard");
    let recs = vec![ShardRecord {
        modality: Modality::Pair,
        n_patches: 1,
        patches: (0..DIM as u8).collect(),
        tokens: vec![7, 258],
        attention_mask: vec![true, true, false],
        loss_mask: vec![true, false, true],
    }];
    write_shard(&path, PX, CH, &recs).unwrap();
    let (header, back) = read_shard(&path).unwrap();
    assert_eq!((header.patch_px, header.channels, header.record_count), (PX, CH, 1));
    assert_eq!(back, recs);
}

#[test]
fn corrupted_headers_are_rejected() {
    let bytes = encode(&[]);
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(decode(&bad_magic), Err(Error::CorruptShard(_))));
    let mut bad_version = bytes.clone();
    bad_version[8] = 9;
    assert!(matches!(decode(&bad_version), Err(Error::CorruptShard(_))));
    assert!(matches!(decode(&bytes[..10]), Err(Error::CorruptShard(_))));
    let mut extra_count = bytes.clone();
    extra_count[10] = 1;
    assert!(matches!(decode(&extra_count), Err(Error::CorruptShard(_))));
    let mut bad_tag = encode(&[ShardRecord {
        modality: Modality::Text,
        n_patches: 0,
        patches: vec![],
        tokens: vec![1],
        attention_mask: vec![true],
        loss_mask: vec![true],
    }]);
    bad_tag[17] = 7;
    assert!(matches!(decode(&bad_tag), Err(Error::CorruptShard(_))));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = ModelConfig::tiny();
    let params: Params<f32> = Params::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
    let meta = CheckpointMeta { model: cfg.clone(), step: 42, tokenizer_size: Some(300), task: None };
    let ck = Checkpoint::from_params(meta.clone(), &params);
    let mut buf = Vec::new();
    ck.write(&mut buf).unwrap();
    let back = Checkpoint::read(Cursor::new(&buf)).unwrap();
    assert_eq!(back.meta, meta);
    let restored = back.params().unwrap();
    for ((na, a), (nb, b)) in params.tensors().iter().zip(restored.tensors()) {
        assert_eq!(na, &nb);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let cfg = ModelConfig::tiny();
    let params: Params<f32> = Params::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
    let mut buf = Vec::new();
    Checkpoint::from_params(CheckpointMeta { model: cfg, ..Default::default() }, &params).write(&mut buf).unwrap();
    for keep in [0, 5, 12, buf.len() / 2, buf.len() - 1] {
        assert!(matches!(Checkpoint::read(Cursor::new(&buf[..keep])), Err(Error::CorruptCheckpoint(_))), "cut at {keep}");
    }
    let mut bad = buf.clone();
    bad[3] = b'X';
    assert!(matches!(Checkpoint::read(Cursor::new(&bad)), Err(Error::CorruptCheckpoint(_))));
}
