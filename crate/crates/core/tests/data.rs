//! IDX container round trips and the official MNIST files.

use std::path::PathBuf;

use proptest::prelude::*;

use svpg_core::data::{encode_idx, parse_idx, IdxTensor, MnistSet, Split};

fn tensor() -> impl Strategy<Value = IdxTensor> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|dims| {
        let len = dims.iter().product::<usize>();
        prop::collection::vec(any::<u8>(), len).prop_map(move |data| IdxTensor {
            dims: dims.clone(),
            data,
        })
    })
}

proptest! {
    #[test]
    fn encode_parse_round_trip(t in tensor()) {
        let bytes = encode_idx(&t);
        let back = parse_idx(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(encode_idx(&back), bytes);
    }

    #[test]
    fn any_truncation_is_rejected(t in tensor(), cut in 1usize..8) {
        let bytes = encode_idx(&t);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(parse_idx(&bytes[..keep]).is_err());
    }
}

fn data_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("SVPG_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("t10k-labels-idx1-ubyte").is_file().then_some(dir)
}

/// Header read directly from the bytes: big-endian magic then dimensions.
fn raw_dims(bytes: &[u8]) -> (u32, Vec<usize>) {
    let word = |k: usize| u32::from_be_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    let magic = word(0);
    let rank = (magic & 0xff) as usize;
    (magic, (1..=rank).map(|k| word(k) as usize).collect())
}

#[test]
fn official_files_have_expected_dims() {
    let Some(dir) = data_dir() else {
        eprintln!("MNIST files not found; skipping");
        return;
    };
    for (stem, count) in [("train", 60_000), ("t10k", 10_000)] {
        let images = std::fs::read(dir.join(format!("{stem}-images-idx3-ubyte"))).unwrap();
        let labels = std::fs::read(dir.join(format!("{stem}-labels-idx1-ubyte"))).unwrap();
        assert_eq!(raw_dims(&images), (0x803, vec![count, 28, 28]));
        assert_eq!(raw_dims(&labels), (0x801, vec![count]));
        assert_eq!(images.len(), 16 + count * 784);
        let parsed = parse_idx(&images).unwrap();
        assert_eq!(parsed.dims, vec![count, 28, 28]);
        assert_eq!(parsed.data[..], images[16..]);
    }
    let test = MnistSet::load(&dir, Split::Test).unwrap();
    assert_eq!(test.len(), 10_000);
    assert!(test.labels.iter().all(|&l| l < 10));
    let batch = test.batch::<f32>(&[0, 9_999]);
    assert_eq!(batch.dim(), (2, 784));
    assert!(batch.iter().all(|&x| (0.0..=1.0).contains(&x)));
}
