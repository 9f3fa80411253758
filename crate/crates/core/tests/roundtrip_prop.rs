//! Property tests: text formats must round-trip arbitrary finite values
//! exactly, including negative zero and subnormals.

use proptest::prelude::*;

use lsrec_core::embedding::{RVector, Task};
use lsrec_core::features::{
    save_archive, load_archive, Corpus, CorpusManifest, FeatureSequence, ManifestEntry, Split,
};
use lsrec_core::linalg::Mat;
use lsrec_core::lstmp::{LstmpDims, LstmpParams};
use lsrec_core::serialize::{
    load_rvectors, model_from_string, model_to_string, save_rvectors, ModelFile, SingleTaskModel,
};

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE / 2.0), // subnormal
        Just(1e-300),
        Just(-1e300),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_model_round_trips(values in proptest::collection::vec(finite_f64(), 200)) {
        let dims = LstmpDims { input: 2, cell: 2, rproj: 1, pproj: 1, out: 2 };
        let mut params = LstmpParams::zeros(dims);
        let mut it = values.into_iter().cycle();
        for (_, blk) in params.blocks_mut() {
            for v in blk.data_mut() {
                *v = it.next().unwrap();
            }
        }
        let model = ModelFile::Single(SingleTaskModel {
            params,
            labels: vec!["L0".into(), "L1".into()],
            task: Task::Language,
        });
        let text = model_to_string(&model).unwrap();
        let parsed = model_from_string(std::path::Path::new("mem"), &text).unwrap();
        prop_assert_eq!(&model, &parsed);
        prop_assert_eq!(text, model_to_string(&parsed).unwrap());
    }

    #[test]
    fn corpus_archive_round_trips(
        frames in proptest::collection::vec(proptest::collection::vec(finite_f64(), 3), 1..6),
        n_utts in 1usize..4,
    ) {
        let mut manifest = CorpusManifest::default();
        let mut sequences = Vec::new();
        for u in 0..n_utts {
            let t = frames.len();
            let m = Mat::from_fn(t, 3, |r, c| frames[r][c] + u as f64);
            manifest.entries.push(ManifestEntry {
                utt_id: format!("u{u}"),
                speaker: "s0".to_string(),
                language: "L0".to_string(),
                split: Split::Train,
            });
            sequences.push(FeatureSequence {
                utt_id: format!("u{u}"),
                speaker: "s0".to_string(),
                language: "L0".to_string(),
                frames: m,
            });
        }
        let corpus = Corpus { manifest, sequences };
        let tmp = tempfile::tempdir().unwrap();
        save_archive(tmp.path(), &corpus).unwrap();
        prop_assert_eq!(load_archive(tmp.path()).unwrap(), corpus);
    }

    #[test]
    fn rvector_file_round_trips(values in proptest::collection::vec(finite_f64(), 1..20)) {
        let rvs = vec![RVector {
            utt_id: "u0".to_string(),
            task: Task::Speaker,
            values,
        }];
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("rv.txt");
        save_rvectors(&path, &rvs).unwrap();
        prop_assert_eq!(load_rvectors(&path).unwrap(), rvs);
    }
}
