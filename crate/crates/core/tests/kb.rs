use std::collections::BTreeMap;

use proptest::prelude::*;

use cnsm_core::ingest::{generate_trace, GeneratorConfig};
use cnsm_core::kb::{
    apply_sharing_filter, CountingFilter, DatasetKind, DatasetMeta, FeedbackEntry, KnowledgeBase, PolicySet, Sharing,
};
use cnsm_core::{Error, MonitoringRecord};

const M: usize = 64;
const K: usize = 3;
const SEED: u64 = 9;

fn filter_from(items: &[Vec<u8>]) -> CountingFilter {
    let mut f = CountingFilter::new(M, K, SEED).unwrap();
    for it in items {
        f.insert(it).unwrap();
    }
    f
}

fn items() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(any::<u8>(), 1..6), 0..40)
}

proptest! {
    #[test]
    fn merge_is_commutative_and_associative(a in items(), b in items(), c in items()) {
        let (fa, fb, fc) = (filter_from(&a), filter_from(&b), filter_from(&c));
        prop_assert_eq!(fa.merge(&fb).unwrap(), fb.merge(&fa).unwrap());
        let left = fa.merge(&fb).unwrap().merge(&fc).unwrap();
        let right = fa.merge(&fb.merge(&fc).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn empty_filter_is_merge_identity(a in items()) {
        let fa = filter_from(&a);
        let empty = CountingFilter::new(M, K, SEED).unwrap();
        prop_assert_eq!(fa.merge(&empty).unwrap(), fa);
    }

    #[test]
    fn no_false_negatives(a in items()) {
        let f = filter_from(&a);
        let mut counts: BTreeMap<&[u8], u32> = BTreeMap::new();
        for it in &a {
            *counts.entry(it.as_slice()).or_default() += 1;
        }
        for (it, n) in counts {
            prop_assert!(f.query(it) >= n);
        }
    }

    #[test]
    fn merge_never_lowers_a_query(a in items(), b in items(), probe in prop::collection::vec(any::<u8>(), 1..6)) {
        let (fa, fb) = (filter_from(&a), filter_from(&b));
        let m = fa.merge(&fb).unwrap();
        prop_assert!(m.query(&probe) >= fa.query(&probe));
        prop_assert!(m.query(&probe) >= fb.query(&probe));
    }

    #[test]
    fn sharing_filter_is_idempotent(
        redact in prop::collection::btree_set(prop::sample::select(vec!["ue_id", "gnb_id", "scenario", "rsrp", "wb_cqi"]), 0..5),
        rsrp in -120.0f64..-60.0,
    ) {
        let policy = PolicySet {
            sharing_filters: redact.iter().map(|k| (k.to_string(), Sharing::Redact)).collect(),
            ..PolicySet::default()
        };
        let r = MonitoringRecord {
            timestamp_ms: 10,
            ue_id: Some("ue1".into()),
            gnb_id: Some("gnb0".into()),
            scenario: Some("car".into()),
            metrics: [("rsrp".to_string(), rsrp), ("wb_cqi".to_string(), 7.0), ("phr".to_string(), 20.0)].into_iter().collect(),
        };
        let once = apply_sharing_filter(&policy, &r);
        prop_assert_eq!(apply_sharing_filter(&policy, &once), once.clone());
        prop_assert_eq!(once.timestamp_ms, 10);
        prop_assert_eq!(once.metrics.contains_key("phr"), true);
    }
}

#[test]
fn incompatible_filters_do_not_merge() {
    let a = CountingFilter::new(M, K, SEED).unwrap();
    for b in [CountingFilter::new(M + 1, K, SEED), CountingFilter::new(M, K + 1, SEED), CountingFilter::new(M, K, SEED + 1)] {
        assert!(matches!(a.merge(&b.unwrap()), Err(Error::IncompatibleFilter(_))));
    }
}

#[test]
fn datasets_round_trip_through_a_reopened_kb() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate_trace(&GeneratorConfig::standard(4, 50)).unwrap();
    let mut kb = KnowledgeBase::init(dir.path()).unwrap();
    kb.put_dataset(&trace.observed, DatasetMeta::new("raw", DatasetKind::Raw, "mixed")).unwrap();
    let err = kb.put_dataset(&trace.observed, DatasetMeta::new("proc", DatasetKind::Processed, "mixed"));
    assert!(matches!(err, Err(Error::Conflict(_))));
    kb.put_dataset(&trace.ground_truth, DatasetMeta::new("proc", DatasetKind::Processed, "mixed").with_parent("raw"))
        .unwrap();
    assert!(matches!(
        kb.put_dataset(&trace.observed, DatasetMeta::new("raw", DatasetKind::Raw, "mixed")),
        Err(Error::Conflict(_))
    ));

    let kb = KnowledgeBase::open(dir.path()).unwrap();
    assert_eq!(kb.datasets().len(), 2);
    let back = kb.get_dataset("raw").unwrap();
    assert_eq!(back.to_csv_bytes().unwrap(), trace.observed.to_csv_bytes().unwrap());
    assert_eq!(kb.dataset_meta("raw").unwrap().row_count, trace.observed.row_count());
    assert!(matches!(kb.get_dataset("missing"), Err(Error::NotFound(_))));
}

#[test]
fn tampered_dataset_fails_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate_trace(&GeneratorConfig::standard(4, 20)).unwrap();
    let mut kb = KnowledgeBase::init(dir.path()).unwrap();
    kb.put_dataset(&trace.observed, DatasetMeta::new("raw", DatasetKind::Raw, "mixed")).unwrap();
    let path = dir.path().join("datasets/raw/data.csv");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(b'\n');
    std::fs::write(&path, bytes).unwrap();
    assert!(kb.get_dataset("raw").is_err());
}

fn entry(tick: u64) -> FeedbackEntry {
    FeedbackEntry { tick, predicted: 7.0, observed: 8.0, action_taken: None, ue_id: Some(format!("ue{tick}")) }
}

#[test]
fn feedback_is_append_only_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let mut kb = KnowledgeBase::init(dir.path()).unwrap();
    kb.append_feedback(&[entry(1), entry(1), entry(3)]).unwrap();
    let before = kb.feedback().unwrap();

    assert!(matches!(kb.append_feedback(&[entry(4), entry(2)]), Err(Error::FeedbackOrder { tick: 2, last: 4 })));
    assert_eq!(kb.feedback().unwrap(), before, "a rejected batch must leave the log unchanged");

    let mut kb = KnowledgeBase::open(dir.path()).unwrap();
    assert!(matches!(kb.append_feedback(&[entry(2)]), Err(Error::FeedbackOrder { .. })));
    kb.append_feedback(&[entry(3), entry(5)]).unwrap();
    let after = kb.feedback().unwrap();
    assert_eq!(&after[..before.len()], before.as_slice());
    assert_eq!(after.iter().map(|e| e.tick).collect::<Vec<_>>(), vec![1, 1, 3, 3, 5]);
}

#[test]
fn policies_persist() {
    let dir = tempfile::tempdir().unwrap();
    let mut kb = KnowledgeBase::init(dir.path()).unwrap();
    assert_eq!(kb.policies(), &PolicySet::default());
    let p = PolicySet {
        sharing_filters: [("ue_id".to_string(), Sharing::Redact)].into_iter().collect(),
        slice_priorities: vec!["ehealth".into(), "embb".into()],
        handover_restrictions: vec![("gnb0".into(), "gnb1".into())],
    };
    kb.set_policies(p.clone()).unwrap();
    let kb = KnowledgeBase::open(dir.path()).unwrap();
    assert_eq!(kb.policies(), &p);
    assert!(!p.handover_allowed("gnb1", "gnb0"));
}
