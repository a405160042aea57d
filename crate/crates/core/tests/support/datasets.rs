use std::collections::BTreeSet;

use crl_core::problem::dataset::{
    build_multilingual_dataset, build_numerical_dataset, LanguagePair, MultilingualSpec, Split,
    MULTILINGUAL_LENGTHS, NUMERICAL_LENGTHS,
};
use crl_core::problem::vocab::NUM_LANGUAGES;

pub fn expected_per_length(k: usize) -> usize {
    if k == 2 {
        210
    } else {
        700
    }
}

pub fn numerical_counts() {
    let ds = build_numerical_dataset(1, NUMERICAL_LENGTHS, 0).unwrap();
    for k in NUMERICAL_LENGTHS {
        assert_eq!(ds.count_for_length(k), expected_per_length(k), "length {k}");
    }
    assert_eq!(ds.total(), 5810);
    assert_eq!(
        ds.count(Split::Train) + ds.count(Split::Val) + ds.count(Split::Test),
        5810
    );
    assert!(ds.capped.is_empty());
}

pub fn multilingual_counts_and_matching() {
    let ds = build_multilingual_dataset(&MultilingualSpec::default(), 0).unwrap();
    assert_eq!(ds.pairs.train.len(), 20);
    assert_eq!(ds.pairs.held_out.len(), NUM_LANGUAGES);
    for k in MULTILINGUAL_LENGTHS {
        assert_eq!(
            ds.count_for_length(k),
            20 * expected_per_length(k),
            "length {k}"
        );
    }
    assert_eq!(ds.total(), 46200);

    let srcs: BTreeSet<usize> = ds.pairs.held_out.iter().map(|p| p.src.id()).collect();
    let tgts: BTreeSet<usize> = ds.pairs.held_out.iter().map(|p| p.tgt.id()).collect();
    assert_eq!(
        srcs.len(),
        NUM_LANGUAGES,
        "every language is a held-out source once"
    );
    assert_eq!(
        tgts.len(),
        NUM_LANGUAGES,
        "every language is a held-out target once"
    );
    for p in &ds.pairs.held_out {
        assert!(!ds.pairs.train.contains(p));
    }
    for inst in ds.instances(Split::Train) {
        assert!(ds
            .pairs
            .train
            .contains(&LanguagePair::new(inst.src, inst.tgt)));
    }
    for inst in ds.instances(Split::HeldOut) {
        assert!(ds
            .pairs
            .held_out
            .contains(&LanguagePair::new(inst.src, inst.tgt)));
    }
}
