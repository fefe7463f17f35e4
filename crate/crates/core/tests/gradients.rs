mod common;

use common::suites::gradient_suite;

#[test]
fn every_loss_matches_central_differences() {
    let results = gradient_suite(20, 7);
    let bad: Vec<_> = results.iter().filter(|r| !(r.max_rel_err < 1e-4)).collect();
    assert!(bad.is_empty(), "gradient mismatches: {bad:?}");
    assert_eq!(results.len(), 14);
}
