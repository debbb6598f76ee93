mod common;

#[test]
fn rows_sum_to_one_across_randomized_cases() {
    let r = common::suites::normalization_suite(1000, 31);
    assert_eq!(r.cases, 1000);
    assert!(r.max_error < 1e-6, "{r:?}");
}
