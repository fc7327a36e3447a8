//! The verification battery must fail when gather forgets to advance its
//! cursors. Run the broken build with
//! `cargo test -p dpg-core --features mutation-skip-gather-advance --test mutation`.

use dpg_core::harness::{verify_case, verify_suite};

#[test]
fn verify_suite_detects_broken_gather() {
    let report = verify_suite(2024, 6);
    if cfg!(feature = "mutation-skip-gather-advance") {
        assert!(!report.passed());
        let failing: Vec<_> = report.failures().map(|c| c.property).collect();
        assert!(failing.contains(&"dpg-equals-naive"), "{failing:?}");
        for c in report.failures() {
            assert!(!c.detail.is_empty());
            // the reported seed reproduces the failure on its own
            assert!(!matches!(verify_case(c.property, c.seed), Ok(Ok(()))));
        }
    } else {
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    }
}
