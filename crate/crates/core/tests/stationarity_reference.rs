//! Checks the ADF and KPSS implementations against a pre-computed reference
//! fixture (`tests/fixtures/stationarity_reference.json`). The fixture was
//! produced by running an established reference implementation over the
//! exact seeded series from `common::reference_series()` with matching
//! settings (constant-only ADF with t-stat lag pruning from the Schwert
//! bound; level KPSS with Bartlett weights at floor(4*(n/100)^0.25) lags).
//!
//! The ignored `dump_reference_series` test regenerates the raw series as
//! CSV when the fixture itself needs to be rebuilt:
//!   REFERENCE_DUMP_DIR=/tmp/series cargo test -p renewcast \
//!     --test stationarity_reference dump_reference_series -- --ignored

mod common;

use renewcast::stats::{adf_test, kpss_test};
use serde::Deserialize;

#[derive(Deserialize)]
struct ReferenceEntry {
    name: String,
    adf_stat: f64,
    adf_pvalue: f64,
    adf_lags: usize,
    kpss_stat: f64,
    kpss_pvalue: f64,
    verdict_stationary: bool,
}

fn load_fixture() -> Vec<ReferenceEntry> {
    let raw = include_str!("fixtures/stationarity_reference.json");
    serde_json::from_str(raw).expect("fixture parses")
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn matches_reference_implementation() {
    let fixture = load_fixture();
    let series = common::reference_series();
    assert_eq!(fixture.len(), series.len());

    for (entry, s) in fixture.iter().zip(&series) {
        assert_eq!(entry.name, s.name);
        let adf = adf_test(&s.values, None).unwrap();
        let kpss = kpss_test(&s.values).unwrap();

        assert!(
            rel_err(adf.stat, entry.adf_stat) < 0.02,
            "{}: adf stat {} vs reference {}",
            s.name,
            adf.stat,
            entry.adf_stat
        );
        assert_eq!(adf.lags_used, entry.adf_lags, "{}: lag selection differs", s.name);
        assert!(
            rel_err(kpss.stat, entry.kpss_stat) < 0.02,
            "{}: kpss stat {} vs reference {}",
            s.name,
            kpss.stat,
            entry.kpss_stat
        );

        // Verdicts under the joint rule must agree exactly.
        let ours = adf.p_value < 0.05 && kpss.p_value > 0.05;
        let reference = entry.adf_pvalue < 0.05 && entry.kpss_pvalue > 0.05;
        assert_eq!(ours, reference, "{}: verdict differs", s.name);
        assert_eq!(ours, entry.verdict_stationary, "{}: fixture verdict differs", s.name);
        assert_eq!(s.expect_stationary, ours, "{}: construction verdict differs", s.name);
    }
}

#[test]
#[ignore = "fixture regeneration helper, writes series CSVs to REFERENCE_DUMP_DIR"]
fn dump_reference_series() {
    let dir = std::env::var("REFERENCE_DUMP_DIR").expect("set REFERENCE_DUMP_DIR");
    std::fs::create_dir_all(&dir).unwrap();
    for s in common::reference_series() {
        let mut body = String::from("value\n");
        for v in &s.values {
            body.push_str(&format!("{v:.17e}\n"));
        }
        std::fs::write(format!("{dir}/{}.csv", s.name), body).unwrap();
    }
}
