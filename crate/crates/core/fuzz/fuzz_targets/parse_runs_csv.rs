#![no_main]

use libfuzzer_sys::fuzz_target;
use sobolev::experiment::{parse_runs_csv, write_runs_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(runs) = parse_runs_csv(data) {
        let mut out = Vec::new();
        write_runs_csv(&runs, &mut out).unwrap();
        let again = parse_runs_csv(out.as_slice()).unwrap();
        assert_eq!(again.len(), runs.len());
    }
});
