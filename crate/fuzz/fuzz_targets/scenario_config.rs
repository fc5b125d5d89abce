#![no_main]

use covwatch::sim::{Generator, SimPlan};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(plan) = SimPlan::from_json(text) {
        for s in plan.scenarios.iter().filter(|s| s.p <= 64) {
            let _ = Generator::new(s);
        }
    }
});
