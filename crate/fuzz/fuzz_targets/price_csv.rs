#![no_main]

use covwatch::ingest::{load_and_clean, log_returns, winsorize};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(panel) = load_and_clean(data, 0.05) {
        assert!(panel.prices.iter().all(|v| v.is_finite()));
        assert!(panel.dates.windows(2).all(|w| w[0] < w[1]));
        if let Ok(r) = log_returns(&panel) {
            assert_eq!(r.returns.nrows() + 1, panel.prices.nrows());
            let _ = winsorize(&r, 5.0);
        }
    }
});
