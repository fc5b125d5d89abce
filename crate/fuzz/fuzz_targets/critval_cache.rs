#![no_main]

use covwatch::CritvalCache;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cache) = CritvalCache::from_json(text) {
        let encoded = serde_json::to_string(&cache).expect("accepted caches serialize");
        let again = CritvalCache::from_json(&encoded).expect("serialized cache reloads");
        assert_eq!(again.entries.len(), cache.entries.len());
    }
});
