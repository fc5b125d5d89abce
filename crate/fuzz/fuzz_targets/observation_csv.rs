#![no_main]

use covwatch::ingest::{read_observations, ObservationReader};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let table = read_observations(data);
    // the streaming reader must agree with the batch one row for row
    let rows: Option<Vec<_>> = ObservationReader::new(data).ok().and_then(|r| r.collect::<Result<Vec<_>, _>>().ok());
    if let (Ok(t), Some(rows)) = (table, rows) {
        assert_eq!(t.data.ncols(), rows.len());
        assert_eq!(t.columns.len(), t.data.nrows());
    }
});
