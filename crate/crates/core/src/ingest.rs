//! Price panels to monitor-ready return panels: cleaning, log-returns,
//! winsorization and volatility-based universe selection. Also the
//! row-per-time observation CSV reader used by the monitor.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_MISSING_RATE: f64 = 0.05;
pub const DEFAULT_WINSOR_SD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingRate,
    LeadingGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedTicker {
    pub ticker: String,
    pub reason: DropReason,
    pub missing_rate: f64,
}

/// Cleaned prices, rows are dates.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub prices: DMatrix<f64>,
    pub missing_rate: Vec<f64>,
    pub dropped: Vec<DroppedTicker>,
}

/// Log-returns, rows are dates (the date of the later price).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub returns: DMatrix<f64>,
    pub winsor_sd: Option<f64>,
}

impl ReturnPanel {
    /// Observations as a `p × n` matrix, one column per date.
    pub fn observations(&self) -> DMatrix<f64> {
        self.returns.transpose()
    }

    pub fn column_sd(&self) -> Vec<f64> {
        self.returns.column_iter().map(|c| sample_sd(c.iter().copied())).collect()
    }

    /// Read the layout produced by [`ReturnPanel::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let table = read_observations(input)?;
        let dates = table
            .dates
            .ok_or_else(|| Error::MalformedCsv("returns CSV needs a leading date column".into()))?
            .iter()
            .enumerate()
            .map(|(i, d)| parse_date(d, i + 2))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dates,
            tickers: table.columns,
            returns: table.data.transpose(),
            winsor_sd: None,
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header = std::iter::once("date".to_string()).chain(self.tickers.iter().cloned());
        w.write_record(header).map_err(csv_err)?;
        for (r, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(self.returns.row(r).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::MalformedCsv(e.to_string())
}

fn sample_sd(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

fn parse_date(s: &str, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::MalformedCsv(format!("row {row}: bad date `{s}`: {e}")))
}

/// Read a price CSV (`date` column then one column per ticker, empty cell for
/// missing), drop tickers whose missing rate exceeds `max_missing_rate` or
/// whose series starts with a gap, and forward-fill the rest.
pub fn load_and_clean<R: Read>(input: R, max_missing_rate: f64) -> Result<PricePanel> {
    if !(0.0..=1.0).contains(&max_missing_rate) {
        return Err(Error::InvalidConfig(format!("missing-rate cap {max_missing_rate} outside [0, 1]")));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 2 {
        return Err(Error::MalformedCsv("need a date column and at least one ticker".into()));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut raw: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 2;
        let date = parse_date(rec.get(0).unwrap_or_default(), row)?;
        if dates.last().is_some_and(|&d| d >= date) {
            return Err(Error::MalformedCsv(format!("row {row}: dates must be strictly increasing")));
        }
        dates.push(date);
        let cells = rec
            .iter()
            .skip(1)
            .map(|c| match c {
                "" => Ok(None),
                s => s
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Some)
                    .ok_or_else(|| Error::MalformedCsv(format!("row {row}: bad price `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        raw.push(cells);
    }
    if dates.is_empty() {
        return Err(Error::EmptyPanel);
    }

    let rows = dates.len();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (j, t) in tickers.iter().enumerate() {
        let missing = raw.iter().filter(|r| r[j].is_none()).count();
        let rate = missing as f64 / rows as f64;
        let reason = if rate > max_missing_rate {
            Some(DropReason::MissingRate)
        } else if raw[0][j].is_none() {
            Some(DropReason::LeadingGap)
        } else {
            None
        };
        match reason {
            Some(reason) => dropped.push(DroppedTicker {
                ticker: t.clone(),
                reason,
                missing_rate: rate,
            }),
            None => kept.push((j, rate)),
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyPanel);
    }

    let mut prices = DMatrix::zeros(rows, kept.len());
    for (c, &(j, _)) in kept.iter().enumerate() {
        let mut last = f64::NAN;
        for r in 0..rows {
            if let Some(v) = raw[r][j] {
                last = v;
            }
            prices[(r, c)] = last;
        }
    }
    Ok(PricePanel {
        dates,
        tickers: kept.iter().map(|&(j, _)| tickers[j].clone()).collect(),
        prices,
        missing_rate: kept.iter().map(|&(_, r)| r).collect(),
        dropped,
    })
}

/// `r_k = ln(P_k / P_{k−1})` per ticker.
pub fn log_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    let (rows, cols) = panel.prices.shape();
    for c in 0..cols {
        for r in 0..rows {
            let price = panel.prices[(r, c)];
            if !(price > 0.0) {
                return Err(Error::NonpositivePrice {
                    ticker: panel.tickers[c].clone(),
                    row: r,
                    price,
                });
            }
        }
    }
    if rows < 2 {
        return Err(Error::EmptyPanel);
    }
    let returns = DMatrix::from_fn(rows - 1, cols, |r, c| (panel.prices[(r + 1, c)] / panel.prices[(r, c)]).ln());
    Ok(ReturnPanel {
        dates: panel.dates[1..].to_vec(),
        tickers: panel.tickers.clone(),
        returns,
        winsor_sd: None,
    })
}

/// Per-ticker clamp statistics, computed on the unclamped returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinsorStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl WinsorStats {
    pub fn from_panel(panel: &ReturnPanel) -> Self {
        let mean = panel.returns.column_iter().map(|c| c.mean()).collect();
        Self {
            mean,
            sd: panel.column_sd(),
        }
    }
}

/// Clamp with precomputed statistics. Returns the clamped panel and the
/// number of clamped entries per ticker.
pub fn winsorize_with(panel: &ReturnPanel, stats: &WinsorStats, sd_threshold: f64) -> Result<(ReturnPanel, Vec<usize>)> {
    if !(sd_threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!("winsorization threshold {sd_threshold} must be non-negative")));
    }
    let cols = panel.returns.ncols();
    if stats.mean.len() != cols || stats.sd.len() != cols {
        return Err(Error::ShapeMismatch(format!("stats for {} tickers, panel has {cols}", stats.mean.len())));
    }
    let mut out = panel.returns.clone();
    let mut counts = vec![0; cols];
    for (c, mut col) in out.column_iter_mut().enumerate() {
        let lo = stats.mean[c] - sd_threshold * stats.sd[c];
        let hi = stats.mean[c] + sd_threshold * stats.sd[c];
        for v in col.iter_mut() {
            let clamped = v.clamp(lo, hi);
            if clamped != *v {
                counts[c] += 1;
                *v = clamped;
            }
        }
    }
    Ok((
        ReturnPanel {
            dates: panel.dates.clone(),
            tickers: panel.tickers.clone(),
            returns: out,
            winsor_sd: Some(sd_threshold),
        },
        counts,
    ))
}

/// Single-pass winsorization: statistics from the raw returns, then clamp
/// to `mean ± sd_threshold·sd`.
pub fn winsorize(panel: &ReturnPanel, sd_threshold: f64) -> Result<(ReturnPanel, WinsorStats, Vec<usize>)> {
    if panel.returns.nrows() < 2 {
        return Err(Error::DegenerateData("winsorization needs at least two rows".into()));
    }
    let stats = WinsorStats::from_panel(panel);
    let (out, counts) = winsorize_with(panel, &stats, sd_threshold)?;
    Ok((out, stats, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub ticker: String,
    pub sd: f64,
}

/// Descending sample-sd ranking, ties by ticker name.
pub fn volatility_ranking(panel: &ReturnPanel) -> Vec<RankEntry> {
    let mut ranking: Vec<RankEntry> = panel
        .tickers
        .iter()
        .zip(panel.column_sd())
        .map(|(t, sd)| RankEntry { ticker: t.clone(), sd })
        .collect();
    ranking.sort_by(|a, b| b.sd.total_cmp(&a.sd).then_with(|| a.ticker.cmp(&b.ticker)));
    ranking
}

fn select_columns(panel: &ReturnPanel, names: &[String]) -> ReturnPanel {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| panel.tickers.iter().position(|t| t == n).expect("selected ticker comes from the panel"))
        .collect();
    ReturnPanel {
        dates: panel.dates.clone(),
        tickers: names.to_vec(),
        returns: panel.returns.select_columns(&idx),
        winsor_sd: panel.winsor_sd,
    }
}

/// Keep the `k` most volatile tickers, in rank order.
pub fn select_top_volatility(panel: &ReturnPanel, k: usize) -> Result<(ReturnPanel, Vec<RankEntry>)> {
    let available = panel.tickers.len();
    if k > available || k == 0 {
        return Err(Error::KTooLarge { requested: k, available });
    }
    let ranking = volatility_ranking(panel);
    let names: Vec<String> = ranking[..k].iter().map(|r| r.ticker.clone()).collect();
    Ok((select_columns(panel, &names), ranking))
}

/// Which returns the volatility ranking is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolatilityBasis {
    #[default]
    Winsorized,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub max_missing_rate: f64,
    pub winsor_sd: f64,
    pub top: Option<usize>,
    pub basis: VolatilityBasis,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_missing_rate: DEFAULT_MAX_MISSING_RATE,
            winsor_sd: DEFAULT_WINSOR_SD,
            top: None,
            basis: VolatilityBasis::Winsorized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub price_rows: usize,
    pub return_rows: usize,
    pub max_missing_rate: f64,
    pub dropped: Vec<DroppedTicker>,
    pub winsor_sd: f64,
    pub winsorized_counts: BTreeMap<String, usize>,
    pub volatility_basis: VolatilityBasis,
    pub ranking: Vec<RankEntry>,
    pub selected: Vec<String>,
}

/// Prices to selected, winsorized returns plus a manifest of what was done.
pub fn prepare_returns<R: Read>(input: R, opts: &IngestOptions) -> Result<(ReturnPanel, IngestManifest)> {
    let prices = load_and_clean(input, opts.max_missing_rate)?;
    let raw = log_returns(&prices)?;
    let (wins, _, counts) = winsorize(&raw, opts.winsor_sd)?;
    let top = opts.top.unwrap_or(wins.tickers.len());
    let basis_panel = match opts.basis {
        VolatilityBasis::Winsorized => &wins,
        VolatilityBasis::Raw => &raw,
    };
    let (chosen, ranking) = select_top_volatility(basis_panel, top)?;
    let selected = select_columns(&wins, &chosen.tickers);
    let winsorized_counts = wins.tickers.iter().cloned().zip(counts).collect();
    let manifest = IngestManifest {
        price_rows: prices.dates.len(),
        return_rows: selected.dates.len(),
        max_missing_rate: opts.max_missing_rate,
        dropped: prices.dropped,
        winsor_sd: opts.winsor_sd,
        winsorized_counts,
        volatility_basis: opts.basis,
        ranking,
        selected: selected.tickers.clone(),
    };
    Ok((selected, manifest))
}

/// Rows of an observation CSV (rows are time points, columns variables).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub columns: Vec<String>,
    pub dates: Option<Vec<String>>,
    /// `p × n`, one column per row of the file.
    pub data: DMatrix<f64>,
}

/// Row-by-row observation CSV parser. A header row is detected when any of
/// its fields fails to parse as a number; a leading `date` column is
/// carried along as labels.
pub struct ObservationReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    columns: Option<Vec<String>>,
    has_date: bool,
    width: Option<usize>,
    pending: Option<csv::StringRecord>,
    row: usize,
}

impl<R: Read> ObservationReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut records = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(input)
            .into_records();
        let first = records.next().transpose().map_err(csv_err)?;
        let mut reader = Self {
            records,
            columns: None,
            has_date: false,
            width: None,
            pending: None,
            row: 0,
        };
        if let Some(rec) = first {
            if rec.iter().all(|f| f.parse::<f64>().is_ok()) {
                reader.pending = Some(rec);
            } else {
                reader.has_date = rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case("date"));
                let skip = usize::from(reader.has_date);
                reader.columns = Some(rec.iter().skip(skip).map(str::to_string).collect());
                reader.width = reader.columns.as_ref().map(Vec::len);
                reader.row = 1;
                if reader.width == Some(0) {
                    return Err(Error::MalformedCsv("header has no variable columns".into()));
                }
            }
        }
        Ok(reader)
    }

    pub fn columns(&self) -> Option<&[String]> {
        self.columns.as_deref()
    }

    pub fn has_date(&self) -> bool {
        self.has_date
    }

    fn parse(&mut self, rec: csv::StringRecord) -> Result<(Option<String>, DVector<f64>)> {
        self.row += 1;
        let row = self.row;
        let skip = usize::from(self.has_date);
        let label = self.has_date.then(|| rec.get(0).unwrap_or_default().to_string());
        let values = rec
            .iter()
            .skip(skip)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::MalformedCsv(format!("row {row}: `{f}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        match self.width {
            None if values.is_empty() => return Err(Error::MalformedCsv(format!("row {row}: no values"))),
            None => self.width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::MalformedCsv(format!("row {row}: expected {w} values, found {}", values.len())))
            }
            Some(_) => {}
        }
        Ok((label, DVector::from_vec(values)))
    }

    /// Next row with its date label, if the file has one.
    pub fn next_labeled(&mut self) -> Option<Result<(Option<String>, DVector<f64>)>> {
        let rec = match self.pending.take() {
            Some(r) => r,
            None => match self.records.next()? {
                Ok(r) => r,
                Err(e) => return Some(Err(csv_err(e))),
            },
        };
        Some(self.parse(rec))
    }
}

impl<R: Read> Iterator for ObservationReader<R> {
    type Item = Result<DVector<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_labeled().map(|r| r.map(|(_, v)| v))
    }
}

/// Read a whole observation CSV into a `p × n` matrix.
pub fn read_observations<R: Read>(input: R) -> Result<ObservationTable> {
    let mut reader = ObservationReader::new(input)?;
    let mut cols = Vec::new();
    let mut dates = Vec::new();
    while let Some(item) = reader.next_labeled() {
        let (label, v) = item?;
        dates.extend(label);
        cols.push(v);
    }
    if cols.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let p = cols[0].len();
    let columns = reader.columns.clone().unwrap_or_else(|| (1..=p).map(|j| format!("x{j}")).collect());
    Ok(ObservationTable {
        columns,
        dates: reader.has_date.then_some(dates),
        data: DMatrix::from_columns(&cols),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn returns(tickers: &[&str], cols: &[Vec<f64>]) -> ReturnPanel {
        let n = cols[0].len();
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        ReturnPanel {
            dates: (0..n).map(|i| start + chrono::Days::new(i as u64)).collect(),
            tickers: tickers.iter().map(|s| s.to_string()).collect(),
            returns: DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]),
            winsor_sd: None,
        }
    }

    #[test]
    fn forward_fill_and_drops() {
        let csv = "date,AAA,BBB,CCC\n\
                   2020-01-01,100,,50\n\
                   2020-01-02,,20,51\n\
                   2020-01-03,,21,52\n\
                   2020-01-04,103,22,53\n";
        let panel = load_and_clean(csv.as_bytes(), 0.6).unwrap();
        assert_eq!(panel.tickers, ["AAA", "CCC"]);
        assert_eq!(panel.prices.column(0).as_slice(), &[100.0, 100.0, 100.0, 103.0]);
        assert_eq!(panel.prices.column(1).as_slice(), &[50.0, 51.0, 52.0, 53.0]);
        assert_eq!(panel.missing_rate, [0.5, 0.0]);
        assert_eq!(panel.dropped[0].ticker, "BBB");
        assert_eq!(panel.dropped[0].reason, DropReason::LeadingGap);
    }

    #[test]
    fn missing_rate_cap() {
        let mut csv = String::from("date,A,B\n");
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        for i in 0..100 {
            let d = start + chrono::Days::new(i);
            let a = if (10..16).contains(&i) { String::new() } else { "1".into() };
            let b = if (10..15).contains(&i) { String::new() } else { "1".into() };
            csv.push_str(&format!("{d},{a},{b}\n"));
        }
        let panel = load_and_clean(csv.as_bytes(), DEFAULT_MAX_MISSING_RATE).unwrap();
        assert_eq!(panel.tickers, ["B"]);
        assert_eq!(panel.dropped[0].reason, DropReason::MissingRate);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(load_and_clean("date\n".as_bytes(), 0.05), Err(Error::MalformedCsv(_))));
        assert!(matches!(
            load_and_clean("date,A\n2020-01-02,1\n2020-01-01,2\n".as_bytes(), 0.05),
            Err(Error::MalformedCsv(_))
        ));
        assert!(matches!(load_and_clean("date,A\n2020-01-01,x\n".as_bytes(), 0.05), Err(Error::MalformedCsv(_))));
        assert!(matches!(load_and_clean("date,A\n2020-01-01,\n".as_bytes(), 0.05), Err(Error::EmptyPanel)));
        assert!(matches!(load_and_clean("date,A\n".as_bytes(), 0.05), Err(Error::EmptyPanel)));
    }

    #[test]
    fn log_return_values() {
        let csv = "date,A,B\n2020-01-01,100,7\n2020-01-02,105,7\n";
        let r = log_returns(&load_and_clean(csv.as_bytes(), 0.05).unwrap()).unwrap();
        assert!((r.returns[(0, 0)] - 0.048790164169432).abs() < 1e-12);
        assert_eq!(r.returns[(0, 1)], 0.0);
        assert_eq!(r.returns.nrows(), 1);

        let bad = load_and_clean("date,A\n2020-01-01,1\n2020-01-02,0\n".as_bytes(), 0.05).unwrap();
        assert!(matches!(log_returns(&bad), Err(Error::NonpositivePrice { row: 1, .. })));
    }

    #[test]
    fn eight_sd_outlier_clamped_to_five() {
        // 80 alternating ±1 and one outlier at 81/√19: mean 1/√19, sd 10/√19, z = 8
        let s19 = 19f64.sqrt();
        let mut col: Vec<f64> = (0..80).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        col.push(81.0 / s19);
        let panel = returns(&["A"], &[col.clone()]);
        let (w, stats, counts) = winsorize(&panel, 5.0).unwrap();
        assert!((stats.mean[0] - 1.0 / s19).abs() < 1e-14);
        assert!((stats.sd[0] - 10.0 / s19).abs() < 1e-14);
        assert_eq!(counts, [1]);
        assert!((w.returns[(80, 0)] - 51.0 / s19).abs() < 1e-12);
        assert_eq!(&w.returns.as_slice()[..80], &col[..80]);
    }

    #[test]
    fn winsorize_degenerate_thresholds() {
        let panel = returns(&["A"], &[vec![0.01, -0.02, 0.03]]);
        let (w, _, counts) = winsorize(&panel, 5.0).unwrap();
        assert_eq!(w.returns, panel.returns);
        assert_eq!(counts, [0]);
        let (w, _, _) = winsorize(&panel, 0.0).unwrap();
        assert!(w.returns.iter().all(|&v| (v - 0.02 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn top_volatility_selection() {
        let scaled = |s: f64| vec![s, -s, s, -s];
        // sample sds of ±s over 4 points are s·√(4/3); ordering is what matters
        let panel = returns(&["A", "B", "C"], &[scaled(0.02), scaled(0.05), scaled(0.01)]);
        let (sel, ranking) = select_top_volatility(&panel, 2).unwrap();
        assert_eq!(sel.tickers, ["B", "A"]);
        assert_eq!(ranking[2].ticker, "C");
        let (all, _) = select_top_volatility(&panel, 3).unwrap();
        assert_eq!(all.tickers.len(), 3);
        assert!(matches!(select_top_volatility(&panel, 4), Err(Error::KTooLarge { requested: 4, available: 3 })));

        let tie = returns(&["ZED", "ABE"], &[scaled(0.03), scaled(0.03)]);
        assert_eq!(select_top_volatility(&tie, 1).unwrap().0.tickers, ["ABE"]);
    }

    #[test]
    fn observation_reader_variants() {
        let t = read_observations("1,2\n3,4\n5,6\n".as_bytes()).unwrap();
        assert_eq!(t.data.shape(), (2, 3));
        assert_eq!(t.data[(1, 2)], 6.0);
        assert_eq!(t.columns, ["x1", "x2"]);

        let t = read_observations("date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n".as_bytes()).unwrap();
        assert_eq!(t.dates.unwrap(), ["2020-01-01", "2020-01-02"]);
        assert_eq!(t.columns, ["a", "b"]);
        assert_eq!(t.data[(0, 1)], 3.0);

        assert!(read_observations("1,2\n3\n".as_bytes()).is_err());
        assert!(read_observations("a,b\n1,x\n".as_bytes()).is_err());
        assert!(matches!(read_observations("a,b\n".as_bytes()), Err(Error::EmptyPanel)));
    }

    #[test]
    fn returns_csv_round_trips_through_observation_reader() {
        let panel = returns(&["A", "B"], &[vec![0.1, 0.2], vec![-0.3, 0.4]]);
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let t = read_observations(buf.as_slice()).unwrap();
        assert_eq!(t.data, panel.observations());
        assert_eq!(t.columns, ["A", "B"]);
        assert_eq!(ReturnPanel::read_csv(buf.as_slice()).unwrap(), panel);
    }

    fn panel_strategy() -> impl Strategy<Value = ReturnPanel> {
        (2usize..5, 3usize..30).prop_flat_map(|(c, n)| {
            proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, n), c).prop_map(move |cols| {
                let names: Vec<String> = (0..c).map(|j| format!("T{j}")).collect();
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                returns(&refs, &cols)
            })
        })
    }

    proptest! {
        #[test]
        fn winsorize_is_a_projection(panel in panel_strategy(), thr in 0.0f64..4.0) {
            let (once, stats, _) = winsorize(&panel, thr).unwrap();
            let (twice, counts) = winsorize_with(&once, &stats, thr).unwrap();
            prop_assert_eq!(&twice.returns, &once.returns);
            prop_assert!(counts.iter().all(|&c| c == 0));
            for c in 0..panel.returns.ncols() {
                let lo = stats.mean[c] - thr * stats.sd[c];
                let hi = stats.mean[c] + thr * stats.sd[c];
                prop_assert!(once.returns.column(c).iter().all(|&v| v >= lo && v <= hi));
            }
        }

        #[test]
        fn selection_is_order_equivariant(panel in panel_strategy(), k in 1usize..3) {
            let k = k.min(panel.tickers.len());
            let (a, _) = select_top_volatility(&panel, k).unwrap();
            let rev: Vec<String> = panel.tickers.iter().rev().cloned().collect();
            let reversed = select_columns(&panel, &rev);
            let (b, _) = select_top_volatility(&reversed, k).unwrap();
            prop_assert_eq!(a.tickers, b.tickers);
            prop_assert_eq!(a.returns, b.returns);
        }
    }
}
