//! Forecast and price data model, CSV loading/writing and date alignment.
//!
//! Every model forecast is a grid of 99 percentiles per (day, hour). Days are
//! calendar dates with 24 delivery periods numbered 1..=24 in the files and
//! 0..24 in memory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

/// Number of percentiles on the probability grid.
pub const N_QUANTILES: usize = 99;
/// Delivery periods per day.
pub const HOURS_PER_DAY: usize = 24;
/// Grid index of the 50th percentile.
pub const MEDIAN_INDEX: usize = 49;

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no rows")]
    NoRows { path: PathBuf },
    #[error("{path}: bad header, expected `{expected}`")]
    BadHeader { path: PathBuf, expected: String },
    #[error("{path}:{line}: malformed row: {reason}")]
    Malformed { path: PathBuf, line: u64, reason: String },
    #[error("{path}:{line}: invalid hour {hour}")]
    InvalidHour { path: PathBuf, line: u64, hour: String },
    #[error("{path}:{line}: non-finite value in column `{column}`")]
    NonFinite { path: PathBuf, line: u64, column: String },
    #[error("{path}:{line}: duplicate row for {date} hour {hour}")]
    DuplicateRow {
        path: PathBuf,
        line: u64,
        date: NaiveDate,
        hour: usize,
    },
    #[error("{path}: missing hour {hour} on {date}")]
    MissingHour {
        path: PathBuf,
        date: NaiveDate,
        hour: usize,
    },
    #[error("{path}: gap in dates between {before} and {after}")]
    DateGap {
        path: PathBuf,
        before: NaiveDate,
        after: NaiveDate,
    },
    #[error("coverage mismatch: expert `{expert}` covers {found}, expected {expected}")]
    CoverageMismatch {
        expert: String,
        expected: String,
        found: String,
    },
    #[error("{paths} paths but {names} names")]
    NameCountMismatch { paths: usize, names: usize },
    #[error("duplicate expert name `{0}`")]
    DuplicateExpert(String),
    #[error("unknown expert `{0}`")]
    UnknownExpert(String),
    #[error("no experts given")]
    NoExperts,
    #[error("date ranges do not overlap")]
    EmptyIntersection,
    #[error("invalid series: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// A non-finite entry found while building a [`QuantileCurve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("non-finite quantile value at index {index}")]
pub struct NonFiniteValue {
    pub index: usize,
}

/// The percentile grid `p_i = i / 100`, `i = 1..=99`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid {
    probabilities: [f64; N_QUANTILES],
}

impl Default for ProbGrid {
    fn default() -> Self {
        Self::percentiles()
    }
}

impl ProbGrid {
    pub fn percentiles() -> Self {
        let mut probabilities = [0.0; N_QUANTILES];
        for (i, p) in probabilities.iter_mut().enumerate() {
            *p = prob(i);
        }
        Self { probabilities }
    }

    pub fn probabilities(&self) -> &[f64; N_QUANTILES] {
        &self.probabilities
    }

    /// Grid index for probability `p`, if `100 p` is an integer in 1..=99.
    pub fn index_of(p: f64) -> Option<usize> {
        let scaled = p * 100.0;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-9 || !(1.0..=99.0).contains(&rounded) {
            return None;
        }
        Some(rounded as usize - 1)
    }
}

/// Probability level of grid index `i` (0-based).
#[inline]
pub fn prob(i: usize) -> f64 {
    (i + 1) as f64 / 100.0
}

/// 99 non-decreasing, finite percentile values of one predictive distribution.
#[derive(Clone, PartialEq)]
pub struct QuantileCurve {
    values: [f64; N_QUANTILES],
}

impl fmt::Debug for QuantileCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuantileCurve")
            .field("q01", &self.values[0])
            .field("q50", &self.values[MEDIAN_INDEX])
            .field("q99", &self.values[N_QUANTILES - 1])
            .finish()
    }
}

impl QuantileCurve {
    /// Builds a curve, sorting the values ascending if they are not already.
    pub fn rearranged(values: [f64; N_QUANTILES]) -> Result<Self, NonFiniteValue> {
        Ok(Self::rearranged_flagged(values)?.0)
    }

    /// Like [`QuantileCurve::rearranged`], also reporting whether a sort was needed.
    pub fn rearranged_flagged(mut values: [f64; N_QUANTILES]) -> Result<(Self, bool), NonFiniteValue> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(NonFiniteValue { index });
        }
        let sorted = values.windows(2).all(|w| w[0] <= w[1]);
        if !sorted {
            values.sort_by(f64::total_cmp);
        }
        Ok((Self { values }, !sorted))
    }

    pub fn from_slice(values: &[f64]) -> Option<Result<Self, NonFiniteValue>> {
        let values: [f64; N_QUANTILES] = values.try_into().ok()?;
        Some(Self::rearranged(values))
    }

    /// Point mass at `value`.
    pub fn degenerate(value: f64) -> Self {
        assert!(value.is_finite(), "degenerate curve at non-finite value");
        Self {
            values: [value; N_QUANTILES],
        }
    }

    pub fn values(&self) -> &[f64; N_QUANTILES] {
        &self.values
    }

    pub fn median(&self) -> f64 {
        self.values[MEDIAN_INDEX]
    }

    /// Distribution mean estimated as the plain average of the 99 percentiles.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / N_QUANTILES as f64
    }

    /// Value at grid index `i`.
    pub fn at(&self, i: usize) -> f64 {
        self.values[i]
    }
}

/// One model's forecasts: 24 curves per day over contiguous dates.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    dates: Vec<NaiveDate>,
    curves: Vec<QuantileCurve>,
}

/// A combined forecast has the same shape as any expert's.
pub type CombinedPanel = ForecastSeries;

impl ForecastSeries {
    pub fn new(dates: Vec<NaiveDate>, curves: Vec<QuantileCurve>) -> Result<Self, DataError> {
        check_contiguous(&dates).map_err(DataError::Invalid)?;
        if curves.len() != dates.len() * HOURS_PER_DAY {
            return Err(DataError::Invalid(format!(
                "{} curves for {} days",
                curves.len(),
                dates.len()
            )));
        }
        Ok(Self { dates, curves })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn curve(&self, day: usize, hour: usize) -> &QuantileCurve {
        &self.curves[day * HOURS_PER_DAY + hour]
    }

    /// The 24 curves of day `day`.
    pub fn day(&self, day: usize) -> &[QuantileCurve] {
        &self.curves[day * HOURS_PER_DAY..(day + 1) * HOURS_PER_DAY]
    }

    pub fn curves(&self) -> &[QuantileCurve] {
        &self.curves
    }

    /// Hourly medians of day `day`.
    pub fn medians(&self, day: usize) -> [f64; HOURS_PER_DAY] {
        let mut out = [0.0; HOURS_PER_DAY];
        for (h, c) in self.day(day).iter().enumerate() {
            out[h] = c.median();
        }
        out
    }

    fn slice_days(&self, start: usize, len: usize) -> Self {
        Self {
            dates: self.dates[start..start + len].to_vec(),
            curves: self.curves[start * HOURS_PER_DAY..(start + len) * HOURS_PER_DAY].to_vec(),
        }
    }

    /// Restricts the series to the inclusive date range `[first, last]`.
    pub fn restrict(&self, first: NaiveDate, last: NaiveDate) -> Result<Self, DataError> {
        let (start, len) = day_window(&self.dates, first, last).ok_or(DataError::EmptyIntersection)?;
        Ok(self.slice_days(start, len))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub name: String,
    pub forecasts: ForecastSeries,
}

/// Named experts sharing identical day/hour coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPanel {
    experts: Vec<Expert>,
    rearranged_rows: usize,
}

impl ExpertPanel {
    pub fn new(experts: Vec<Expert>) -> Result<Self, DataError> {
        let first = experts.first().ok_or(DataError::NoExperts)?;
        for (i, e) in experts.iter().enumerate() {
            if experts[..i].iter().any(|o| o.name == e.name) {
                return Err(DataError::DuplicateExpert(e.name.clone()));
            }
            if e.forecasts.dates != first.forecasts.dates {
                return Err(DataError::CoverageMismatch {
                    expert: e.name.clone(),
                    expected: describe_range(&first.forecasts.dates),
                    found: describe_range(&e.forecasts.dates),
                });
            }
        }
        Ok(Self {
            experts,
            rearranged_rows: 0,
        })
    }

    pub fn experts(&self) -> &[Expert] {
        &self.experts
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.experts.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.experts[0].forecasts.dates
    }

    pub fn n_days(&self) -> usize {
        self.dates().len()
    }

    /// Number of raw rows that had to be sorted while loading.
    pub fn rearranged_rows(&self) -> usize {
        self.rearranged_rows
    }

    pub fn expert(&self, name: &str) -> Option<&Expert> {
        self.experts.iter().find(|e| e.name == name)
    }

    /// Every expert's curve at (day, hour), in panel order.
    pub fn curves_at(&self, day: usize, hour: usize) -> Vec<&QuantileCurve> {
        self.experts.iter().map(|e| e.forecasts.curve(day, hour)).collect()
    }

    /// Sub-panel with the named experts in the given order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Self, DataError> {
        let mut experts = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            if experts.iter().any(|e: &Expert| e.name == name) {
                return Err(DataError::DuplicateExpert(name.to_string()));
            }
            let e = self
                .expert(name)
                .ok_or_else(|| DataError::UnknownExpert(name.to_string()))?;
            experts.push(e.clone());
        }
        Self::new(experts)
    }

    pub fn restrict(&self, first: NaiveDate, last: NaiveDate) -> Result<Self, DataError> {
        let experts = self
            .experts
            .iter()
            .map(|e| {
                Ok(Expert {
                    name: e.name.clone(),
                    forecasts: e.forecasts.restrict(first, last)?,
                })
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Self {
            experts,
            rearranged_rows: self.rearranged_rows,
        })
    }
}

/// Realized hourly prices over contiguous dates. Negative prices are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    prices: Vec<[f64; HOURS_PER_DAY]>,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, prices: Vec<[f64; HOURS_PER_DAY]>) -> Result<Self, DataError> {
        check_contiguous(&dates).map_err(DataError::Invalid)?;
        if prices.len() != dates.len() {
            return Err(DataError::Invalid(format!(
                "{} price days for {} dates",
                prices.len(),
                dates.len()
            )));
        }
        if prices.iter().flatten().any(|p| !p.is_finite()) {
            return Err(DataError::Invalid("non-finite price".into()));
        }
        Ok(Self { dates, prices })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn day(&self, day: usize) -> &[f64; HOURS_PER_DAY] {
        &self.prices[day]
    }

    pub fn days(&self) -> &[[f64; HOURS_PER_DAY]] {
        &self.prices
    }

    pub fn restrict(&self, first: NaiveDate, last: NaiveDate) -> Result<Self, DataError> {
        let (start, len) = day_window(&self.dates, first, last).ok_or(DataError::EmptyIntersection)?;
        Ok(Self {
            dates: self.dates[start..start + len].to_vec(),
            prices: self.prices[start..start + len].to_vec(),
        })
    }
}

/// Panel and prices restricted to their common dates.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    pub panel: ExpertPanel,
    pub prices: PriceSeries,
    pub dropped_panel_days: usize,
    pub dropped_price_days: usize,
}

/// Restricts both inputs to the intersection of their date ranges.
pub fn align(panel: &ExpertPanel, prices: &PriceSeries) -> Result<AlignedDataset, DataError> {
    let (first, last) = intersection(panel.dates(), prices.dates())?;
    let p = panel.restrict(first, last)?;
    let x = prices.restrict(first, last)?;
    Ok(AlignedDataset {
        dropped_panel_days: panel.n_days() - p.n_days(),
        dropped_price_days: prices.n_days() - x.n_days(),
        panel: p,
        prices: x,
    })
}

/// Same as [`align`] for a single forecast series.
pub fn align_series(series: &ForecastSeries, prices: &PriceSeries) -> Result<(ForecastSeries, PriceSeries), DataError> {
    let (first, last) = intersection(series.dates(), prices.dates())?;
    Ok((series.restrict(first, last)?, prices.restrict(first, last)?))
}

fn intersection(a: &[NaiveDate], b: &[NaiveDate]) -> Result<(NaiveDate, NaiveDate), DataError> {
    let (Some(a0), Some(a1), Some(b0), Some(b1)) = (a.first(), a.last(), b.first(), b.last()) else {
        return Err(DataError::EmptyIntersection);
    };
    let first = *a0.max(b0);
    let last = *a1.min(b1);
    if first > last {
        return Err(DataError::EmptyIntersection);
    }
    Ok((first, last))
}

fn day_window(dates: &[NaiveDate], first: NaiveDate, last: NaiveDate) -> Option<(usize, usize)> {
    let start = dates.iter().position(|d| *d >= first)?;
    let len = dates[start..].iter().take_while(|d| **d <= last).count();
    (len > 0).then_some((start, len))
}

fn check_contiguous(dates: &[NaiveDate]) -> Result<(), String> {
    for w in dates.windows(2) {
        if w[0].succ_opt() != Some(w[1]) {
            return Err(format!("dates not contiguous between {} and {}", w[0], w[1]));
        }
    }
    Ok(())
}

fn describe_range(dates: &[NaiveDate]) -> String {
    match (dates.first(), dates.last()) {
        (Some(a), Some(b)) => format!("{a}..{b} ({} days)", dates.len()),
        _ => "no days".into(),
    }
}

// ---------------------------------------------------------------------------
// CSV I/O

/// Header of an expert/combined forecast file.
pub fn forecast_header() -> Vec<String> {
    let mut h = vec!["date".to_string(), "hour".to_string()];
    h.extend((1..=N_QUANTILES).map(|i| format!("q{i:02}")));
    h
}

const PRICE_HEADER: [&str; 3] = ["date", "hour", "price"];

/// Collects (date, hour) keyed rows and checks completeness.
struct HourlyRows<T> {
    path: PathBuf,
    days: BTreeMap<NaiveDate, [Option<T>; HOURS_PER_DAY]>,
}

impl<T> HourlyRows<T> {
    fn new(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            days: BTreeMap::new(),
        }
    }

    fn insert(&mut self, line: u64, date: NaiveDate, hour: usize, value: T) -> Result<(), DataError> {
        let slot = &mut self.days.entry(date).or_insert_with(|| std::array::from_fn(|_| None))[hour];
        if slot.is_some() {
            return Err(DataError::DuplicateRow {
                path: self.path.clone(),
                line,
                date,
                hour: hour + 1,
            });
        }
        *slot = Some(value);
        Ok(())
    }

    fn finish(self) -> Result<(Vec<NaiveDate>, Vec<[T; HOURS_PER_DAY]>), DataError> {
        if self.days.is_empty() {
            return Err(DataError::NoRows { path: self.path });
        }
        let mut dates = Vec::with_capacity(self.days.len());
        let mut rows = Vec::with_capacity(self.days.len());
        for (date, hours) in self.days {
            if let Some(&prev) = dates.last() {
                if NaiveDate::succ_opt(&prev) != Some(date) {
                    return Err(DataError::DateGap {
                        path: self.path,
                        before: prev,
                        after: date,
                    });
                }
            }
            if let Some(h) = hours.iter().position(Option::is_none) {
                return Err(DataError::MissingHour {
                    path: self.path,
                    date,
                    hour: h + 1,
                });
            }
            dates.push(date);
            rows.push(hours.map(|v| v.expect("checked above")));
        }
        Ok((dates, rows))
    }
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, path: &Path, expected: &[&str]) -> Result<(), DataError> {
    let header = rdr.headers().map_err(|source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    if header.is_empty() || header.len() == 1 && header[0].is_empty() {
        return Err(DataError::NoRows {
            path: path.to_path_buf(),
        });
    }
    if header.iter().ne(expected.iter().copied()) {
        return Err(DataError::BadHeader {
            path: path.to_path_buf(),
            expected: expected.join(","),
        });
    }
    Ok(())
}

fn parse_date(path: &Path, line: u64, s: &str) -> Result<NaiveDate, DataError> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|e| DataError::Malformed {
        path: path.to_path_buf(),
        line,
        reason: format!("date `{s}`: {e}"),
    })
}

/// Parses a 1..=24 delivery period into a 0-based hour index.
fn parse_hour(path: &Path, line: u64, s: &str) -> Result<usize, DataError> {
    match s.parse::<usize>() {
        Ok(h) if (1..=HOURS_PER_DAY).contains(&h) => Ok(h - 1),
        _ => Err(DataError::InvalidHour {
            path: path.to_path_buf(),
            line,
            hour: s.to_string(),
        }),
    }
}

fn parse_value(path: &Path, line: u64, column: &str, s: &str) -> Result<f64, DataError> {
    let v: f64 = s.parse().map_err(|_| DataError::Malformed {
        path: path.to_path_buf(),
        line,
        reason: format!("column `{column}`: `{s}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(DataError::NonFinite {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
        });
    }
    Ok(v)
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Reads one forecast CSV. Returns the series and the count of rows that
/// needed rearranging.
pub fn read_forecast_csv<R: Read>(reader: R, path: &Path) -> Result<(ForecastSeries, usize), DataError> {
    let header = forecast_header();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, path, &header_refs)?;

    let mut rows = HourlyRows::new(path);
    let mut rearranged = 0;
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(true) => {}
            Ok(false) => break,
            Err(source) => {
                return Err(DataError::Csv {
                    path: path.to_path_buf(),
                    source,
                })
            }
        }
        let line = record_line(&rec);
        let date = parse_date(path, line, &rec[0])?;
        let hour = parse_hour(path, line, &rec[1])?;
        let mut values = [0.0; N_QUANTILES];
        for (i, v) in values.iter_mut().enumerate() {
            *v = parse_value(path, line, &header[i + 2], &rec[i + 2])?;
        }
        let (curve, sorted) = QuantileCurve::rearranged_flagged(values).expect("values checked finite");
        rearranged += usize::from(sorted);
        rows.insert(line, date, hour, curve)?;
    }
    let (dates, days) = rows.finish()?;
    let curves = days.into_iter().flatten().collect();
    let series = ForecastSeries { dates, curves };
    debug_assert_eq!(series.curves.len(), series.dates.len() * HOURS_PER_DAY);
    Ok((series, rearranged))
}

pub fn load_forecast_series(path: &Path) -> Result<(ForecastSeries, usize), DataError> {
    read_forecast_csv(open(path)?, path)
}

/// Loads one CSV per expert and checks they cover identical days.
pub fn load_expert_panel<P: AsRef<Path>, S: AsRef<str>>(paths: &[P], names: &[S]) -> Result<ExpertPanel, DataError> {
    if paths.len() != names.len() {
        return Err(DataError::NameCountMismatch {
            paths: paths.len(),
            names: names.len(),
        });
    }
    let mut experts = Vec::with_capacity(paths.len());
    let mut rearranged_rows = 0;
    for (path, name) in paths.iter().zip(names) {
        let (forecasts, n) = load_forecast_series(path.as_ref())?;
        if n > 0 {
            log::info!("{}: rearranged {n} non-monotone rows", path.as_ref().display());
        }
        rearranged_rows += n;
        experts.push(Expert {
            name: name.as_ref().to_string(),
            forecasts,
        });
    }
    let mut panel = ExpertPanel::new(experts)?;
    panel.rearranged_rows = rearranged_rows;
    Ok(panel)
}

pub fn read_prices_csv<R: Read>(reader: R, path: &Path) -> Result<PriceSeries, DataError> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, path, &PRICE_HEADER)?;
    let mut rows = HourlyRows::new(path);
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(true) => {}
            Ok(false) => break,
            Err(source) => {
                return Err(DataError::Csv {
                    path: path.to_path_buf(),
                    source,
                })
            }
        }
        let line = record_line(&rec);
        let date = parse_date(path, line, &rec[0])?;
        let hour = parse_hour(path, line, &rec[1])?;
        let price = parse_value(path, line, "price", &rec[2])?;
        rows.insert(line, date, hour, price)?;
    }
    let (dates, prices) = rows.finish()?;
    Ok(PriceSeries { dates, prices })
}

pub fn load_prices(path: &Path) -> Result<PriceSeries, DataError> {
    read_prices_csv(open(path)?, path)
}

/// Writes a forecast series in the expert CSV schema. Values use the
/// shortest round-trip representation, so reading back is bit-exact.
pub fn write_forecast_csv<W: Write>(writer: W, series: &ForecastSeries) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(forecast_header())?;
    let mut row: Vec<String> = Vec::with_capacity(N_QUANTILES + 2);
    for (d, date) in series.dates.iter().enumerate() {
        let date = date.format(DATE_FORMAT).to_string();
        for h in 0..HOURS_PER_DAY {
            row.clear();
            row.push(date.clone());
            row.push((h + 1).to_string());
            row.extend(series.curve(d, h).values.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_prices_csv<W: Write>(writer: W, prices: &PriceSeries) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PRICE_HEADER)?;
    for (date, day) in prices.dates.iter().zip(&prices.prices) {
        let date = date.format(DATE_FORMAT).to_string();
        for (h, p) in day.iter().enumerate() {
            w.write_record([date.clone(), (h + 1).to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Creates `path` (and parent dirs) and writes `series` to it.
pub fn save_forecast_series(path: &Path, series: &ForecastSeries) -> Result<(), DataError> {
    let file = create(path)?;
    write_forecast_csv(std::io::BufWriter::new(file), series).map_err(|source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_prices(path: &Path, prices: &PriceSeries) -> Result<(), DataError> {
    let file = create(path)?;
    write_prices_csv(std::io::BufWriter::new(file), prices).map_err(|source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    File::create(path).map_err(io)
}

/// Formats a date the way the CSV files do.
pub fn format_date(date: NaiveDate) -> String {
    date.format(DATE_FORMAT).to_string()
}
