//! NDBC standard-meteorological ("stdmet") ingestion.
//!
//! Historical stdmet files are whitespace separated text with two `#` header
//! lines (column names, then units). Missing measurements are written as
//! sentinel values (`99.0`, `999.0`, `9999.0`) or `MM` in realtime files.
//! [`parse_stdmet`] turns them into a [`TimeSeriesTable`] on an hourly grid
//! with explicit `None` cells.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use chrono::{DateTime, Datelike, Duration, NaiveDate, SecondsFormat, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eleven buoy measurements carried through the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    #[serde(rename = "WDIR")]
    Wdir,
    #[serde(rename = "WSPD")]
    Wspd,
    #[serde(rename = "GST")]
    Gst,
    #[serde(rename = "WVHT")]
    Wvht,
    #[serde(rename = "DPD")]
    Dpd,
    #[serde(rename = "APD")]
    Apd,
    #[serde(rename = "MWD")]
    Mwd,
    #[serde(rename = "PRES")]
    Pres,
    #[serde(rename = "ATMP")]
    Atmp,
    #[serde(rename = "WTMP")]
    Wtmp,
    #[serde(rename = "DEWP")]
    Dewp,
}

impl Feature {
    pub const ALL: [Feature; 11] = [
        Feature::Wdir,
        Feature::Wspd,
        Feature::Gst,
        Feature::Wvht,
        Feature::Dpd,
        Feature::Apd,
        Feature::Mwd,
        Feature::Pres,
        Feature::Atmp,
        Feature::Wtmp,
        Feature::Dewp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Wdir => "WDIR",
            Feature::Wspd => "WSPD",
            Feature::Gst => "GST",
            Feature::Wvht => "WVHT",
            Feature::Dpd => "DPD",
            Feature::Apd => "APD",
            Feature::Mwd => "MWD",
            Feature::Pres => "PRES",
            Feature::Atmp => "ATMP",
            Feature::Wtmp => "WTMP",
            Feature::Dewp => "DEWP",
        }
    }

    /// Accepts the canonical names plus the older `WD`/`BAR` header spellings.
    pub fn from_name(name: &str) -> Option<Feature> {
        let upper = name.trim().to_ascii_uppercase();
        let f = match upper.as_str() {
            "WDIR" | "WD" => Feature::Wdir,
            "WSPD" => Feature::Wspd,
            "GST" => Feature::Gst,
            "WVHT" => Feature::Wvht,
            "DPD" => Feature::Dpd,
            "APD" => Feature::Apd,
            "MWD" => Feature::Mwd,
            "PRES" | "BAR" => Feature::Pres,
            "ATMP" => Feature::Atmp,
            "WTMP" => Feature::Wtmp,
            "DEWP" => Feature::Dewp,
            _ => return None,
        };
        Some(f)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Feature-specific "missing" code. `9999.0` is treated as missing for
    /// every feature in addition to this value.
    pub fn sentinel(self) -> f64 {
        match self {
            Feature::Wvht | Feature::Dpd | Feature::Apd | Feature::Wspd | Feature::Gst => 99.0,
            Feature::Wdir
            | Feature::Mwd
            | Feature::Pres
            | Feature::Atmp
            | Feature::Wtmp
            | Feature::Dewp => 999.0,
        }
    }

    pub fn is_missing_code(self, value: f64) -> bool {
        value == self.sentinel() || value == 9999.0
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::from_name(s).ok_or_else(|| Error::UnknownFeature(s.to_string()))
    }
}

/// Location of a buoy station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub station_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub water_depth: f64,
}

impl StationMeta {
    pub fn new(station_id: impl Into<String>, latitude: f64, longitude: f64, water_depth: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(Error::Precondition(format!("latitude {latitude} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::Precondition(format!("longitude {longitude} outside [-180, 180]")));
        }
        if !(water_depth > 0.0) {
            return Err(Error::Precondition(format!("water depth {water_depth} must be positive")));
        }
        Ok(StationMeta {
            station_id: station_id.into(),
            latitude,
            longitude,
            water_depth,
        })
    }

    /// Metadata for the two Florida stations the model was developed on.
    pub fn known(station_id: &str) -> Option<StationMeta> {
        let (lat, lon, depth) = match station_id {
            "41008" => (31.400, -80.866, 16.0),
            "41047" => (27.557, -71.480, 5328.0),
            _ => return None,
        };
        StationMeta::new(station_id, lat, lon, depth).ok()
    }
}

/// Published significant wave height statistics (metres) for 2019–2022.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveHeightStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn reference_wave_stats(station_id: &str) -> Option<WaveHeightStats> {
    match station_id {
        "41008" => Some(WaveHeightStats { min: 0.20, max: 4.54, mean: 1.13, std: 0.49 }),
        "41047" => Some(WaveHeightStats { min: 0.49, max: 9.34, mean: 1.63, std: 0.76 }),
        _ => None,
    }
}

/// Timestamped rows of the eleven buoy features with explicit missingness.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesTable {
    timestamps: Vec<DateTime<Utc>>,
    columns: Vec<Vec<Option<f64>>>,
}

impl Default for TimeSeriesTable {
    fn default() -> Self {
        TimeSeriesTable::empty()
    }
}

impl TimeSeriesTable {
    pub fn empty() -> Self {
        TimeSeriesTable {
            timestamps: Vec::new(),
            columns: vec![Vec::new(); Feature::ALL.len()],
        }
    }

    /// `columns` is indexed by [`Feature::index`].
    pub fn new(timestamps: Vec<DateTime<Utc>>, columns: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if columns.len() != Feature::ALL.len() {
            return Err(Error::Shape(format!("expected 11 columns, got {}", columns.len())));
        }
        for (f, col) in Feature::ALL.iter().zip(&columns) {
            if col.len() != timestamps.len() {
                return Err(Error::Shape(format!(
                    "column {f} has {} values for {} timestamps",
                    col.len(),
                    timestamps.len()
                )));
            }
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotone {
                line: i + 2,
                timestamp: format_timestamp(&timestamps[i + 1]),
            });
        }
        Ok(TimeSeriesTable { timestamps, columns })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn column(&self, feature: Feature) -> &[Option<f64>] {
        &self.columns[feature.index()]
    }

    pub fn first_timestamp(&self) -> Option<DateTime<Utc>> {
        self.timestamps.first().copied()
    }

    pub fn last_timestamp(&self) -> Option<DateTime<Utc>> {
        self.timestamps.last().copied()
    }

    /// Rows with `start <= t < end`.
    pub fn slice_time(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> TimeSeriesTable {
        let lo = self.timestamps.partition_point(|t| *t < start);
        let hi = self.timestamps.partition_point(|t| *t < end);
        TimeSeriesTable {
            timestamps: self.timestamps[lo..hi].to_vec(),
            columns: self.columns.iter().map(|c| c[lo..hi].to_vec()).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(Feature::ALL.iter().map(|f| f.name().to_string()));
        w.write_record(&header)?;
        for (i, t) in self.timestamps.iter().enumerate() {
            let mut row = Vec::with_capacity(12);
            row.push(format_timestamp(t));
            for col in &self.columns {
                row.push(col[i].map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the canonical CSV written by [`TimeSeriesTable::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("timestamp") {
            return Err(Error::Parse {
                line: 1,
                message: "first column must be `timestamp`".into(),
            });
        }
        let mut order = Vec::new();
        for (i, name) in headers.iter().enumerate().skip(1) {
            let f = Feature::from_name(name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("unknown column {name} at position {i}"),
            })?;
            order.push(f);
        }
        let mut timestamps = Vec::new();
        let mut columns = vec![Vec::new(); Feature::ALL.len()];
        for (row_idx, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = row_idx + 2;
            let ts = parse_timestamp(rec.get(0).unwrap_or_default()).map_err(|message| Error::Parse { line, message })?;
            timestamps.push(ts);
            let mut seen = [false; 11];
            for (f, cell) in order.iter().zip(rec.iter().skip(1)) {
                let v = if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        message: format!("{f}: {e}"),
                    })?)
                };
                columns[f.index()].push(v);
                seen[f.index()] = true;
            }
            for f in Feature::ALL {
                if !seen[f.index()] {
                    columns[f.index()].push(None);
                }
            }
        }
        TimeSeriesTable::new(timestamps, columns)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.write_csv(fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(fs::File::open(path)?)
    }
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

enum Column {
    Year,
    Month,
    Day,
    Hour,
    Minute,
    Measure(Feature),
    Ignored,
}

fn header_layout(header: &str) -> Vec<Column> {
    header
        .trim_start_matches('#')
        .split_whitespace()
        .map(|name| match name.to_ascii_uppercase().as_str() {
            "YY" | "YYYY" => Column::Year,
            "MM" if name == "MM" => Column::Month,
            "DD" => Column::Day,
            "HH" => Column::Hour,
            "MN" => Column::Minute,
            "MM" => Column::Minute,
            other => Feature::from_name(other).map(Column::Measure).unwrap_or(Column::Ignored),
        })
        .collect()
}

/// Parses an NDBC stdmet text file.
///
/// Records are snapped to the nearest whole hour; when several records fall
/// on the same hour the one closest to the hour mark is kept.
pub fn parse_stdmet(raw_text: &str) -> Result<TimeSeriesTable> {
    let mut layout: Option<Vec<Column>> = None;
    // (hour mark, distance from the mark in seconds, values)
    let mut rows: Vec<(DateTime<Utc>, i64, [Option<f64>; 11])> = Vec::new();
    let mut previous: Option<DateTime<Utc>> = None;

    for (idx, line) in raw_text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if layout.is_none() {
                layout = Some(header_layout(trimmed));
            }
            continue;
        }
        let layout = layout.as_ref().ok_or_else(|| Error::Parse {
            line: lineno,
            message: "data row before the column header".into(),
        })?;
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != layout.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} columns, found {}", layout.len(), fields.len()),
            });
        }
        let (mut year, mut month, mut day, mut hour, mut minute) = (None, None, None, None, 0u32);
        let mut values = [None; 11];
        for (col, field) in layout.iter().zip(&fields) {
            let int = |field: &str| {
                field.parse::<u32>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad time field {field:?}: {e}"),
                })
            };
            match col {
                Column::Year => year = Some(int(field)?),
                Column::Month => month = Some(int(field)?),
                Column::Day => day = Some(int(field)?),
                Column::Hour => hour = Some(int(field)?),
                Column::Minute => minute = int(field)?,
                Column::Measure(f) => {
                    if *field == "MM" {
                        continue;
                    }
                    let v: f64 = field.parse().map_err(|e| Error::Parse {
                        line: lineno,
                        message: format!("{f}: cannot parse {field:?}: {e}"),
                    })?;
                    if !f.is_missing_code(v) {
                        values[f.index()] = Some(v);
                    }
                }
                Column::Ignored => {}
            }
        }
        let (Some(mut year), Some(month), Some(day), Some(hour)) = (year, month, day, hour) else {
            return Err(Error::Parse {
                line: lineno,
                message: "header lacks one of the YY MM DD hh columns".into(),
            });
        };
        if year < 100 {
            year += 1900;
        }
        let ts = NaiveDate::from_ymd_opt(year as i32, month, day)
            .and_then(|d| d.and_hms_opt(hour, minute, 0))
            .map(|n| Utc.from_utc_datetime(&n))
            .ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("invalid date {year}-{month:02}-{day:02} {hour:02}:{minute:02}"),
            })?;
        if let Some(prev) = previous {
            if ts <= prev {
                return Err(Error::NonMonotone {
                    line: lineno,
                    timestamp: format_timestamp(&ts),
                });
            }
        }
        previous = Some(ts);

        let floor = ts.with_minute(0).and_then(|t| t.with_second(0)).expect("valid time");
        let offset = (ts - floor).num_seconds();
        let (mark, distance) = if offset < 1800 {
            (floor, offset)
        } else {
            (floor + Duration::hours(1), 3600 - offset)
        };
        match rows.last_mut() {
            Some(last) if last.0 == mark => {
                if distance < last.1 {
                    *last = (mark, distance, values);
                }
            }
            _ => rows.push((mark, distance, values)),
        }
    }

    let mut timestamps = Vec::with_capacity(rows.len());
    let mut columns = vec![Vec::with_capacity(rows.len()); 11];
    for (mark, _, values) in rows {
        timestamps.push(mark);
        for (col, v) in columns.iter_mut().zip(values) {
            col.push(v);
        }
    }
    TimeSeriesTable::new(timestamps, columns)
}

/// Merges per-year tables into one chronologically sorted table.
pub fn concat_years(mut tables: Vec<TimeSeriesTable>) -> Result<TimeSeriesTable> {
    tables.retain(|t| !t.is_empty());
    tables.sort_by_key(|t| t.timestamps[0]);
    for pair in tables.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let a_last = *a.timestamps.last().unwrap();
        if b.timestamps[0] <= a_last {
            return Err(Error::Overlap(format!(
                "[{} .. {}] and [{} .. {}]",
                format_timestamp(&a.timestamps[0]),
                format_timestamp(&a_last),
                format_timestamp(&b.timestamps[0]),
                format_timestamp(b.timestamps.last().unwrap())
            )));
        }
    }
    let mut out = TimeSeriesTable::empty();
    for t in tables {
        out.timestamps.extend(t.timestamps);
        for (dst, src) in out.columns.iter_mut().zip(t.columns) {
            dst.extend(src);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fetching

pub const DEFAULT_ENDPOINT: &str =
    "https://www.ndbc.noaa.gov/view_text_file.php?filename={station}h{year}.txt.gz&dir=data/historical/stdmet/";

/// Environment variable overriding the local data/cache directory.
pub const DATA_DIR_ENV: &str = "WAVECAST_DATA_DIR";

pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Minimal GET abstraction so the cache logic can be tested offline.
pub trait Transport {
    fn get(&self, url: &str) -> Result<String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(60)))
            .http_status_as_error(false)
            .build();
        HttpTransport { agent: config.into() }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<String> {
        let http_err = |status: Option<u16>, message: String| Error::Http {
            url: url.to_string(),
            status,
            retryable: status.is_none_or(|s| s >= 500 || s == 429),
            message,
        };
        let mut resp = self.agent.get(url).call().map_err(|e| http_err(None, e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(http_err(Some(status), "unexpected status".into()));
        }
        resp.body_mut()
            .read_to_string()
            .map_err(|e| http_err(Some(status), e.to_string()))
    }
}

fn key_lock(path: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry(path.to_path_buf()).or_default().clone()
}

/// Downloads annual stdmet files into `data_dir/ndbc/<station>/`.
pub struct Fetcher<T: Transport = HttpTransport> {
    pub data_dir: PathBuf,
    pub endpoint: String,
    transport: T,
}

impl Fetcher<HttpTransport> {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Fetcher::with_transport(data_dir, DEFAULT_ENDPOINT, HttpTransport::default())
    }
}

impl<T: Transport> Fetcher<T> {
    pub fn with_transport(data_dir: impl Into<PathBuf>, endpoint: impl Into<String>, transport: T) -> Self {
        Fetcher {
            data_dir: data_dir.into(),
            endpoint: endpoint.into(),
            transport,
        }
    }

    pub fn cache_path(&self, station_id: &str, year: i32) -> PathBuf {
        station_file(&self.data_dir, station_id, year)
    }

    pub fn url(&self, station_id: &str, year: i32) -> String {
        self.endpoint
            .replace("{station}", &station_id.to_ascii_lowercase())
            .replace("{year}", &year.to_string())
    }

    /// Returns the raw annual file, from the cache when present.
    pub fn fetch_station_year(&self, station_id: &str, year: i32) -> Result<String> {
        let current = Utc::now().year();
        if !(1970..=current).contains(&year) {
            return Err(Error::Precondition(format!("year {year} outside [1970, {current}]")));
        }
        if station_id.is_empty() || !station_id.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(Error::Precondition(format!("invalid station id {station_id:?}")));
        }
        let path = self.cache_path(station_id, year);
        let lock = key_lock(&path);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if path.exists() {
            return Ok(fs::read_to_string(&path)?);
        }
        let body = self.transport.get(&self.url(station_id, year))?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension(format!("part{}", std::process::id()));
        fs::write(&tmp, &body)?;
        fs::rename(&tmp, &path)?;
        Ok(body)
    }
}

/// Fetches one station-year into the default data directory.
pub fn fetch_station_year(station_id: &str, year: i32, endpoint: &str) -> Result<String> {
    Fetcher::with_transport(default_data_dir(), endpoint, HttpTransport::default()).fetch_station_year(station_id, year)
}

pub fn station_file(data_dir: &Path, station_id: &str, year: i32) -> PathBuf {
    data_dir
        .join("ndbc")
        .join(station_id)
        .join(format!("{}h{year}.txt", station_id.to_ascii_lowercase()))
}

/// Parses and concatenates locally available annual files.
pub fn load_station_years(data_dir: &Path, station_id: &str, years: &[i32]) -> Result<TimeSeriesTable> {
    let mut tables = Vec::with_capacity(years.len());
    for &year in years {
        let path = station_file(data_dir, station_id, year);
        let raw = fs::read_to_string(&path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        tables.push(parse_stdmet(&raw)?);
    }
    concat_years(tables)
}
