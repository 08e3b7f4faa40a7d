//! CSV readers for the pipeline's input tables and 10-minute alignment of
//! station series.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use hubwind::distrib::WeibullParams;
use hubwind::domain::{direction_components, Projection};
use hubwind::{GeoLocation, TimeStamp};
use serde::Deserialize;

const BUCKET_SECONDS: i64 = 600;
const HOUR_SECONDS: i64 = 3600;

/// Parses an ISO-8601 UTC timestamp into seconds since the epoch. Accepts
/// RFC 3339 with any offset, or a naive `YYYY-MM-DD[T ]HH:MM[:SS]` read as UTC.
pub fn parse_seconds(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    bail!("unparseable timestamp {s:?}")
}

/// Parses a timestamp that must sit on the 10-minute grid.
pub fn parse_timestamp(s: &str) -> Result<TimeStamp> {
    let secs = parse_seconds(s)?;
    if secs % BUCKET_SECONDS != 0 {
        bail!("timestamp {s} is not on the 10-minute grid");
    }
    Ok(TimeStamp::new(secs / 60)?)
}

pub fn format_timestamp(t: TimeStamp) -> String {
    DateTime::<Utc>::from_timestamp(t.epoch_minutes() * 60, 0)
        .expect("timestamp in chrono range")
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Calendar month `YYYY-MM` of a timestamp.
pub fn month_of(t: TimeStamp) -> String {
    DateTime::<Utc>::from_timestamp(t.epoch_minutes() * 60, 0)
        .expect("timestamp in chrono range")
        .format("%Y-%m")
        .to_string()
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

/// Deserialises every row with its line number, naming file, line and
/// column on failure.
fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().with_context(|| format!("{}: reading header", path.display()))?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec.deserialize(Some(&headers)).map_err(|e| {
            let column = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => {
                    err.field().and_then(|i| headers.get(i as usize)).map(|h| format!(" column {h}"))
                }
                _ => None,
            };
            anyhow!("{} line {line}{}: {e}", path.display(), column.unwrap_or_default())
        })?;
        out.push((line, row));
    }
    Ok(out)
}

fn locate(
    path: &Path,
    line: u64,
    xy: (Option<f64>, Option<f64>),
    lonlat: (Option<f64>, Option<f64>),
    projection: Option<&Projection>,
) -> Result<GeoLocation> {
    match (xy, lonlat) {
        ((Some(x), Some(y)), _) => Ok(GeoLocation::new(x, y)?),
        (_, (Some(lon), Some(lat))) => {
            let p = projection
                .ok_or_else(|| anyhow!("{} line {line}: lon/lat given but no projection configured", path.display()))?;
            Ok(p.project(lon, lat)?)
        }
        _ => bail!("{} line {line}: need x_km, y_km or lon, lat", path.display()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationMeta {
    pub id: String,
    pub location: GeoLocation,
    /// Climatology at 50, 75 and 100 m.
    pub weibull: [WeibullParams; 3],
    pub mean50: f64,
    pub mean100: f64,
}

#[derive(Deserialize)]
struct StationRow {
    station_id: String,
    x_km: Option<f64>,
    y_km: Option<f64>,
    lon: Option<f64>,
    lat: Option<f64>,
    k_50: f64,
    lambda_50: f64,
    k_75: f64,
    lambda_75: f64,
    k_100: f64,
    lambda_100: f64,
    mean50: f64,
    mean100: f64,
}

pub fn read_stations(path: &Path, projection: Option<&Projection>) -> Result<Vec<StationMeta>> {
    let mut out: Vec<StationMeta> = Vec::new();
    for (line, r) in read_rows::<StationRow>(path)? {
        let ctx = || format!("{} line {line}", path.display());
        if out.iter().any(|s| s.id == r.station_id) {
            bail!("{}: duplicate station_id {}", ctx(), r.station_id);
        }
        let weibull = [
            WeibullParams::new(r.k_50, r.lambda_50).with_context(ctx)?,
            WeibullParams::new(r.k_75, r.lambda_75).with_context(ctx)?,
            WeibullParams::new(r.k_100, r.lambda_100).with_context(ctx)?,
        ];
        if !(r.mean50 > 0.0 && r.mean100 > 0.0) {
            bail!("{}: mean50 and mean100 must be positive", ctx());
        }
        out.push(StationMeta {
            location: locate(path, line, (r.x_km, r.y_km), (r.lon, r.lat), projection)?,
            id: r.station_id,
            weibull,
            mean50: r.mean50,
            mean100: r.mean100,
        });
    }
    if out.len() < 3 {
        bail!("{}: at least 3 stations are required, found {}", path.display(), out.len());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMeta {
    pub id: String,
    pub location: GeoLocation,
    pub hub_height: f64,
    pub mean50: f64,
    pub mean100: f64,
}

#[derive(Deserialize)]
struct TargetRow {
    site_id: String,
    x_km: Option<f64>,
    y_km: Option<f64>,
    lon: Option<f64>,
    lat: Option<f64>,
    hub_height_m: f64,
    mean50: f64,
    mean100: f64,
}

pub fn read_targets(path: &Path, projection: Option<&Projection>) -> Result<Vec<TargetMeta>> {
    let mut out: Vec<TargetMeta> = Vec::new();
    for (line, r) in read_rows::<TargetRow>(path)? {
        if out.iter().any(|s| s.id == r.site_id) {
            bail!("{} line {line}: duplicate site_id {}", path.display(), r.site_id);
        }
        if !(50.0..=100.0).contains(&r.hub_height_m) {
            bail!("{} line {line}: hub_height_m {} outside [50, 100]", path.display(), r.hub_height_m);
        }
        if !(r.mean50 > 0.0 && r.mean100 > 0.0) {
            bail!("{} line {line}: mean50 and mean100 must be positive", path.display());
        }
        out.push(TargetMeta {
            location: locate(path, line, (r.x_km, r.y_km), (r.lon, r.lat), projection)?,
            id: r.site_id,
            hub_height: r.hub_height_m,
            mean50: r.mean50,
            mean100: r.mean100,
        });
    }
    if out.is_empty() {
        bail!("{}: no target sites", path.display());
    }
    Ok(out)
}

/// A station's 10 m series on the 10-minute grid, sorted by time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindSeries {
    pub times: Vec<TimeStamp>,
    pub speed: Vec<f64>,
    pub direction: Vec<f64>,
}

impl WindSeries {
    pub fn get(&self, t: TimeStamp) -> Option<(f64, f64)> {
        self.times.binary_search(&t).ok().map(|i| (self.speed[i], self.direction[i]))
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn mean_direction(dirs: &[f64]) -> f64 {
    let (mut u, mut v) = (0.0, 0.0);
    for d in dirs {
        let (a, b) = direction_components(*d);
        u += a;
        v += b;
    }
    if u.hypot(v) < 1e-12 {
        return dirs[0];
    }
    // inverse of the FROM-direction flow components
    (-u).atan2(-v).to_degrees().rem_euclid(360.0) % 360.0
}

/// Aligns raw readings `(epoch seconds, speed, direction)` to the 10-minute
/// grid. Readings must be strictly increasing in time. Sub-10-minute data are
/// averaged per bucket, with a unit-vector mean for direction. Hourly data
/// (no two readings closer than an hour) are linearly interpolated between
/// consecutive hours; longer gaps stay empty.
pub fn align_ten_minute(raw: &[(i64, f64, f64)]) -> Result<WindSeries> {
    if let Some(i) = raw.windows(2).position(|w| w[1].0 <= w[0].0) {
        bail!("timestamps not strictly increasing at reading {}", i + 2);
    }
    let mut out = WindSeries::default();
    let hourly = raw.len() >= 2 && raw.windows(2).all(|w| w[1].0 - w[0].0 >= HOUR_SECONDS);
    if hourly {
        for (i, r) in raw.iter().enumerate() {
            if r.0 % BUCKET_SECONDS != 0 {
                bail!("hourly reading {} is not on the 10-minute grid", i + 1);
            }
        }
        for (i, r) in raw.iter().enumerate() {
            out.times.push(TimeStamp::new(r.0 / 60)?);
            out.speed.push(r.1);
            out.direction.push(r.2);
            let Some(next) = raw.get(i + 1) else { continue };
            if next.0 - r.0 != HOUR_SECONDS {
                continue;
            }
            let (a, b) = (direction_components(r.2), direction_components(next.2));
            for s in 1..6 {
                let f = s as f64 / 6.0;
                out.times.push(TimeStamp::new(r.0 / 60 + 10 * s)?);
                out.speed.push(r.1 + (next.1 - r.1) * f);
                let (u, v) = (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f);
                let d = if u.hypot(v) < 1e-12 { r.2 } else { (-u).atan2(-v).to_degrees().rem_euclid(360.0) % 360.0 };
                out.direction.push(d);
            }
        }
        return Ok(out);
    }
    let mut i = 0;
    while i < raw.len() {
        let bucket = raw[i].0.div_euclid(BUCKET_SECONDS);
        let mut j = i;
        while j < raw.len() && raw[j].0.div_euclid(BUCKET_SECONDS) == bucket {
            j += 1;
        }
        let group = &raw[i..j];
        let speeds: Vec<f64> = group.iter().map(|r| r.1).collect();
        let dirs: Vec<f64> = group.iter().map(|r| r.2).collect();
        out.times.push(TimeStamp::new(bucket * 10)?);
        out.speed.push(speeds.iter().sum::<f64>() / speeds.len() as f64);
        out.direction.push(mean_direction(&dirs));
        i = j;
    }
    Ok(out)
}

#[derive(Deserialize)]
struct WindRow {
    station_id: String,
    timestamp: String,
    speed_ms: Option<f64>,
    direction_deg: Option<f64>,
}

/// Station 10 m winds keyed by station id. Rows with an empty speed or
/// direction are treated as missing.
pub fn read_winds(path: &Path) -> Result<BTreeMap<String, WindSeries>> {
    let mut raw: BTreeMap<String, Vec<(i64, f64, f64)>> = BTreeMap::new();
    for (line, r) in read_rows::<WindRow>(path)? {
        let ctx = || format!("{} line {line}", path.display());
        let secs = parse_seconds(&r.timestamp).with_context(ctx)?;
        let (Some(speed), Some(dir)) = (r.speed_ms, r.direction_deg) else { continue };
        if !(speed >= 0.0) || !speed.is_finite() {
            bail!("{}: column speed_ms: invalid speed {speed}", ctx());
        }
        if !dir.is_finite() {
            bail!("{}: column direction_deg: invalid direction {dir}", ctx());
        }
        let series = raw.entry(r.station_id.clone()).or_default();
        if let Some(prev) = series.last() {
            if secs <= prev.0 {
                bail!("{}: timestamps for station {} are not increasing", ctx(), r.station_id);
            }
        }
        series.push((secs, speed, dir.rem_euclid(360.0) % 360.0));
    }
    raw.into_iter()
        .map(|(id, rows)| {
            let s = align_ten_minute(&rows).with_context(|| format!("{} station {id}", path.display()))?;
            Ok((id, s))
        })
        .collect()
}

/// A station's reanalysis series: `(w10, w50, w75, w100)` per time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReanalysisSeries {
    pub times: Vec<TimeStamp>,
    pub rows: Vec<[f64; 4]>,
}

#[derive(Deserialize)]
struct ReanalysisRow {
    station_id: String,
    timestamp: String,
    w10: f64,
    w50: f64,
    w75: f64,
    w100: f64,
}

pub fn read_reanalysis(path: &Path) -> Result<BTreeMap<String, ReanalysisSeries>> {
    let mut out: BTreeMap<String, ReanalysisSeries> = BTreeMap::new();
    for (line, r) in read_rows::<ReanalysisRow>(path)? {
        let ctx = || format!("{} line {line}", path.display());
        let t = parse_timestamp(&r.timestamp).with_context(ctx)?;
        let vals = [r.w10, r.w50, r.w75, r.w100];
        if let Some(k) = vals.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            bail!("{}: column {}: invalid speed {}", ctx(), ["w10", "w50", "w75", "w100"][k], vals[k]);
        }
        let s = out.entry(r.station_id.clone()).or_default();
        if s.times.last().is_some_and(|p| *p >= t) {
            bail!("{}: timestamps for station {} are not increasing", ctx(), r.station_id);
        }
        s.times.push(t);
        s.rows.push(vals);
    }
    Ok(out)
}

/// Observed farm speeds: `(speed_max, speed_avg)` keyed by site, then time.
pub type FarmObs = BTreeMap<String, BTreeMap<TimeStamp, (Option<f64>, Option<f64>)>>;

#[derive(Deserialize)]
struct FarmRow {
    site_id: String,
    timestamp: String,
    speed_max: Option<f64>,
    speed_avg: Option<f64>,
}

pub fn read_farm_obs(path: &Path) -> Result<FarmObs> {
    let mut out = FarmObs::new();
    for (line, r) in read_rows::<FarmRow>(path)? {
        let t = parse_timestamp(&r.timestamp).with_context(|| format!("{} line {line}", path.display()))?;
        if out.entry(r.site_id.clone()).or_default().insert(t, (r.speed_max, r.speed_avg)).is_some() {
            bail!("{} line {line}: duplicate row for {} at {}", path.display(), r.site_id, r.timestamp);
        }
    }
    Ok(out)
}

/// Hourly two-level baseline series keyed by site.
pub type Baseline = BTreeMap<String, Vec<(TimeStamp, f64, f64)>>;

#[derive(Deserialize)]
struct BaselineRow {
    site_id: String,
    timestamp: String,
    w10: f64,
    w100: f64,
}

pub fn read_baseline(path: &Path) -> Result<Baseline> {
    let mut out = Baseline::new();
    for (line, r) in read_rows::<BaselineRow>(path)? {
        let ctx = || format!("{} line {line}", path.display());
        let t = parse_timestamp(&r.timestamp).with_context(ctx)?;
        if t.epoch_minutes() % 60 != 0 {
            bail!("{}: baseline timestamps must be on the hour", ctx());
        }
        let s = out.entry(r.site_id.clone()).or_default();
        if s.last().is_some_and(|p| p.0 >= t) {
            bail!("{}: timestamps for site {} are not increasing", ctx(), r.site_id);
        }
        s.push((t, r.w10, r.w100));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PredictionRow {
    pub site_id: String,
    pub timestamp: String,
    pub speed_mean: f64,
    pub sqrt_mean: f64,
    pub sqrt_var: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    Ok(read_rows::<PredictionRow>(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Downscaled reanalysis keyed by station.
pub fn read_downscaled(path: &Path) -> Result<BTreeMap<String, ReanalysisSeries>> {
    read_reanalysis(path)
}
