//! Vessel positions, approach detection and weekly supply counts.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Utc};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::TimeSeriesFrame;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const DEFAULT_TOLERANCE_DEG: f64 = 45.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("bearing is undefined between identical points")]
    UndefinedBearing,
    #[error("vessel is already inside the port radius")]
    AlreadyInPort,
    #[error("tolerance must lie in (0, 180], got {0}")]
    InvalidTolerance(f64),
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("invalid port region: {0}")]
    InvalidPort(String),
    #[error("invalid vessel record: {0}")]
    InvalidRecord(String),
    #[error("parse error at line {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        let lat_ok = (-90.0..=90.0).contains(&self.lat);
        let lon_ok = self.lon > -180.0 && self.lon <= 180.0;
        if lat_ok && lon_ok {
            Ok(())
        } else {
            Err(SpatialError::InvalidCoordinate {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum CargoStatus {
    Ballast,
    Laden,
}

impl CargoStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CargoStatus::Ballast => "ballast",
            CargoStatus::Laden => "laden",
        }
    }
}

impl FromStr for CargoStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ballast" => Ok(CargoStatus::Ballast),
            "laden" => Ok(CargoStatus::Laden),
            other => Err(format!("cargo_status must be `ballast` or `laden`, got `{other}`")),
        }
    }
}

/// Query-side filter over cargo status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum StatusFilter {
    Ballast,
    Laden,
    #[default]
    All,
}

impl StatusFilter {
    pub fn admits(self, status: CargoStatus) -> bool {
        match self {
            StatusFilter::All => true,
            StatusFilter::Ballast => status == CargoStatus::Ballast,
            StatusFilter::Laden => status == CargoStatus::Laden,
        }
    }
}

impl FromStr for StatusFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ballast" => Ok(StatusFilter::Ballast),
            "laden" => Ok(StatusFilter::Laden),
            "all" => Ok(StatusFilter::All),
            other => Err(format!("status must be ballast, laden or all, got `{other}`")),
        }
    }
}

/// True when `imo` has seven digits and the weighted sum of the first six
/// (weights 7 down to 2) ends in the seventh.
pub fn imo_is_valid(imo: u32) -> bool {
    if !(1_000_000..=9_999_999).contains(&imo) {
        return false;
    }
    let digits: Vec<u32> = imo.to_string().bytes().map(|b| u32::from(b - b'0')).collect();
    let sum: u32 = digits[..6].iter().zip((2..=7).rev()).map(|(d, w)| d * w).sum();
    sum % 10 == digits[6]
}

/// Appends the check digit to a six-digit prefix.
pub fn imo_with_check_digit(prefix: u32) -> Option<u32> {
    if !(100_000..=999_999).contains(&prefix) {
        return None;
    }
    let sum: u32 = prefix
        .to_string()
        .bytes()
        .zip((2..=7).rev())
        .map(|(b, w)| u32::from(b - b'0') * w)
        .sum();
    Some(prefix * 10 + sum % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct VesselRecord {
    pub imo: u32,
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub heading: f64,
    pub speed_knots: f64,
    pub cargo_status: CargoStatus,
}

impl VesselRecord {
    pub fn position(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        if !imo_is_valid(self.imo) {
            return Err(SpatialError::InvalidRecord(format!("IMO {} fails the check digit", self.imo)));
        }
        self.position().validate()?;
        if !(0.0..360.0).contains(&self.heading) {
            return Err(SpatialError::InvalidRecord(format!("heading {} outside [0, 360)", self.heading)));
        }
        if !(self.speed_knots >= 0.0 && self.speed_knots.is_finite()) {
            return Err(SpatialError::InvalidRecord(format!("speed {} is negative", self.speed_knots)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PortRegion {
    pub name: String,
    pub center: GeoPoint,
    pub radius_km: f64,
}

impl PortRegion {
    pub fn new(name: impl Into<String>, center: GeoPoint, radius_km: f64) -> Result<Self, SpatialError> {
        let port = Self {
            name: name.into(),
            center,
            radius_km,
        };
        port.validate()?;
        Ok(port)
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        self.center.validate()?;
        if !(self.radius_km > 0.0 && self.radius_km.is_finite()) {
            return Err(SpatialError::InvalidPort(format!("radius {} must be positive", self.radius_km)));
        }
        if supply_variable_name(&self.name).len() == "ballast_approaching_".len() {
            return Err(SpatialError::InvalidPort("port name is empty".into()));
        }
        Ok(())
    }
}

/// Column name used for a port's supply series: `ballast_approaching_<port>`
/// with the port name lower-cased and non-alphanumerics replaced by `_`.
pub fn supply_variable_name(port: &str) -> String {
    let slug: String = port
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("ballast_approaching_{slug}")
}

pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> Result<f64, SpatialError> {
    a.validate()?;
    b.validate()?;
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}

/// Initial great-circle bearing in `[0, 360)`, 0 = north, 90 = east.
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> Result<f64, SpatialError> {
    a.validate()?;
    b.validate()?;
    if a == b {
        return Err(SpatialError::UndefinedBearing);
    }
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    let deg = y.atan2(x).to_degrees().rem_euclid(360.0);
    Ok(if deg >= 360.0 { 0.0 } else { deg })
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Whether the vessel's heading points at the port within `tolerance_deg`.
pub fn is_approaching(vessel: &VesselRecord, port: &PortRegion, tolerance_deg: f64) -> Result<bool, SpatialError> {
    if !(tolerance_deg > 0.0 && tolerance_deg <= 180.0) {
        return Err(SpatialError::InvalidTolerance(tolerance_deg));
    }
    let position = vessel.position();
    if haversine_km(position, port.center)? <= port.radius_km {
        return Err(SpatialError::AlreadyInPort);
    }
    let bearing = bearing_deg(position, port.center)?;
    Ok(angular_distance(vessel.heading.rem_euclid(360.0), bearing) <= tolerance_deg)
}

/// Monday of the ISO week containing `t` (UTC).
pub fn week_start(t: DateTime<Utc>) -> NaiveDate {
    let date = t.date_naive();
    date - Duration::days(i64::from(date.weekday().num_days_from_monday()))
}

/// Latest record per (week, IMO); on equal timestamps the later input wins.
fn latest_per_week(records: &[VesselRecord]) -> BTreeMap<(NaiveDate, u32), &VesselRecord> {
    let mut latest: BTreeMap<(NaiveDate, u32), &VesselRecord> = BTreeMap::new();
    for r in records {
        let key = (week_start(r.timestamp), r.imo);
        match latest.get(&key) {
            Some(prev) if prev.timestamp > r.timestamp => {}
            _ => {
                latest.insert(key, r);
            }
        }
    }
    latest
}

/// Weekly count of distinct ballast vessels heading for `port`.
///
/// The output spans every week from the first to the last record so it can
/// be joined onto a market frame as an exogenous column. Vessels already in
/// port are not counted as approaching.
pub fn aggregate_supply(
    records: &[VesselRecord],
    port: &PortRegion,
    tolerance_deg: f64,
) -> Result<TimeSeriesFrame, SpatialError> {
    if !(tolerance_deg > 0.0 && tolerance_deg <= 180.0) {
        return Err(SpatialError::InvalidTolerance(tolerance_deg));
    }
    port.validate()?;
    let name = supply_variable_name(&port.name);
    let latest = latest_per_week(records);
    let (Some(first), Some(last)) = (
        latest.keys().next().map(|k| k.0),
        latest.keys().next_back().map(|k| k.0),
    ) else {
        return TimeSeriesFrame::new(vec![], vec![name], vec![]).map_err(|e| SpatialError::Csv(e.to_string()));
    };

    let mut counts: BTreeMap<NaiveDate, u32> = BTreeMap::new();
    for ((week, _), record) in &latest {
        let approaching = record.cargo_status == CargoStatus::Ballast
            && match is_approaching(record, port, tolerance_deg) {
                Ok(a) => a,
                Err(SpatialError::AlreadyInPort) => false,
                Err(e) => return Err(e),
            };
        *counts.entry(*week).or_default() += u32::from(approaching);
    }

    let weeks = (last - first).num_weeks() as usize + 1;
    let index: Vec<NaiveDate> = (0..weeks).map(|i| first + Duration::weeks(i as i64)).collect();
    let values = index
        .iter()
        .map(|d| vec![Some(f64::from(counts.get(d).copied().unwrap_or(0)))])
        .collect();
    TimeSeriesFrame::new(index, vec![name], values).map_err(|e| SpatialError::Csv(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BBox {
    pub lat_min: f64,
    pub lon_min: f64,
    pub lat_max: f64,
    pub lon_max: f64,
}

impl BBox {
    pub const WORLD: BBox = BBox {
        lat_min: -90.0,
        lon_min: -180.0,
        lat_max: 90.0,
        lon_max: 180.0,
    };

    pub fn validate(&self) -> Result<(), SpatialError> {
        let all = [self.lat_min, self.lon_min, self.lat_max, self.lon_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SpatialError::InvalidBBox("non-finite bound".into()));
        }
        if self.lat_min > self.lat_max {
            return Err(SpatialError::InvalidBBox(format!("lat_min {} > lat_max {}", self.lat_min, self.lat_max)));
        }
        if self.lon_min > self.lon_max {
            return Err(SpatialError::InvalidBBox(format!("lon_min {} > lon_max {}", self.lon_min, self.lon_max)));
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

/// Parses `lat_min,lon_min,lat_max,lon_max`.
impl FromStr for BBox {
    type Err = SpatialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SpatialError::InvalidBBox(format!("`{s}`: {e}")))?;
        let [lat_min, lon_min, lat_max, lon_max] = parts[..] else {
            return Err(SpatialError::InvalidBBox(format!("`{s}` needs four comma-separated numbers")));
        };
        let bbox = BBox {
            lat_min,
            lon_min,
            lat_max,
            lon_max,
        };
        bbox.validate()?;
        Ok(bbox)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.lat_min, self.lon_min, self.lat_max, self.lon_max)
    }
}

/// Latest record per IMO at or before `at` (no cut-off when `None`),
/// restricted to `bbox`. Output is ordered by IMO.
pub fn vessels_in_view(
    records: &[VesselRecord],
    bbox: &BBox,
    at: Option<DateTime<Utc>>,
) -> Result<Vec<VesselRecord>, SpatialError> {
    bbox.validate()?;
    let mut latest: BTreeMap<u32, &VesselRecord> = BTreeMap::new();
    for r in records.iter().filter(|r| at.is_none_or(|t| r.timestamp <= t)) {
        match latest.get(&r.imo) {
            Some(prev) if prev.timestamp > r.timestamp => {}
            _ => {
                latest.insert(r.imo, r);
            }
        }
    }
    Ok(latest
        .into_values()
        .filter(|r| bbox.contains(r.lat, r.lon))
        .cloned()
        .collect())
}

const VESSEL_HEADER: [&str; 7] = ["imo", "timestamp", "lat", "lon", "heading", "speed_knots", "cargo_status"];

/// Accepts RFC 3339 timestamps, or naive date-times / dates taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(format!("`{s}` is not an ISO-8601 timestamp"))
}

/// Reads the vessel CSV format; every record is validated and errors name
/// the 1-based file line.
pub fn load_vessels<R: Read>(source: R) -> Result<Vec<VesselRecord>, SpatialError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = reader.headers().map_err(|e| SpatialError::Csv(e.to_string()))?;
    let names: Vec<&str> = header.iter().collect();
    if names != VESSEL_HEADER {
        return Err(SpatialError::Parse {
            row: 1,
            message: format!("expected header `{}`", VESSEL_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            SpatialError::Parse {
                row,
                message: e.to_string(),
            }
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| SpatialError::Parse { row, message };
        let number = |i: usize| -> Result<f64, SpatialError> {
            record[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("{} `{}` is not a number", VESSEL_HEADER[i], &record[i])))
        };
        let imo = record[0]
            .parse::<u32>()
            .map_err(|_| bad(format!("imo `{}` is not a 7-digit number", &record[0])))?;
        let vessel = VesselRecord {
            imo,
            timestamp: parse_timestamp(&record[1]).map_err(bad)?,
            lat: number(2)?,
            lon: number(3)?,
            heading: number(4)?,
            speed_knots: number(5)?,
            cargo_status: record[6].parse().map_err(bad)?,
        };
        vessel.validate().map_err(|e| bad(e.to_string()))?;
        out.push(vessel);
    }
    Ok(out)
}

pub fn write_vessels<W: Write>(records: &[VesselRecord], sink: W) -> Result<(), SpatialError> {
    let mut writer = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| SpatialError::Csv(e.to_string());
    writer.write_record(VESSEL_HEADER).map_err(csv_err)?;
    for r in records {
        writer
            .write_record([
                r.imo.to_string(),
                r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
                r.lat.to_string(),
                r.lon.to_string(),
                r.heading.to_string(),
                r.speed_knots.to_string(),
                r.cargo_status.as_str().to_string(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| SpatialError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn at(day: u32, hour: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, day, hour, 0, 0).unwrap()
    }

    fn vessel(imo: u32, t: DateTime<Utc>, lat: f64, lon: f64, heading: f64, status: CargoStatus) -> VesselRecord {
        VesselRecord {
            imo,
            timestamp: t,
            lat,
            lon,
            heading,
            speed_knots: 12.0,
            cargo_status: status,
        }
    }

    fn port() -> PortRegion {
        PortRegion::new("Tubarao", GeoPoint::new(0.0, 0.0), 50.0).unwrap()
    }

    #[test]
    fn check_digits() {
        assert!(imo_is_valid(9074729));
        assert!(!imo_is_valid(9074728));
        assert!(!imo_is_valid(907472));
        assert_eq!(imo_with_check_digit(907472), Some(9074729));
    }

    #[test]
    fn haversine_examples() {
        let o = GeoPoint::new(0.0, 0.0);
        assert_eq!(haversine_km(o, o).unwrap(), 0.0);
        let east = haversine_km(o, GeoPoint::new(0.0, 1.0)).unwrap();
        assert!((east - 6371.0 * std::f64::consts::PI / 180.0).abs() < 1e-9);
        assert!((east - 111.195).abs() < 0.01);
        let half = haversine_km(o, GeoPoint::new(0.0, 180.0)).unwrap();
        assert!((half - 6371.0 * std::f64::consts::PI).abs() < 1e-6);
        assert!((half - 20015.1).abs() < 1.0);
        assert!(matches!(
            haversine_km(o, GeoPoint::new(91.0, 0.0)),
            Err(SpatialError::InvalidCoordinate { .. })
        ));
        assert!(haversine_km(o, GeoPoint::new(0.0, -180.0)).is_err());
    }

    #[test]
    fn bearing_quadrants() {
        let o = GeoPoint::new(0.0, 0.0);
        assert_eq!(bearing_deg(o, GeoPoint::new(1.0, 0.0)).unwrap(), 0.0);
        assert_eq!(bearing_deg(o, GeoPoint::new(0.0, 1.0)).unwrap(), 90.0);
        assert_eq!(bearing_deg(o, GeoPoint::new(-1.0, 0.0)).unwrap(), 180.0);
        assert_eq!(bearing_deg(o, GeoPoint::new(0.0, -1.0)).unwrap(), 270.0);
        assert_eq!(bearing_deg(o, o), Err(SpatialError::UndefinedBearing));
    }

    #[test]
    fn approach_examples() {
        let p = port();
        let south = vessel(9074729, at(1, 0), -2.0, 0.0, 0.0, CargoStatus::Ballast);
        assert!(is_approaching(&south, &p, 45.0).unwrap());
        let away = VesselRecord { heading: 180.0, ..south.clone() };
        assert!(!is_approaching(&away, &p, 45.0).unwrap());
        let inside = vessel(9074729, at(1, 0), 0.1, 0.0, 0.0, CargoStatus::Ballast);
        assert_eq!(is_approaching(&inside, &p, 45.0), Err(SpatialError::AlreadyInPort));
        assert_eq!(is_approaching(&south, &p, 0.0), Err(SpatialError::InvalidTolerance(0.0)));
    }

    #[test]
    fn circular_distance_across_north() {
        assert_eq!(angular_distance(350.0, 5.0), 15.0);
        assert_eq!(angular_distance(5.0, 350.0), 15.0);
        let start = GeoPoint::new(-2.0, 0.0);
        let p = PortRegion::new("n", GeoPoint::new(-2.0 + 2.0 * 5f64.to_radians().cos(), 2.0 * 5f64.to_radians().sin()), 1.0)
            .unwrap();
        let bearing = bearing_deg(start, p.center).unwrap();
        assert!((bearing - 5.0).abs() < 0.1);
        let v = vessel(9074729, at(1, 0), start.lat, start.lon, (bearing - 15.0).rem_euclid(360.0), CargoStatus::Ballast);
        assert!(v.heading > 349.0);
        assert!(is_approaching(&v, &p, 20.0).unwrap());
        assert!(!is_approaching(&v, &p, 10.0).unwrap());
    }

    #[test]
    fn supply_examples() {
        let p = port();
        let empty = aggregate_supply(&[], &p, 45.0).unwrap();
        assert_eq!(empty.len(), 0);
        assert_eq!(empty.variables(), ["ballast_approaching_tubarao"]);

        let records: Vec<VesselRecord> = (0..3)
            .map(|h| vessel(9074729, at(2, h), -2.0, 0.0, 0.0, CargoStatus::Ballast))
            .collect();
        let f = aggregate_supply(&records, &p, 45.0).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.rows()[0][0], Some(1.0));

        let mixed = [
            vessel(9074729, at(2, 0), -2.0, 0.0, 0.0, CargoStatus::Ballast),
            vessel(9176187, at(2, 0), -3.0, 0.0, 0.0, CargoStatus::Laden),
        ];
        let f = aggregate_supply(&mixed, &p, 45.0).unwrap();
        assert_eq!(f.rows()[0][0], Some(1.0));
    }

    #[test]
    fn supply_fills_gap_weeks_with_zero() {
        let p = port();
        let records = [
            vessel(9074729, at(1, 0), -2.0, 0.0, 0.0, CargoStatus::Ballast),
            vessel(9074729, at(22, 0), -2.0, 0.0, 0.0, CargoStatus::Ballast),
        ];
        let f = aggregate_supply(&records, &p, 45.0).unwrap();
        let counts: Vec<Option<f64>> = f.rows().iter().map(|r| r[0]).collect();
        assert_eq!(counts, [Some(1.0), Some(0.0), Some(0.0), Some(1.0)]);
        assert_eq!(f.index()[0], NaiveDate::from_ymd_opt(2024, 1, 1).unwrap());
    }

    #[test]
    fn latest_record_in_week_decides() {
        let p = port();
        let records = [
            vessel(9074729, at(2, 5), -2.0, 0.0, 180.0, CargoStatus::Ballast),
            vessel(9074729, at(2, 1), -2.0, 0.0, 0.0, CargoStatus::Ballast),
        ];
        let f = aggregate_supply(&records, &p, 45.0).unwrap();
        assert_eq!(f.rows()[0][0], Some(0.0));
    }

    #[test]
    fn view_examples() {
        assert!(vessels_in_view(&[], &BBox::WORLD, None).unwrap().is_empty());
        let records = [
            vessel(9074729, at(1, 0), 1.0, 1.0, 0.0, CargoStatus::Laden),
            vessel(9074729, at(2, 0), 2.0, 2.0, 0.0, CargoStatus::Laden),
        ];
        let seen = vessels_in_view(&records, &BBox::WORLD, Some(at(2, 0))).unwrap();
        assert_eq!(seen, vec![records[1].clone()]);
        let earlier = vessels_in_view(&records, &BBox::WORLD, Some(at(1, 12))).unwrap();
        assert_eq!(earlier, vec![records[0].clone()]);
        let inverted = "10,0,-10,5".parse::<BBox>();
        assert!(matches!(inverted, Err(SpatialError::InvalidBBox(_))));
        let tight: BBox = "1.5,1.5,3,3".parse().unwrap();
        assert_eq!(vessels_in_view(&records, &tight, Some(at(1, 12))).unwrap(), vec![]);
    }

    #[test]
    fn vessel_csv_round_trip_and_errors() {
        let records = vec![
            vessel(9074729, at(1, 0), 1.5, -40.25, 12.0, CargoStatus::Laden),
            vessel(9176187, at(3, 7), -20.0, 179.0, 359.5, CargoStatus::Ballast),
        ];
        let mut buf = Vec::new();
        write_vessels(&records, &mut buf).unwrap();
        assert_eq!(load_vessels(buf.as_slice()).unwrap(), records);

        let bad = "imo,timestamp,lat,lon,heading,speed_knots,cargo_status\n\
                   9074729,2024-01-01T00:00:00Z,0,0,0,1,laden\n\
                   9074728,2024-01-01T00:00:00Z,0,0,0,1,laden\n";
        match load_vessels(bad.as_bytes()) {
            Err(SpatialError::Parse { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("check digit"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let status = "imo,timestamp,lat,lon,heading,speed_knots,cargo_status\n\
                      9074729,2024-01-01,0,0,0,1,empty\n";
        assert!(matches!(load_vessels(status.as_bytes()), Err(SpatialError::Parse { row: 2, .. })));
    }

    /// Independent recount: for every (week, IMO) pick the record with the
    /// greatest (timestamp, input position) and test it directly.
    fn brute_force(records: &[VesselRecord], port: &PortRegion, tol: f64) -> BTreeMap<NaiveDate, u32> {
        let mut out = BTreeMap::new();
        let weeks: std::collections::BTreeSet<NaiveDate> = records.iter().map(|r| week_start(r.timestamp)).collect();
        for w in weeks {
            let mut count = 0;
            let imos: std::collections::BTreeSet<u32> = records.iter().map(|r| r.imo).collect();
            for imo in imos {
                let pick = records
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.imo == imo && week_start(r.timestamp) == w)
                    .max_by_key(|(i, r)| (r.timestamp, *i));
                if let Some((_, r)) = pick {
                    let ok = r.cargo_status == CargoStatus::Ballast && is_approaching(r, port, tol).unwrap_or(false);
                    count += u32::from(ok);
                }
            }
            out.insert(w, count);
        }
        out
    }

    fn arb_records() -> impl Strategy<Value = Vec<VesselRecord>> {
        let imos = [9074729u32, 9176187, 9241061, 9320439];
        prop::collection::vec(
            (0..4usize, 0..40u32, -3.0..3.0f64, -3.0..3.0f64, 0.0..360.0f64, any::<bool>()),
            0..25,
        )
        .prop_map(move |rows| {
            rows.into_iter()
                .map(|(i, hours, lat, lon, heading, ballast)| {
                    vessel(
                        imos[i],
                        at(1, 0) + Duration::hours(i64::from(hours) * 12),
                        lat,
                        lon,
                        heading,
                        if ballast { CargoStatus::Ballast } else { CargoStatus::Laden },
                    )
                })
                .collect()
        })
    }

    fn point() -> impl Strategy<Value = GeoPoint> {
        (-90.0..=90.0f64, -179.999..=180.0f64).prop_map(|(a, b)| GeoPoint::new(a, b))
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in point(), b in point(), c in point()) {
            let ab = haversine_km(a, b).unwrap();
            let bc = haversine_km(b, c).unwrap();
            let ac = haversine_km(a, c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-6);
            prop_assert_eq!(ab, haversine_km(b, a).unwrap());
        }

        #[test]
        fn reverse_bearing_is_opposite(lat in -60.0..60.0f64, lon in -170.0..170.0f64,
                                       dlat in -0.5..0.5f64, dlon in -0.5..0.5f64) {
            let a = GeoPoint::new(lat, lon);
            let b = GeoPoint::new(lat + dlat, lon + dlon);
            prop_assume!(a != b);
            prop_assume!(haversine_km(a, b).unwrap() < 100.0);
            let fwd = bearing_deg(a, b).unwrap();
            let back = bearing_deg(b, a).unwrap();
            prop_assert!(angular_distance(back, fwd + 180.0) < 1.0);
        }

        #[test]
        fn supply_matches_recount(records in arb_records()) {
            let p = port();
            let frame = aggregate_supply(&records, &p, 45.0).unwrap();
            let expected = brute_force(&records, &p, 45.0);
            for (date, row) in frame.index().iter().zip(frame.rows()) {
                let want = expected.get(date).copied().unwrap_or(0);
                prop_assert_eq!(row[0], Some(f64::from(want)));
            }
            prop_assert_eq!(frame.is_empty(), records.is_empty());
        }

        #[test]
        fn heading_wraps(lat in -5.0..-1.0f64, lon in -3.0..3.0f64, heading in 0.0..360.0f64) {
            let v = vessel(9074729, at(1, 0), lat, lon, heading, CargoStatus::Ballast);
            let wrapped = VesselRecord { heading: heading + 360.0, ..v.clone() };
            prop_assert_eq!(is_approaching(&v, &port(), 45.0), is_approaching(&wrapped, &port(), 45.0));
        }
    }
}
