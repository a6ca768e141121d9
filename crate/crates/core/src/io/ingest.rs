//! CSV ingestion of sensor readings, bucketed into ticks.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};

use super::{assign_sectors, IoError};
use crate::model::{Atom, Interner, Term, Time};
use crate::stream::Stream;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Pollution,
    Traffic,
    Parking,
    Weather,
}

impl SensorKind {
    pub fn predicate(self) -> &'static str {
        match self {
            SensorKind::Pollution => "pollution",
            SensorKind::Traffic => "traffic",
            SensorKind::Parking => "parking",
            SensorKind::Weather => "weather",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "pollution" => SensorKind::Pollution,
            "traffic" => SensorKind::Traffic,
            "parking" => SensorKind::Parking,
            "weather" => SensorKind::Weather,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorMeta {
    pub id: String,
    pub kind: SensorKind,
    pub sector: u32,
    pub lat: f64,
    pub lon: f64,
}

pub type SensorTable = BTreeMap<String, SensorMeta>;

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub tick_minutes: u64,
    /// Wall-clock time of tick 0; defaults to the earliest reading.
    pub start: Option<NaiveDateTime>,
    /// Emit `pollution(TYPE, VALUE, SENSOR, SECTOR)` instead of the 3-ary form.
    pub typed_pollution: bool,
    pub timestamp_column: String,
    pub sensor_column: String,
    pub value_column: String,
    /// If present and non-empty, the measure id; otherwise the sensor id is.
    pub metric_column: String,
    pub type_column: String,
    /// Wide files: every listed column present in a file is one reading per
    /// row, with measure id `<sensor>_<column>`. Empty means one `value`
    /// column per row.
    pub measure_columns: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            tick_minutes: 5,
            start: None,
            typed_pollution: false,
            timestamp_column: "timestamp".into(),
            sensor_column: "sensor".into(),
            value_column: "value".into(),
            metric_column: "metric".into(),
            type_column: "type".into(),
            measure_columns: Vec::new(),
        }
    }
}

/// Reading accounting for one ingestion run; a row of a wide file holds one
/// reading per measure cell. `facts` always equals
/// `rows_accepted - rows_superseded - rows_collapsed`.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct LoadReport {
    pub rows_read: u64,
    pub rows_accepted: u64,
    /// Earlier readings of the same sensor and measure within one tick.
    pub rows_superseded: u64,
    /// Readings identical to a fact already present at the same tick.
    pub rows_collapsed: u64,
    pub unknown_sensor_rows: u64,
    pub rows_before_start: u64,
    pub facts: u64,
    pub ticks: u64,
}

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads `id,kind,lat,lon[,sector]`. Without a sector column, sensors are
/// assigned to `sectors` grid cells by position.
pub fn load_sensor_table(path: &Path, sectors: Option<u32>) -> Result<SensorTable, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let bad = |row: u64, message: String| IoError::BadRow {
        path: path.to_path_buf(),
        row,
        message,
    };
    let (Some(id_c), Some(kind_c), Some(lat_c), Some(lon_c)) =
        (col("id"), col("kind"), col("lat"), col("lon"))
    else {
        return Err(bad(
            0,
            "sensor table needs columns id, kind, lat, lon".into(),
        ));
    };
    let sector_c = col("sector");
    let mut table = SensorTable::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i as u64 + 1;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let kind = SensorKind::parse(field(kind_c))
            .ok_or_else(|| bad(row, format!("unknown sensor kind `{}`", field(kind_c))))?;
        let num = |c: usize| {
            field(c)
                .parse::<f64>()
                .map_err(|_| bad(row, format!("bad number `{}`", field(c))))
        };
        let sector = match sector_c {
            Some(c) => field(c)
                .parse::<u32>()
                .map_err(|_| bad(row, format!("bad sector `{}`", field(c))))?,
            None => 0,
        };
        let meta = SensorMeta {
            id: field(id_c).to_string(),
            kind,
            sector,
            lat: num(lat_c)?,
            lon: num(lon_c)?,
        };
        table.insert(meta.id.clone(), meta);
    }
    if sector_c.is_none() {
        let k =
            sectors.ok_or_else(|| bad(0, "no sector column and no sector count given".into()))?;
        let positions: Vec<(String, f64, f64)> = table
            .values()
            .map(|m| (m.id.clone(), m.lat, m.lon))
            .collect();
        for (id, s) in assign_sectors(&positions, k) {
            table.get_mut(&id).expect("known id").sector = s;
        }
    }
    Ok(table)
}

struct Reading {
    ts: NaiveDateTime,
    order: (usize, u64),
    sensor: String,
    measure: Term,
    value: f64,
}

#[derive(Default)]
struct FileScan {
    readings: Vec<Reading>,
    rows_read: u64,
    unknown: u64,
}

fn scan_file(
    idx: usize,
    path: &PathBuf,
    meta: &SensorTable,
    opts: &LoadOptions,
) -> Result<FileScan, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.clone(),
        source,
    };
    let bad = |row: u64, message: String| IoError::BadRow {
        path: path.clone(),
        row,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let Some(ts_c) = col(&opts.timestamp_column) else {
        return Err(bad(0, "missing timestamp column".into()));
    };
    // without a sensor column, files are named after their sensor
    let sensor_c = col(&opts.sensor_column);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let values: Vec<(usize, Option<&str>)> = if opts.measure_columns.is_empty() {
        let c = col(&opts.value_column).ok_or_else(|| bad(0, "missing value column".into()))?;
        vec![(c, None)]
    } else {
        let v: Vec<_> = opts
            .measure_columns
            .iter()
            .filter_map(|m| col(m).map(|c| (c, Some(m.as_str()))))
            .collect();
        if v.is_empty() {
            return Err(bad(0, "none of the measure columns is present".into()));
        }
        v
    };
    let metric_c = col(&opts.metric_column);
    let type_c = col(&opts.type_column);
    let mut scan = FileScan::default();
    let mut warned = std::collections::HashSet::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i as u64 + 1;
        scan.rows_read += 1;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let ts = parse_timestamp(field(ts_c))
            .ok_or_else(|| bad(row, format!("unparseable timestamp `{}`", field(ts_c))))?;
        let sensor = sensor_c.map_or(stem.as_str(), field);
        let Some(m) = meta.get(sensor) else {
            if warned.insert(sensor.to_string()) {
                log::warn!(
                    "{}: skipping rows of unknown sensor `{sensor}`",
                    path.display()
                );
            }
            scan.unknown += 1;
            continue;
        };
        for &(value_c, column) in &values {
            if column.is_some() && field(value_c).is_empty() {
                continue;
            }
            let value: f64 = field(value_c)
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(row, format!("bad value `{}`", field(value_c))))?;
            let measure = if opts.typed_pollution && m.kind == SensorKind::Pollution {
                let c =
                    type_c.ok_or_else(|| bad(row, "typed pollution needs a type column".into()))?;
                let ty: f64 = field(c)
                    .parse()
                    .map_err(|_| bad(row, format!("bad type `{}`", field(c))))?;
                Term::num(ty)
            } else if let Some(column) = column {
                Term::sym(&format!("{sensor}_{column}"))
            } else {
                match metric_c.map(field).filter(|s| !s.is_empty()) {
                    Some(metric) => Term::sym(metric),
                    None => Term::sym(sensor),
                }
            };
            scan.readings.push(Reading {
                ts,
                order: (idx, row),
                sensor: sensor.to_string(),
                measure,
                value,
            });
        }
    }
    Ok(scan)
}

/// Loads CSV readings into a stream of `kind(MEASURE, VALUE, SECTOR)` facts
/// (or the typed 4-ary pollution form). Tick `i` covers the `tick_minutes`
/// starting at `start + i * tick_minutes`; every tick up to the last reading
/// is present, possibly empty. Of several readings of one sensor and measure
/// within a tick, the latest by timestamp wins.
pub fn load_csv(
    paths: &[PathBuf],
    meta: &SensorTable,
    opts: &LoadOptions,
) -> Result<(Stream, LoadReport), IoError> {
    assert!(opts.tick_minutes > 0, "tick length must be positive");
    let indexed: Vec<(usize, &PathBuf)> = paths.iter().enumerate().collect();
    let scans: Vec<FileScan> = crate::par::map(&indexed, |&(i, p)| scan_file(i, p, meta, opts))
        .into_iter()
        .collect::<Result<_, _>>()?;

    let mut report = LoadReport::default();
    let mut readings = Vec::new();
    for s in scans {
        report.rows_read += s.rows_read;
        report.unknown_sensor_rows += s.unknown;
        readings.extend(s.readings);
    }
    let Some(start) = opts.start.or_else(|| readings.iter().map(|r| r.ts).min()) else {
        return Ok((Stream::empty(), report));
    };
    readings.sort_by_key(|r| (r.ts, r.order));
    let tick_secs = 60 * opts.tick_minutes as i64;
    let mut latest: HashMap<(Time, &str, &Term), f64> = HashMap::new();
    let mut order: Vec<(Time, &str, &Term)> = Vec::new();
    for r in &readings {
        let secs = (r.ts - start).num_seconds();
        if secs < 0 {
            report.rows_before_start += 1;
            continue;
        }
        report.rows_accepted += 1;
        let key = (
            secs.div_euclid(tick_secs) as Time,
            r.sensor.as_str(),
            &r.measure,
        );
        if latest.insert(key, r.value).is_some() {
            report.rows_superseded += 1;
        } else {
            order.push(key);
        }
    }
    let Some(last) = order.iter().map(|k| k.0).max() else {
        return Ok((Stream::empty(), report));
    };
    let mut stream = Stream::with_timeline(0, last).expect("valid timeline");
    let mut symbols = Interner::default();
    for key in order {
        let (t, sensor, measure) = key;
        let m = &meta[sensor];
        let value = Term::num(latest[&key]);
        let sector = Term::num(m.sector as f64);
        let measure = match measure {
            Term::Sym(name) => Term::Sym(symbols.intern(name)),
            other => other.clone(),
        };
        let atom = if opts.typed_pollution && m.kind == SensorKind::Pollution {
            let sensor = Term::Sym(symbols.intern(sensor));
            Atom::new(
                symbols.intern("pollution"),
                vec![measure, value, sensor, sector],
            )
        } else {
            Atom::new(
                symbols.intern(m.kind.predicate()),
                vec![measure, value, sector],
            )
        };
        if stream.insert(t, atom).expect("ground, in range") {
            report.facts += 1;
        } else {
            report.rows_collapsed += 1;
        }
    }
    report.ticks = stream.len();
    Ok((stream, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_atom;
    use std::io::Write;

    fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(content.as_bytes())
            .unwrap();
        p
    }

    fn meta() -> SensorTable {
        let mut t = SensorTable::new();
        for (id, kind, sector) in [
            ("s17", SensorKind::Pollution, 3),
            ("t1", SensorKind::Traffic, 1),
        ] {
            t.insert(
                id.into(),
                SensorMeta {
                    id: id.into(),
                    kind,
                    sector,
                    lat: 0.0,
                    lon: 0.0,
                },
            );
        }
        t
    }

    #[test]
    fn rows_are_bucketed_into_ticks() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "timestamp,sensor,value\n2014-08-01 00:00:00,t1,40\n2014-08-01 00:10:00,s17,120\n",
        );
        let (s, r) = load_csv(&[p], &meta(), &LoadOptions::default()).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.contains(2, &parse_atom("pollution(s17,120,3)").unwrap()));
        assert!(s.facts_at(1).is_none());
        assert_eq!(r.facts, 2);
        assert_eq!(r.rows_accepted, 2);
    }

    #[test]
    fn last_reading_in_a_tick_wins_and_counts_add_up() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "timestamp,sensor,value,metric\n\
             2014-08-01T00:01:00,t1,40,speed\n\
             2014-08-01T00:00:00,t1,30,speed\n\
             2014-08-01T00:02:00,t1,50,count\n\
             2014-08-01T00:02:00,ghost,1,x\n",
        );
        let q = write(
            dir.path(),
            "b.csv",
            "timestamp,sensor,value,metric\n2014-08-01T00:03:00,t1,50,count\n",
        );
        let (s, r) = load_csv(&[p, q], &meta(), &LoadOptions::default()).unwrap();
        assert!(s.contains(0, &parse_atom("traffic(speed,40,1)").unwrap()));
        assert!(!s.contains(0, &parse_atom("traffic(speed,30,1)").unwrap()));
        assert_eq!(r.unknown_sensor_rows, 1);
        assert_eq!(r.rows_read, 5);
        assert_eq!(r.rows_superseded, 2);
        assert_eq!(
            r.facts,
            r.rows_accepted - r.rows_superseded - r.rows_collapsed
        );
        assert_eq!(s.fact_count() as u64, r.facts);
    }

    #[test]
    fn typed_pollution_form() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "timestamp,sensor,value,type\n2014-08-01T00:00:00Z,s17,130,2\n",
        );
        let opts = LoadOptions {
            typed_pollution: true,
            ..Default::default()
        };
        let (s, _) = load_csv(&[p], &meta(), &opts).unwrap();
        assert!(s.contains(0, &parse_atom("pollution(2,130,s17,3)").unwrap()));
    }

    #[test]
    fn bad_timestamp_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "timestamp,sensor,value\nyesterday,t1,1\n",
        );
        let err = load_csv(&[p], &meta(), &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("timestamp"));
    }

    #[test]
    fn wide_files_give_one_reading_per_measure_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s17.csv",
            "ozone,particulate,timestamp\n100,7,2014-08-01 00:00:00\n101,,2014-08-01 00:06:00\n",
        );
        let opts = LoadOptions {
            measure_columns: vec!["ozone".into(), "particulate".into(), "absent".into()],
            ..Default::default()
        };
        let (s, r) = load_csv(std::slice::from_ref(&p), &meta(), &opts).unwrap();
        assert!(s.contains(0, &parse_atom("pollution(s17_ozone,100,3)").unwrap()));
        assert!(s.contains(0, &parse_atom("pollution(s17_particulate,7,3)").unwrap()));
        assert!(s.contains(1, &parse_atom("pollution(s17_ozone,101,3)").unwrap()));
        assert_eq!((r.rows_read, r.rows_accepted, r.facts), (2, 3, 3));
        let none = LoadOptions {
            measure_columns: vec!["absent".into()],
            ..Default::default()
        };
        assert!(load_csv(&[p], &meta(), &none).is_err());
    }

    #[test]
    fn no_files_gives_empty_stream() {
        let (s, r) = load_csv(&[], &meta(), &LoadOptions::default()).unwrap();
        assert!(s.is_empty());
        assert_eq!(r, LoadReport::default());
    }

    #[test]
    fn sensor_table_with_grid_assignment() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "meta.csv",
            "id,kind,lat,lon\na,traffic,0,0\nb,pollution,0,1\nc,parking,1,0\nd,weather,1,1\n",
        );
        let t = load_sensor_table(&p, Some(4)).unwrap();
        let sectors: Vec<u32> = t.values().map(|m| m.sector).collect();
        assert_eq!(sectors, vec![1, 2, 3, 4]);
        assert!(load_sensor_table(&p, None).is_err());
    }
}
