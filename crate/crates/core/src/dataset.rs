//! Crime-record ingestion and per-offender series.

use std::collections::HashMap;
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{latlon_to_utm, GeoPoint, UtmPoint, JURISDICTION_ZONE};

/// Header of the canonical geographic CSV.
pub const GEO_HEADER: [&str; 7] = [
    "offender_id",
    "crime_id",
    "ucr_code",
    "crime_lat",
    "crime_lon",
    "anchor_lat",
    "anchor_lon",
];

/// Header of the planar variant (kilometres in the jurisdiction zone).
pub const UTM_HEADER: [&str; 7] = [
    "offender_id",
    "crime_id",
    "ucr_code",
    "crime_easting_km",
    "crime_northing_km",
    "anchor_easting_km",
    "anchor_northing_km",
];

pub const MIN_SERIES_LEN: usize = 3;
const ANCHOR_TOLERANCE: f64 = 1e-9;

/// A coordinate as it appears in an input file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Position {
    Geo(GeoPoint),
    Planar(UtmPoint),
}

impl Position {
    fn project(&self) -> Result<UtmPoint> {
        match self {
            Position::Geo(g) => latlon_to_utm(*g, Some(JURISDICTION_ZONE)),
            Position::Planar(p) => Ok(*p),
        }
    }

    fn coords(&self) -> (f64, f64) {
        match self {
            Position::Geo(g) => (g.lat, g.lon),
            Position::Planar(p) => (p.easting, p.northing),
        }
    }

    fn close_to(&self, other: &Position) -> bool {
        let (a0, a1) = self.coords();
        let (b0, b1) = other.coords();
        std::mem::discriminant(self) == std::mem::discriminant(other)
            && (a0 - b0).abs() <= ANCHOR_TOLERANCE
            && (a1 - b1).abs() <= ANCHOR_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrimeRecord {
    pub offender_id: String,
    pub crime_id: String,
    pub ucr_code: String,
    pub crime_site: Position,
    pub anchor: Option<Position>,
}

/// One offender's crimes in the jurisdiction frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrimeSeries {
    pub offender_id: String,
    pub sites: Vec<UtmPoint>,
    /// Ground truth, used only for evaluation and as prior donor data.
    pub anchor: Option<UtmPoint>,
    /// Source records, kept for re-serialization.
    pub records: Vec<CrimeRecord>,
}

impl CrimeSeries {
    pub fn n(&self) -> usize {
        self.sites.len()
    }

    /// Series built directly from planar points (synthetic data, tests).
    pub fn from_planar(offender_id: &str, sites: Vec<UtmPoint>, anchor: Option<UtmPoint>) -> Self {
        let records = sites
            .iter()
            .enumerate()
            .map(|(i, s)| CrimeRecord {
                offender_id: offender_id.to_string(),
                crime_id: format!("{offender_id}-{i}"),
                ucr_code: String::new(),
                crime_site: Position::Planar(*s),
                anchor: anchor.map(Position::Planar),
            })
            .collect();
        Self {
            offender_id: offender_id.to_string(),
            sites,
            anchor,
            records,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub series: Vec<CrimeSeries>,
    pub total_crimes: usize,
}

impl Dataset {
    pub fn from_series(series: Vec<CrimeSeries>) -> Self {
        let total_crimes = series.iter().map(CrimeSeries::n).sum();
        Self { series, total_crimes }
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn get(&self, offender_id: &str) -> Option<&CrimeSeries> {
        self.series.iter().find(|s| s.offender_id == offender_id)
    }
}

enum Layout {
    Geo,
    Planar,
}

fn column_indices(headers: &csv::StringRecord) -> Result<(Layout, [usize; 7])> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let find = |layout: &[&str; 7]| -> std::result::Result<[usize; 7], String> {
        let mut idx = [0usize; 7];
        for (slot, col) in idx.iter_mut().zip(layout.iter()) {
            *slot = names.iter().position(|h| h == col).ok_or_else(|| col.to_string())?;
        }
        Ok(idx)
    };
    if names.iter().any(|h| *h == "crime_easting_km") {
        return find(&UTM_HEADER)
            .map(|i| (Layout::Planar, i))
            .map_err(|c| Error::Schema(format!("missing column `{c}`")));
    }
    find(&GEO_HEADER)
        .map(|i| (Layout::Geo, i))
        .map_err(|c| Error::Schema(format!("missing column `{c}`")))
}

fn parse_number(field: &str, column: &str, row: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Row {
        row,
        message: format!("{column}: cannot parse `{field}`"),
    })
}

fn parse_position(
    record: &csv::StringRecord,
    first: (usize, &str),
    second: (usize, &str),
    layout: &Layout,
    row: usize,
) -> Result<Option<Position>> {
    let a = record.get(first.0).unwrap_or("").trim();
    let b = record.get(second.0).unwrap_or("").trim();
    if a.is_empty() && b.is_empty() {
        return Ok(None);
    }
    let u = parse_number(a, first.1, row)?;
    let v = parse_number(b, second.1, row)?;
    match layout {
        Layout::Geo => {
            if !u.is_finite() || !(-90.0..=90.0).contains(&u) {
                return Err(Error::Row {
                    row,
                    message: format!("{}: value {u} outside [-90, 90]", first.1),
                });
            }
            if !v.is_finite() || !(-180.0..180.0).contains(&v) {
                return Err(Error::Row {
                    row,
                    message: format!("{}: value {v} outside [-180, 180)", second.1),
                });
            }
            Ok(Some(Position::Geo(GeoPoint { lat: u, lon: v })))
        }
        Layout::Planar => {
            if !u.is_finite() || !v.is_finite() {
                return Err(Error::Row {
                    row,
                    message: format!("{}/{}: non-finite coordinate", first.1, second.1),
                });
            }
            Ok(Some(Position::Planar(UtmPoint::new(JURISDICTION_ZONE, u, v))))
        }
    }
}

/// Parse the canonical CSV (or its planar variant). Row numbers in errors
/// are 1-based file line numbers, the header being line 1.
pub fn parse_records<R: Read>(reader: R) -> Result<Vec<CrimeRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (layout, idx) = column_indices(&headers)?;
    let names = match layout {
        Layout::Geo => GEO_HEADER,
        Layout::Planar => UTM_HEADER,
    };

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let offender_id = rec.get(idx[0]).unwrap_or("").trim().to_string();
        if offender_id.is_empty() {
            return Err(Error::Row {
                row,
                message: "offender_id: empty".into(),
            });
        }
        let crime_site =
            parse_position(&rec, (idx[3], names[3]), (idx[4], names[4]), &layout, row)?.ok_or_else(|| Error::Row {
                row,
                message: format!("{}: missing crime coordinates", names[3]),
            })?;
        let anchor = parse_position(&rec, (idx[5], names[5]), (idx[6], names[6]), &layout, row)?;
        out.push(CrimeRecord {
            offender_id,
            crime_id: rec.get(idx[1]).unwrap_or("").trim().to_string(),
            ucr_code: rec.get(idx[2]).unwrap_or("").trim().to_string(),
            crime_site,
            anchor,
        });
    }
    Ok(out)
}

/// Group records by offender (first-appearance order), project to the
/// jurisdiction frame and drop series shorter than three crimes.
pub fn group_into_series(records: Vec<CrimeRecord>) -> Result<Dataset> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<CrimeRecord>> = HashMap::new();
    for r in records {
        if !groups.contains_key(&r.offender_id) {
            order.push(r.offender_id.clone());
        }
        groups.entry(r.offender_id.clone()).or_default().push(r);
    }

    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let recs = groups.remove(&id).expect("grouped id");
        if recs.len() < MIN_SERIES_LEN {
            warn!(
                "offender {id}: {} crimes, fewer than {MIN_SERIES_LEN}; excluded",
                recs.len()
            );
            continue;
        }
        let anchor_pos = recs[0].anchor;
        for r in &recs[1..] {
            let consistent = match (&anchor_pos, &r.anchor) {
                (None, None) => true,
                (Some(a), Some(b)) => a.close_to(b),
                _ => false,
            };
            if !consistent {
                return Err(Error::Data(format!(
                    "offender {id}: inconsistent anchor coordinates (crime {})",
                    r.crime_id
                )));
            }
        }
        let sites = recs
            .iter()
            .map(|r| r.crime_site.project())
            .collect::<Result<Vec<_>>>()?;
        let anchor = anchor_pos.map(|a| a.project()).transpose()?;
        series.push(CrimeSeries {
            offender_id: id,
            sites,
            anchor,
            records: recs,
        });
    }
    Ok(Dataset::from_series(series))
}

pub fn load_dataset<R: Read>(reader: R) -> Result<Dataset> {
    group_into_series(parse_records(reader)?)
}

/// Every series except `offender_id`.
pub fn leave_one_out(ds: &Dataset, offender_id: &str) -> Result<Dataset> {
    if ds.get(offender_id).is_none() {
        return Err(Error::UnknownOffender(offender_id.to_string()));
    }
    Ok(Dataset::from_series(
        ds.series
            .iter()
            .filter(|s| s.offender_id != offender_id)
            .cloned()
            .collect(),
    ))
}

/// Write the dataset's source records back out. The layout follows the
/// first record's coordinate type.
pub fn write_records<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let planar = ds
        .series
        .first()
        .and_then(|s| s.records.first())
        .map(|r| matches!(r.crime_site, Position::Planar(_)))
        .unwrap_or(false);
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(if planar { UTM_HEADER } else { GEO_HEADER })?;
    for s in &ds.series {
        for r in &s.records {
            let (c0, c1) = r.crime_site.coords();
            let (a0, a1) = match r.anchor {
                Some(a) => {
                    let (u, v) = a.coords();
                    (format!("{u:.12}"), format!("{v:.12}"))
                }
                None => (String::new(), String::new()),
            };
            wtr.write_record([
                r.offender_id.as_str(),
                r.crime_id.as_str(),
                r.ucr_code.as_str(),
                &format!("{c0:.12}"),
                &format!("{c1:.12}"),
                &a0,
                &a1,
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "offender_id,crime_id,ucr_code,crime_lat,crime_lon,anchor_lat,anchor_lon\n";

    #[test]
    fn parses_single_row() {
        let text = format!("{HEADER}77,1001,0624,39.30,-76.61,39.28,-76.60\n");
        let recs = parse_records(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].offender_id, "77");
        assert_eq!(recs[0].ucr_code, "0624");
        assert_eq!(
            recs[0].crime_site,
            Position::Geo(GeoPoint {
                lat: 39.30,
                lon: -76.61
            })
        );
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_records(HEADER.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn crlf_line_endings() {
        let text = "offender_id,crime_id,ucr_code,crime_lat,crime_lon,anchor_lat,anchor_lon\r\n\
                    1,a,x,39.3,-76.6,39.3,-76.6\r\n";
        assert_eq!(parse_records(text.as_bytes()).unwrap().len(), 1);
    }

    #[test]
    fn latitude_out_of_range_names_column() {
        let text = format!("{HEADER}77,1001,0624,91.0,-76.61,39.28,-76.60\n");
        let err = parse_records(text.as_bytes()).unwrap_err();
        match err {
            Error::Row { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("crime_lat"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unparseable_coordinate_reports_row() {
        let text = format!("{HEADER}1,a,x,39.3,-76.6,39.3,-76.6\n1,b,x,abc,-76.6,39.3,-76.6\n");
        assert!(matches!(parse_records(text.as_bytes()), Err(Error::Row { row: 3, .. })));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let text = "offender_id,crime_id,crime_lat,crime_lon,anchor_lat,anchor_lon\n";
        assert!(matches!(parse_records(text.as_bytes()), Err(Error::Schema(_))));
    }

    fn rows(id: &str, n: usize) -> String {
        (0..n)
            .map(|i| format!("{id},{i},0624,{},-76.6,39.28,-76.60\n", 39.3 + 0.01 * i as f64))
            .collect()
    }

    #[test]
    fn groups_and_drops_short_series() {
        let text = format!("{HEADER}{}{}", rows("a", 3), rows("b", 2));
        let ds = load_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.series[0].n(), 3);
        assert_eq!(ds.total_crimes, 3);
        assert!(ds.series[0].sites.iter().all(|s| s.zone == 18));
    }

    #[test]
    fn inconsistent_anchor_is_data_error() {
        let text = format!("{HEADER}{}a,9,0624,39.3,-76.6,39.29,-76.60\n", rows("a", 3));
        assert!(matches!(load_dataset(text.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn leave_one_out_and_restore() {
        let text = format!("{HEADER}{}{}{}", rows("a", 3), rows("b", 4), rows("c", 5));
        let ds = load_dataset(text.as_bytes()).unwrap();
        let loo = leave_one_out(&ds, "b").unwrap();
        assert_eq!(loo.len(), 2);
        assert_eq!(loo.total_crimes, 8);
        assert!(loo.get("b").is_none());
        let mut ids: Vec<_> = loo.series.iter().map(|s| s.offender_id.clone()).collect();
        ids.push("b".into());
        ids.sort();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(matches!(leave_one_out(&ds, "zz"), Err(Error::UnknownOffender(_))));

        let single = Dataset::from_series(vec![ds.series[0].clone()]);
        assert!(leave_one_out(&single, "a").unwrap().is_empty());
    }

    #[test]
    fn planar_layout_round_trip() {
        let s = CrimeSeries::from_planar(
            "s1",
            vec![
                UtmPoint::new(18, 350.0, 4360.0),
                UtmPoint::new(18, 351.5, 4361.0),
                UtmPoint::new(18, 349.25, 4359.5),
            ],
            Some(UtmPoint::new(18, 350.1, 4360.2)),
        );
        let ds = Dataset::from_series(vec![s]);
        let mut buf = Vec::new();
        write_records(&ds, &mut buf).unwrap();
        let back = load_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.series[0].sites, ds.series[0].sites);
        assert_eq!(back.series[0].anchor, ds.series[0].anchor);
    }
}
