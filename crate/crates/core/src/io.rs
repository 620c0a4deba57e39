//! CSV formats for stations, observations and simulated fields.
//!
//! * stations: `station_id,x,y`
//! * observations: `time,<station_id>,...`, empty cells are missing
//! * fields: `station_id,x,y,value`

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::covariance::Location;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub location: Location,
}

/// Observation table with times as rows and stations as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub station_ids: Vec<String>,
    pub times: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl Observations {
    pub fn missing_fraction(&self) -> f64 {
        let cells = self.times.len() * self.station_ids.len();
        if cells == 0 {
            return 0.0;
        }
        let missing = self.values.iter().flatten().filter(|v| v.is_none()).count();
        missing as f64 / cells as f64
    }

    /// Removes stations with no observed value; returns the dropped ids.
    pub fn drop_empty_stations(&mut self) -> Vec<String> {
        let keep: Vec<bool> = (0..self.station_ids.len())
            .map(|j| self.values.iter().any(|row| row[j].is_some()))
            .collect();
        let dropped = self
            .station_ids
            .iter()
            .zip(&keep)
            .filter(|(_, k)| !**k)
            .map(|(id, _)| id.clone())
            .collect();
        let filter = |row: &Vec<Option<f64>>| -> Vec<Option<f64>> {
            row.iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(v, _)| *v)
                .collect()
        };
        self.values = self.values.iter().map(filter).collect();
        self.station_ids = self
            .station_ids
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(id, _)| id.clone())
            .collect();
        dropped
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn schema(path: &str, row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_string(),
        row,
        column,
        message: message.into(),
    }
}

fn parse_number(path: &str, row: usize, column: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| schema(path, row, column, format!("'{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(schema(path, row, column, format!("'{cell}' is not finite")));
    }
    Ok(v)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input)
}

fn check_header(path: &str, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (c, name) in expected.iter().enumerate() {
        match found.get(c).map(str::trim) {
            Some(h) if h == *name => {}
            other => {
                return Err(schema(
                    path,
                    1,
                    c + 1,
                    format!("expected header '{name}', found '{}'", other.unwrap_or("")),
                ))
            }
        }
    }
    Ok(())
}

/// Rows and columns in error messages are 1-based, the header being row 1.
pub fn parse_stations<R: Read>(input: R, path: &str) -> Result<Vec<Station>> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| schema(path, 1, 1, "empty file"))??;
    check_header(path, &header, &["station_id", "x", "y"])?;
    let mut out: Vec<Station> = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let row = k + 2;
        if rec.len() != 3 {
            return Err(schema(
                path,
                row,
                rec.len().min(3) + 1,
                format!("expected 3 fields, found {}", rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(schema(path, row, 1, "empty station id"));
        }
        if out.iter().any(|s| s.id == id) {
            return Err(schema(path, row, 1, format!("duplicate station id '{id}'")));
        }
        let x = parse_number(path, row, 2, &rec[1])?;
        let y = parse_number(path, row, 3, &rec[2])?;
        out.push(Station {
            id,
            location: Location::new(x, y),
        });
    }
    Ok(out)
}

pub fn read_stations(path: &Path) -> Result<Vec<Station>> {
    parse_stations(open(path)?, &path.display().to_string())
}

pub fn parse_observations<R: Read>(input: R, path: &str) -> Result<Observations> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| schema(path, 1, 1, "empty file"))??;
    check_header(path, &header, &["time"])?;
    let station_ids: Vec<String> = header
        .iter()
        .skip(1)
        .map(|h| h.trim().to_string())
        .collect();
    if station_ids.is_empty() {
        return Err(schema(path, 1, 2, "no station columns"));
    }
    for (c, id) in station_ids.iter().enumerate() {
        if id.is_empty() {
            return Err(schema(path, 1, c + 2, "empty station id"));
        }
        if station_ids[..c].contains(id) {
            return Err(schema(
                path,
                1,
                c + 2,
                format!("duplicate station id '{id}'"),
            ));
        }
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let row = k + 2;
        if rec.len() != station_ids.len() + 1 {
            return Err(schema(
                path,
                row,
                rec.len().min(station_ids.len() + 1) + 1,
                format!(
                    "expected {} fields, found {}",
                    station_ids.len() + 1,
                    rec.len()
                ),
            ));
        }
        times.push(rec[0].trim().to_string());
        let row_values = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(c, cell)| {
                if cell.trim().is_empty() {
                    Ok(None)
                } else {
                    parse_number(path, row, c + 2, cell).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(row_values);
    }
    Ok(Observations {
        station_ids,
        times,
        values,
    })
}

pub fn read_observations(path: &Path) -> Result<Observations> {
    parse_observations(open(path)?, &path.display().to_string())
}

pub fn write_observations<W: Write>(out: W, obs: &Observations) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(obs.station_ids.iter().cloned());
    w.write_record(&header)?;
    for (t, row) in obs.times.iter().zip(&obs.values) {
        let mut rec = vec![t.clone()];
        rec.extend(
            row.iter()
                .map(|v| v.map_or(String::new(), |x| x.to_string())),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_stations<W: Write>(out: W, stations: &[Station]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station_id", "x", "y"])?;
    for s in stations {
        w.write_record([
            s.id.clone(),
            s.location.x.to_string(),
            s.location.y.to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}

/// Writes `station_id,x,y,value` rows; station ids are the row numbers.
pub fn write_field<W: Write>(out: W, locs: &[Location], values: &[f64]) -> Result<()> {
    if locs.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sites but {} values",
            locs.len(),
            values.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station_id", "x", "y", "value"])?;
    for (i, (l, v)) in locs.iter().zip(values).enumerate() {
        w.write_record([
            i.to_string(),
            l.x.to_string(),
            l.y.to_string(),
            v.to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}

/// Reads a field written by [`write_field`].
pub fn parse_field<R: Read>(input: R, path: &str) -> Result<(Vec<Location>, Vec<f64>)> {
    let mut rdr = reader(input);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| schema(path, 1, 1, "empty file"))??;
    check_header(path, &header, &["station_id", "x", "y", "value"])?;
    let mut locs = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let row = k + 2;
        if rec.len() != 4 {
            return Err(schema(
                path,
                row,
                rec.len().min(4) + 1,
                format!("expected 4 fields, found {}", rec.len()),
            ));
        }
        locs.push(Location::new(
            parse_number(path, row, 2, &rec[1])?,
            parse_number(path, row, 3, &rec[2])?,
        ));
        values.push(parse_number(path, row, 4, &rec[3])?);
    }
    Ok((locs, values))
}

pub fn read_field(path: &Path) -> Result<(Vec<Location>, Vec<f64>)> {
    parse_field(open(path)?, &path.display().to_string())
}

/// Creates `path` and hands a writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut File) -> Result<()>) -> Result<()> {
    let mut file = create(path)?;
    f(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stations_parse_and_reject() {
        let s = parse_stations("station_id,x,y\na,1,2\nb,3.5,-1\n".as_bytes(), "s.csv").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].location, Location::new(3.5, -1.0));
        let e = parse_stations("station_id,x,y\na,1,zz\n".as_bytes(), "s.csv").unwrap_err();
        assert!(
            matches!(
                e,
                Error::Schema {
                    row: 2,
                    column: 3,
                    ..
                }
            ),
            "{e}"
        );
        let e = parse_stations("id,x,y\n".as_bytes(), "s.csv").unwrap_err();
        assert!(matches!(
            e,
            Error::Schema {
                row: 1,
                column: 1,
                ..
            }
        ));
        let e = parse_stations("station_id,x,y\na,1,2\na,1,2\n".as_bytes(), "s.csv").unwrap_err();
        assert!(matches!(
            e,
            Error::Schema {
                row: 3,
                column: 1,
                ..
            }
        ));
    }

    #[test]
    fn observations_round_trip() {
        let text = "time,a,b,c\n1,0.5,,2\n2,,,3.25\n3,1e-3,7,\n";
        let obs = parse_observations(text.as_bytes(), "o.csv").unwrap();
        assert_eq!(obs.values[0], vec![Some(0.5), None, Some(2.0)]);
        assert!((obs.missing_fraction() - 4.0 / 9.0).abs() < 1e-15);
        let mut buf = Vec::new();
        write_observations(&mut buf, &obs).unwrap();
        let back = parse_observations(buf.as_slice(), "o.csv").unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn observation_errors_have_coordinates() {
        let e = parse_observations("time,a,b\n1,0.5,x\n".as_bytes(), "o.csv").unwrap_err();
        assert!(
            matches!(
                e,
                Error::Schema {
                    row: 2,
                    column: 3,
                    ..
                }
            ),
            "{e}"
        );
        let e = parse_observations("time,a,b\n1,0.5\n".as_bytes(), "o.csv").unwrap_err();
        assert!(matches!(e, Error::Schema { row: 2, .. }));
        let e = parse_observations("when,a\n".as_bytes(), "o.csv").unwrap_err();
        assert!(matches!(
            e,
            Error::Schema {
                row: 1,
                column: 1,
                ..
            }
        ));
    }

    #[test]
    fn empty_stations_are_dropped() {
        let mut obs =
            parse_observations("time,a,b,c\n1,1,,2\n2,3,,4\n".as_bytes(), "o.csv").unwrap();
        assert_eq!(obs.drop_empty_stations(), vec!["b".to_string()]);
        assert_eq!(obs.station_ids, vec!["a", "c"]);
        assert_eq!(obs.values[1], vec![Some(3.0), Some(4.0)]);
    }

    #[test]
    fn field_round_trip() {
        let locs = vec![Location::new(0.0, 0.0), Location::new(1.0, 0.5)];
        let vals = vec![0.1234567890123, -2.5];
        let mut buf = Vec::new();
        write_field(&mut buf, &locs, &vals).unwrap();
        let (l, v) = parse_field(buf.as_slice(), "f.csv").unwrap();
        assert_eq!((l, v), (locs, vals));
    }
}
