//! Panel CSV (`year,<source>,...`, empty cell = missing) and FRED CSV
//! (`DATE,<SERIES_ID>`) readers and writers.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use growthseg_core::{AnnualSeries, Panel, SeriesKind};

use crate::error::{IoError, Result};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IoError::Open {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_error(e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IoError::Io(io),
        kind => IoError::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Checks that `year` continues a consecutive run ending at `previous`.
fn next_year(previous: Option<i32>, year: i32, line: u64) -> Result<()> {
    match previous {
        Some(p) if year == p => Err(IoError::DuplicateYear { line, year }),
        Some(p) if year < p => Err(IoError::OutOfOrder {
            line,
            year,
            previous: p,
        }),
        Some(p) if year != p + 1 => Err(IoError::GapInYears {
            line,
            year,
            previous: p,
        }),
        _ => Ok(()),
    }
}

fn parse_year(field: &str, line: u64) -> Result<i32> {
    field.trim().parse().map_err(|_| IoError::Parse {
        line,
        message: format!("`{field}` is not a year"),
    })
}

pub fn read_panel_csv(path: impl AsRef<Path>, kind: SeriesKind) -> Result<Panel> {
    parse_panel_csv(open(path.as_ref())?, kind)
}

/// Parses a panel. Values must be non-negative unless `kind` is
/// log-cumulative.
pub fn parse_panel_csv<R: Read>(reader: R, kind: SeriesKind) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < 2 || !header[0].trim().eq_ignore_ascii_case("year") {
        return Err(IoError::Parse {
            line: 1,
            message: "header must be `year,<source>,...`".into(),
        });
    }
    let sources: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); sources.len()];
    let mut first_year = None;
    let mut previous = None;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let year = parse_year(&record[0], line)?;
        next_year(previous, year, line)?;
        previous = Some(year);
        first_year.get_or_insert(year);
        for (col, field) in columns.iter_mut().zip(record.iter().skip(1)) {
            let field = field.trim();
            if field.is_empty() {
                col.push(None);
                continue;
            }
            let v: f64 = field.parse().map_err(|_| IoError::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            let ok = v.is_finite() && (kind == SeriesKind::LogCumulative || v >= 0.0);
            if !ok {
                return Err(IoError::Parse {
                    line,
                    message: format!("invalid {} value {field}", kind.name()),
                });
            }
            col.push(Some(v));
        }
    }
    let first_year = first_year.ok_or(IoError::EmptyInput)?;
    Ok(Panel::new(first_year, sources, columns, kind)?)
}

pub fn write_panel_csv(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_panel_csv_to(panel, file)
}

/// Values are written in the shortest form that parses back to the same
/// `f64`, so a write/read round trip is exact.
pub fn write_panel_csv_to<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let mut header = vec!["year".to_string()];
    header.extend(panel.sources().iter().cloned());
    w.write_record(&header).map_err(csv_error)?;
    for (i, year) in panel.years().enumerate() {
        let mut row = vec![year.to_string()];
        row.extend(
            panel
                .columns()
                .iter()
                .map(|c| c[i].map_or_else(String::new, |v| v.to_string())),
        );
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fred_csv(path: impl AsRef<Path>) -> Result<AnnualSeries> {
    parse_fred_csv(open(path.as_ref())?)
}

/// Parses a FRED annual export. Dates may be `YYYY-MM-DD` or `YYYY`;
/// `.` or an empty cell marks a missing value, allowed only before the
/// first or after the last reported value. Levels are returned as a
/// cumulative-kind series named after the value column.
pub fn parse_fred_csv<R: Read>(reader: R) -> Result<AnnualSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() != 2 {
        return Err(IoError::Parse {
            line: 1,
            message: "expected two columns: date and value".into(),
        });
    }
    let name = header[1].trim().to_string();
    let mut rows: Vec<(u64, i32, Option<f64>)> = Vec::new();
    let mut previous = None;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let date = record[0].trim();
        let year = parse_year(date.split('-').next().unwrap_or(date), line)?;
        next_year(previous, year, line)?;
        previous = Some(year);
        let field = record[1].trim();
        let value = if field.is_empty() || field == "." {
            None
        } else {
            Some(field.parse::<f64>().map_err(|_| IoError::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?)
        };
        rows.push((line, year, value));
    }
    let first = rows.iter().position(|r| r.2.is_some()).ok_or(IoError::EmptyInput)?;
    let last = rows.iter().rposition(|r| r.2.is_some()).unwrap_or(first);
    let mut values = Vec::with_capacity(last - first + 1);
    for (line, _, v) in &rows[first..=last] {
        values.push(v.ok_or(IoError::InteriorMissing { line: *line })?);
    }
    Ok(AnnualSeries::new(name, rows[first].1, values, SeriesKind::Cumulative)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fred_date_formats_agree() {
        let a = parse_fred_csv("DATE,X\n1990-01-01,1.5\n1991-01-01,2\n".as_bytes()).unwrap();
        let b = parse_fred_csv("DATE,X\n1990,1.5\n1991,2\n".as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.start_year(), 1990);
        assert_eq!(a.source_id(), "X");
    }

    #[test]
    fn fred_missing_markers() {
        let s = parse_fred_csv("DATE,X\n1989,.\n1990,1\n1991,2\n1992,\n".as_bytes()).unwrap();
        assert_eq!(s.start_year(), 1990);
        assert_eq!(s.len(), 2);
        let e = parse_fred_csv("DATE,X\n1990,1\n1991,.\n1992,2\n".as_bytes()).unwrap_err();
        assert!(matches!(e, IoError::InteriorMissing { line: 3 }), "{e}");
        let e = parse_fred_csv("DATE,X\n".as_bytes()).unwrap_err();
        assert!(matches!(e, IoError::EmptyInput));
    }

    #[test]
    fn panel_errors_carry_lines() {
        let e = parse_panel_csv("year,a\n1900,1\n1900,2\n".as_bytes(), SeriesKind::RawAnnual).unwrap_err();
        assert!(matches!(e, IoError::DuplicateYear { line: 3, year: 1900 }));
        let e = parse_panel_csv("year,a\n1900,1\n1902,2\n".as_bytes(), SeriesKind::RawAnnual).unwrap_err();
        assert!(matches!(e, IoError::GapInYears { line: 3, .. }));
        let e = parse_panel_csv("year,a\n1900,1\n1899,2\n".as_bytes(), SeriesKind::RawAnnual).unwrap_err();
        assert!(matches!(e, IoError::OutOfOrder { line: 3, .. }));
        let e = parse_panel_csv("year,a\n1900,x\n".as_bytes(), SeriesKind::RawAnnual).unwrap_err();
        assert!(matches!(e, IoError::Parse { line: 2, .. }));
        let e = parse_panel_csv("year,a\n1900,-1\n".as_bytes(), SeriesKind::RawAnnual).unwrap_err();
        assert!(matches!(e, IoError::Parse { line: 2, .. }));
        let e = parse_panel_csv("year,a\n".as_bytes(), SeriesKind::RawAnnual).unwrap_err();
        assert!(matches!(e, IoError::EmptyInput));
    }
}
