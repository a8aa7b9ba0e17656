//! Annual series, multi-source panels and the transforms every fit consumes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Head truncation applied before estimation unless configured otherwise.
pub const DEFAULT_HEAD_TRIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeriesKind {
    /// Per-year counts (flows). Non-negative.
    RawAnnual,
    /// Running totals or levels. Non-decreasing, first value positive.
    Cumulative,
    /// Natural log of a cumulative series.
    LogCumulative,
}

impl SeriesKind {
    pub fn name(self) -> &'static str {
        match self {
            SeriesKind::RawAnnual => "raw_annual",
            SeriesKind::Cumulative => "cumulative",
            SeriesKind::LogCumulative => "log_cumulative",
        }
    }
}

/// One source's values over contiguous calendar years.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualSeries {
    source_id: String,
    start_year: i32,
    values: Vec<f64>,
    kind: SeriesKind,
}

impl AnnualSeries {
    pub fn new(source_id: impl Into<String>, start_year: i32, values: Vec<f64>, kind: SeriesKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("non-finite value at index {i}")));
        }
        match kind {
            SeriesKind::RawAnnual => {
                if let Some(i) = values.iter().position(|&v| v < 0.0) {
                    return Err(Error::InvalidSeries(format!("negative annual value at index {i}")));
                }
            }
            SeriesKind::Cumulative => {
                if values[0] <= 0.0 {
                    return Err(Error::LeadingZero);
                }
                if let Some(i) = values.windows(2).position(|w| w[1] < w[0]) {
                    return Err(Error::InvalidSeries(format!(
                        "cumulative series decreases at index {}",
                        i + 1
                    )));
                }
            }
            SeriesKind::LogCumulative => {}
        }
        Ok(Self {
            source_id: source_id.into(),
            start_year,
            values,
            kind,
        })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn start_year(&self) -> i32 {
        self.start_year
    }

    pub fn end_year(&self) -> i32 {
        self.start_year + self.values.len() as i32 - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.values.len()).map(move |i| self.start_year + i as i32)
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Drops leading zero years of a raw series so that cumulation starts
    /// from a positive value.
    pub fn trim_leading_zeros(&self) -> Result<Self> {
        let first = self.values.iter().position(|&v| v > 0.0).ok_or(Error::LeadingZero)?;
        Ok(Self {
            source_id: self.source_id.clone(),
            start_year: self.start_year + first as i32,
            values: self.values[first..].to_vec(),
            kind: self.kind,
        })
    }

    /// Running sum of a raw annual series.
    pub fn cumulate(&self) -> Result<Self> {
        if self.kind != SeriesKind::RawAnnual {
            return Err(Error::WrongKind { expected: "raw_annual" });
        }
        let values: Vec<f64> = self
            .values
            .iter()
            .scan(0.0, |acc, &v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        Self::new(self.source_id.clone(), self.start_year, values, SeriesKind::Cumulative)
    }

    /// Elementwise natural log of a cumulative series.
    pub fn log_transform(&self) -> Result<Self> {
        if self.kind != SeriesKind::Cumulative {
            return Err(Error::WrongKind { expected: "cumulative" });
        }
        if let Some((index, &value)) = self.values.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(Error::NonPositiveValue { index, value });
        }
        Ok(Self {
            source_id: self.source_id.clone(),
            start_year: self.start_year,
            values: self.values.iter().map(|v| v.ln()).collect(),
            kind: SeriesKind::LogCumulative,
        })
    }

    /// Drops the first `n` years.
    pub fn truncate_head(&self, n: usize) -> Result<Self> {
        if n >= self.values.len() {
            return Err(Error::TooShort {
                needed: n,
                got: self.values.len(),
            });
        }
        Ok(Self {
            source_id: self.source_id.clone(),
            start_year: self.start_year + n as i32,
            values: self.values[n..].to_vec(),
            kind: self.kind,
        })
    }

    pub fn observations(&self) -> Observations {
        Observations {
            years: self.years().map(f64::from).collect(),
            values: self.values.clone(),
            groups: alloc::vec![0; self.values.len()],
            n_groups: 1,
        }
    }
}

/// Offset of `year` from the anchor `t0`.
pub fn time_index(year: i32, t0: i32) -> Result<i32> {
    if year < t0 {
        return Err(Error::NegativeOffset { year, t0 });
    }
    Ok(year - t0)
}

/// Year-aligned values of several sources; absent cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    first_year: i32,
    last_year: i32,
    sources: Vec<String>,
    /// One column per source, one entry per year.
    columns: Vec<Vec<Option<f64>>>,
    kind: SeriesKind,
}

impl Panel {
    pub fn new(
        first_year: i32,
        sources: Vec<String>,
        columns: Vec<Vec<Option<f64>>>,
        kind: SeriesKind,
    ) -> Result<Self> {
        if sources.is_empty() || columns.is_empty() {
            return Err(Error::EmptyInput);
        }
        if sources.len() != columns.len() {
            return Err(Error::LengthMismatch(sources.len(), columns.len()));
        }
        let n_years = columns[0].len();
        if n_years == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some(c) = columns.iter().find(|c| c.len() != n_years) {
            return Err(Error::LengthMismatch(n_years, c.len()));
        }
        for (s, col) in sources.iter().zip(&columns) {
            for v in col.iter().flatten() {
                let ok = v.is_finite()
                    && match kind {
                        SeriesKind::RawAnnual => *v >= 0.0,
                        SeriesKind::Cumulative => *v > 0.0,
                        SeriesKind::LogCumulative => true,
                    };
                if !ok {
                    return Err(Error::InvalidPanel(format!(
                        "source `{s}` has invalid {} value {v}",
                        kind.name()
                    )));
                }
            }
        }
        if !columns.iter().any(|c| c[0].is_some()) {
            return Err(Error::InvalidPanel("no source observed in the first year".into()));
        }
        if !columns.iter().any(|c| c[n_years - 1].is_some()) {
            return Err(Error::InvalidPanel("no source observed in the last year".into()));
        }
        Ok(Self {
            first_year,
            last_year: first_year + n_years as i32 - 1,
            sources,
            columns,
            kind,
        })
    }

    /// Aligns series of one kind on the union of their year ranges,
    /// preserving source order.
    pub fn align(series: &[AnnualSeries]) -> Result<Self> {
        let first = series.first().ok_or(Error::EmptyInput)?;
        if series.iter().any(|s| s.kind != first.kind) {
            return Err(Error::KindMismatch);
        }
        let first_year = series.iter().map(|s| s.start_year).min().unwrap_or(0);
        let last_year = series.iter().map(|s| s.end_year()).max().unwrap_or(0);
        let n_years = (last_year - first_year + 1) as usize;
        let columns = series
            .iter()
            .map(|s| {
                let mut col = alloc::vec![None; n_years];
                let offset = (s.start_year - first_year) as usize;
                for (i, &v) in s.values.iter().enumerate() {
                    col[offset + i] = Some(v);
                }
                col
            })
            .collect();
        let sources = series.iter().map(|s| s.source_id.clone()).collect();
        Self::new(first_year, sources, columns, first.kind)
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn last_year(&self) -> i32 {
        self.last_year
    }

    pub fn n_years(&self) -> usize {
        self.columns[0].len()
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        self.first_year..=self.last_year
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn column(&self, source: usize) -> &[Option<f64>] {
        &self.columns[source]
    }

    pub fn columns(&self) -> &[Vec<Option<f64>>] {
        &self.columns
    }

    pub fn source_index(&self, id: &str) -> Result<usize> {
        self.sources
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownSource(id.into()))
    }

    pub fn get(&self, year: i32, source: usize) -> Option<f64> {
        if year < self.first_year || year > self.last_year {
            return None;
        }
        self.columns[source][(year - self.first_year) as usize]
    }

    pub fn missing_count(&self) -> usize {
        self.columns.iter().flatten().filter(|c| c.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    /// Extracts one source over its observed span. Interior gaps are an error.
    pub fn source_series(&self, source: usize) -> Result<AnnualSeries> {
        let col = &self.columns[source];
        let start = col.iter().position(Option::is_some).ok_or(Error::EmptyInput)?;
        let end = col.iter().rposition(Option::is_some).unwrap_or(start);
        let values = col[start..=end]
            .iter()
            .map(|c| c.ok_or_else(|| Error::InvalidPanel("interior gap in source".into())))
            .collect::<Result<Vec<_>>>()?;
        AnnualSeries::new(
            self.sources[source].clone(),
            self.first_year + start as i32,
            values,
            self.kind,
        )
    }

    /// Replaces the columns, keeping years, sources and kind.
    pub fn with_columns(&self, columns: Vec<Vec<Option<f64>>>) -> Result<Self> {
        Self::new(self.first_year, self.sources.clone(), columns, self.kind)
    }

    /// Present cells stacked source by source, tagged with the source index.
    pub fn observations(&self) -> Observations {
        let mut obs = Observations {
            n_groups: self.sources.len(),
            ..Observations::default()
        };
        for (g, col) in self.columns.iter().enumerate() {
            for (i, cell) in col.iter().enumerate() {
                if let Some(v) = cell {
                    obs.years.push(f64::from(self.first_year + i as i32));
                    obs.values.push(*v);
                    obs.groups.push(g);
                }
            }
        }
        obs
    }
}

/// Flat (year, value, group) triples consumed by the estimators. Groups are
/// contiguous and ordered; within a group years are increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observations {
    pub years: Vec<f64>,
    pub values: Vec<f64>,
    pub groups: Vec<usize>,
    pub n_groups: usize,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first_year(&self) -> f64 {
        self.years.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn last_year(&self) -> f64 {
        self.years.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index ranges of each group's rows.
    pub fn group_ranges(&self) -> Vec<core::ops::Range<usize>> {
        let mut out = alloc::vec![0..0; self.n_groups];
        let mut i = 0;
        while i < self.groups.len() {
            let g = self.groups[i];
            let start = i;
            while i < self.groups.len() && self.groups[i] == g {
                i += 1;
            }
            out[g] = start..i;
        }
        out
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v += c);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn raw(values: Vec<f64>) -> AnnualSeries {
        AnnualSeries::new("a", 2000, values, SeriesKind::RawAnnual).unwrap()
    }

    #[test]
    fn cumulate_running_sum() {
        assert_eq!(raw(vec![5.0]).cumulate().unwrap().values(), &[5.0]);
        assert_eq!(
            raw(vec![2.0, 3.0, 0.0, 4.0]).cumulate().unwrap().values(),
            &[2.0, 5.0, 5.0, 9.0]
        );
    }

    #[test]
    fn cumulate_long_zero_run() {
        let mut v = vec![1000.0];
        v.extend(core::iter::repeat_n(0.0, 99));
        v.push(100.0);
        let c = raw(v).cumulate().unwrap();
        assert_eq!(c.len(), 101);
        assert_eq!(c.values()[100], 1100.0);
        assert_eq!(c.values()[100] - c.values()[99], 100.0);
        assert_eq!(c.end_year(), 2100);
    }

    #[test]
    fn cumulate_rejects_leading_zero() {
        assert_eq!(raw(vec![0.0, 1.0]).cumulate(), Err(Error::LeadingZero));
        let trimmed = raw(vec![0.0, 0.0, 3.0]).trim_leading_zeros().unwrap();
        assert_eq!(trimmed.start_year(), 2002);
        assert_eq!(trimmed.cumulate().unwrap().values(), &[3.0]);
    }

    #[test]
    fn log_transform_values() {
        let e = core::f64::consts::E;
        let s = AnnualSeries::new("a", 0, vec![1.0, e, e * e], SeriesKind::Cumulative).unwrap();
        let l = s.log_transform().unwrap();
        for (got, want) in l.values().iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let s = AnnualSeries::new("a", 0, vec![1100.0], SeriesKind::Cumulative).unwrap();
        assert!((s.log_transform().unwrap().values()[0] - 7.003_065_458_786_462).abs() < 1e-12);
    }

    #[test]
    fn log_transform_rejects_wrong_kind() {
        assert!(matches!(raw(vec![1.0]).log_transform(), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn truncate_head_cases() {
        let s = AnnualSeries::new("dim", 1665, vec![1.0; 354], SeriesKind::Cumulative).unwrap();
        assert_eq!(s.truncate_head(DEFAULT_HEAD_TRIM).unwrap().start_year(), 1670);
        assert_eq!(s.truncate_head(0).unwrap(), s);
        let six = AnnualSeries::new("a", 0, vec![1.0; 6], SeriesKind::Cumulative).unwrap();
        assert_eq!(six.truncate_head(5).unwrap().len(), 1);
        assert!(matches!(six.truncate_head(6), Err(Error::TooShort { .. })));
    }

    #[test]
    fn time_index_cases() {
        assert_eq!(time_index(1665, 1665), Ok(0));
        assert_eq!(time_index(2018, 1670), Ok(348));
        assert_eq!(time_index(1900, 1665), Ok(235));
        assert!(matches!(time_index(1600, 1665), Err(Error::NegativeOffset { .. })));
    }

    #[test]
    fn align_marks_missing_head() {
        let a = AnnualSeries::new("dim", 1670, vec![1.0; 349], SeriesKind::Cumulative).unwrap();
        let b = AnnualSeries::new("wos", 1905, vec![2.0; 114], SeriesKind::Cumulative).unwrap();
        let p = Panel::align(&[a.clone(), b.clone()]).unwrap();
        assert_eq!((p.first_year(), p.last_year()), (1670, 2018));
        assert_eq!(p.get(1904, 1), None);
        assert_eq!(p.get(1905, 1), Some(2.0));
        assert_eq!(p.missing_count(), 1905 - 1670);
        assert_eq!(p.source_series(0).unwrap(), a);
        assert_eq!(p.source_series(1).unwrap(), b);
    }

    #[test]
    fn align_rectangular_and_errors() {
        let a = AnnualSeries::new("a", 1, vec![1.0, 2.0], SeriesKind::Cumulative).unwrap();
        assert!(Panel::align(core::slice::from_ref(&a)).unwrap().is_complete());
        let b = a.clone().with_source_id("b");
        assert!(Panel::align(&[a.clone(), b]).unwrap().is_complete());
        let r = AnnualSeries::new("r", 1, vec![1.0], SeriesKind::RawAnnual).unwrap();
        assert_eq!(Panel::align(&[a, r]), Err(Error::KindMismatch));
        assert_eq!(Panel::align(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn missing_is_not_zero() {
        let p = Panel::new(
            2000,
            vec!["a".into(), "b".into()],
            vec![vec![Some(0.0), Some(1.0)], vec![None, Some(0.0)]],
            SeriesKind::RawAnnual,
        )
        .unwrap();
        assert_eq!(p.get(2000, 0), Some(0.0));
        assert_eq!(p.get(2000, 1), None);
        assert_eq!(p.observations().len(), 3);
    }
}
