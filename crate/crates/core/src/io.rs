//! CSV ingestion of mortality tables and indicators, and CSV export of
//! panels and summaries.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SurfacePanel;
use crate::partition::Membership;
use crate::summary::{CoClusteringMatrix, IndicatorPanel};

/// Column layout of a mortality table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatesLayout {
    /// `country, year, age, log_rate`
    #[default]
    Rates,
    /// `country, year, age, deaths, exposure`
    Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub layout: RatesLayout,
    pub age_min: u32,
    pub age_max: u32,
    pub period_min: Option<i32>,
    pub period_max: Option<i32>,
    /// Accept rows absent from the table; they become missing cells.
    pub allow_missing: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            layout: RatesLayout::Rates,
            age_min: 0,
            age_max: 98,
            period_min: None,
            period_max: None,
            allow_missing: true,
        }
    }
}

fn is_missing_token(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "na" | "NaN" | "nan" | "." | "-")
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Result<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
        .ok_or_else(|| Error::Ingest(format!("missing column `{}`", names[0])))
}

fn parse_number(field: &str, row: usize, what: &str) -> Result<Option<f64>> {
    if is_missing_token(field) {
        return Ok(None);
    }
    field
        .trim()
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse {
            row,
            msg: format!("{what}: `{field}` is not a number"),
        })
}

fn parse_int<T: std::str::FromStr>(field: &str, row: usize, what: &str) -> Result<T> {
    field
        .trim()
        .trim_end_matches('+')
        .parse::<T>()
        .map_err(|_| Error::Parse {
            row,
            msg: format!("{what}: `{field}` is not an integer"),
        })
}

/// Reads a mortality table into a dense panel over the configured age grid
/// and period window. Rows outside the grid are ignored; cells with zero
/// deaths or exposure, or with missing values, are marked missing.
pub fn ingest_rates<R: Read>(reader: R, options: &IngestOptions) -> Result<SurfacePanel> {
    if options.age_min > options.age_max {
        return Err(Error::InvalidInput("age_min exceeds age_max".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_country = find_column(&headers, &["country", "population"])?;
    let c_year = find_column(&headers, &["year", "period"])?;
    let c_age = find_column(&headers, &["age"])?;
    let value_cols = match options.layout {
        RatesLayout::Rates => vec![find_column(&headers, &["log_rate", "lograte"])?],
        RatesLayout::Counts => vec![
            find_column(&headers, &["deaths"])?,
            find_column(&headers, &["exposure", "exposures"])?,
        ],
    };

    let mut countries: Vec<String> = Vec::new();
    let mut country_index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, i32, u32), (Option<f64>, Option<f64>)> = HashMap::new();
    let mut years = BTreeSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let year: i32 = parse_int(field(c_year), row, "year")?;
        let age: u32 = parse_int(field(c_age), row, "age")?;
        let first = parse_number(field(value_cols[0]), row, "value")?;
        let second = match value_cols.get(1) {
            Some(&c) => parse_number(field(c), row, "exposure")?,
            None => None,
        };
        if options.layout == RatesLayout::Counts
            && (first.is_some_and(|d| d < 0.0) || second.is_some_and(|e| e < 0.0))
        {
            return Err(Error::Parse {
                row,
                msg: "negative deaths or exposure".into(),
            });
        }
        if age < options.age_min || age > options.age_max {
            continue;
        }
        if options.period_min.is_some_and(|lo| year < lo) || options.period_max.is_some_and(|hi| year > hi) {
            continue;
        }
        let name = field(c_country).to_string();
        let i = *country_index.entry(name.clone()).or_insert_with(|| {
            countries.push(name);
            countries.len() - 1
        });
        if cells.insert((i, year, age), (first, second)).is_some() {
            return Err(Error::Ingest(format!(
                "duplicate row for ({}, {year}, {age})",
                countries[i]
            )));
        }
        years.insert(year);
    }
    if countries.is_empty() {
        return Err(Error::Ingest("no rows inside the age grid and period window".into()));
    }
    let lo = options.period_min.unwrap_or(*years.first().expect("nonempty"));
    let hi = options.period_max.unwrap_or(*years.last().expect("nonempty"));
    let periods: Vec<i32> = (lo..=hi).collect();
    let ages: Vec<u32> = (options.age_min..=options.age_max).collect();

    let n_cells = countries.len() * periods.len() * ages.len();
    if !options.allow_missing && cells.len() != n_cells {
        return Err(Error::Ingest(format!(
            "table is not rectangular: {} of {n_cells} cells present",
            cells.len()
        )));
    }
    let mut first = Vec::with_capacity(n_cells);
    let mut second = Vec::with_capacity(n_cells);
    for i in 0..countries.len() {
        for &t in &periods {
            for &x in &ages {
                let (a, b) = cells.get(&(i, t, x)).copied().unwrap_or((None, None));
                first.push(a);
                second.push(b);
            }
        }
    }
    match options.layout {
        RatesLayout::Rates => SurfacePanel::from_log_rates(countries, ages, periods, first),
        RatesLayout::Counts => SurfacePanel::from_counts(countries, ages, periods, first, second),
    }
}

/// Writes `country, year, age, log_rate`; missing cells get an empty value.
pub fn export_rates<W: Write>(panel: &SurfacePanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["country", "year", "age", "log_rate"])?;
    for (i, name) in panel.populations().iter().enumerate() {
        for (t, year) in panel.periods().iter().enumerate() {
            for (x, age) in panel.ages().iter().enumerate() {
                let v = panel.log_rate(i, x, t).map(|v| v.to_string()).unwrap_or_default();
                w.write_record([name.as_str(), &year.to_string(), &age.to_string(), &v])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `country, year, age, deaths, exposure` for a panel built from
/// counts.
pub fn export_counts<W: Write>(panel: &SurfacePanel, writer: W) -> Result<()> {
    let (deaths, exposures) = match (panel.deaths(), panel.exposures()) {
        (Some(d), Some(e)) => (d, e),
        _ => return Err(Error::InvalidInput("panel carries no counts".into())),
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["country", "year", "age", "deaths", "exposure"])?;
    for (i, name) in panel.populations().iter().enumerate() {
        for (t, year) in panel.periods().iter().enumerate() {
            for (x, age) in panel.ages().iter().enumerate() {
                let idx = panel.index(i, x, t);
                let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
                w.write_record([
                    name.as_str(),
                    &year.to_string(),
                    &age.to_string(),
                    &fmt(deaths[idx]),
                    &fmt(exposures[idx]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `indicator, country, year, value` rows aligned to a panel's
/// populations and periods. Unknown countries are dropped with a warning,
/// or rejected when `strict`.
pub fn ingest_indicators<R: Read>(
    reader: R,
    populations: &[String],
    periods: &[i32],
    strict: bool,
) -> Result<IndicatorPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return IndicatorPanel::new(Vec::new(), populations.len(), periods.len(), Vec::new());
    }
    let c_ind = find_column(&headers, &["indicator"])?;
    let c_country = find_column(&headers, &["country", "population"])?;
    let c_year = find_column(&headers, &["year", "period"])?;
    let c_value = find_column(&headers, &["value"])?;
    let pop_index: HashMap<&str, usize> = populations.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let period_index: HashMap<i32, usize> = periods.iter().enumerate().map(|(t, p)| (*p, t)).collect();

    let mut names: Vec<String> = Vec::new();
    let mut entries: HashMap<(usize, usize, usize), Option<f64>> = HashMap::new();
    let mut seen = BTreeSet::new();
    let mut warned = BTreeSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let name = field(c_ind).to_string();
        let country = field(c_country);
        let year: i32 = parse_int(field(c_year), row, "year")?;
        let value = parse_number(field(c_value), row, "value")?;
        if !seen.insert((name.clone(), country.to_string(), year)) {
            return Err(Error::Ingest(format!("duplicate row for ({name}, {country}, {year})")));
        }
        let q = match names.iter().position(|n| *n == name) {
            Some(q) => q,
            None => {
                names.push(name);
                names.len() - 1
            }
        };
        let Some(&i) = pop_index.get(country) else {
            if strict {
                return Err(Error::Ingest(format!("row {row}: unknown country `{country}`")));
            }
            if warned.insert(country.to_string()) {
                log::warn!("dropping indicator rows for unknown country `{country}`");
            }
            continue;
        };
        if let Some(&t) = period_index.get(&year) {
            entries.insert((q, i, t), value);
        }
    }
    let (n, periods_len) = (populations.len(), periods.len());
    let mut values = vec![None; names.len() * n * periods_len];
    for ((q, i, t), v) in entries {
        values[(q * n + i) * periods_len + t] = v;
    }
    IndicatorPanel::new(names, n, periods_len, values)
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(header)?;
    Ok(w)
}

/// Long format `j, t, i, i2, prob`, one-based.
pub fn write_coclustering<W: Write>(mats: &[Vec<CoClusteringMatrix>], out: W) -> Result<()> {
    let mut w = writer(out, &["j", "t", "i", "i2", "prob"])?;
    for (j, row) in mats.iter().enumerate() {
        for (t, m) in row.iter().enumerate() {
            for a in 0..m.n() {
                for b in 0..m.n() {
                    w.write_record([
                        (j + 1).to_string(),
                        (t + 1).to_string(),
                        (a + 1).to_string(),
                        (b + 1).to_string(),
                        m.get(a, b).to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `j, t, i, label`, one-based.
pub fn write_partitions<W: Write>(parts: &[Vec<Membership>], out: W) -> Result<()> {
    let mut w = writer(out, &["j", "t", "i", "label"])?;
    for (j, row) in parts.iter().enumerate() {
        for (t, c) in row.iter().enumerate() {
            for (i, l) in c.labels().iter().enumerate() {
                w.write_record([
                    (j + 1).to_string(),
                    (t + 1).to_string(),
                    (i + 1).to_string(),
                    (l + 1).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `j, t, <name>` for a `[j][t]` table.
pub fn write_jt_table<W: Write>(values: &[Vec<f64>], name: &str, out: W) -> Result<()> {
    let mut w = writer(out, &["j", "t", name])?;
    for (j, row) in values.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            w.write_record([(j + 1).to_string(), (t + 1).to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `i, country, j, t, beta` for a `[i][j][t]` table.
pub fn write_beta_trajectories<W: Write>(beta: &[Vec<Vec<f64>>], populations: &[String], out: W) -> Result<()> {
    let mut w = writer(out, &["i", "country", "j", "t", "beta"])?;
    for (i, per_i) in beta.iter().enumerate() {
        for (j, per_j) in per_i.iter().enumerate() {
            for (t, v) in per_j.iter().enumerate() {
                w.write_record([
                    (i + 1).to_string(),
                    populations.get(i).cloned().unwrap_or_default(),
                    (j + 1).to_string(),
                    (t + 1).to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `q, indicator, j, t, eta2`; undefined cells are written as `NA`.
pub fn write_eta2<W: Write>(eta2: &[Vec<Vec<Option<f64>>>], names: &[String], out: W) -> Result<()> {
    let mut w = writer(out, &["q", "indicator", "j", "t", "eta2"])?;
    for (q, per_q) in eta2.iter().enumerate() {
        for (j, per_j) in per_q.iter().enumerate() {
            for (t, v) in per_j.iter().enumerate() {
                w.write_record([
                    (q + 1).to_string(),
                    names.get(q).cloned().unwrap_or_default(),
                    (j + 1).to_string(),
                    (t + 1).to_string(),
                    v.map_or_else(|| "NA".to_string(), |v| v.to_string()),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
