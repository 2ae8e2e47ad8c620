//! Table and plot-data emitters: AME tables by country and outcome,
//! response-rate and interviewer-participation tables, expectation
//! histograms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::logit::{AmeResult, Stars};
use crate::tabular::{response_rate, Dataset, InterviewerTable, Rate};

/// Row order of country tables; other countries follow alphabetically.
pub const COUNTRY_ORDER: [&str; 12] = ["ES", "IT", "GR", "PT", "PL", "SI", "AT", "DE", "BE", "LU", "SE", "EE"];
/// Column order of outcome tables; other outcomes follow alphabetically.
pub const OUTCOME_ORDER: [&str; 4] = ["thinc2", "ypen1", "bacc", "home"];

fn ordered<'a>(items: impl IntoIterator<Item = &'a str>, canonical: &[&str]) -> Vec<String> {
    let set: BTreeSet<&str> = items.into_iter().collect();
    let mut out: Vec<String> = canonical.iter().filter(|c| set.contains(*c)).map(|c| c.to_string()).collect();
    out.extend(set.iter().filter(|c| !canonical.contains(c)).map(|c| c.to_string()));
    out
}

pub fn order_countries<'a>(countries: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    ordered(countries, &COUNTRY_ORDER)
}

pub fn order_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    ordered(outcomes, &OUTCOME_ORDER)
}

/// Estimate line and standard-error line of one table cell, e.g.
/// `("0.101**", "(0.017)")`.
pub fn render_cell(ame: &AmeResult) -> (String, String) {
    (format!("{:.3}{}", ame.ame, ame.stars.as_str()), format!("({:.3})", ame.se))
}

/// AME of the focus regressor by country (rows) and outcome (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct AmeTable {
    pub caption: String,
    pub countries: Vec<String>,
    pub outcomes: Vec<String>,
    pub cells: BTreeMap<(String, String), AmeResult>,
}

impl AmeTable {
    pub fn new(caption: &str, results: &[(String, String, AmeResult)]) -> Self {
        let countries = order_countries(results.iter().map(|r| r.0.as_str()));
        let outcomes = order_outcomes(results.iter().map(|r| r.1.as_str()));
        let cells = results
            .iter()
            .map(|(c, o, a)| ((c.clone(), o.clone()), a.clone()))
            .collect();
        AmeTable {
            caption: caption.to_string(),
            countries,
            outcomes,
            cells,
        }
    }

    pub fn get(&self, country: &str, outcome: &str) -> Option<&AmeResult> {
        self.cells.get(&(country.to_string(), outcome.to_string()))
    }

    /// Plain-text table: estimate with stars, standard error beneath.
    pub fn to_text(&self) -> String {
        const W: usize = 12;
        let mut s = format!("{}\n\n", self.caption);
        write!(s, "{:<8}", "Country").unwrap();
        for o in &self.outcomes {
            write!(s, "{o:>W$}").unwrap();
        }
        s.push('\n');
        for c in &self.countries {
            let mut est = format!("{c:<8}");
            let mut se = format!("{:<8}", "");
            for o in &self.outcomes {
                match self.get(c, o) {
                    Some(a) => {
                        let (e, v) = render_cell(a);
                        // stars hang to the right of the aligned number
                        let pad = 2 - a.stars.as_str().len();
                        write!(est, "{:>w$}{}", e, " ".repeat(pad), w = W - 2 + a.stars.as_str().len()).unwrap();
                        write!(se, "{:>w$}  ", v, w = W - 2).unwrap();
                    }
                    None => {
                        write!(est, "{:>W$}", "").unwrap();
                        write!(se, "{:>W$}", "").unwrap();
                    }
                }
            }
            s.push_str(est.trim_end());
            s.push('\n');
            s.push_str(se.trim_end());
            s.push('\n');
        }
        s.push_str("\n** p < 0.01, * p < 0.05\n");
        s
    }

    /// Machine-readable form carrying full-precision numerics next to the
    /// rendered cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("country,outcome,ame,se,z,p,stars,cell,cell_se\n");
        for c in &self.countries {
            for o in &self.outcomes {
                if let Some(a) = self.get(c, o) {
                    let (e, v) = render_cell(a);
                    writeln!(s, "{c},{o},{},{},{},{},{},{e},{v}", a.ame, a.se, a.z, a.p, a.stars.as_str()).unwrap();
                }
            }
        }
        s
    }
}

/// Builds the table and renders both forms.
pub fn format_ame_table(results: &[(String, String, AmeResult)], caption: &str) -> (String, String) {
    let t = AmeTable::new(caption, results);
    (t.to_text(), t.to_csv())
}

/// Inverse of [`AmeTable::to_csv`].
pub fn parse_ame_csv(text: &str) -> Result<Vec<(String, String, AmeResult)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |j: usize, name: &'static str| -> Result<f64> {
            rec.get(j)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::TypeViolation {
                    column: name.to_string(),
                    row: i,
                    value: rec.get(j).unwrap_or("").to_string(),
                    expected: "number",
                })
        };
        let stars = Stars::parse(rec.get(6).unwrap_or("")).ok_or_else(|| Error::TypeViolation {
            column: "stars".into(),
            row: i,
            value: rec.get(6).unwrap_or("").to_string(),
            expected: "star marker",
        })?;
        out.push((
            rec.get(0).unwrap_or("").to_string(),
            rec.get(1).unwrap_or("").to_string(),
            AmeResult {
                ame: num(2, "ame")?,
                se: num(3, "se")?,
                z: num(4, "z")?,
                p: num(5, "p")?,
                stars,
            },
        ));
    }
    Ok(out)
}

/// Counts per left-closed bin `[k w, (k+1) w)`, per country in table order.
/// Bins span each country's observed range; countries without values are
/// omitted with a warning.
pub fn emit_histogram(values: &[(String, Option<f64>)], width: f64) -> Result<String> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::InvalidBinWidth(width));
    }
    let mut by_country: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (c, v) in values {
        let entry = by_country.entry(c.as_str()).or_default();
        if let Some(x) = v {
            if !(0.0..=100.0).contains(x) {
                return Err(Error::OutOfRange(format!("expectation {x} outside [0, 100]")));
            }
            entry.push(*x);
        }
    }
    let mut s = String::from("country,bin_lower,bin_upper,count\n");
    for c in order_countries(by_country.keys().copied()) {
        let xs = &by_country[c.as_str()];
        if xs.is_empty() {
            log::warn!("country {c} has no expectation values; omitted from histogram");
            continue;
        }
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for x in xs {
            *counts.entry((x / width).floor() as i64).or_default() += 1;
        }
        let (lo, hi) = (*counts.keys().next().unwrap(), *counts.keys().last().unwrap());
        for k in lo..=hi {
            let n = counts.get(&k).copied().unwrap_or(0);
            writeln!(s, "{c},{},{},{n}", k as f64 * width, (k + 1) as f64 * width).unwrap();
        }
    }
    Ok(s)
}

/// Interviewer-level expectation values with their country, one per interviewer.
pub fn interviewer_values(dataset: &Dataset, column: &str) -> Result<Vec<(String, Option<f64>)>> {
    let table = InterviewerTable::from_dataset(dataset);
    let col = table.column(column)?;
    Ok((0..table.len()).map(|i| (table.countries[i].clone(), col.get(i))).collect())
}

/// Response rate of each outcome among its eligible rows.
pub fn response_rate_table(dataset: &Dataset) -> Result<(String, Vec<(String, Rate)>)> {
    let outcomes = order_outcomes(dataset.schema().roles.outcomes.iter().map(String::as_str));
    let mut rows = Vec::new();
    let mut s = String::from("variable,eligible,rr\n");
    for o in outcomes {
        let rate = response_rate(dataset, &o)?;
        writeln!(s, "{o},{},{}", rate.eligible, rate.display()).unwrap();
        rows.push((o, rate));
    }
    Ok((s, rows))
}

/// Interviewers per country and how many answered the interviewer survey
/// (observed `column`), with a total row.
pub fn participation_table(dataset: &Dataset, column: &str) -> Result<(String, Vec<(String, Rate)>)> {
    let table = InterviewerTable::from_dataset(dataset);
    let col = table.column(column)?;
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for i in 0..table.len() {
        let e = counts.entry(table.countries[i].as_str()).or_default();
        e.0 += 1;
        e.1 += !col.mask[i] as usize;
    }
    let mut s = String::from("country,total,obs,pr\n");
    let mut rows = Vec::new();
    let (mut total, mut obs) = (0, 0);
    for c in order_countries(counts.keys().copied()) {
        let (t, o) = counts[c.as_str()];
        total += t;
        obs += o;
        let rate = Rate::new(o, t)?;
        writeln!(s, "{c},{t},{o},{}", rate.display()).unwrap();
        rows.push((c, rate));
    }
    let rate = Rate::new(obs, total)?;
    writeln!(s, "Total,{total},{obs},{}", rate.display()).unwrap();
    rows.push(("Total".to_string(), rate));
    Ok((s, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(ame: f64, se: f64, stars: Stars) -> AmeResult {
        AmeResult { ame, se, z: ame / se, p: 0.5, stars }
    }

    #[test]
    fn table_four_cells() {
        assert_eq!(render_cell(&cell(0.042, 0.030, Stars::None)), ("0.042".into(), "(0.030)".into()));
        assert_eq!(render_cell(&cell(0.101, 0.017, Stars::Two)), ("0.101**".into(), "(0.017)".into()));
        assert_eq!(render_cell(&cell(-0.085, 0.049, Stars::None)), ("-0.085".into(), "(0.049)".into()));
    }

    #[test]
    fn orders_follow_table_layout() {
        assert_eq!(order_countries(["SE", "ZZ", "ES", "AA", "IT"]), vec!["ES", "IT", "SE", "AA", "ZZ"]);
        assert_eq!(order_outcomes(["home", "thinc2", "x"]), vec!["thinc2", "home", "x"]);
    }

    #[test]
    fn text_table_layout() {
        let results = vec![
            ("IT".to_string(), "thinc2".to_string(), cell(0.101, 0.017, Stars::Two)),
            ("ES".to_string(), "thinc2".to_string(), cell(0.042, 0.030, Stars::None)),
            ("ES".to_string(), "bacc".to_string(), cell(0.098, 0.034, Stars::Two)),
        ];
        let (text, _) = format_ame_table(&results, "caption");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[2], "Country       thinc2        bacc");
        assert_eq!(lines[3], "ES           0.042       0.098**");
        assert_eq!(lines[4], "           (0.030)     (0.034)");
        assert_eq!(lines[5], "IT           0.101**");
        assert_eq!(lines[6], "           (0.017)");
    }

    #[test]
    fn histogram_examples() {
        let v: Vec<(String, Option<f64>)> = [10.0, 10.0, 20.0].iter().map(|&x| ("ES".to_string(), Some(x))).collect();
        assert_eq!(emit_histogram(&v, 10.0).unwrap(), "country,bin_lower,bin_upper,count\nES,10,20,2\nES,20,30,1\n");
        let mut w = v.clone();
        w.push(("IT".into(), None));
        assert_eq!(emit_histogram(&w, 10.0).unwrap(), emit_histogram(&v, 10.0).unwrap());
        assert!(matches!(emit_histogram(&v, 0.0), Err(Error::InvalidBinWidth(_))));
        assert!(matches!(emit_histogram(&v, f64::NAN), Err(Error::InvalidBinWidth(_))));
    }
}
