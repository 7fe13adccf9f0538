use std::path::Path;

use super::continuity::{CollapseResult, ModulusTable};
use super::isolation::IsolationReport;
use super::nts::{NtsPositionalRow, NtsResult};
use super::periodic::{CriticalPeriodScan, PeriodicResult};
use super::ssmax::SsmaxComparison;
use crate::error::{Error, Result};
use crate::sequence::Token;

/// 17 significant digits, so that regression diffs are exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn fmt_tokens(tokens: &[Option<Token>]) -> String {
    tokens
        .iter()
        .map(|t| match t {
            Some(t) if *t < 10 => char::from_digit(*t as u32, 10).expect("digit"),
            Some(_) => '+',
            None => '?',
        })
        .collect()
}

/// A result table with a fixed header.
pub trait CsvTable {
    fn header(&self) -> Vec<&'static str>;
    fn records(&self) -> Vec<Vec<String>>;

    fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        write_into(self, &mut w)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn write_into<T: CsvTable + ?Sized, W: std::io::Write>(
    table: &T,
    w: &mut csv::Writer<W>,
) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(table.header()).map_err(csv_err)?;
    for rec in table.records() {
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<T: CsvTable + ?Sized>(table: &T, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    write_into(table, &mut w)
}

impl CsvTable for [NtsResult] {
    fn header(&self) -> Vec<&'static str> {
        vec!["gamma", "count", "nts", "samples", "base_next", "next_tokens", "seed"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.iter()
            .map(|r| {
                vec![
                    fmt_f64(r.gamma),
                    r.count.to_string(),
                    r.nts.to_string(),
                    r.samples.to_string(),
                    fmt_opt(r.base_next),
                    fmt_tokens(&r.next_tokens),
                    r.seed.to_string(),
                ]
            })
            .collect()
    }
}

impl CsvTable for [NtsPositionalRow] {
    fn header(&self) -> Vec<&'static str> {
        vec!["u", "v", "gamma", "count", "nts", "samples"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.iter()
            .map(|r| {
                vec![
                    fmt_f64(r.u),
                    fmt_f64(r.v),
                    fmt_f64(r.gamma),
                    r.count.to_string(),
                    r.nts.to_string(),
                    r.samples.to_string(),
                ]
            })
            .collect()
    }
}

impl CsvTable for [PeriodicResult] {
    fn header(&self) -> Vec<&'static str> {
        vec!["p", "r", "steps", "success", "certainty", "first_mismatch", "generated"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.iter()
            .map(|r| {
                vec![
                    r.p.to_string(),
                    r.r.to_string(),
                    r.steps.to_string(),
                    r.success.to_string(),
                    fmt_f64(r.certainty),
                    fmt_opt(r.first_mismatch),
                    fmt_tokens(&r.generated),
                ]
            })
            .collect()
    }
}

impl CsvTable for CriticalPeriodScan {
    fn header(&self) -> Vec<&'static str> {
        let mut h = self.results.header();
        h.push("critical");
        h
    }

    fn records(&self) -> Vec<Vec<String>> {
        let critical = fmt_opt(self.critical);
        self.results
            .records()
            .into_iter()
            .map(|mut r| {
                r.push(critical.clone());
                r
            })
            .collect()
    }
}

impl CsvTable for ModulusTable {
    fn header(&self) -> Vec<&'static str> {
        vec!["n", "gamma", "count", "d", "d_cummax", "samples", "seed"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                vec![
                    c.n.to_string(),
                    fmt_f64(c.gamma),
                    c.count.to_string(),
                    fmt_f64(c.d),
                    fmt_f64(c.d_cummax),
                    self.samples.to_string(),
                    self.seed.to_string(),
                ]
            })
            .collect()
    }
}

impl CsvTable for CollapseResult {
    fn header(&self) -> Vec<&'static str> {
        vec!["spec", "n", "true_next", "gamma", "count", "agreement", "samples"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    self.spec.to_string(),
                    self.n.to_string(),
                    self.true_next.to_string(),
                    fmt_f64(r.gamma),
                    r.count.to_string(),
                    fmt_f64(r.agreement),
                    r.samples.to_string(),
                ]
            })
            .collect()
    }
}

impl CsvTable for IsolationReport {
    fn header(&self) -> Vec<&'static str> {
        vec!["k", "refuted", "first_failing", "first_one_check", "epsilon", "horizon", "learns_zero"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    r.refuted.to_string(),
                    fmt_opt(r.first_failing),
                    r.first_one_check.to_string(),
                    fmt_f64(self.epsilon),
                    self.horizon.to_string(),
                    self.learns_zero.to_string(),
                ]
            })
            .collect()
    }
}

impl CsvTable for SsmaxComparison {
    fn header(&self) -> Vec<&'static str> {
        vec!["gamma", "count", "nts_softmax", "nts_ssmax", "diff"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(r.gamma),
                    r.count.to_string(),
                    r.nts_softmax.to_string(),
                    r.nts_ssmax.to_string(),
                    r.diff.to_string(),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1.0, 0.1, 1.0 / 3.0, 2.5e-300, -7.25] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn nts_table_layout() {
        let rows = vec![NtsResult {
            gamma: 0.01,
            count: 1,
            nts: 1,
            samples: 2,
            base_next: Some(0),
            next_tokens: vec![Some(0), None],
            seed: 7,
        }];
        let text = rows.to_csv_string().unwrap();
        assert_eq!(
            text,
            "gamma,count,nts,samples,base_next,next_tokens,seed\n1.0000000000000000e-2,1,1,2,0,0?,7\n"
        );
    }
}
