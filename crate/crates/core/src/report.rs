//! Score tables comparing systems against the uncorrected MT baseline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{read_sentences, Sentence};
use crate::error::{Error, Result};
use crate::metrics::{bleu, corpus_ter};

pub const BASELINE_NAME: &str = "Uncorrected MT (baseline)";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub ter: f64,
    pub bleu: f64,
    /// Row minus baseline.
    pub delta_ter: f64,
    pub delta_bleu: f64,
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Sorted by TER ascending; ties keep the baseline first, then input order.
    pub rows: Vec<ReportRow>,
}

fn score(hyps: &[Sentence], pe: &[Sentence]) -> Result<(f64, f64)> {
    Ok((corpus_ter(hyps, pe)?.score(), bleu(hyps, pe)?))
}

/// Scores every system and the baseline `mt` against `pe`.
pub fn evaluate_systems(systems: &[(String, Vec<Sentence>)], mt: &[Sentence], pe: &[Sentence]) -> Result<Report> {
    for (name, hyps) in std::iter::once(&(BASELINE_NAME.to_owned(), mt.to_vec())).chain(systems) {
        if hyps.len() != pe.len() {
            return Err(Error::Input(format!(
                "system `{name}` has {} lines but the reference has {}",
                hyps.len(),
                pe.len()
            )));
        }
    }
    let (base_ter, base_bleu) = score(mt, pe)?;
    let scored: Vec<(f64, f64)> = systems
        .par_iter()
        .map(|(_, hyps)| score(hyps, pe))
        .collect::<Result<_>>()?;
    let mut rows = vec![ReportRow {
        name: BASELINE_NAME.to_owned(),
        ter: base_ter,
        bleu: base_bleu,
        delta_ter: 0.0,
        delta_bleu: 0.0,
        baseline: true,
    }];
    for ((name, _), (t, b)) in systems.iter().zip(scored) {
        rows.push(ReportRow {
            name: name.clone(),
            ter: t,
            bleu: b,
            delta_ter: t - base_ter,
            delta_bleu: b - base_bleu,
            baseline: false,
        });
    }
    rows.sort_by(|a, b| a.ter.total_cmp(&b.ter));
    Ok(Report { rows })
}

fn read_aligned(path: &Path, expected: usize) -> Result<Vec<Sentence>> {
    let s = read_sentences(path)?;
    if s.len() != expected {
        return Err(Error::Alignment {
            path: path.to_owned(),
            expected,
            found: s.len(),
        });
    }
    Ok(s)
}

pub fn evaluate_system_files(systems: &[(String, PathBuf)], mt: &Path, pe: &Path) -> Result<Report> {
    let pe = read_sentences(pe)?;
    let mt = read_aligned(mt, pe.len())?;
    let hyps = systems
        .iter()
        .map(|(n, p)| Ok((n.clone(), read_aligned(p, pe.len())?)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_systems(&hyps, &mt, &pe)
}

fn signed(v: f64) -> String {
    format!("{v:+.2}")
}

impl Report {
    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>7}  {:>7}", "System", "TER", "BLEU", "dTER", "dBLEU");
        for r in &self.rows {
            let (dt, db) = if r.baseline {
                ("-".to_owned(), "-".to_owned())
            } else {
                (signed(r.delta_ter), signed(r.delta_bleu))
            };
            let _ = writeln!(out, "{:<width$}  {:>6.2}  {:>6.2}  {dt:>7}  {db:>7}", r.name, r.ter, r.bleu);
        }
        out
    }

    /// Tab-separated with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("system\tter\tbleu\tdelta_ter\tdelta_bleu\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                r.name, r.ter, r.bleu, r.delta_ter, r.delta_bleu
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(lines: &[&str]) -> Vec<Sentence> {
        lines.iter().map(|l| Sentence::parse(l)).collect()
    }

    #[test]
    fn baseline_only() {
        let pe = sents(&["a b c d e", "f g h i"]);
        let mt = sents(&["a b c d x", "f g h i"]);
        let r = evaluate_systems(&[], &mt, &pe).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.rows[0].baseline);
        assert!(r.to_text().contains(BASELINE_NAME));
    }

    #[test]
    fn perfect_system_ranks_first() {
        let pe = sents(&["a b c d e", "f g h i"]);
        let mt = sents(&["a b c d x", "f h g i"]);
        let worse = sents(&["a", "f"]);
        let r = evaluate_systems(&[("worse".into(), worse), ("oracle".into(), pe.clone())], &mt, &pe).unwrap();
        let names: Vec<_> = r.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, vec!["oracle", BASELINE_NAME, "worse"]);
        assert_eq!(r.rows[0].ter, 0.0);
        assert_eq!(r.rows[0].bleu, 100.0);
        let base = &r.rows[1];
        for row in &r.rows {
            assert_eq!(row.delta_ter, row.ter - base.ter);
            assert_eq!(row.delta_bleu, row.bleu - base.bleu);
        }
        assert_eq!(r.to_tsv().lines().count(), 4);
    }

    #[test]
    fn misaligned_system_is_rejected() {
        let pe = sents(&["a b", "c d"]);
        assert!(evaluate_systems(&[("s".into(), sents(&["a b"]))], &pe, &pe).is_err());
    }
}
