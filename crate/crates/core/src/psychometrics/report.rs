//! Reliability (per task and question ICC) and loading reports, plus the raw
//! CFA parameter file that lets later stages rescore without refitting.

use std::io::{Read, Write};

use super::{fit_cfa, icc_1k, mean_answers, question_matrix, CfaFit, IccResult, PsychometricsError};
use crate::ingest::{RatingsTable, Scope, Task};
use crate::report::{self, sig6, Provenance};

pub const QUESTION_NAMES: [&str; 3] = ["Response", "Emotion", "Motion"];
pub const REPORT_HEADER: [&str; 5] = ["task", "question", "estimate", "ci_low", "ci_high"];
pub const CFA_PARAMS_HEADER: [&str; 8] = ["scope", "question", "loading", "residual_var", "mean", "sd", "heywood", "n"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityRow {
    pub scope: Scope,
    pub question: usize,
    pub icc: IccResult,
}

/// The scopes present in a table: each rated task in canonical order, then all tasks.
pub fn scopes(table: &RatingsTable) -> Vec<Scope> {
    let present = table.tasks();
    Task::RATED.iter().filter(|t| present.contains(t)).map(|&t| Scope::Task(t)).chain([Scope::All]).collect()
}

pub fn reliability_rows(table: &RatingsTable, confidence: f64) -> Result<Vec<ReliabilityRow>, PsychometricsError> {
    let mut rows = Vec::new();
    for scope in scopes(table) {
        let sub = table.filter(|c| scope.contains(c.task));
        for question in 0..3 {
            let icc = icc_1k(&question_matrix(&sub, question)?, confidence)?;
            rows.push(ReliabilityRow { scope, question, icc });
        }
    }
    Ok(rows)
}

/// CFA fit per task and over all tasks.
pub fn fit_scopes(table: &RatingsTable) -> Result<Vec<(Scope, CfaFit)>, PsychometricsError> {
    scopes(table)
        .into_iter()
        .map(|scope| {
            let x: Vec<[f64; 3]> =
                mean_answers(&table.filter(|c| scope.contains(c.task))).into_iter().map(|m| m.means).collect();
            Ok((scope, fit_cfa(&x)?))
        })
        .collect()
}

fn question_label(q: usize) -> String {
    format!("{} ({})", q + 1, QUESTION_NAMES[q])
}

pub fn write_reliability<W: Write>(out: W, rows: &[ReliabilityRow], provenance: Option<&Provenance>) -> std::io::Result<()> {
    report::write_csv(
        out,
        provenance,
        &REPORT_HEADER,
        rows.iter().map(|r| {
            vec![r.scope.label().into(), question_label(r.question), sig6(r.icc.icc), sig6(r.icc.ci_low), sig6(r.icc.ci_high)]
        }),
    )
}

/// Standardized loadings and residual variances, one row per parameter.
/// Heywood-clamped indicators are listed in a comment line after provenance.
pub fn write_loadings<W: Write>(mut out: W, fits: &[(Scope, CfaFit)], provenance: Option<&Provenance>) -> std::io::Result<()> {
    if let Some(p) = provenance {
        p.write_header(&mut out)?;
    }
    for (scope, fit) in fits {
        for q in (0..3).filter(|&q| fit.heywood[q]) {
            writeln!(out, "# heywood: {} question {} residual variance clamped to 0", scope.label(), q + 1)?;
        }
    }
    let mut rows = Vec::new();
    for (scope, fit) in fits {
        let std_l = fit.standardized_loadings();
        for q in 0..3 {
            rows.push(vec![scope.label().into(), format!("lambda_{}", question_label(q)), sig6(std_l[q]), String::new(), String::new()]);
        }
    }
    for (scope, fit) in fits {
        let std_e = fit.standardized_residuals();
        for q in 0..3 {
            rows.push(vec![scope.label().into(), format!("epsilon_{}", question_label(q)), sig6(std_e[q]), String::new(), String::new()]);
        }
    }
    report::write_csv(out, None, &REPORT_HEADER, rows)
}

/// Raw parameters at full precision.
pub fn write_cfa_params<W: Write>(out: W, fits: &[(Scope, CfaFit)], provenance: Option<&Provenance>) -> std::io::Result<()> {
    let rows = fits.iter().flat_map(|(scope, fit)| {
        (0..3).map(move |q| {
            vec![
                scope.to_string(),
                (q + 1).to_string(),
                fit.loadings[q].to_string(),
                fit.residual_vars[q].to_string(),
                fit.means[q].to_string(),
                fit.indicator_sds[q].to_string(),
                fit.heywood[q].to_string(),
                fit.n.to_string(),
            ]
        })
    });
    report::write_csv(out, provenance, &CFA_PARAMS_HEADER, rows)
}

pub fn read_cfa_params<R: Read>(input: R) -> Result<Vec<(Scope, CfaFit)>, String> {
    let mut reader = report::reader(input);
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != CFA_PARAMS_HEADER {
        return Err(format!("expected header {}", CFA_PARAMS_HEADER.join(",")));
    }
    let mut out: Vec<(Scope, CfaFit)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let scope: Scope = rec[0].parse().map_err(|e: crate::ingest::IngestError| e.to_string())?;
        let q: usize = rec[1].parse().map_err(|_| format!("bad question `{}`", &rec[1]))?;
        if !(1..=3).contains(&q) {
            return Err(format!("bad question `{q}`"));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| format!("bad number `{}`", &rec[i]));
        if out.last().is_none_or(|(s, _)| *s != scope) {
            out.push((scope, CfaFit { loadings: [0.0; 3], residual_vars: [0.0; 3], means: [0.0; 3], indicator_sds: [0.0; 3], heywood: [false; 3], n: 0 }));
        }
        let fit = &mut out.last_mut().unwrap().1;
        let i = q - 1;
        fit.loadings[i] = num(2)?;
        fit.residual_vars[i] = num(3)?;
        fit.means[i] = num(4)?;
        fit.indicator_sds[i] = num(5)?;
        fit.heywood[i] = rec[6].parse().map_err(|_| format!("bad flag `{}`", &rec[6]))?;
        fit.n = rec[7].parse().map_err(|_| format!("bad count `{}`", &rec[7]))?;
    }
    Ok(out)
}
