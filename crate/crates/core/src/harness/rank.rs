//! Winner-take-all rankings over metric reports.
//!
//! A ranking cell is one `(task_id, metric)` pair. Each candidate's value in a
//! cell is its mean over seeds; a candidate with any `N/A` seed has no value
//! and cannot win. The best value wins the cell, and tied winners split it.
//! If every candidate failed, the cell is split among all of them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{HeadKind, Objective};
use crate::metrics::{read_reports, MetricName, MetricReport};

/// How candidates are formed from reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Every (estimator, objective) pair on its own.
    All,
    /// By posterior family: point, gaussian, flow, diffusion.
    Family,
    /// By training signal: point, forward, reverse, symmetric.
    Signal,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::All, Grouping::Family, Grouping::Signal];

    pub fn name(self) -> &'static str {
        match self {
            Grouping::All => "all",
            Grouping::Family => "family",
            Grouping::Signal => "signal",
        }
    }

    pub fn parse(s: &str) -> Option<Grouping> {
        Grouping::ALL.into_iter().find(|g| g.name() == s)
    }

    /// The group a report row belongs to. Rows that are not in-context
    /// estimators (baselines) keep their own name in every grouping.
    pub fn group_of(self, estimator: &str, objective: &str) -> String {
        let head = HeadKind::parse(estimator);
        match (self, head) {
            (Grouping::Family, Some(h)) => h.family().to_string(),
            (Grouping::Signal, Some(_)) => match Objective::parse(objective) {
                Some(o) => o.signal().to_string(),
                None => estimator.to_string(),
            },
            _ => candidate_id(estimator, objective),
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `estimator/objective`, or just the estimator for baselines.
pub fn candidate_id(estimator: &str, objective: &str) -> String {
    if objective.is_empty() || objective == "-" {
        estimator.to_string()
    } else {
        format!("{estimator}/{objective}")
    }
}

/// Percentage of cells won per candidate group.
#[derive(Clone, Debug, PartialEq)]
pub struct RankShare {
    pub grouping: Grouping,
    pub shares: BTreeMap<String, f64>,
    /// Number of ranked `(task_id, metric)` cells.
    pub cells: usize,
}

impl RankShare {
    pub fn total(&self) -> f64 {
        self.shares.values().sum()
    }
}

type Cell = (String, MetricName);

/// Ranks candidates over every `(task_id, metric)` cell in `reports`.
pub fn aggregate_rank(reports: &[MetricReport], grouping: Grouping) -> Result<RankShare> {
    if reports.is_empty() {
        return Err(Error::MissingCells("no reports to rank".into()));
    }
    // (candidate, cell) -> seed values; None marks a failed seed.
    let mut table: BTreeMap<(String, Cell), Vec<Option<f64>>> = BTreeMap::new();
    let mut groups: BTreeMap<String, String> = BTreeMap::new();
    let mut cells: BTreeSet<Cell> = BTreeSet::new();
    for r in reports {
        let cand = candidate_id(&r.estimator, &r.objective);
        groups.insert(cand.clone(), grouping.group_of(&r.estimator, &r.objective));
        let cell = (r.task_id.clone(), r.metric);
        cells.insert(cell.clone());
        table.entry((cand, cell)).or_default().push(r.value);
    }
    let mut missing = Vec::new();
    for cand in groups.keys() {
        for cell in &cells {
            if !table.contains_key(&(cand.clone(), cell.clone())) {
                missing.push(format!("{cand} @ {} {}", cell.0, cell.1));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing.join("; ")));
    }

    let group_names: BTreeSet<&String> = groups.values().collect();
    let mut shares: BTreeMap<String, f64> =
        group_names.iter().map(|g| ((*g).clone(), 0.0)).collect();
    for cell in &cells {
        let better = |a: f64, b: f64| {
            if cell.1.higher_is_better() {
                a > b
            } else {
                a < b
            }
        };
        // Best seed-averaged value per group.
        let mut best: BTreeMap<&String, Option<f64>> =
            group_names.iter().map(|g| (*g, None)).collect();
        for (cand, group) in &groups {
            let vals = &table[&(cand.clone(), cell.clone())];
            let Some(mean) = seed_mean(vals) else {
                continue;
            };
            let slot = best.get_mut(group).expect("group listed");
            if slot.is_none_or(|b| better(mean, b)) {
                *slot = Some(mean);
            }
        }
        let top = best
            .values()
            .flatten()
            .copied()
            .fold(None, |acc: Option<f64>, v| match acc {
                Some(a) if !better(v, a) => Some(a),
                _ => Some(v),
            });
        let winners: Vec<&String> = match top {
            Some(t) => best
                .iter()
                .filter(|(_, v)| **v == Some(t))
                .map(|(g, _)| *g)
                .collect(),
            None => best.keys().copied().collect(),
        };
        let w = 1.0 / winners.len() as f64;
        for g in winners {
            *shares.get_mut(g).expect("group listed") += w;
        }
    }
    let n = cells.len() as f64;
    for v in shares.values_mut() {
        *v *= 100.0 / n;
    }
    Ok(RankShare {
        grouping,
        shares,
        cells: cells.len(),
    })
}

fn seed_mean(vals: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    for v in vals {
        sum += (*v)?;
    }
    Some(sum / vals.len() as f64)
}

/// Reads and concatenates report files, then ranks them.
pub fn aggregate_rank_files(paths: &[PathBuf], grouping: Grouping) -> Result<RankShare> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_reports(p)?);
    }
    aggregate_rank(&all, grouping)
}

pub const RANK_HEADER: [&str; 4] = ["grouping", "estimator", "share", "cells"];

pub fn write_rank_csv<W: Write>(w: W, ranks: &[RankShare]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(RANK_HEADER)?;
    for r in ranks {
        for (name, share) in &r.shares {
            out.write_record([
                r.grouping.name(),
                name,
                &share.to_string(),
                &r.cells.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_rank_csv<R: Read>(r: R) -> Result<Vec<RankShare>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != RANK_HEADER {
        return Err(Error::Schema(format!(
            "expected header {}, found {}",
            RANK_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out: Vec<RankShare> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Schema(format!("line {}: invalid {what}", i + 2));
        let grouping = Grouping::parse(&rec[0]).ok_or_else(|| bad("grouping"))?;
        let share: f64 = rec[2].parse().map_err(|_| bad("share"))?;
        let cells: usize = rec[3].parse().map_err(|_| bad("cells"))?;
        match out.last_mut() {
            Some(last) if last.grouping == grouping => {
                last.shares.insert(rec[1].to_string(), share);
            }
            _ => out.push(RankShare {
                grouping,
                shares: BTreeMap::from([(rec[1].to_string(), share)]),
                cells,
            }),
        }
    }
    Ok(out)
}

pub fn write_rank_file(path: &Path, ranks: &[RankShare]) -> Result<()> {
    write_rank_csv(std::fs::File::create(path)?, ranks)
}
