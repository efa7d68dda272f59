//! Joint goal accuracy and retrieval-selection analysis.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueState, SlotId};
use crate::error::{Error, Result};
use crate::generation::{RetrievalLog, TurnState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub jga: f64,
    pub correct: usize,
    pub turn_count: usize,
}

impl DomainScore {
    fn from_counts(correct: usize, turn_count: usize) -> Self {
        DomainScore {
            jga: if turn_count == 0 { 0.0 } else { correct as f64 / turn_count as f64 },
            correct,
            turn_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub jga: f64,
    pub correct: usize,
    pub turn_count: usize,
    /// Per domain: the turns of dialogues touching it, compared on that
    /// domain's slots only.
    pub per_domain: BTreeMap<String, DomainScore>,
    pub seed_runs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn scoped(state: &DialogueState, scope: Option<&str>) -> DialogueState {
    match scope {
        Some(d) => state.restricted_to(d),
        None => state.clone(),
    }
}

/// A turn is correct iff the predicted and gold slot maps (restricted to
/// `slot_scope` when given) are equal. Predictions must cover exactly the
/// gold (dialogue, turn) keys.
pub fn joint_goal_accuracy(
    preds: &[TurnState],
    golds: &[TurnState],
    slot_scope: Option<&str>,
) -> Result<EvalReport> {
    if golds.is_empty() {
        return Err(Error::Alignment("no gold turns to evaluate".into()));
    }
    let mut by_key: HashMap<(&str, usize), &DialogueState> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_key.insert((&p.dialogue_id, p.turn), &p.state).is_some() {
            return Err(Error::Alignment(format!(
                "duplicate prediction for {} turn {}",
                p.dialogue_id, p.turn
            )));
        }
    }
    let mut dialogue_domains: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for g in golds {
        dialogue_domains
            .entry(&g.dialogue_id)
            .or_default()
            .extend(g.state.domains());
    }

    let mut correct = 0;
    let mut domain_counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut seen = 0;
    for g in golds {
        let pred = by_key.get(&(g.dialogue_id.as_str(), g.turn)).ok_or_else(|| {
            Error::Alignment(format!("no prediction for {} turn {}", g.dialogue_id, g.turn))
        })?;
        seen += 1;
        if scoped(pred, slot_scope) == scoped(&g.state, slot_scope) {
            correct += 1;
        }
        for d in &dialogue_domains[g.dialogue_id.as_str()] {
            if slot_scope.is_some_and(|s| s != *d) {
                continue;
            }
            let entry = domain_counts.entry(d.to_string()).or_default();
            entry.1 += 1;
            if pred.restricted_to(d) == g.state.restricted_to(d) {
                entry.0 += 1;
            }
        }
    }
    if seen != preds.len() {
        let gold_keys: BTreeSet<(&str, usize)> =
            golds.iter().map(|g| (g.dialogue_id.as_str(), g.turn)).collect();
        let extra = preds
            .iter()
            .find(|p| !gold_keys.contains(&(p.dialogue_id.as_str(), p.turn)))
            .map(|p| format!("{} turn {}", p.dialogue_id, p.turn))
            .unwrap_or_default();
        return Err(Error::Alignment(format!("prediction for {extra} has no gold turn")));
    }
    let jga = correct as f64 / golds.len() as f64;
    Ok(EvalReport {
        jga,
        correct,
        turn_count: golds.len(),
        per_domain: domain_counts
            .into_iter()
            .map(|(d, (c, n))| (d, DomainScore::from_counts(c, n)))
            .collect(),
        seed_runs: vec![jga],
        mean: jga,
        std: 0.0,
    })
}

/// Arithmetic mean and sample standard deviation (n − 1 denominator; 0 for a
/// single run).
pub fn aggregate_runs(jgas: &[f64]) -> Result<(f64, f64)> {
    if jgas.is_empty() {
        return Err(Error::InvalidArgument("no runs to aggregate".into()));
    }
    let n = jgas.len() as f64;
    let mean = jgas.iter().sum::<f64>() / n;
    if jgas.len() < 2 {
        return Ok((mean, 0.0));
    }
    let var = jgas.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Merge per-seed reports: counts are pooled, `seed_runs` lists each run's
/// JGA, and mean/std summarize them.
pub fn combine_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    let seed_runs: Vec<f64> = reports.iter().map(|r| r.jga).collect();
    let (mean, std) = aggregate_runs(&seed_runs)?;
    let correct = reports.iter().map(|r| r.correct).sum();
    let turn_count = reports.iter().map(|r| r.turn_count).sum();
    let mut per_domain: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in reports {
        for (d, s) in &r.per_domain {
            let e = per_domain.entry(d.clone()).or_default();
            e.0 += s.correct;
            e.1 += s.turn_count;
        }
    }
    let pooled = DomainScore::from_counts(correct, turn_count);
    Ok(EvalReport {
        jga: pooled.jga,
        correct,
        turn_count,
        per_domain: per_domain
            .into_iter()
            .map(|(d, (c, n))| (d, DomainScore::from_counts(c, n)))
            .collect(),
        seed_runs,
        mean,
        std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Domain,
    Slot,
}

impl Axis {
    pub fn label(self, slot: &SlotId) -> String {
        match self {
            Axis::Domain => slot.domain().to_string(),
            Axis::Slot => slot.to_string(),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Domain => "domain",
            Axis::Slot => "slot",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "domain" => Ok(Axis::Domain),
            "slot" => Ok(Axis::Slot),
            _ => Err(Error::InvalidArgument(format!("unknown axis {s:?} (domain|slot)"))),
        }
    }
}

/// Rows are the query's label, columns the retrieved example's.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMatrix {
    pub axis: Axis,
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl SelectionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn cell(&self, row: &str, col: &str) -> Option<u64> {
        let r = self.labels.binary_search_by(|l| l.as_str().cmp(row)).ok()?;
        let c = self.labels.binary_search_by(|l| l.as_str().cmp(col)).ok()?;
        Some(self.counts[r][c])
    }

    pub fn diagonal(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts.iter().enumerate().map(|(i, row)| row[i])
    }

    /// Header line of labels, then one line of counts per row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Schema(format!("csv: {e}"));
        w.write_record(&self.labels).map_err(csv_err)?;
        for row in &self.counts {
            w.write_record(row.iter().map(u64::to_string)).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Schema(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub queries: usize,
    pub retrieved: usize,
    /// 0 when nothing was retrieved.
    pub same_slot_fraction: f64,
    pub same_domain_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionAnalysis {
    pub matrix: SelectionMatrix,
    pub summary: SelectionSummary,
}

pub fn selection_analysis(logs: &[RetrievalLog], axis: Axis) -> Result<SelectionAnalysis> {
    if logs.is_empty() {
        return Err(Error::InvalidArgument("no retrieval logs to analyze".into()));
    }
    let labels: Vec<String> = logs
        .iter()
        .flat_map(|l| std::iter::once(&l.slot).chain(&l.retrieved_slots))
        .map(|s| axis.label(s))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    let (mut retrieved, mut same_slot, mut same_domain) = (0usize, 0usize, 0usize);
    for l in logs {
        let r = pos[axis.label(&l.slot).as_str()];
        for s in &l.retrieved_slots {
            counts[r][pos[axis.label(s).as_str()]] += 1;
            retrieved += 1;
            same_slot += usize::from(*s == l.slot);
            same_domain += usize::from(s.domain() == l.slot.domain());
        }
    }
    let frac = |n: usize| if retrieved == 0 { 0.0 } else { n as f64 / retrieved as f64 };
    Ok(SelectionAnalysis {
        matrix: SelectionMatrix {
            axis,
            labels,
            counts,
        },
        summary: SelectionSummary {
            queries: logs.len(),
            retrieved,
            same_slot_fraction: frac(same_slot),
            same_domain_fraction: frac(same_domain),
        },
    })
}
