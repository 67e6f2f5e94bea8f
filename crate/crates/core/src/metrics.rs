//! Harrell's concordance index for right-censored outcomes.
//!
//! A pair `(i, j)` is comparable when `T_i < T_j` and subject `i` had an
//! observed event. It is concordant when `risk_i > risk_j`; equal risks count
//! one half. Equal event times never form a comparable pair.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceResult {
    pub c_index: f64,
    pub concordant: u64,
    pub discordant: u64,
    pub tied_risk: u64,
    pub comparable: u64,
}

impl ConcordanceResult {
    fn from_counts(concordant: u64, discordant: u64, tied_risk: u64) -> Result<Self> {
        let comparable = concordant + discordant + tied_risk;
        if comparable == 0 {
            return Err(SurvError::UndefinedMetric("no comparable pairs".into()));
        }
        Ok(ConcordanceResult {
            c_index: (concordant as f64 + 0.5 * tied_risk as f64) / comparable as f64,
            concordant,
            discordant,
            tied_risk,
            comparable,
        })
    }
}

fn check_lengths(times: &[f64], events: &[bool], risk: &[f64]) -> Result<()> {
    if times.len() != events.len() || times.len() != risk.len() {
        return Err(SurvError::InvalidInput(format!(
            "length mismatch: {} times, {} events, {} scores",
            times.len(),
            events.len(),
            risk.len()
        )));
    }
    if risk.iter().any(|r| r.is_nan()) {
        return Err(SurvError::InvalidInput("risk scores contain NaN".into()));
    }
    Ok(())
}

/// Fenwick tree of counts over risk ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// O(n log n) concordance: sweep times from largest to smallest, keeping the
/// risk ranks of every subject with a strictly larger time in a Fenwick tree.
pub fn concordance_index(times: &[f64], events: &[bool], risk_scores: &[f64]) -> Result<ConcordanceResult> {
    check_lengths(times, events, risk_scores)?;
    let n = times.len();

    let mut by_risk: Vec<usize> = (0..n).collect();
    by_risk.sort_by(|&a, &b| risk_scores[a].total_cmp(&risk_scores[b]));
    let mut rank = vec![0usize; n];
    let mut r = 0;
    for k in 0..n {
        if k > 0 && risk_scores[by_risk[k]] != risk_scores[by_risk[k - 1]] {
            r += 1;
        }
        rank[by_risk[k]] = r;
    }
    let n_ranks = r + 1;

    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by(|&a, &b| times[b].total_cmp(&times[a]));

    let mut tree = Fenwick(vec![0; n_ranks + 1]);
    let mut inserted = 0u64;
    let (mut conc, mut disc, mut tied) = (0u64, 0u64, 0u64);
    let mut k = 0;
    while k < n {
        let t = times[by_time[k]];
        let mut end = k;
        while end < n && times[by_time[end]] == t {
            end += 1;
        }
        for &i in &by_time[k..end] {
            if events[i] {
                let below = tree.prefix(rank[i]);
                let at_or_below = tree.prefix(rank[i] + 1);
                conc += below;
                tied += at_or_below - below;
                disc += inserted - at_or_below;
            }
        }
        for &i in &by_time[k..end] {
            tree.add(rank[i]);
            inserted += 1;
        }
        k = end;
    }
    ConcordanceResult::from_counts(conc, disc, tied)
}

/// Direct double loop over all ordered pairs.
pub fn concordance_brute(times: &[f64], events: &[bool], risk_scores: &[f64]) -> Result<ConcordanceResult> {
    check_lengths(times, events, risk_scores)?;
    let (mut conc, mut disc, mut tied) = (0u64, 0u64, 0u64);
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        for j in 0..times.len() {
            if times[i] < times[j] {
                if risk_scores[i] > risk_scores[j] {
                    conc += 1;
                } else if risk_scores[i] < risk_scores[j] {
                    disc += 1;
                } else {
                    tied += 1;
                }
            }
        }
    }
    ConcordanceResult::from_counts(conc, disc, tied)
}
