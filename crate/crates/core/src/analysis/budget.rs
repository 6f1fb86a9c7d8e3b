use std::collections::BTreeMap;

use crate::lmshape::EfficiencyInterval;
use crate::lmtrain::TrialRecord;
use crate::{Error, Result};

fn alpha(r: &TrialRecord) -> f64 {
    r.depth as f64 / r.d_model as f64
}

fn usable(r: &TrialRecord) -> bool {
    !r.diverged && r.test_loss.is_finite()
}

/// Lowest-test-loss record of every budget, ordered by budget. Exact ties go to the larger depth-width ratio.
pub fn best_per_budget(records: &[TrialRecord]) -> Vec<TrialRecord> {
    let mut groups: BTreeMap<usize, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.target_n).or_default().push(r);
    }
    let mut best = Vec::with_capacity(groups.len());
    for (budget, rs) in groups {
        let pick = rs.into_iter().filter(|r| usable(r)).min_by(|a, b| {
            a.test_loss
                .total_cmp(&b.test_loss)
                .then_with(|| alpha(b).total_cmp(&alpha(a)))
        });
        match pick {
            Some(r) => best.push(r.clone()),
            None => log::warn!("budget {budget}: every trial diverged, omitted"),
        }
    }
    best
}

/// Range of depth-width ratios spanned by the best points at budgets of at least `min_budget`.
pub fn interval_estimate(best: &[TrialRecord], min_budget: usize) -> Result<EfficiencyInterval> {
    let alphas: Vec<f64> = best.iter().filter(|r| r.target_n >= min_budget).map(alpha).collect();
    if alphas.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no best points at budgets >= {min_budget}"
        )));
    }
    let lo = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(EfficiencyInterval { lo, hi })
}
