//! Censoring-aware evaluation: Harrell's concordance index, the
//! Kaplan-Meier product-limit estimator, the two-group log-rank test,
//! quantile discretization of survival times, and median risk
//! stratification.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} records, got {got}")]
    TooFewRecords { need: usize, got: usize },
    #[error("no comparable pairs (every pair censored or tied in time)")]
    NoComparablePairs,
    #[error("log-rank test needs at least one observed event")]
    NoEvents,
    #[error("log-rank test needs both groups nonempty")]
    EmptyGroup,
    #[error("discretization needs {need} uncensored records, got {got}")]
    TooFewUncensored { need: usize, got: usize },
    #[error("discretization bin {bin} is empty over uncensored records (tied times)")]
    EmptyBin { bin: usize },
    #[error("risk stratification needs both groups nonempty (all risks equal?)")]
    DegenerateStrata,
}

/// One subject: follow-up time, censor flag (1 = unobserved outcome), and a
/// predicted risk score where higher means riskier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalRecord {
    pub time_months: f64,
    pub censor: u8,
    pub risk: f64,
}

/// Harrell's concordance index.
///
/// Pair (i, j) is comparable iff t_i < t_j and subject i's event was
/// observed. Concordant pairs score 1, risk ties score 1/2. Equal times are
/// never comparable. Errors when no pair is comparable rather than returning
/// the coin-flip value.
pub fn concordance_index(records: &[SurvivalRecord]) -> Result<f64, StatsError> {
    if records.len() < 2 {
        return Err(StatsError::TooFewRecords {
            need: 2,
            got: records.len(),
        });
    }
    let mut concordant = 0.0;
    let mut comparable = 0u64;
    for (i, a) in records.iter().enumerate() {
        if a.censor != 0 {
            continue;
        }
        for (j, b) in records.iter().enumerate() {
            if i == j || a.time_months >= b.time_months {
                continue;
            }
            comparable += 1;
            if a.risk > b.risk {
                concordant += 1.0;
            } else if a.risk == b.risk {
                concordant += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(StatsError::NoComparablePairs);
    }
    Ok(concordant / comparable as f64)
}

/// Kaplan-Meier step function over the distinct event times.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    /// Distinct times with at least one observed event, ascending.
    pub times: Vec<f64>,
    /// S(t) just after each event time.
    pub survival: Vec<f64>,
    /// Subjects at risk just before each event time.
    pub n_at_risk: Vec<usize>,
    /// Observed deaths at each event time.
    pub n_events: Vec<usize>,
}

impl SurvivalCurve {
    /// Survival probability at time `t` (right-continuous step function).
    pub fn survival_at(&self, t: f64) -> f64 {
        let mut s = 1.0;
        for (time, surv) in self.times.iter().zip(&self.survival) {
            if *time <= t {
                s = *surv;
            } else {
                break;
            }
        }
        s
    }
}

/// Product-limit estimator. Censored subjects at exactly an event time stay
/// in the risk set for that time.
pub fn km_estimate(records: &[SurvivalRecord]) -> Result<SurvivalCurve, StatsError> {
    if records.is_empty() {
        return Err(StatsError::TooFewRecords { need: 1, got: 0 });
    }
    let mut sorted: Vec<&SurvivalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.time_months.partial_cmp(&b.time_months).unwrap());

    let n = sorted.len();
    let mut curve = SurvivalCurve {
        times: Vec::new(),
        survival: Vec::new(),
        n_at_risk: Vec::new(),
        n_events: Vec::new(),
    };
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = sorted[i].time_months;
        let at_risk = n - i;
        let mut deaths = 0usize;
        let mut j = i;
        while j < n && sorted[j].time_months == t {
            if sorted[j].censor == 0 {
                deaths += 1;
            }
            j += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.n_at_risk.push(at_risk);
            curve.n_events.push(deaths);
        }
        i = j;
    }
    Ok(curve)
}

/// Two-group log-rank test: chi-square statistic (1 dof) from pooled
/// observed-vs-expected death counts, and the analytic p-value.
pub fn logrank_test(
    group_a: &[SurvivalRecord],
    group_b: &[SurvivalRecord],
) -> Result<(f64, f64), StatsError> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    let mut all: Vec<(f64, bool, u8)> = Vec::with_capacity(group_a.len() + group_b.len());
    for r in group_a {
        all.push((r.time_months, true, r.censor));
    }
    for r in group_b {
        all.push((r.time_months, false, r.censor));
    }
    if all.iter().all(|&(_, _, c)| c != 0) {
        return Err(StatsError::NoEvents);
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let n = all.len();
    let mut observed_minus_expected = 0.0;
    let mut variance = 0.0;
    let mut i = 0;
    while i < n {
        let t = all[i].0;
        let at_risk = (n - i) as f64;
        let at_risk_a = all[i..].iter().filter(|&&(_, in_a, _)| in_a).count() as f64;
        let mut deaths = 0.0;
        let mut deaths_a = 0.0;
        let mut j = i;
        while j < n && all[j].0 == t {
            if all[j].2 == 0 {
                deaths += 1.0;
                if all[j].1 {
                    deaths_a += 1.0;
                }
            }
            j += 1;
        }
        if deaths > 0.0 {
            let expected_a = deaths * at_risk_a / at_risk;
            observed_minus_expected += deaths_a - expected_a;
            if at_risk > 1.0 {
                // Hypergeometric variance of deaths_a at this time.
                variance += deaths * (at_risk_a / at_risk) * (1.0 - at_risk_a / at_risk)
                    * (at_risk - deaths)
                    / (at_risk - 1.0);
            }
        }
        i = j;
    }

    let chi_square = if variance > 0.0 {
        observed_minus_expected * observed_minus_expected / variance
    } else {
        0.0
    };
    let p_value = if chi_square == 0.0 {
        1.0
    } else {
        let dist = ChiSquared::new(1.0).expect("1 dof is valid");
        1.0 - dist.cdf(chi_square)
    };
    Ok((chi_square, p_value))
}

/// Quantile bin edges over the uncensored times plus the 1-based interval
/// label for every record. Censored times beyond the last edge clamp to the
/// final bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub edges: Vec<f64>,
    pub labels: Vec<usize>,
    pub n_bins: usize,
}

impl Discretization {
    /// Bin for an arbitrary time under the fitted edges.
    pub fn assign(&self, time: f64) -> usize {
        let mut bin = 1;
        for &e in &self.edges {
            if time >= e {
                bin += 1;
            }
        }
        bin.min(self.n_bins)
    }
}

pub fn discretize_times(
    records: &[(f64, u8)],
    n_bins: usize,
) -> Result<Discretization, StatsError> {
    let mut uncensored: Vec<f64> = records
        .iter()
        .filter(|&&(_, c)| c == 0)
        .map(|&(t, _)| t)
        .collect();
    if uncensored.len() < n_bins {
        return Err(StatsError::TooFewUncensored {
            need: n_bins,
            got: uncensored.len(),
        });
    }
    uncensored.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = uncensored.len();
    let mut edges = Vec::with_capacity(n_bins - 1);
    for k in 1..n_bins {
        let idx = k * n / n_bins;
        let edge = if k * n % n_bins == 0 && idx > 0 {
            (uncensored[idx - 1] + uncensored[idx]) / 2.0
        } else {
            uncensored[idx]
        };
        edges.push(edge);
    }
    let disc = Discretization {
        edges,
        labels: Vec::new(),
        n_bins,
    };
    let labels: Vec<usize> = records.iter().map(|&(t, _)| disc.assign(t)).collect();

    // Every bin must be populated by uncensored records; heavy ties can
    // collapse a quantile edge.
    for bin in 1..=n_bins {
        let populated = records
            .iter()
            .zip(&labels)
            .any(|(&(_, c), &l)| c == 0 && l == bin);
        if !populated {
            return Err(StatsError::EmptyBin { bin });
        }
    }
    Ok(Discretization {
        edges: disc.edges,
        labels,
        n_bins,
    })
}

/// Median split of risk scores: ties at the median go low. Errors when one
/// group would be empty.
pub fn stratify(risks: &[f64]) -> Result<Vec<RiskGroup>, StatsError> {
    if risks.len() < 2 {
        return Err(StatsError::TooFewRecords {
            need: 2,
            got: risks.len(),
        });
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let labels: Vec<RiskGroup> = risks
        .iter()
        .map(|&r| {
            if r > median {
                RiskGroup::High
            } else {
                RiskGroup::Low
            }
        })
        .collect();
    if labels.iter().all(|&g| g == RiskGroup::Low) || labels.iter().all(|&g| g == RiskGroup::High)
    {
        return Err(StatsError::DegenerateStrata);
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskGroup {
    Low,
    High,
}

impl RiskGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskGroup::Low => "low",
            RiskGroup::High => "high",
        }
    }
}

/// CSV rows for one or more labelled curves, with the exact header
/// `time,survival,n_at_risk,n_events,group`.
pub fn km_curves_to_csv(curves: &[(RiskGroup, &SurvivalCurve)]) -> String {
    let mut out = String::from("time,survival,n_at_risk,n_events,group\n");
    for (group, curve) in curves {
        for i in 0..curve.times.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                curve.times[i],
                curve.survival[i],
                curve.n_at_risk[i],
                curve.n_events[i],
                group.as_str()
            ));
        }
    }
    out
}
