//! Aggregate statistics over received requests.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canonical::canonical_digest;
use crate::domain::{InstrumentKind, Objective, Regime, TargetIdentifier};
use crate::time::Timestamp;
use crate::workflow::{DataClass, Decision, RequestRecord};

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Period {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }

    /// The period of equal length ending where this one starts.
    pub fn previous(&self) -> Period {
        let len = self.end.millis() - self.start.millis();
        Period { start: self.start.plus_millis(-len), end: self.start }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginCounts {
    pub domestic: u64,
    pub foreign: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeCounts {
    pub emergency: u64,
    pub routine: u64,
}

/// Effective decision per request. Requests with no decision yet are `pending`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub approved: u64,
    pub rejected: u64,
    pub challenged: u64,
    pub pending: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataClassCounts {
    pub content: u64,
    pub non_content: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransparencyReport {
    /// Digest of the report body, excluding this field and `previous_period_ref`.
    pub report_id: String,
    pub period: Period,
    pub received: u64,
    pub by_objective: BTreeMap<Objective, u64>,
    /// Keyed by each request's first (primary) instrument.
    pub by_instrument_kind: BTreeMap<InstrumentKind, u64>,
    pub by_country: BTreeMap<String, u64>,
    pub domestic_vs_foreign: OriginCounts,
    pub by_regime: RegimeCounts,
    pub outcomes: OutcomeCounts,
    /// Over approved disclosure requests only.
    pub disclosure_data_class: DataClassCounts,
    /// Distinct target identifiers across approved requests.
    pub impacted_accounts: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_period_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("InvalidPeriod: start must be before end")]
    InvalidPeriod,
    #[error("UnsupportedFormat({0})")]
    UnsupportedFormat(String),
}

impl ReportError {
    pub fn name(&self) -> &'static str {
        match self {
            ReportError::InvalidPeriod => "InvalidPeriod",
            ReportError::UnsupportedFormat(_) => "UnsupportedFormat",
        }
    }
}

impl TransparencyReport {
    fn empty(period: Period) -> Self {
        Self {
            report_id: String::new(),
            period,
            received: 0,
            by_objective: Objective::ALL.iter().map(|o| (*o, 0)).collect(),
            by_instrument_kind: InstrumentKind::ALL.iter().map(|k| (*k, 0)).collect(),
            by_country: BTreeMap::new(),
            domestic_vs_foreign: OriginCounts::default(),
            by_regime: RegimeCounts::default(),
            outcomes: OutcomeCounts::default(),
            disclosure_data_class: DataClassCounts::default(),
            impacted_accounts: 0,
            previous_period_ref: None,
        }
    }

    pub fn compute_id(&self) -> String {
        let mut body = serde_json::to_value(self).expect("report serializes");
        let obj = body.as_object_mut().expect("report is an object");
        obj.remove("report_id");
        obj.remove("previous_period_ref");
        canonical_digest(&body).expect("value serializes")
    }

    /// Check that every breakdown sums to the count it partitions.
    pub fn check_sums(&self) -> Result<(), String> {
        let checks = [
            ("by_objective", self.by_objective.values().sum::<u64>(), self.received),
            ("by_instrument_kind", self.by_instrument_kind.values().sum(), self.received),
            ("by_country", self.by_country.values().sum(), self.received),
            ("domestic_vs_foreign", self.domestic_vs_foreign.domestic + self.domestic_vs_foreign.foreign, self.received),
            ("by_regime", self.by_regime.emergency + self.by_regime.routine, self.received),
            (
                "outcomes",
                self.outcomes.approved + self.outcomes.rejected + self.outcomes.challenged + self.outcomes.pending,
                self.received,
            ),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(format!("{name} sums to {got}, expected {want}"));
            }
        }
        if self.disclosure_data_class.content + self.disclosure_data_class.non_content > self.outcomes.approved {
            return Err("disclosure_data_class exceeds approvals".into());
        }
        Ok(())
    }
}

fn aggregate<'a>(records: impl IntoIterator<Item = &'a RequestRecord>, period: Period) -> TransparencyReport {
    let mut report = TransparencyReport::empty(period);
    let mut impacted: BTreeSet<&TargetIdentifier> = BTreeSet::new();
    for rec in records {
        let req = &rec.request;
        if !period.contains(req.submitted_at) {
            continue;
        }
        report.received += 1;
        *report.by_objective.entry(req.objective).or_default() += 1;
        if let Some(first) = req.instruments.first() {
            *report.by_instrument_kind.entry(first.kind).or_default() += 1;
        }
        *report.by_country.entry(req.requester.agency_country.clone()).or_default() += 1;
        if req.origin.is_foreign() {
            report.domestic_vs_foreign.foreign += 1;
        } else {
            report.domestic_vs_foreign.domestic += 1;
        }
        match req.regime {
            Regime::Emergency => report.by_regime.emergency += 1,
            Regime::Routine => report.by_regime.routine += 1,
        }
        match rec.effective_decision() {
            None => report.outcomes.pending += 1,
            Some(d) => match d.decision {
                Decision::Approve => {
                    report.outcomes.approved += 1;
                    impacted.extend(req.target.identifiers.iter());
                    if req.objective == Objective::Disclosure {
                        match d.response_data_class {
                            DataClass::Content => report.disclosure_data_class.content += 1,
                            DataClass::NonContent => report.disclosure_data_class.non_content += 1,
                            DataClass::None => {}
                        }
                    }
                }
                Decision::Reject => report.outcomes.rejected += 1,
                Decision::Challenge => report.outcomes.challenged += 1,
            },
        }
    }
    report.impacted_accounts = impacted.len() as u64;
    report.report_id = report.compute_id();
    report
}

/// Aggregate requests submitted in `period`. When the preceding period of
/// equal length saw any requests, its report id is linked.
pub fn generate_transparency_report(records: &[RequestRecord], period: Period) -> Result<TransparencyReport, ReportError> {
    if period.start >= period.end {
        return Err(ReportError::InvalidPeriod);
    }
    let mut report = aggregate(records, period);
    let previous = aggregate(records, period.previous());
    if previous.received > 0 {
        report.previous_period_ref = Some(previous.report_id);
    }
    Ok(report)
}
