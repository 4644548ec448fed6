//! Transparency reports, cost-reimbursement invoices and their exports.
//!
//! Money is never held in floating point: rates are integer micro-units,
//! durations integer micro-hours and costs integer cents.
//!
//! CSV layouts (header row always present, fixed column and row order):
//!
//! - Transparency report: `section,key,count`. Sections in order are
//!   `received`, `by_objective`, `by_instrument_kind`, `by_country`,
//!   `domestic_vs_foreign`, `by_regime`, `outcomes`,
//!   `disclosure_data_class`, `impacted_accounts`. Keys within a section are
//!   sorted. Rows with a zero count are omitted.
//! - Invoice: `kind,name,rate,hours,quantity,unit,cost` with one `resource`
//!   row per resource line, one `labor` row per labor line, then a
//!   `support_fees` row and a `total` row. Amounts are point-decimal.

pub mod invoice;
pub mod money;
pub mod transparency;

pub use invoice::{compute_invoice, compute_line_cost, BillingUnit, CostError, Invoice, LaborLine, ResourceLine};
pub use money::{AmountError, Cents, Micros, Quantity};
pub use transparency::{generate_transparency_report, Period, ReportError, TransparencyReport};

use serde::Serialize;

use crate::canonical::to_canonical_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ExportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ExportFormat::Json),
            "csv" => Ok(ExportFormat::Csv),
            _ => Err(ReportError::UnsupportedFormat(s.to_owned())),
        }
    }
}

/// Something that can be exported.
pub enum Exportable<'a> {
    Report(&'a TransparencyReport),
    Invoice(&'a Invoice),
}

pub fn export_report(item: Exportable<'_>, format: &str) -> Result<Vec<u8>, ReportError> {
    let format: ExportFormat = format.parse()?;
    Ok(match (item, format) {
        (Exportable::Report(r), ExportFormat::Json) => json_bytes(r),
        (Exportable::Invoice(i), ExportFormat::Json) => json_bytes(i),
        (Exportable::Report(r), ExportFormat::Csv) => report_csv(r),
        (Exportable::Invoice(i), ExportFormat::Csv) => invoice_csv(i),
    })
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    to_canonical_json(v).expect("report types serialize").into_bytes()
}

fn key<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn report_csv(r: &TransparencyReport) -> Vec<u8> {
    let mut rows: Vec<(&str, String, u64)> = vec![("received", "total".into(), r.received)];
    rows.extend(r.by_objective.iter().map(|(k, v)| ("by_objective", key(k), *v)));
    let mut kinds: Vec<_> = r.by_instrument_kind.iter().map(|(k, v)| ("by_instrument_kind", key(k), *v)).collect();
    kinds.sort_by(|a, b| a.1.cmp(&b.1));
    rows.extend(kinds);
    rows.extend(r.by_country.iter().map(|(k, v)| ("by_country", k.clone(), *v)));
    rows.push(("domestic_vs_foreign", "domestic".into(), r.domestic_vs_foreign.domestic));
    rows.push(("domestic_vs_foreign", "foreign".into(), r.domestic_vs_foreign.foreign));
    rows.push(("by_regime", "emergency".into(), r.by_regime.emergency));
    rows.push(("by_regime", "routine".into(), r.by_regime.routine));
    rows.push(("outcomes", "approved".into(), r.outcomes.approved));
    rows.push(("outcomes", "challenged".into(), r.outcomes.challenged));
    rows.push(("outcomes", "pending".into(), r.outcomes.pending));
    rows.push(("outcomes", "rejected".into(), r.outcomes.rejected));
    rows.push(("disclosure_data_class", "content".into(), r.disclosure_data_class.content));
    rows.push(("disclosure_data_class", "non_content".into(), r.disclosure_data_class.non_content));
    rows.push(("impacted_accounts", "total".into(), r.impacted_accounts));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["section", "key", "count"]).expect("in-memory write");
    for (section, k, n) in rows.into_iter().filter(|r| r.2 > 0) {
        w.write_record([section, k.as_str(), n.to_string().as_str()]).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn invoice_csv(i: &Invoice) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "name", "rate", "hours", "quantity", "unit", "cost"]).expect("in-memory write");
    for l in &i.resource_lines {
        w.write_record([
            "resource",
            &l.name,
            &l.hourly_rate.to_string(),
            &l.hours.to_string(),
            &l.quantity.to_string(),
            &key(&l.unit),
            &l.line_cost.to_string(),
        ])
        .expect("in-memory write");
    }
    for l in &i.labor_lines {
        w.write_record(["labor", &l.role, &l.rate.to_string(), &l.hours.to_string(), "1", "hour", &l.cost.to_string()])
            .expect("in-memory write");
    }
    w.write_record(["support_fees", "", "", "", "", "", &i.support_fees.to_string()]).expect("in-memory write");
    w.write_record(["total", "", "", "", "", "", &i.total.to_string()]).expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}
