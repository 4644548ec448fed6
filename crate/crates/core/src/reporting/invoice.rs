//! Cost-reimbursement invoices.

use serde::{Deserialize, Serialize};

use super::money::{div_round_half_even, Cents, Micros, Quantity};
use crate::ids::{CaseId, InvoiceId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BillingUnit {
    #[default]
    Hour,
    /// Flat monthly price; `hours` then counts months.
    Month,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLine {
    pub name: String,
    /// Price per billing unit, in micro-units of currency.
    pub hourly_rate: Micros,
    pub hours: Quantity,
    pub quantity: u32,
    #[serde(default)]
    pub unit: BillingUnit,
    pub line_cost: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaborLine {
    pub role: String,
    pub hours: Quantity,
    pub rate: Micros,
    pub cost: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invoice {
    pub invoice_id: InvoiceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<CaseId>,
    pub resource_lines: Vec<ResourceLine>,
    pub labor_lines: Vec<LaborLine>,
    pub support_fees: Cents,
    pub total: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CostError {
    #[error("NegativeInput: {0} must not be negative")]
    NegativeInput(&'static str),
    #[error("InvalidQuantity: quantity must be at least 1")]
    InvalidQuantity,
    #[error("Overflow: amount out of range")]
    Overflow,
    #[error("LineMismatch: {0} does not equal rate x hours x quantity")]
    LineMismatch(String),
}

impl CostError {
    pub fn name(&self) -> &'static str {
        match self {
            CostError::NegativeInput(_) => "NegativeInput",
            CostError::InvalidQuantity => "InvalidQuantity",
            CostError::Overflow => "Overflow",
            CostError::LineMismatch(_) => "LineMismatch",
        }
    }
}

/// `rate x hours x quantity`, rounded half-even to whole cents.
pub fn compute_line_cost(rate: Micros, hours: Quantity, quantity: u32) -> Result<Cents, CostError> {
    if rate.0 < 0 {
        return Err(CostError::NegativeInput("rate"));
    }
    if hours.0 < 0 {
        return Err(CostError::NegativeInput("hours"));
    }
    if quantity == 0 {
        return Err(CostError::InvalidQuantity);
    }
    // micro-currency x micro-hours = 1e-12 currency; cents are 1e-2.
    let raw = rate.0 as i128 * hours.0 as i128 * quantity as i128;
    let cents = div_round_half_even(raw, 10_000_000_000);
    i64::try_from(cents).map(Cents).map_err(|_| CostError::Overflow)
}

impl ResourceLine {
    pub fn new(name: &str, rate: Micros, hours: Quantity, quantity: u32, unit: BillingUnit) -> Result<Self, CostError> {
        Ok(Self {
            name: name.to_owned(),
            hourly_rate: rate,
            hours,
            quantity,
            unit,
            line_cost: compute_line_cost(rate, hours, quantity)?,
        })
    }

    /// A line whose cost is a published monthly figure.
    pub fn monthly(name: &str, monthly_price: Cents, quantity: u32) -> Result<Self, CostError> {
        Self::new(name, Micros(monthly_price.0 * 10_000), Quantity::whole(1), quantity, BillingUnit::Month)
    }
}

impl LaborLine {
    pub fn new(role: &str, hours: Quantity, rate: Micros) -> Result<Self, CostError> {
        Ok(Self { role: role.to_owned(), hours, rate, cost: compute_line_cost(rate, hours, 1)? })
    }
}

/// Sum an invoice. Line costs are recomputed and must match what the lines carry.
pub fn compute_invoice(
    case_id: Option<CaseId>,
    lines: Vec<ResourceLine>,
    labor: Vec<LaborLine>,
    support_fees: Cents,
) -> Result<Invoice, CostError> {
    if support_fees.0 < 0 {
        return Err(CostError::NegativeInput("support_fees"));
    }
    let mut total: i64 = support_fees.0;
    for l in &lines {
        if compute_line_cost(l.hourly_rate, l.hours, l.quantity)? != l.line_cost {
            return Err(CostError::LineMismatch(l.name.clone()));
        }
        total = total.checked_add(l.line_cost.0).ok_or(CostError::Overflow)?;
    }
    for l in &labor {
        if compute_line_cost(l.rate, l.hours, 1)? != l.cost {
            return Err(CostError::LineMismatch(l.role.clone()));
        }
        total = total.checked_add(l.cost.0).ok_or(CostError::Overflow)?;
    }
    Ok(Invoice {
        invoice_id: InvoiceId::new(),
        case_id,
        resource_lines: lines,
        labor_lines: labor,
        support_fees,
        total: Cents(total),
    })
}
