//! Exact decimal amounts in integer units.
//!
//! Parsing accepts both point-decimal (`1,940.40`) and comma-decimal
//! (`8.847,69`, `24,27`) forms. When only one kind of separator appears it
//! is the decimal separator if it occurs once, a grouping separator if it
//! occurs more than once.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AmountError {
    #[error("InvalidAmount({0:?}): {1}")]
    Invalid(String, &'static str),
    #[error("InvalidAmount({0:?}): more than {1} decimal places")]
    TooPrecise(String, u32),
    #[error("InvalidAmount({0:?}): out of range")]
    Overflow(String),
}

/// Parse a decimal into an integer scaled by `10^scale`.
pub fn parse_scaled(input: &str, scale: u32) -> Result<i128, AmountError> {
    let invalid = |why| AmountError::Invalid(input.to_owned(), why);
    let mut s = input.trim();
    let negative = s.starts_with('-');
    if negative || s.starts_with('+') {
        s = &s[1..];
    }
    let s = s.strip_prefix('$').unwrap_or(s).trim();
    if s.is_empty() {
        return Err(invalid("empty"));
    }
    if !s.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
        return Err(invalid("unexpected character"));
    }
    let dots = s.matches('.').count();
    let commas = s.matches(',').count();
    let decimal_sep = match (dots, commas) {
        (0, 0) => None,
        (_, 0) => (dots == 1).then_some('.'),
        (0, _) => (commas == 1).then_some(','),
        _ => {
            let last = s.rfind(['.', ',']).expect("separators present");
            let sep = s[last..].chars().next().expect("non-empty");
            if s.matches(sep).count() != 1 {
                return Err(invalid("ambiguous separators"));
            }
            Some(sep)
        }
    };
    let (int_part, frac_part) = match decimal_sep {
        Some(sep) => s.split_once(sep).expect("separator present"),
        None => (s, ""),
    };
    let group_sep = match decimal_sep {
        Some('.') => ',',
        Some(_) => '.',
        None if dots > 0 => '.',
        None => ',',
    };
    let groups: Vec<&str> = int_part.split(group_sep).collect();
    if groups.len() > 1 && (groups[0].is_empty() || groups[0].len() > 3 || groups[1..].iter().any(|g| g.len() != 3)) {
        return Err(invalid("misplaced grouping separator"));
    }
    let digits: String = groups.concat();
    if digits.is_empty() && frac_part.is_empty() {
        return Err(invalid("no digits"));
    }
    if frac_part.len() > scale as usize {
        return Err(AmountError::TooPrecise(input.to_owned(), scale));
    }
    let overflow = || AmountError::Overflow(input.to_owned());
    let mut value: i128 = 0;
    for c in digits.chars().chain(frac_part.chars()) {
        value = value.checked_mul(10).and_then(|v| v.checked_add((c as u8 - b'0') as i128)).ok_or_else(overflow)?;
    }
    let pad = 10i128.checked_pow(scale - frac_part.len() as u32).ok_or_else(overflow)?;
    value = value.checked_mul(pad).ok_or_else(overflow)?;
    if value > i64::MAX as i128 {
        return Err(overflow());
    }
    Ok(if negative { -value } else { value })
}

/// Divide rounding to nearest, ties to even.
pub fn div_round_half_even(n: i128, d: i128) -> i128 {
    assert!(d > 0, "divisor must be positive");
    let q = n.div_euclid(d);
    let r = n.rem_euclid(d);
    match (2 * r).cmp(&d) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

fn format_scaled(v: i128, scale: u32, min_frac: usize) -> String {
    let unit = 10i128.pow(scale);
    let sign = if v < 0 { "-" } else { "" };
    let a = v.abs();
    let mut frac = format!("{:0width$}", a % unit, width = scale as usize);
    while frac.len() > min_frac && frac.ends_with('0') {
        frac.pop();
    }
    if frac.is_empty() {
        format!("{sign}{}", a / unit)
    } else {
        format!("{sign}{}.{frac}", a / unit)
    }
}

macro_rules! scaled_type {
    ($(#[$m:meta])* $name:ident, $scale:expr, $min_frac:expr) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub i64);

        impl $name {
            pub const SCALE: u32 = $scale;

            pub fn parse(s: &str) -> Result<Self, AmountError> {
                parse_scaled(s, $scale).map(|v| Self(v as i64))
            }

            pub fn units(self) -> i64 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&format_scaled(self.0 as i128, $scale, $min_frac))
            }
        }

        impl std::str::FromStr for $name {
            type Err = AmountError;
            fn from_str(s: &str) -> Result<Self, AmountError> {
                Self::parse(s)
            }
        }
    };
}

scaled_type!(
    /// Currency in integer cents. Serialized as the integer cent count.
    Cents, 2, 2
);
scaled_type!(
    /// A rate in integer micro-units of currency. Serialized as the integer.
    Micros, 6, 0
);
scaled_type!(
    /// A duration in integer micro-hours (or micro-months for monthly lines).
    /// Serialized as a decimal string such as `"5040"` or `"0.5"`.
    Quantity, 6, 0
);

impl Serialize for Cents {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.0)
    }
}

impl<'de> Deserialize<'de> for Cents {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        i64::deserialize(d).map(Cents)
    }
}

impl Serialize for Micros {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.0)
    }
}

impl<'de> Deserialize<'de> for Micros {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        i64::deserialize(d).map(Micros)
    }
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => i64::try_from(n)
                .ok()
                .and_then(|n| n.checked_mul(1_000_000))
                .map(Quantity)
                .ok_or_else(|| serde::de::Error::custom("quantity out of range")),
            Raw::Text(s) => Quantity::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

impl Quantity {
    pub fn whole(n: i64) -> Self {
        Quantity(n * 1_000_000)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn parses_both_conventions() {
        assert_eq!(Cents::parse("8.847,69").unwrap(), Cents(884_769));
        assert_eq!(Cents::parse("8,847.69").unwrap(), Cents(884_769));
        assert_eq!(Cents::parse("24,27").unwrap(), Cents(2_427));
        assert_eq!(Cents::parse("1,940.4").unwrap(), Cents(194_040));
        assert_eq!(Cents::parse("6,693.12").unwrap(), Cents(669_312));
        assert_eq!(Cents::parse("$165.63").unwrap(), Cents(16_563));
        assert_eq!(Cents::parse("1.000.000").unwrap(), Cents(100_000_000));
        assert_eq!(Cents::parse("0").unwrap(), Cents(0));
        assert_eq!(Micros::parse("0.077").unwrap(), Micros(77_000));
        assert_eq!(Micros::parse("1.328").unwrap(), Micros(1_328_000));
        assert_eq!(Quantity::parse("5040").unwrap(), Quantity::whole(5040));
        assert_eq!(Cents::parse("-3.5").unwrap(), Cents(-350));
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "abc", "1.2.3,4,5", "12,34,5", "1,2345.6", "1e5", ".", "1.234,5.6"] {
            assert!(Cents::parse(bad).is_err(), "{bad}");
        }
        assert!(matches!(Cents::parse("0.001"), Err(AmountError::TooPrecise(..))));
        assert!(matches!(Cents::parse("99999999999999999999999"), Err(AmountError::Overflow(_))));
    }

    #[test]
    fn display() {
        assert_eq!(Cents(884_769).to_string(), "8847.69");
        assert_eq!(Cents(5).to_string(), "0.05");
        assert_eq!(Cents(-194_040).to_string(), "-1940.40");
        assert_eq!(Micros(77_000).to_string(), "0.077");
        assert_eq!(Quantity::whole(5040).to_string(), "5040");
        assert_eq!(Quantity(500_000).to_string(), "0.5");
    }

    #[test]
    fn half_even() {
        assert_eq!(div_round_half_even(5, 10), 0);
        assert_eq!(div_round_half_even(15, 10), 2);
        assert_eq!(div_round_half_even(25, 10), 2);
        assert_eq!(div_round_half_even(26, 10), 3);
        assert_eq!(div_round_half_even(-15, 10), -2);
        assert_eq!(div_round_half_even(-25, 10), -2);
    }

    #[test]
    fn quantity_serde() {
        assert_eq!(serde_json::to_string(&Quantity(730_500_000)).unwrap(), "\"730.5\"");
        assert_eq!(serde_json::from_str::<Quantity>("5040").unwrap(), Quantity::whole(5040));
        assert_eq!(serde_json::from_str::<Quantity>("\"5040,5\"").unwrap(), Quantity(5_040_500_000));
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(v in -10_000_000_000i64..10_000_000_000) {
            prop_assert_eq!(Cents::parse(&Cents(v).to_string()).unwrap(), Cents(v));
            prop_assert_eq!(Quantity::parse(&Quantity(v).to_string()).unwrap(), Quantity(v));
        }
    }
}
