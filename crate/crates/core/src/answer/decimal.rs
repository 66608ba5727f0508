use std::cmp::Ordering;
use std::fmt;

use bigdecimal::num_bigint::BigInt;
use bigdecimal::{BigDecimal, ToPrimitive};

/// Largest decimal exponent accepted when parsing; keeps plain rendering bounded.
const MAX_EXPONENT: i64 = 4096;

/// Exact decimal number held in normalized form (no trailing fractional zeros).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Decimal(BigDecimal);

impl Decimal {
    /// Parses `[+-]?(digits[.digits]|.digits)([eE][+-]?digits)?`.
    pub fn parse(text: &str) -> Option<Decimal> {
        let bytes = text.as_bytes();
        let mut i = 0;
        let mut negative = false;
        if let Some(&c) = bytes.first() {
            if c == b'+' || c == b'-' {
                negative = c == b'-';
                i = 1;
            }
        }
        let int_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let int_digits = &text[int_start..i];
        let mut frac_digits = "";
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            let frac_start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            frac_digits = &text[frac_start..i];
        }
        if int_digits.is_empty() && frac_digits.is_empty() {
            return None;
        }
        let mut exponent: i64 = 0;
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            i += 1;
            let exp_start = i;
            if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                i += 1;
            }
            let digits_start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if digits_start == i {
                return None;
            }
            exponent = text[exp_start..i].parse().ok()?;
            if exponent.abs() > MAX_EXPONENT {
                return None;
            }
        }
        if i != bytes.len() {
            return None;
        }
        let mut digits = String::with_capacity(int_digits.len() + frac_digits.len() + 1);
        if negative {
            digits.push('-');
        }
        digits.push_str(int_digits);
        digits.push_str(frac_digits);
        let mantissa: BigInt = digits.parse().ok()?;
        let scale = frac_digits.len() as i64 - exponent;
        Some(Decimal(BigDecimal::new(mantissa, scale).normalized()))
    }

    pub fn from_i64(value: i64) -> Decimal {
        Decimal(BigDecimal::from(value).normalized())
    }

    /// Uses the shortest round-trip rendering of `value`; `None` for NaN and infinities.
    pub fn from_f64(value: f64) -> Option<Decimal> {
        if !value.is_finite() {
            return None;
        }
        Decimal::parse(&format!("{value}"))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }
}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Plain (non-scientific) rendering.
impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (mantissa, scale) = self.0.as_bigint_and_exponent();
        let mut digits = mantissa.magnitude().to_string();
        if mantissa.sign() == bigdecimal::num_bigint::Sign::Minus {
            f.write_str("-")?;
        }
        if scale <= 0 {
            digits.extend(std::iter::repeat('0').take((-scale) as usize));
            return f.write_str(&digits);
        }
        let scale = scale as usize;
        if digits.len() <= scale {
            let pad = scale + 1 - digits.len();
            digits.insert_str(0, &"0".repeat(pad));
        }
        let point = digits.len() - scale;
        write!(f, "{}.{}", &digits[..point], &digits[point..])
    }
}
