//! Signed fixed-point arithmetic with explicit rounding and saturation.
//!
//! Formats are written `W<width>F<frac>` (e.g. `W8F7`): `width` total bits
//! including the sign, `frac` of them below the binary point. Quantization
//! rounds to nearest with ties to even and saturates on overflow. Products
//! are exact at full width; narrowing happens only when an accumulator is
//! rounded back into a storage format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, VmsError};

/// Widest storage format accepted by [`FixedFormat::new`].
pub const MAX_STORAGE_WIDTH: u32 = 32;
/// Widest format produced by [`fx_mul`].
pub const MAX_PRODUCT_WIDTH: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedFormat {
    width: u32,
    frac: u32,
}

impl FixedFormat {
    /// Storage format, `2 <= width <= 32` and `frac < width`.
    pub fn new(width: u32, frac: u32) -> Result<Self> {
        if !(2..=MAX_STORAGE_WIDTH).contains(&width) {
            return Err(VmsError::validation(format!(
                "fixed-point width {width} outside 2..={MAX_STORAGE_WIDTH}"
            )));
        }
        Self::checked(width, frac)
    }

    fn checked(width: u32, frac: u32) -> Result<Self> {
        if frac >= width {
            return Err(VmsError::validation(format!(
                "fraction bits {frac} must be below width {width}"
            )));
        }
        Ok(FixedFormat { width, frac })
    }

    /// Full-width product format of `a` and `b`.
    pub fn product(a: FixedFormat, b: FixedFormat) -> FixedFormat {
        let width = a.width + b.width;
        debug_assert!(width <= MAX_PRODUCT_WIDTH);
        FixedFormat {
            width,
            frac: a.frac + b.frac,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn frac(&self) -> u32 {
        self.frac
    }

    pub fn int_bits(&self) -> u32 {
        self.width - 1 - self.frac
    }

    pub fn raw_min(&self) -> i64 {
        (-(1i128 << (self.width - 1))) as i64
    }

    pub fn raw_max(&self) -> i64 {
        ((1i128 << (self.width - 1)) - 1) as i64
    }

    /// Real value of one raw unit, `2^-frac`.
    pub fn resolution(&self) -> f64 {
        pow2(-(self.frac as i32))
    }

    pub fn real_min(&self) -> f64 {
        self.raw_min() as f64 * self.resolution()
    }

    pub fn real_max(&self) -> f64 {
        self.raw_max() as f64 * self.resolution()
    }

    pub fn contains_real(&self, x: f64) -> bool {
        x >= self.real_min() && x <= self.real_max()
    }

    fn saturate(&self, raw: i128) -> i64 {
        raw.clamp(self.raw_min() as i128, self.raw_max() as i128) as i64
    }
}

impl fmt::Display for FixedFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W{}F{}", self.width, self.frac)
    }
}

impl FromStr for FixedFormat {
    type Err = VmsError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || VmsError::validation(format!("malformed fixed-point format {s:?}, expected W<width>F<frac>"));
        let rest = s.strip_prefix('W').ok_or_else(bad)?;
        let (w, f) = rest.split_once('F').ok_or_else(bad)?;
        let number = |t: &str| -> Result<u32> {
            let canonical = !t.is_empty()
                && t.bytes().all(|b| b.is_ascii_digit())
                && (t == "0" || !t.starts_with('0'));
            if !canonical {
                return Err(bad());
            }
            t.parse().map_err(|_| bad())
        };
        FixedFormat::new(number(w)?, number(f)?)
    }
}

impl Serialize for FixedFormat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FixedFormat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedValue {
    raw: i64,
    fmt: FixedFormat,
}

impl FixedValue {
    pub fn from_raw(raw: i64, fmt: FixedFormat) -> Result<Self> {
        if raw < fmt.raw_min() || raw > fmt.raw_max() {
            return Err(VmsError::validation(format!("raw value {raw} outside {fmt}")));
        }
        Ok(FixedValue { raw, fmt })
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn format(&self) -> FixedFormat {
        self.fmt
    }
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// Raw integer for `x` under `fmt`: round half to even, then saturate.
/// Infinities saturate; NaN is rejected.
pub fn quantize_raw(x: f64, fmt: FixedFormat) -> Result<i64> {
    if x.is_nan() {
        return Err(VmsError::validation("cannot quantize NaN"));
    }
    let scaled = (x * pow2(fmt.frac as i32)).round_ties_even();
    let lo = fmt.raw_min() as f64;
    let hi = fmt.raw_max() as f64;
    Ok(scaled.clamp(lo, hi) as i64)
}

pub fn quantize_value(x: f64, fmt: FixedFormat) -> Result<FixedValue> {
    Ok(FixedValue {
        raw: quantize_raw(x, fmt)?,
        fmt,
    })
}

/// `raw * 2^-frac`; exact whenever `|raw| < 2^53`.
pub fn dequantize(v: FixedValue) -> f64 {
    dequantize_raw(v.raw, v.fmt)
}

#[inline]
pub fn dequantize_raw(raw: i64, fmt: FixedFormat) -> f64 {
    raw as f64 * pow2(-(fmt.frac as i32))
}

/// Exact product in the full-width format `W(a+b)F(a+b)`.
pub fn fx_mul(a: FixedValue, b: FixedValue) -> FixedValue {
    FixedValue {
        raw: a.raw * b.raw,
        fmt: FixedFormat::product(a.fmt, b.fmt),
    }
}

/// Wide exact accumulator. Overflow is an error naming `context`, never a
/// wrap-around.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accumulator {
    raw: i128,
    frac: u32,
    context: &'static str,
}

impl Accumulator {
    pub fn new(frac: u32, context: &'static str) -> Self {
        Accumulator {
            raw: 0,
            frac,
            context,
        }
    }

    /// Accumulator for `n_terms` terms of at most `term_width` bits, checking
    /// up front that the sum cannot exceed the 127 usable bits.
    pub fn for_workload(frac: u32, term_width: u32, n_terms: u64, context: &'static str) -> Result<Self> {
        let growth = 64 - n_terms.saturating_sub(1).leading_zeros();
        if term_width + growth > 127 {
            return Err(VmsError::Overflow { context });
        }
        Ok(Accumulator::new(frac, context))
    }

    pub fn with_raw(raw: i128, frac: u32, context: &'static str) -> Self {
        Accumulator { raw, frac, context }
    }

    pub fn raw(&self) -> i128 {
        self.raw
    }

    pub fn frac(&self) -> u32 {
        self.frac
    }

    pub fn value(&self) -> f64 {
        self.raw as f64 * pow2(-(self.frac as i32))
    }

    /// Adds a raw term already expressed at the accumulator's fraction.
    #[inline]
    pub fn add_aligned(&mut self, raw: i128) -> Result<()> {
        self.raw = self
            .raw
            .checked_add(raw)
            .ok_or(VmsError::Overflow { context: self.context })?;
        Ok(())
    }
}

/// Adds `term` after shifting it left to the accumulator's fraction. Terms
/// with more fraction bits than the accumulator are rejected.
pub fn fx_accumulate(mut acc: Accumulator, term: FixedValue) -> Result<Accumulator> {
    let tf = term.fmt.frac;
    if tf > acc.frac {
        return Err(VmsError::validation(format!(
            "{}: term has {} fraction bits, accumulator only {}",
            acc.context, tf, acc.frac
        )));
    }
    let aligned = (term.raw as i128)
        .checked_mul(1i128 << (acc.frac - tf))
        .ok_or(VmsError::Overflow { context: acc.context })?;
    acc.add_aligned(aligned)?;
    Ok(acc)
}

/// Arithmetic right shift rounding to nearest, ties to even.
pub fn shift_right_round_even(raw: i128, shift: u32) -> i128 {
    if shift == 0 {
        return raw;
    }
    if shift >= 127 {
        // |raw| < 2^127 so everything rounds to zero except the exact half,
        // which is unreachable here.
        return 0;
    }
    let q = raw >> shift;
    let rem = raw - (q << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Narrows an accumulator into a storage format (round half to even, then
/// saturate).
pub fn fx_round_to(acc: &Accumulator, fmt: FixedFormat) -> FixedValue {
    FixedValue {
        raw: round_raw_to(acc.raw, acc.frac, fmt),
        fmt,
    }
}

#[inline]
pub(crate) fn round_raw_to(raw: i128, frac: u32, fmt: FixedFormat) -> i64 {
    let target = fmt.frac;
    let shifted = if target <= frac {
        shift_right_round_even(raw, frac - target)
    } else {
        let up = target - frac;
        if up >= 127 {
            if raw == 0 {
                0
            } else {
                raw.signum() * i128::MAX
            }
        } else {
            raw.checked_mul(1i128 << up)
                .unwrap_or(if raw < 0 { i128::MIN } else { i128::MAX })
        }
    };
    fmt.saturate(shifted)
}
