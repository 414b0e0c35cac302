//! Numeric text formats used by the file writers.
//!
//! Machine-readable CSVs carry 17 significant digits so that every double
//! round-trips exactly and outputs are byte-stable; human-readable tables
//! round to 4 significant digits.

/// 17 significant digits, scientific notation. Lossless for `f64`.
pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// About 4 significant digits in plain decimal notation.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}
