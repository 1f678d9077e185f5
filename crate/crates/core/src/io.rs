//! Text formatting shared by CSV writers.

/// Formats a float with 17 significant digits in scientific notation.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Formats an optional float; `None` becomes an empty CSV cell.
pub fn fmt17_opt(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}
