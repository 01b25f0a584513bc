//! Per-model losses for one configuration.

/// Rounds to the nearest integer with 0.5 going up (to "poisoned").
pub fn round_half_up(f: f64) -> u8 {
    u8::from(f >= 0.5)
}

/// 1 when the rounded prediction equals the label, else 0.
pub fn loss_ac(label: u8, f: f64) -> u8 {
    u8::from(round_half_up(f) == label)
}

/// Binary cross-entropy `-(L ln f + (1 - L) ln(1 - f))`.
pub fn loss_ce(label: u8, f: f64) -> f64 {
    let l = f64::from(label);
    -(l * f.ln() + (1.0 - l) * (1.0 - f).ln())
}

/// Fraction of the execution budget used; feasible when `<= 1`.
pub fn loss_exec(elapsed_seconds: f64, t_max_seconds: f64) -> f64 {
    elapsed_seconds / t_max_seconds
}
