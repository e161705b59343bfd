//! Pinball loss and its Huber-smoothed variant.

/// Width of the quadratic region of the smoothed pinball loss.
pub const DEFAULT_SMOOTHING: f64 = 1e-3;

/// Huber function: quadratic for `|u| <= delta`, linear beyond.
#[inline]
fn huber(u: f64, delta: f64) -> f64 {
    let a = u.abs();
    if a <= delta {
        u * u / (2.0 * delta)
    } else {
        a - delta / 2.0
    }
}

#[inline]
fn huber_derivative(u: f64, delta: f64) -> f64 {
    if u.abs() <= delta {
        u / delta
    } else {
        u.signum()
    }
}

/// Smoothed pinball loss of residual `u = y - q` at level `tau`.
#[inline]
pub fn smoothed_pinball(u: f64, tau: f64, delta: f64) -> f64 {
    let w = if u >= 0.0 { tau } else { 1.0 - tau };
    w * huber(u, delta)
}

/// Derivative of [`smoothed_pinball`] with respect to the residual.
#[inline]
pub fn smoothed_pinball_derivative(u: f64, tau: f64, delta: f64) -> f64 {
    let w = if u >= 0.0 { tau } else { 1.0 - tau };
    w * huber_derivative(u, delta)
}
