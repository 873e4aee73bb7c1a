use std::f64::consts::PI;

/// Ricker wavelet `(1 - 2 pi^2 f^2 tau^2) exp(-pi^2 f^2 tau^2)`, `tau = t - t0`.
/// Peak value 1 at `t = t0`.
pub fn ricker(t: f64, freq: f64, t0: f64) -> f64 {
    let a = (PI * freq * (t - t0)).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Antiderivative of [`ricker`] in `t`: `tau exp(-pi^2 f^2 tau^2)`.
pub fn ricker_integral(t: f64, freq: f64, t0: f64) -> f64 {
    let tau = t - t0;
    tau * (-(PI * freq * tau).powi(2)).exp()
}
