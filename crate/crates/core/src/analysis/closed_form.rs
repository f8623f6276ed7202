//! The paper's closed-form GPM and windowed-attention complexity expressions.

/// Closed-form GPM cost: `2C^2 + C(3K^2 + 4K) + K` parameters and
/// `C^2(2 + 3L/2) + C(K^2 L + 6K^2 L + 16KH + 9L/2) + Kd` flops, `L = H W`.
///
/// The window width `w` is part of the published signature but does not
/// appear in either expression.
pub fn gpm_closed_form(c: u64, k: u64, h: u64, w: u64, _window: u64, d: u64) -> (u64, f64) {
    let params = 2 * c * c + c * (3 * k * k + 4 * k) + k;
    let (c, k, h, d) = (c as f64, k as f64, h as f64, d as f64);
    let l = h * w as f64;
    let flops = c * c * (2.0 + 1.5 * l) + c * (k * k * l + 6.0 * k * k * l + 16.0 * k * h + 4.5 * l) + k * d;
    (params, flops)
}

/// Windowed multi-head self-attention: `4(C+1)C` parameters and
/// `8C^2 L + 4CLl + 3Ll` flops.
pub fn wmhsa_closed_form(c: u64, l: u64, window_area: u64) -> (u64, u64) {
    let params = 4 * (c + 1) * c;
    let flops = 8 * c * c * l + 4 * c * l * window_area + 3 * l * window_area;
    (params, flops)
}
