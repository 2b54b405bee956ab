//! Central finite differences, used as the independent gradient oracle.

use super::Tensor;

/// `(f(x+h) − f(x−h)) / 2h` for every coordinate of every tensor in `params`.
pub fn finite_difference_gradient<F>(mut f: F, params: &[Tensor], h: f64) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + h;
            let plus = f(&work);
            work[p].data_mut()[k] = orig - h;
            let minus = f(&work);
            work[p].data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over all tensors jointly; 0 when both vanish.
pub fn relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (a, b) in analytic.iter().zip(numeric) {
        for (x, y) in a.data().iter().zip(b.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}
