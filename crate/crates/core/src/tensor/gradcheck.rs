use super::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` builds the scalar on a fresh graph from the leaf it is handed.
/// Returns `max_i |g_tape − g_fd| / max(1, |g_fd|)`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let eval = |t: Tensor<T>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        let val = g.value(out).item()?.as_f64();
        if !val.is_finite() {
            return Err(Error::NonFinite(format!("function value {val}")));
        }
        Ok(val)
    };

    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = f(&mut g, v)?;
    if !g.value(out).item()?.as_f64().is_finite() {
        return Err(Error::NonFinite("function value at x".into()));
    }
    let tape = g.backward(out)?.get_or_zeros(v);

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.data_mut()[i] = x.data()[i] + T::from_f64(h);
        minus.data_mut()[i] = x.data()[i] - T::from_f64(h);
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let d = (tape.data()[i].as_f64() - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(d);
    }
    Ok(worst)
}
