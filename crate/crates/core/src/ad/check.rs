//! Finite-difference gradient verification.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use super::AdError;

/// Builds a scalar expression from one input node.
pub trait ScalarFn: Fn(&mut Graph, NodeId) -> Result<NodeId, AdError> {}
impl<F: Fn(&mut Graph, NodeId) -> Result<NodeId, AdError>> ScalarFn for F {}

fn eval_scalar(f: &impl ScalarFn, x: &Tensor) -> Result<f64, AdError> {
    let mut g = Graph::new();
    let xid = g.param(x.clone());
    let root = f(&mut g, xid)?;
    Ok(g.value(root).scalar_value())
}

/// Max over the chosen coordinates of
/// |autodiff - central difference| / max(1, |central difference|).
/// `coords` indexes into the flattened (row-major) input.
pub fn grad_check_coords(
    f: impl ScalarFn,
    x: &Tensor,
    h: f64,
    coords: &[usize],
) -> Result<f64, AdError> {
    let mut g = Graph::new();
    let xid = g.param(x.clone());
    let root = f(&mut g, xid)?;
    let grads = g.backward(root)?;
    let ad = grads
        .get(xid)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));

    let mut worst = 0.0f64;
    for &i in coords {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let fd = (eval_scalar(&f, &xp)? - eval_scalar(&f, &xm)?) / (2.0 * h);
        let err = (ad.data()[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// [`grad_check_coords`] over every coordinate of `x`.
pub fn grad_check(f: impl ScalarFn, x: &Tensor, h: f64) -> Result<f64, AdError> {
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, h, &coords)
}

/// True when every entry of `x` stays at least `margin` away from each kink
/// location; finite differences are meaningless across kinks, so property
/// tests use this to discard such draws.
pub fn away_from_kinks(x: &Tensor, kinks: &[f64], margin: f64) -> bool {
    x.data()
        .iter()
        .all(|v| kinks.iter().all(|k| (v - k).abs() > margin))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::from_vec(1, 4, vec![0.3, -1.2, 2.0, 0.01]).unwrap();
        let err = grad_check(
            |g, x| {
                let s = g.square(x);
                Ok(g.sum(s))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn two_layer_softplus_mlp_matches_fd() {
        // Weights folded into the checked input so every parameter gets a
        // finite-difference comparison.
        let n_in = 3;
        let n_hid = 4;
        let len = n_in * n_hid + n_hid + n_hid;
        let vals: Vec<f64> = (0..len)
            .map(|i| ((i * 2654435761 % 1000) as f64 / 1000.0) - 0.5)
            .collect();
        let x = Tensor::from_vec(1, len, vals).unwrap();
        let err = grad_check(
            move |g, packed| {
                let w1 = g.slice_reshape(packed, 0, n_in * n_hid, n_in, n_hid)?;
                let b1 = g.slice_reshape(packed, n_in * n_hid, n_hid, 1, n_hid)?;
                let w2 = g.slice_reshape(packed, n_in * n_hid + n_hid, n_hid, n_hid, 1)?;
                let inp = g.leaf(Tensor::from_vec(1, n_in, vec![0.2, -0.4, 0.9]).unwrap());
                let h = g.affine(inp, w1, b1)?;
                let h = g.softplus(h);
                let zero_b = g.leaf(Tensor::zeros(1, 1));
                let out = g.affine(h, w2, zero_b)?;
                Ok(g.sum(out))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn relu_at_kink_is_flagged_by_filter() {
        let at_kink = Tensor::from_vec(1, 2, vec![0.0, 0.5]).unwrap();
        assert!(!away_from_kinks(&at_kink, &[0.0], 1e-6));
        let clear = Tensor::from_vec(1, 2, vec![0.3, 0.5]).unwrap();
        assert!(away_from_kinks(&clear, &[0.0], 1e-6));
    }
}
