use nalgebra::DVector;

/// Central-difference gradient of a scalar field.
pub fn finite_diff_grad<F>(f: F, x: &DVector<f64>, eps: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe);
        probe[i] = orig - eps;
        let fm = f(&probe);
        probe[i] = orig;
        (fp - fm) / (2.0 * eps)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let g = finite_diff_grad(|v| v.norm_squared(), &x, 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let x = DVector::from_vec(vec![0.3, -7.0, 2.0]);
        let g = finite_diff_grad(|_| 4.2, &x, 1e-4);
        assert_eq!(g, DVector::zeros(3));
    }
}
