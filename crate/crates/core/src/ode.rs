//! Fixed-step classical Runge-Kutta integration.

/// One RK4 step of `y' = f(y)` in place. `f(y, dy)` writes the derivative.
pub fn rk4_step(f: &mut dyn FnMut(&[f64], &mut [f64]), y: &mut [f64], dt: f64) {
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(y, &mut k1);
    for j in 0..n {
        tmp[j] = y[j] + 0.5 * dt * k1[j];
    }
    f(&tmp, &mut k2);
    for j in 0..n {
        tmp[j] = y[j] + 0.5 * dt * k2[j];
    }
    f(&tmp, &mut k3);
    for j in 0..n {
        tmp[j] = y[j] + dt * k3[j];
    }
    f(&tmp, &mut k4);
    for j in 0..n {
        y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_fourth_order() {
        let exact = (-1.0f64).exp();
        let err = |dt: f64| {
            let mut y = [1.0];
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                rk4_step(&mut |y, dy| dy[0] = -y[0], &mut y, dt);
            }
            (y[0] - exact).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let mut y = [1.0, 0.0];
        for _ in 0..1000 {
            rk4_step(&mut |y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            }, &mut y, 0.01);
        }
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!((y[0] * y[0] + y[1] * y[1] - 1.0).abs() < 1e-8);
    }
}
