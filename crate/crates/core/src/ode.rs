//! Explicit integrators: adaptive Dormand-Prince 5(4), classical RK4, and the
//! implicit midpoint rule for linear autonomous systems.

use crate::error::{LabError, Result};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl StepControl {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            max_steps: 2_000_000,
        }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction) with the
/// Dormand-Prince pair. `observe` is called after every accepted step and may
/// abort the integration by returning an error.
pub fn dopri5<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    ctl: StepControl,
    mut observe: O,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]) -> Result<()>,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if t1 == t0 {
        return Ok(y);
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut t = t0;
    let mut h = (span * 0.01).min(0.01_f64.max(span * 1e-3));
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    f(t, &y, &mut k[0]);
    let mut steps = 0usize;
    while (t1 - t) * dir > 1e-15 * span.max(1.0) {
        if steps >= ctl.max_steps {
            return Err(LabError::Integration {
                t_last: t,
                reason: "step budget exhausted".into(),
            });
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = h * dir;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += hs * A[s][j] * kj[i];
                }
                ytmp[i] = acc;
            }
            let (before, after) = k.split_at_mut(s);
            let _ = before;
            f(t + C[s] * hs, &ytmp, &mut after[0]);
        }
        let mut err = 0.0;
        for i in 0..n {
            let mut s5 = 0.0;
            let mut s4 = 0.0;
            for s in 0..7 {
                s5 += B5[s] * k[s][i];
                s4 += B4[s] * k[s][i];
            }
            y5[i] = y[i] + hs * s5;
            let sc = ctl.atol + ctl.rtol * y[i].abs().max(y5[i].abs());
            let e = hs * (s5 - s4) / sc;
            err += e * e;
        }
        err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            return Err(LabError::Integration {
                t_last: t,
                reason: "non-finite state".into(),
            });
        }
        steps += 1;
        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            std::mem::swap(&mut y, &mut y5);
            // FSAL: the last stage is f at the new point.
            let last_stage = k[6].clone();
            k[0].copy_from_slice(&last_stage);
            observe(t, &y)?;
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
        if h < 1e-14 * span.max(1.0) {
            return Err(LabError::Integration {
                t_last: t,
                reason: "step size underflow".into(),
            });
        }
    }
    Ok(y)
}

/// Integrates and records the state at each of the (monotone) `times`; the
/// first entry of `times` is the initial time.
pub fn dopri5_dense<F>(
    mut f: F,
    y0: &[f64],
    times: &[f64],
    ctl: StepControl,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0.to_vec();
    out.push(y.clone());
    for w in times.windows(2) {
        y = dopri5(&mut f, w[0], &y, w[1], ctl, |_, _| Ok(()))?;
        out.push(y.clone());
    }
    Ok(out)
}

/// Fixed-step classical Runge-Kutta.
pub fn rk4<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, steps: usize) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        f(t, &y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// Implicit midpoint propagator for `x' = A x` over time `t` in `steps` steps.
/// For Hamiltonian `A` every step is exactly symplectic (Cayley transform).
pub fn midpoint_linear_propagator(a: &DMatrix<f64>, t: f64, steps: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let h = t / steps as f64;
    let id = DMatrix::<f64>::identity(n, n);
    let lhs = &id - a * (0.5 * h);
    let rhs = &id + a * (0.5 * h);
    let lu = lhs.lu();
    let step = lu
        .solve(&rhs)
        .ok_or_else(|| LabError::Singular("implicit midpoint system".into()))?;
    let mut out = id;
    for _ in 0..steps {
        out = &step * out;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dopri5_harmonic_oscillator() {
        let y = dopri5(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            &[1.0, 0.0],
            std::f64::consts::TAU,
            StepControl::with_tol(1e-12),
            |_, _| Ok(()),
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9);
    }

    #[test]
    fn dopri5_runs_backwards() {
        let y = dopri5(|_, y, dy| dy[0] = y[0], 1.0, &[1.0], 0.0, StepControl::with_tol(1e-12), |_, _| Ok(()))
            .unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn midpoint_is_symplectic_for_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let l = midpoint_linear_propagator(&a, 1.0, 100).unwrap();
        assert!((l.determinant() - 1.0).abs() < 1e-13);
    }
}
