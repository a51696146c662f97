//! Dormand–Prince 5(4) with the standard fourth-order continuous extension.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-12, h_max: f64::INFINITY, max_steps: 200_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone)]
struct Step {
    t0: f64,
    h: f64,
    rcont: [Vec<f64>; 5],
}

/// Accepted steps with their interpolants.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    steps: Vec<Step>,
    t_end: f64,
    y_end: Vec<f64>,
}

impl DenseSolution {
    pub fn start(&self) -> f64 {
        self.steps.first().map_or(self.t_end, |s| s.t0)
    }

    pub fn end(&self) -> f64 {
        self.t_end
    }

    pub fn final_state(&self) -> &[f64] {
        &self.y_end
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    /// Times of the accepted step boundaries.
    pub fn mesh(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        m.push(self.t_end);
        m
    }

    /// State at t, clamped to the integration interval.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        if self.steps.is_empty() || t >= self.t_end {
            return self.y_end.clone();
        }
        let idx = match self.steps.binary_search_by(|s| s.t0.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let s = &self.steps[idx];
        let th = ((t - s.t0) / s.h).clamp(0.0, 1.0);
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &s.rcont;
        (0..r1.len())
            .map(|i| r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i]))))
            .collect()
    }
}

/// Integrates y' = f(t, y) from t0 to t1 (t1 > t0). `f` writes the
/// derivative into its third argument and may reject a state.
pub fn dopri5<F>(mut f: F, t0: f64, t1: f64, y0: &[f64], opts: &OdeOptions) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let fail = |t: f64, reason: String, y: &[f64]| Error::Integration { t, reason, last_state: y.to_vec() };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    f(t, &y, &mut k1).map_err(|e| fail(t, e.to_string(), &y))?;

    let span = t1 - t0;
    let mut h = {
        let d0 = rms(&y, &y, opts);
        let d1 = rms(&k1, &y, opts);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0.min(span).min(opts.h_max)
    };
    let mut steps = Vec::new();
    let mut rejected_last = false;

    while t < t1 {
        if steps.len() >= opts.max_steps {
            return Err(fail(t, format!("exceeded {} steps", opts.max_steps), &y));
        }
        if t + h > t1 || t1 - (t + h) < 1e-12 * span {
            h = t1 - t;
        }
        if h < 1e-14 * span.max(1.0) {
            return Err(fail(t, format!("step size underflow (h = {h:.3e})"), &y));
        }
        let stage = |ys: &mut Vec<f64>, coef: &[(f64, &Vec<f64>)]| {
            for i in 0..n {
                let mut acc = y[i];
                for (c, k) in coef {
                    acc += h * c * k[i];
                }
                ys[i] = acc;
            }
        };
        // A stage leaving the domain of f shrinks the step; only a failure at
        // negligible step size is reported.
        let stages = (|| -> Result<()> {
            stage(&mut ys, &[(A21, &k1)]);
            f(t + C2 * h, &ys, &mut k2)?;
            stage(&mut ys, &[(A31, &k1), (A32, &k2)]);
            f(t + C3 * h, &ys, &mut k3)?;
            stage(&mut ys, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
            f(t + C4 * h, &ys, &mut k4)?;
            stage(&mut ys, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
            f(t + C5 * h, &ys, &mut k5)?;
            stage(&mut ys, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
            f(t + h, &ys, &mut k6)?;
            stage(&mut y_new, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            f(t + h, &y_new, &mut k7)?;
            Ok(())
        })();
        if let Err(e) = stages {
            if h > 1e-10 * span.max(1.0) {
                h *= 0.25;
                rejected_last = true;
                continue;
            }
            return Err(fail(t, e.to_string(), &y));
        }
        let mut err = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            h *= 0.1;
            rejected_last = true;
            continue;
        }
        let fac = 0.9 * err.max(1e-10).powf(-0.2);
        if err <= 1.0 {
            let mut rc2 = vec![0.0; n];
            let mut rc3 = vec![0.0; n];
            let mut rc4 = vec![0.0; n];
            let mut rc5 = vec![0.0; n];
            for i in 0..n {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                rc2[i] = ydiff;
                rc3[i] = bspl;
                rc4[i] = ydiff - h * k7[i] - bspl;
                rc5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            steps.push(Step { t0: t, h, rcont: [y.clone(), rc2, rc3, rc4, rc5] });
            t = if h == t1 - t { t1 } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            let grow = if rejected_last { fac.min(1.0) } else { fac.min(5.0) };
            h = (h * grow.max(0.2)).min(opts.h_max);
            rejected_last = false;
        } else {
            h *= fac.clamp(0.1, 1.0);
            rejected_last = true;
        }
    }
    Ok(DenseSolution { steps, t_end: t1, y_end: y })
}

fn rms(v: &[f64], y: &[f64], opts: &OdeOptions) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter().zip(y).map(|(a, b)| (a / (opts.atol + opts.rtol * b.abs())).powi(2)).sum::<f64>() / n).sqrt()
}
