//! Classical fixed-step RK4 on flat state vectors.

use alloc::vec;
use alloc::vec::Vec;

pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// One step of size `h` for the autonomous system `y' = f(y)`, written into `out`.
    pub fn step(&mut self, f: &mut impl FnMut(&[f64], &mut [f64]), y: &[f64], h: f64, out: &mut [f64]) {
        f(y, &mut self.k1);
        for ((t, yi), k) in self.tmp.iter_mut().zip(y).zip(&self.k1) {
            *t = yi + 0.5 * h * k;
        }
        f(&self.tmp, &mut self.k2);
        for ((t, yi), k) in self.tmp.iter_mut().zip(y).zip(&self.k2) {
            *t = yi + 0.5 * h * k;
        }
        f(&self.tmp, &mut self.k3);
        for ((t, yi), k) in self.tmp.iter_mut().zip(y).zip(&self.k3) {
            *t = yi + h * k;
        }
        f(&self.tmp, &mut self.k4);
        for (i, o) in out.iter_mut().enumerate() {
            *o = y[i] + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::exp;

    #[test]
    fn fourth_order_on_exponential() {
        let err = |steps: usize| {
            let h = 1.0 / steps as f64;
            let mut rk = Rk4::new(1);
            let mut y = [1.0];
            let mut out = [0.0];
            for _ in 0..steps {
                rk.step(&mut |y: &[f64], d: &mut [f64]| d[0] = -2.0 * y[0], &y, h, &mut out);
                y = out;
            }
            (y[0] - exp(-2.0)).abs()
        };
        let ratio = err(40) / err(80);
        assert!((ratio - 16.0).abs() < 0.5, "ratio {ratio}");
    }
}
