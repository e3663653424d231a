//! Extended-precision reference arithmetic for the loss oracles.

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use stic_core::losscore::PreferenceLogprobRecord;

const RM: RoundingMode = RoundingMode::ToEven;

pub struct Hp {
    pub p: usize,
    cc: Consts,
}

impl Hp {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            cc: Consts::new().unwrap(),
        }
    }

    pub fn f(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, self.p)
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.p, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.p, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.p, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, self.p, RM)
    }

    /// `ln(1 + exp(-t))`, evaluated directly.
    pub fn logistic(&mut self, t: &BigFloat) -> BigFloat {
        let e = t.neg().exp(self.p, RM, &mut self.cc);
        self.add(&self.f(1.0), &e).ln(self.p, RM, &mut self.cc)
    }

    pub fn margin(&self, rec: &PreferenceLogprobRecord, lambda: f64) -> BigFloat {
        self.margin_parts(&self.parts(rec), &self.f(lambda))
    }

    pub fn parts(&self, rec: &PreferenceLogprobRecord) -> [BigFloat; 4] {
        [self.f(rec.policy_w), self.f(rec.policy_l), self.f(rec.ref_w), self.f(rec.ref_l)]
    }

    pub fn margin_parts(&self, x: &[BigFloat; 4], lambda: &BigFloat) -> BigFloat {
        let w = self.sub(&x[0], &x[2]);
        let l = self.sub(&x[1], &x[3]);
        self.mul(lambda, &self.sub(&w, &l))
    }

    /// `logistic(margin) - alpha * policy_w` on exact inputs.
    pub fn loss_parts(&mut self, x: &[BigFloat; 4], lambda: &BigFloat, alpha: &BigFloat) -> BigFloat {
        let m = self.margin_parts(x, lambda);
        let dpo = self.logistic(&m);
        self.sub(&dpo, &self.mul(alpha, &x[0]))
    }

    pub fn loss(&mut self, rec: &PreferenceLogprobRecord, lambda: f64, alpha: f64) -> BigFloat {
        let x = self.parts(rec);
        let (l, a) = (self.f(lambda), self.f(alpha));
        self.loss_parts(&x, &l, &a)
    }

    pub fn to_f64(&mut self, x: &BigFloat) -> f64 {
        let s = x.format(Radix::Dec, RM, &mut self.cc).unwrap();
        s.parse().unwrap_or_else(|_| panic!("cannot parse {s}"))
    }

    /// `|approx - exact|` evaluated in extended precision.
    pub fn abs_err(&mut self, approx: f64, exact: &BigFloat) -> f64 {
        let d = self.sub(&self.f(approx), exact);
        self.to_f64(&d).abs()
    }
}

/// Central finite differences of the extended-precision loss with respect
/// to (policy_w, policy_l, ref_w, ref_l). Precision grows with the margin so
/// that gradients as small as `exp(-|margin|)` are still resolved.
pub fn fd_gradient(rec: &PreferenceLogprobRecord, lambda: f64, alpha: f64, step: f64) -> [f64; 4] {
    let m = lambda * ((rec.policy_w - rec.ref_w) - (rec.policy_l - rec.ref_l));
    let mut hp = Hp::new(320 + (m.abs() * 1.5) as usize);
    let x = hp.parts(rec);
    let (l, a, h) = (hp.f(lambda), hp.f(alpha), hp.f(step));
    let two_h = hp.f(2.0 * step);
    let mut out = [0.0; 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut up = x.clone();
        up[k] = hp.add(&x[k], &h);
        let mut down = x.clone();
        down[k] = hp.sub(&x[k], &h);
        let hi = hp.loss_parts(&up, &l, &a);
        let lo = hp.loss_parts(&down, &l, &a);
        let diff = hp.sub(&hi, &lo);
        let d = hp.div(&diff, &two_h);
        *slot = hp.to_f64(&d);
    }
    out
}
