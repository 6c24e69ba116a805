//! Minimal double-double arithmetic, enough for an exponential of a quadratic form.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: core::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn scale(self, k: f64) -> Dd {
        self.mul(Dd::from(k))
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.scale(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.scale(q2));
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }.add(Dd::from(q3))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn exp(self) -> Dd {
        let k = (self.hi / LN2.hi).round();
        let r = self.sub(LN2.scale(k));
        // exp(r) = exp(r / 32)^32
        let r = r.scale(1.0 / 32.0);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..=22 {
            term = term.mul(r).div(Dd::from(n as f64));
            sum = sum.add(term);
        }
        for _ in 0..5 {
            sum = sum.mul(sum);
        }
        let p = 2f64.powi(k as i32);
        Dd {
            hi: sum.hi * p,
            lo: sum.lo * p,
        }
    }
}
