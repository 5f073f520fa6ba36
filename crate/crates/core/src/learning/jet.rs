//! Second-order forward-mode derivatives along one direction.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value with first and second derivative with respect to one scalar input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: f64,
    pub dd: f64,
}

impl Jet {
    pub const ZERO: Jet = Jet::constant(0.0);
    pub const ONE: Jet = Jet::constant(1.0);

    pub const fn constant(v: f64) -> Jet {
        Jet { v, d: 0.0, dd: 0.0 }
    }

    pub const fn variable(v: f64) -> Jet {
        Jet { v, d: 1.0, dd: 0.0 }
    }

    pub fn exp(self) -> Jet {
        let e = self.v.exp();
        Jet {
            v: e,
            d: e * self.d,
            dd: e * (self.dd + self.d * self.d),
        }
    }

    pub fn ln(self) -> Jet {
        Jet {
            v: self.v.ln(),
            d: self.d / self.v,
            dd: self.dd / self.v - self.d * self.d / (self.v * self.v),
        }
    }

    pub fn recip(self) -> Jet {
        let r = 1.0 / self.v;
        Jet {
            v: r,
            d: -self.d * r * r,
            dd: -self.dd * r * r + 2.0 * self.d * self.d * r * r * r,
        }
    }

    pub fn scale(self, k: f64) -> Jet {
        Jet {
            v: self.v * k,
            d: self.d * k,
            dd: self.dd * k,
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            d: self.d + o.d,
            dd: self.dd + o.dd,
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet {
            v: self.v - o.v,
            d: self.d - o.d,
            dd: self.dd - o.dd,
        }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
            dd: self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd,
        }
    }
}

impl Div for Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}
