//! Small prime-power fields `GF(p^k)` with table arithmetic. Element `e`
//! encodes the polynomial whose base-`p` digits are the coefficients of
//! `e`, lowest degree first.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0} is not a prime power")]
pub struct NotPrimePower(pub u32);

pub fn prime_power(q: u32) -> Option<(u32, u32)> {
    if q < 2 {
        return None;
    }
    let p = (2..=q).find(|d| q.is_multiple_of(*d))?;
    let (mut r, mut k) = (q, 0);
    while r % p == 0 {
        r /= p;
        k += 1;
    }
    (r == 1).then_some((p, k))
}

/// Smallest prime power `≥ n`.
pub fn next_prime_power(n: u32) -> u32 {
    (n.max(2)..).find(|&q| prime_power(q).is_some()).expect("prime powers are unbounded")
}

#[derive(Debug, Clone)]
pub struct PrimePowerField {
    order: u32,
    p: u32,
    k: u32,
    add: Vec<u16>,
    mul: Vec<u16>,
}

type Poly = Vec<u32>;

fn digits(mut e: u32, p: u32, k: u32) -> Poly {
    (0..k)
        .map(|_| {
            let d = e % p;
            e /= p;
            d
        })
        .collect()
}

fn undigits(d: &[u32], p: u32) -> u32 {
    d.iter().rev().fold(0, |acc, &c| acc * p + c)
}

/// Product of `a` and `b` reduced modulo monic `m` (given without its leading 1).
fn mulmod(a: &[u32], b: &[u32], m: &[u32], p: u32) -> Poly {
    let k = m.len();
    let mut prod = vec![0u32; 2 * k];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            prod[i + j] = (prod[i + j] + x * y) % p;
        }
    }
    for deg in (k..2 * k).rev() {
        let c = prod[deg];
        if c != 0 {
            prod[deg] = 0;
            // x^k ≡ −m(x)
            for (j, &mj) in m.iter().enumerate() {
                prod[deg - k + j] = (prod[deg - k + j] + (p - c) * mj) % p;
            }
        }
    }
    prod.truncate(k);
    prod
}

/// Whether monic `x^k + tail` has a non-trivial monic factor.
fn reducible(tail: &[u32], p: u32) -> bool {
    let k = tail.len();
    let mut f: Poly = tail.to_vec();
    f.push(1);
    for d in 1..=k / 2 {
        for code in 0..p.pow(d as u32) {
            let mut g = digits(code, p, d as u32);
            g.push(1);
            if poly_rem(&f, &g, p).iter().all(|&c| c == 0) {
                return true;
            }
        }
    }
    false
}

fn poly_rem(f: &[u32], g: &[u32], p: u32) -> Poly {
    // g monic
    let mut r = f.to_vec();
    let dg = g.len() - 1;
    while r.len() > dg {
        let c = *r.last().unwrap();
        let shift = r.len() - 1 - dg;
        for (j, &gj) in g.iter().enumerate() {
            r[shift + j] = (r[shift + j] + (p - c) * gj) % p;
        }
        r.pop();
    }
    r
}

impl PrimePowerField {
    pub fn new(order: u32) -> Result<Self, NotPrimePower> {
        let (p, k) = prime_power(order).ok_or(NotPrimePower(order))?;
        if order > 1 << 12 {
            return Err(NotPrimePower(order));
        }
        let modulus = if k == 1 {
            Vec::new()
        } else {
            (0..p.pow(k))
                .map(|code| digits(code, p, k))
                .find(|tail| !reducible(tail, p))
                .expect("irreducible polynomials exist for every degree")
        };
        let q = order as usize;
        let mut add = vec![0u16; q * q];
        let mut mul = vec![0u16; q * q];
        for a in 0..order {
            let da = digits(a, p, k);
            for b in 0..order {
                let db = digits(b, p, k);
                let sum: Poly = da.iter().zip(&db).map(|(x, y)| (x + y) % p).collect();
                let prod = if k == 1 {
                    vec![(a * b) % p]
                } else {
                    mulmod(&da, &db, &modulus, p)
                };
                add[a as usize * q + b as usize] = undigits(&sum, p) as u16;
                mul[a as usize * q + b as usize] = undigits(&prod, p) as u16;
            }
        }
        Ok(Self { order, p, k, add, mul })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn characteristic(&self) -> (u32, u32) {
        (self.p, self.k)
    }

    pub fn add(&self, a: u32, b: u32) -> u32 {
        u32::from(self.add[(a * self.order + b) as usize])
    }

    pub fn mul(&self, a: u32, b: u32) -> u32 {
        u32::from(self.mul[(a * self.order + b) as usize])
    }

    /// `Σ coeffs[j] · x^j`.
    pub fn eval(&self, coeffs: &[u32], x: u32) -> u32 {
        coeffs.iter().rev().fold(0, |acc, &c| self.add(self.mul(acc, x), c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prime_powers() {
        assert_eq!(prime_power(121), Some((11, 2)));
        assert_eq!(prime_power(128), Some((2, 7)));
        assert_eq!(prime_power(12), None);
        assert_eq!(prime_power(1), None);
        assert_eq!(next_prime_power(116), 121);
        assert_eq!(next_prime_power(16), 16);
        assert_eq!(next_prime_power(14), 16);
    }

    #[test]
    fn gf16_uses_x4_x_1() {
        let f = PrimePowerField::new(16).unwrap();
        // x · x^3 = x^4 = x + 1
        assert_eq!(f.mul(0b0010, 0b1000), 0b0011);
        assert_eq!(f.add(0b1010, 0b0110), 0b1100);
    }

    #[test]
    fn field_axioms_exhaustive() {
        for q in [2u32, 3, 4, 5, 7, 8, 9, 11, 16, 25, 27, 32, 49, 121] {
            let f = PrimePowerField::new(q).unwrap();
            for a in 0..q {
                assert_eq!(f.add(a, 0), a);
                assert_eq!(f.mul(a, 1), a);
                if a != 0 {
                    assert_eq!((0..q).filter(|&b| f.mul(a, b) == 1).count(), 1, "q={q} a={a}");
                }
                assert_eq!((0..q).filter(|&b| f.add(a, b) == 0).count(), 1);
                for b in 0..q {
                    assert_eq!(f.mul(a, b), f.mul(b, a));
                    for c in (0..q).step_by(((q / 7) as usize).max(1)) {
                        assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
                        assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
                    }
                }
            }
        }
        assert!(PrimePowerField::new(12).is_err());
    }
}
