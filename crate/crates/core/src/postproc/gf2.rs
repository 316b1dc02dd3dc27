//! Binary extension fields `GF(2^l)`, `l ≤ 64`, with carry-less multiplication.

/// Carry-less product of two 64-bit polynomials.
pub fn clmul(a: u64, b: u64) -> u128 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("pclmulqdq") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { clmul_hw(a, b) };
        }
    }
    clmul_soft(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "pclmulqdq")]
unsafe fn clmul_hw(a: u64, b: u64) -> u128 {
    use std::arch::x86_64::{_mm_clmulepi64_si128, _mm_set_epi64x};
    let r = _mm_clmulepi64_si128(_mm_set_epi64x(0, a as i64), _mm_set_epi64x(0, b as i64), 0);
    // SAFETY: __m128i and u128 have the same size; lane 0 holds the low half.
    unsafe { std::mem::transmute::<_, u128>(r) }
}

pub fn clmul_soft(a: u64, b: u64) -> u128 {
    let mut acc = 0u128;
    let mut b = b;
    let a = u128::from(a);
    while b != 0 {
        let i = b.trailing_zeros();
        acc ^= a << i;
        b &= b - 1;
    }
    acc
}

fn degree(p: u128) -> i32 {
    127 - p.leading_zeros() as i32
}

fn poly_mod(mut a: u128, m: u128) -> u128 {
    let dm = degree(m);
    while a != 0 && degree(a) >= dm {
        a ^= m << (degree(a) - dm);
    }
    a
}

fn poly_mulmod(a: u128, b: u128, m: u128) -> u128 {
    // operands are reduced, so both fit in 64 bits for deg m ≤ 64
    poly_mod(clmul_soft(a as u64, b as u64), m)
}

fn poly_gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let r = poly_mod(a, b);
        a = b;
        b = r;
    }
    a
}

fn prime_factors(mut n: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            out.push(p);
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Rabin's test for a polynomial over GF(2) of degree 1..=64.
pub fn is_irreducible(f: u128) -> bool {
    let n = degree(f);
    if !(1..=64).contains(&n) {
        return false;
    }
    let n = n as u32;
    // x^(2^k) mod f
    let frob = |k: u32| {
        let mut x = poly_mod(2, f);
        for _ in 0..k {
            x = poly_mulmod(x, x, f);
        }
        x
    };
    if frob(n) != poly_mod(2, f) {
        return false;
    }
    prime_factors(n).into_iter().all(|q| {
        let h = frob(n / q) ^ poly_mod(2, f);
        poly_gcd(f, h) == 1
    })
}

/// `GF(2^l)` modulo `x^l + tail`, with `tail` the numerically smallest
/// choice making the modulus irreducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gf2Field {
    degree: u32,
    tail: u64,
    mask: u64,
}

impl Gf2Field {
    pub fn new(degree: u32) -> Self {
        assert!((1..=64).contains(&degree), "degree {degree} outside 1..=64");
        let top = 1u128 << degree;
        let tail = (1u64..)
            .find(|&g| is_irreducible(top | u128::from(g)))
            .expect("an irreducible polynomial exists for every degree");
        Self::with_tail(degree, tail).expect("irreducible by construction")
    }

    pub fn with_tail(degree: u32, tail: u64) -> Option<Self> {
        if !(1..=64).contains(&degree) || (degree < 64 && tail >> degree != 0) {
            return None;
        }
        is_irreducible((1u128 << degree) | u128::from(tail)).then_some(Self {
            degree,
            tail,
            mask: if degree == 64 { u64::MAX } else { (1u64 << degree) - 1 },
        })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Full modulus including the leading term.
    pub fn modulus(&self) -> u128 {
        (1u128 << self.degree) | u128::from(self.tail)
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce(clmul(a, b))
    }

    fn reduce(&self, mut p: u128) -> u64 {
        let mask = u128::from(self.mask);
        loop {
            let hi = p >> self.degree;
            if hi == 0 {
                return p as u64;
            }
            // deg(hi) ≤ l − 2 < 64
            p = (p & mask) ^ clmul(hi as u64, self.tail);
        }
    }
}
