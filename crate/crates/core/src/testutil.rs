//! High-precision evaluation of stability functions, used by tests as an
//! oracle where f64 evaluation is too ill-conditioned near poles.

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use nalgebra::DMatrix;
use num_complex::Complex64;

type F = FBig<HalfEven, 2>;

const BITS: usize = 320;

fn big(v: f64) -> F {
    F::try_from(v).unwrap().with_precision(BITS).value()
}

#[derive(Clone)]
struct C {
    re: F,
    im: F,
}

impl C {
    fn new(z: Complex64) -> Self {
        C {
            re: big(z.re),
            im: big(z.im),
        }
    }

    fn is_zero(&self) -> bool {
        self.re == F::ZERO && self.im == F::ZERO
    }

    fn add(&self, o: &C) -> C {
        C {
            re: &self.re + &o.re,
            im: &self.im + &o.im,
        }
    }

    fn sub(&self, o: &C) -> C {
        C {
            re: &self.re - &o.re,
            im: &self.im - &o.im,
        }
    }

    fn mul(&self, o: &C) -> C {
        C {
            re: &self.re * &o.re - &self.im * &o.im,
            im: &self.re * &o.im + &self.im * &o.re,
        }
    }

    fn div(&self, o: &C) -> C {
        let den = &o.re * &o.re + &o.im * &o.im;
        C {
            re: (&self.re * &o.re + &self.im * &o.im) / &den,
            im: (&self.im * &o.re - &self.re * &o.im) / &den,
        }
    }

    fn magnitude(&self) -> f64 {
        self.re.to_f64().value().hypot(self.im.to_f64().value())
    }

    fn to_c64(&self) -> Complex64 {
        Complex64::new(self.re.to_f64().value(), self.im.to_f64().value())
    }
}

/// `1 + (zi b + ze b̂)ᵀ (I − zi A − ze Â)⁻¹ 1`, computed with 320-bit floats.
pub fn amplification_hp(
    a: &DMatrix<f64>,
    b: &[f64],
    a_hat: Option<(&DMatrix<f64>, &[f64])>,
    zi: Complex64,
    ze: Complex64,
) -> Complex64 {
    let n = b.len();
    // zi·x and ze·y are formed from exact big-float products, not f64 ones
    let scaled = |z: Complex64, x: f64| {
        let (zc, xb) = (C::new(z), big(x));
        C {
            re: &zc.re * &xb,
            im: &zc.im * &xb,
        }
    };
    let one = C::new(Complex64::new(1.0, 0.0));
    let mut m: Vec<Vec<C>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut v = scaled(zi, a[(i, j)]);
                    if let Some((ah, _)) = a_hat {
                        v = v.add(&scaled(ze, ah[(i, j)]));
                    }
                    if i == j {
                        one.sub(&v)
                    } else {
                        C::new(Complex64::new(0.0, 0.0)).sub(&v)
                    }
                })
                .collect()
        })
        .collect();
    let w: Vec<C> = (0..n)
        .map(|i| {
            let mut v = scaled(zi, b[i]);
            if let Some((_, bh)) = a_hat {
                v = v.add(&scaled(ze, bh[i]));
            }
            v
        })
        .collect();
    let mut y = vec![one.clone(); n];
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| m[p][col].magnitude().total_cmp(&m[q][col].magnitude()))
            .unwrap();
        if m[piv][col].is_zero() {
            return Complex64::new(f64::INFINITY, 0.0);
        }
        m.swap(col, piv);
        y.swap(col, piv);
        let cols: Vec<usize> = ((col + 1)..n).filter(|&c| !m[col][c].is_zero()).collect();
        for r in (col + 1)..n {
            if m[r][col].is_zero() {
                continue;
            }
            let f = m[r][col].div(&m[col][col]);
            for &c in &cols {
                m[r][c] = m[r][c].sub(&f.mul(&m[col][c]));
            }
            y[r] = y[r].sub(&f.mul(&y[col]));
        }
    }
    for i in (0..n).rev() {
        let mut s = y[i].clone();
        for j in (i + 1)..n {
            if !m[i][j].is_zero() {
                s = s.sub(&m[i][j].mul(&y[j]));
            }
        }
        y[i] = s.div(&m[i][i]);
    }
    let mut r = one;
    for i in 0..n {
        if !w[i].is_zero() {
            r = r.add(&w[i].mul(&y[i]));
        }
    }
    r.to_c64()
}

#[test]
fn matches_closed_form_for_implicit_euler() {
    let a = DMatrix::from_element(1, 1, 1.0);
    let z = Complex64::new(-3.0, 0.5);
    let r = amplification_hp(&a, &[1.0], None, z, Complex64::new(0.0, 0.0));
    assert!((r - 1.0 / (1.0 - z)).norm() < 1e-15);
}
