//! Second-order forward jets in the spatial input.
//!
//! A [`Jet3`] carries a value together with its first and second
//! derivatives with respect to the single network input `x`. Propagating
//! jets through affine maps and `tanh` gives exact input derivatives of the
//! network outputs without finite differences or nested reverse passes.

use crate::error::{Error, Result};

/// `(value, d/dx, d²/dx²)` of a scalar quantity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet3 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet3 {
    pub const fn new(v: f64, d1: f64, d2: f64) -> Self {
        Jet3 { v, d1, d2 }
    }

    /// The jet of the input variable itself.
    pub const fn seed(x: f64) -> Self {
        Jet3 { v: x, d1: 1.0, d2: 0.0 }
    }

    pub const fn constant(c: f64) -> Self {
        Jet3 { v: c, d1: 0.0, d2: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
}

/// Weighted sum of jets plus a bias. Derivatives pass through linearly.
pub fn jet_affine(inputs: &[Jet3], weights: &[f64], bias: f64) -> Result<Jet3> {
    if inputs.len() != weights.len() {
        return Err(Error::config(
            "weights",
            format!("{} inputs but {} weights", inputs.len(), weights.len()),
        ));
    }
    if inputs.is_empty() {
        return Err(Error::config("inputs", "affine map needs at least one input"));
    }
    let mut out = Jet3::constant(bias);
    for (u, &w) in inputs.iter().zip(weights) {
        out.v += w * u.v;
        out.d1 += w * u.d1;
        out.d2 += w * u.d2;
    }
    Ok(out)
}

/// `exp(y)` for `y` in `[-80, 0]`: Cody-Waite reduction by `ln 2` and a
/// degree-13 Taylor polynomial on `|r| <= ln2/2`. Branch-free so batch
/// loops vectorize.
#[inline(always)]
fn exp_nonpositive(y: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const INV_LN2: f64 = std::f64::consts::LOG2_E;
    // Adding 1.5·2^52 rounds to an integer and leaves it in the low mantissa bits.
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let kd = y * INV_LN2 + SHIFTER;
    let k = kd - SHIFTER;
    let r = y - k * LN2_HI - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    p * f64::from_bits(kd.to_bits().wrapping_add(1023) << 52)
}

/// Hyperbolic tangent used by every evaluation path in the crate.
///
/// Within 1 ulp-ish of `f64::tanh` (max relative error below 1e-15) but
/// several times faster in batch loops. Small arguments use the classic
/// Cephes rational form `x + x·z·P(z)/Q(z)`, larger ones
/// `(1 - e^{-2|x|}) / (1 + e^{-2|x|})`. NaN propagates.
#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    const P0: f64 = -9.643_991_794_250_522_386_28e-1;
    const P1: f64 = -9.928_772_310_019_185_865_64e1;
    const P2: f64 = -1.614_687_684_417_084_479_52e3;
    const Q0: f64 = 1.128_116_784_916_329_314_02e2;
    const Q1: f64 = 2.235_488_390_601_004_485_83e3;
    const Q2: f64 = 4.844_063_053_251_254_860_48e3;
    let a = x.abs();
    let z = x * x;
    let pn = (P0 * z + P1) * z + P2;
    let qd = ((z + Q0) * z + Q1) * z + Q2;
    let e = exp_nonpositive(-2.0 * if a > 40.0 { 40.0 } else { a });
    let small = a < 0.625;
    let num = if small { x * (z * pn + qd) } else { (1.0 - e).copysign(x) };
    let den = if small { qd } else { 1.0 + e };
    num / den
}

/// `tanh` lifted to jets (second-order chain rule).
pub fn jet_tanh(u: Jet3) -> Jet3 {
    let t = tanh(u.v);
    let s = 1.0 - t * t;
    Jet3 {
        v: t,
        d1: s * u.d1,
        d2: s * u.d2 - 2.0 * t * s * u.d1 * u.d1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn affine_examples() {
        let j = jet_affine(&[Jet3::new(2.0, 1.0, 0.0)], &[3.0], 1.0).unwrap();
        assert_eq!(j, Jet3::new(7.0, 3.0, 0.0));

        let j = jet_affine(&[Jet3::seed(0.37)], &[0.0], 5.0).unwrap();
        assert_eq!(j, Jet3::new(5.0, 0.0, 0.0));

        let j = jet_affine(
            &[Jet3::new(1.0, 2.0, 3.0), Jet3::new(4.0, 5.0, 6.0)],
            &[1.0, 1.0],
            0.0,
        )
        .unwrap();
        assert_eq!(j, Jet3::new(5.0, 7.0, 9.0));
    }

    #[test]
    fn affine_rejects_length_mismatch() {
        assert!(jet_affine(&[Jet3::seed(1.0)], &[1.0, 2.0], 0.0).is_err());
        assert!(jet_affine(&[], &[], 0.0).is_err());
    }

    #[test]
    fn fast_tanh_accuracy() {
        let mut worst: f64 = 0.0;
        for i in 0..400_000 {
            let x = i as f64 * 1e-4 - 20.0;
            let (a, b) = (tanh(x), x.tanh());
            let err = if b == 0.0 { a.abs() } else { ((a - b) / b).abs() };
            worst = worst.max(err);
        }
        for p in -300..2 {
            let x = 10f64.powi(p) * 1.37;
            worst = worst.max(((tanh(x) - x.tanh()) / x.tanh()).abs());
        }
        assert!(worst < 1e-15, "worst relative error {worst:e}");
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(1e3), 1.0);
        assert_eq!(tanh(-1e3), -1.0);
        assert!(tanh(f64::NAN).is_nan());
    }

    #[test]
    fn tanh_at_origin() {
        assert_eq!(jet_tanh(Jet3::new(0.0, 1.0, 0.0)), Jet3::new(0.0, 1.0, 0.0));
        assert_eq!(jet_tanh(Jet3::new(0.0, 0.0, 0.0)), Jet3::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn tanh_matches_finite_differences() {
        // Central differences of tanh at 1 with step 1e-5.
        let h = 1e-5;
        let f = |x: f64| x.tanh();
        let fd1 = (f(1.0 + h) - f(1.0 - h)) / (2.0 * h);
        let fd2 = (f(1.0 + h) - 2.0 * f(1.0) + f(1.0 - h)) / (h * h);

        let j = jet_tanh(Jet3::seed(1.0));
        assert_relative_eq!(j.v, 1f64.tanh(), max_relative = 1e-15);
        assert_relative_eq!(j.d1, fd1, max_relative = 1e-8);
        assert_relative_eq!(j.d2, fd2, max_relative = 1e-4);

        let t = 1f64.tanh();
        assert_relative_eq!(j.d1, 1.0 - t * t, max_relative = 1e-14);
        assert_relative_eq!(j.d2, -2.0 * t * (1.0 - t * t), max_relative = 1e-14);
    }
}
