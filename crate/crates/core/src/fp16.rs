//! Software IEEE-754 binary16.
//!
//! Every operation is a pure function on bit patterns. Conversions round to
//! nearest with ties to even, and all arithmetic is "widen to single, compute,
//! round once". Because binary32 carries more than twice the binary16
//! precision plus two bits, that double rounding is innocuous for add, sub,
//! mul and div: the result is the correctly rounded binary16 value.
//!
//! There is exactly one rounding mode and no runtime switch. NaN results are
//! always the canonical quiet pattern `0x7E00`.

use std::fmt;
use std::ops::Neg;

/// Round-to-nearest, ties-to-even. The only mode this crate implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundingMode {
    NearestTiesToEven,
}

/// The rounding mode used by every conversion and arithmetic operation.
pub const ROUNDING_MODE: RoundingMode = RoundingMode::NearestTiesToEven;

/// A raw binary16 value: 1 sign bit, 5 exponent bits, 10 mantissa bits.
///
/// Equality is bitwise, so `+0` and `-0` compare unequal. Compare
/// [`HalfBits::to_f32`] values when signed-value ordering is needed.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(transparent)]
pub struct HalfBits(u16);

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const MAN_MASK: u16 = 0x03FF;

impl HalfBits {
    pub const ZERO: HalfBits = HalfBits(0x0000);
    pub const NEG_ZERO: HalfBits = HalfBits(0x8000);
    pub const ONE: HalfBits = HalfBits(0x3C00);
    /// Largest finite value, 65504.
    pub const MAX: HalfBits = HalfBits(0x7BFF);
    /// Most negative finite value, -65504.
    pub const MIN: HalfBits = HalfBits(0xFBFF);
    /// Smallest positive subnormal, 2^-24.
    pub const MIN_POSITIVE_SUBNORMAL: HalfBits = HalfBits(0x0001);
    /// Smallest positive normal, 2^-14.
    pub const MIN_POSITIVE: HalfBits = HalfBits(0x0400);
    pub const INFINITY: HalfBits = HalfBits(0x7C00);
    pub const NEG_INFINITY: HalfBits = HalfBits(0xFC00);
    /// Canonical quiet NaN.
    pub const NAN: HalfBits = HalfBits(0x7E00);

    /// 65504 as a single.
    pub const MAX_F32: f32 = 65504.0;
    /// 2^-24 as a single.
    pub const MIN_POSITIVE_SUBNORMAL_F32: f32 = 5.960_464_5e-8;

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        HalfBits(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn from_f32(x: f32) -> Self {
        f32_to_f16(x)
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        f16_to_f32(self)
    }

    #[inline]
    pub const fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & MAN_MASK != 0
    }

    #[inline]
    pub const fn is_infinite(self) -> bool {
        self.0 & !SIGN_MASK == EXP_MASK
    }

    #[inline]
    pub const fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    #[inline]
    pub const fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    #[inline]
    pub const fn is_zero(self) -> bool {
        self.0 & !SIGN_MASK == 0
    }

    #[inline]
    pub const fn abs(self) -> Self {
        HalfBits(self.0 & !SIGN_MASK)
    }

    /// The next representable value toward +infinity. NaN and +inf are
    /// returned unchanged.
    pub fn next_up(self) -> Self {
        if self.is_nan() || self == Self::INFINITY {
            return self;
        }
        if self.is_zero() {
            return Self::MIN_POSITIVE_SUBNORMAL;
        }
        if self.is_sign_negative() {
            HalfBits(self.0 - 1)
        } else {
            HalfBits(self.0 + 1)
        }
    }

    /// The next representable value toward -infinity.
    pub fn next_down(self) -> Self {
        -(-self).next_up()
    }
}

impl Neg for HalfBits {
    type Output = HalfBits;

    #[inline]
    fn neg(self) -> HalfBits {
        HalfBits(self.0 ^ SIGN_MASK)
    }
}

impl fmt::Debug for HalfBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HalfBits({:#06x} = {:?})", self.0, self.to_f32())
    }
}

impl fmt::Display for HalfBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

/// Rounds a single to the nearest binary16, ties to even.
///
/// Magnitudes that round past 65504 become infinity, magnitudes at or below
/// 2^-25 become zero, and any NaN becomes [`HalfBits::NAN`].
pub fn f32_to_f16(x: f32) -> HalfBits {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x007F_FFFF;

    if exp == 0xFF {
        if man != 0 {
            return HalfBits::NAN;
        }
        return HalfBits(sign | EXP_MASK);
    }

    // Biased binary16 exponent.
    let e = exp - 127 + 15;
    if e >= 0x1F {
        return HalfBits(sign | EXP_MASK);
    }

    if e <= 0 {
        // Below 2^-25 nothing can round up. Single subnormals land here too.
        if e < -10 {
            return HalfBits(sign);
        }
        // value = sig * 2^(e - 38); in units of 2^-24 that is sig >> (14 - e).
        let sig = man | 0x0080_0000;
        let shift = (14 - e) as u32;
        let mut half_man = sig >> shift;
        let rem = sig & ((1u32 << shift) - 1);
        let halfway = 1u32 << (shift - 1);
        if rem > halfway || (rem == halfway && half_man & 1 == 1) {
            // May carry into the smallest normal, which is the right answer.
            half_man += 1;
        }
        return HalfBits(sign | half_man as u16);
    }

    let base = ((e as u32) << 10) | (man >> 13);
    let rem = man & 0x1FFF;
    let rounded = if rem > 0x1000 || (rem == 0x1000 && base & 1 == 1) {
        // Carry may roll the exponent, up to and including infinity.
        base + 1
    } else {
        base
    };
    HalfBits(sign | rounded as u16)
}

const fn widen_bits(h: u16) -> u32 {
    let sign = ((h & SIGN_MASK) as u32) << 16;
    let exp = ((h & EXP_MASK) >> 10) as i32;
    let man = (h & MAN_MASK) as u32;
    if exp == 0x1F {
        if man == 0 {
            return sign | 0x7F80_0000;
        }
        return sign | 0x7FC0_0000 | (man << 13);
    }
    if exp == 0 {
        if man == 0 {
            return sign;
        }
        let mut e: i32 = -14;
        let mut m = man;
        while m & 0x400 == 0 {
            m <<= 1;
            e -= 1;
        }
        return sign | (((e + 127) as u32) << 23) | ((m & 0x3FF) << 13);
    }
    sign | (((exp - 15 + 127) as u32) << 23) | (man << 13)
}

const fn build_widen_table() -> [u32; 65536] {
    let mut table = [0u32; 65536];
    let mut i = 0;
    while i < 65536 {
        table[i] = widen_bits(i as u16);
        i += 1;
    }
    table
}

static WIDEN: [u32; 65536] = build_widen_table();

/// Exact widening to single precision.
#[inline]
pub fn f16_to_f32(h: HalfBits) -> f32 {
    f32::from_bits(WIDEN[h.0 as usize])
}

/// Like [`f32_to_f16`], but finite inputs that would round to infinity
/// clamp to ±65504 instead. Infinite and NaN inputs are passed through.
pub fn f32_to_f16_saturating(x: f32) -> HalfBits {
    let h = f32_to_f16(x);
    if h.is_infinite() && x.is_finite() {
        if x < 0.0 {
            HalfBits::MIN
        } else {
            HalfBits::MAX
        }
    } else {
        h
    }
}

#[inline]
pub fn h_add(a: HalfBits, b: HalfBits) -> HalfBits {
    f32_to_f16(a.to_f32() + b.to_f32())
}

#[inline]
pub fn h_sub(a: HalfBits, b: HalfBits) -> HalfBits {
    f32_to_f16(a.to_f32() - b.to_f32())
}

#[inline]
pub fn h_mul(a: HalfBits, b: HalfBits) -> HalfBits {
    f32_to_f16(a.to_f32() * b.to_f32())
}

#[inline]
pub fn h_div(a: HalfBits, b: HalfBits) -> HalfBits {
    f32_to_f16(a.to_f32() / b.to_f32())
}

/// Applies a single-precision scalar to a half value: widen, multiply in
/// single, round once.
///
/// This is the only route by which layer hyperparameters (epsilon,
/// coefficients, shift factors, 1/n) touch half data. Scalars are never
/// rounded to half on their own, so a factor like 2^-25 is not lost.
#[inline]
pub fn h_scale_by_float(h: HalfBits, s: f32) -> HalfBits {
    f32_to_f16(h.to_f32() * s)
}

/// exp evaluated in single precision, rounded once.
#[inline]
pub fn h_exp(h: HalfBits) -> HalfBits {
    f32_to_f16(h.to_f32().exp())
}
