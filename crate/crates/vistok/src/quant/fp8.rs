//! FP8 E4M3 codec: sign, 4 exponent bits (bias 7), 3 mantissa bits.
//!
//! The top exponent row keeps mantissas 000..110 as finite values, so the
//! maximum finite magnitude is 1.75 * 2^8 = 448; only mantissa 111 encodes
//! NaN and there are no infinities. Encoding rounds to nearest with ties to
//! even and saturates above the format maximum.

use std::sync::OnceLock;

pub const MAX_FINITE: f32 = 448.0;

const EXP_BIAS: i32 = 7;

/// Decode one byte; the two `S.1111.111` patterns decode to NaN.
pub fn decode(code: u8) -> f32 {
    let sign = if code & 0x80 != 0 { -1.0f32 } else { 1.0 };
    let exp = ((code >> 3) & 0x0F) as i32;
    let mant = (code & 0x07) as i32;
    if exp == 0x0F && mant == 0x07 {
        return f32::NAN;
    }
    if exp == 0 {
        // Denormal: mant / 8 * 2^(1 - bias).
        sign * (mant as f32 / 8.0) * (2.0f32).powi(1 - EXP_BIAS)
    } else {
        sign * (1.0 + mant as f32 / 8.0) * (2.0f32).powi(exp - EXP_BIAS)
    }
}

/// All non-negative finite values in code order (which is value order).
fn positive_table() -> &'static Vec<f32> {
    static TABLE: OnceLock<Vec<f32>> = OnceLock::new();
    TABLE.get_or_init(|| (0x00u8..=0x7E).map(decode).collect())
}

/// Encode with round-to-nearest-even over the representable values,
/// saturating at +-448. NaN encodes to the positive NaN pattern; callers
/// that forbid NaN must check before encoding.
pub fn encode(value: f32) -> u8 {
    if value.is_nan() {
        return 0x7F;
    }
    let sign_bit = if value.is_sign_negative() { 0x80u8 } else { 0 };
    let mag = value.abs();
    if mag >= MAX_FINITE {
        return sign_bit | 0x7E;
    }
    let table = positive_table();
    // Codes are ordered by magnitude; find the first entry >= mag.
    let hi = table.partition_point(|&v| v < mag);
    let code = if hi == 0 {
        0
    } else {
        let lo = hi - 1;
        let d_lo = mag - table[lo];
        let d_hi = table[hi] - mag;
        if d_lo < d_hi {
            lo
        } else if d_hi < d_lo {
            hi
        } else {
            // Tie: adjacent codes alternate parity; take the even one.
            if lo % 2 == 0 {
                lo
            } else {
                hi
            }
        }
    };
    sign_bit | code as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(decode(0x00), 0.0);
        assert_eq!(decode(0x80), -0.0);
        assert!(decode(0x80).is_sign_negative());
        // 1.0 = (1 + 0/8) * 2^0 -> exp field 7.
        assert_eq!(decode(0x38), 1.0);
        assert_eq!(decode(0x7E), 448.0);
        assert_eq!(decode(0xFE), -448.0);
        // Smallest denormal: 2^-9.
        assert_eq!(decode(0x01), 0.001953125);
        // Smallest normal: 2^-6.
        assert_eq!(decode(0x08), 0.015625);
        assert!(decode(0x7F).is_nan());
        assert!(decode(0xFF).is_nan());
    }

    #[test]
    fn encode_representables_exact() {
        assert_eq!(encode(1.0), 0x38);
        assert_eq!(encode(-1.0), 0xB8);
        assert_eq!(encode(448.0), 0x7E);
        assert_eq!(encode(0.0), 0x00);
        assert_eq!(encode(-0.0), 0x80);
    }

    #[test]
    fn saturation_at_format_max() {
        assert_eq!(encode(500.0), 0x7E);
        assert_eq!(encode(-1e9), 0xFE);
        assert_eq!(encode(f32::INFINITY), 0x7E);
        assert_eq!(decode(encode(1e30)), 448.0);
    }

    #[test]
    fn all_finite_codes_round_trip() {
        let mut finite = 0;
        for code in 0u8..=255 {
            let v = decode(code);
            if v.is_nan() {
                continue;
            }
            finite += 1;
            assert_eq!(encode(v), code, "code {code:#04x} -> {v}");
            let twice = decode(encode(v));
            assert_eq!(twice.to_bits(), v.to_bits());
        }
        // 256 codes minus the two NaN patterns.
        assert_eq!(finite, 254);
    }

    #[test]
    fn round_to_nearest_even_on_ties() {
        // Between 1.0 (code 0x38) and 1.125 (code 0x39) the midpoint is
        // 1.0625; the even code wins.
        assert_eq!(encode(1.0625), 0x38);
        // Between 1.125 (0x39) and 1.25 (0x3A): midpoint 1.1875 -> 0x3A.
        assert_eq!(encode(1.1875), 0x3A);
    }

    #[test]
    fn nearest_rounding_off_ties() {
        assert_eq!(encode(1.06), 0x38);
        assert_eq!(encode(1.07), 0x39);
    }

    #[test]
    fn monotone_decode_order() {
        let mut prev = decode(0x00);
        for code in 0x01u8..=0x7E {
            let v = decode(code);
            assert!(v > prev, "code {code:#04x}");
            prev = v;
        }
    }
}
