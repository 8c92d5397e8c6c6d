//! Numeric instruction semantics on untyped 64-bit slots.

use wafl_core::ir::NumOp;

use crate::outcome::TrapKind;

#[inline]
fn f32_of(v: u64) -> f32 {
    f32::from_bits(v as u32)
}

#[inline]
fn f64_of(v: u64) -> f64 {
    f64::from_bits(v)
}

#[inline]
fn of_f32(v: f32) -> u64 {
    v.to_bits() as u64
}

#[inline]
fn of_f64(v: f64) -> u64 {
    v.to_bits()
}

#[inline]
fn b(v: bool) -> u64 {
    v as u64
}

macro_rules! float_minmax {
    ($name:ident, $t:ty, $pick_min:expr) => {
        fn $name(a: $t, b: $t) -> $t {
            if a.is_nan() || b.is_nan() {
                return <$t>::NAN;
            }
            if a == b {
                // Distinguish -0 and +0.
                return if $pick_min == (a.is_sign_negative()) { a } else { b };
            }
            if $pick_min == (a < b) {
                a
            } else {
                b
            }
        }
    };
}

float_minmax!(fmin32, f32, true);
float_minmax!(fmax32, f32, false);
float_minmax!(fmin64, f64, true);
float_minmax!(fmax64, f64, false);

macro_rules! trunc {
    ($v:expr, $lo:expr, $hi:expr, $to:ty) => {{
        let v = $v;
        if v.is_nan() {
            return Err(TrapKind::IntegerOverflow);
        }
        let t = v.trunc();
        // Valid iff lo < v < hi (exclusive bounds are exact powers of two).
        if !(t > $lo && t < $hi) {
            return Err(TrapKind::IntegerOverflow);
        }
        t as $to
    }};
}

/// Applies `op` to the top of `stack`.
#[inline]
pub fn eval(op: NumOp, stack: &mut Vec<u64>) -> Result<(), TrapKind> {
    use NumOp::*;

    macro_rules! un {
        (|$a:ident| $e:expr) => {{
            let top = stack.last_mut().unwrap();
            let $a = *top;
            *top = $e;
        }};
    }
    macro_rules! bin {
        (|$a:ident, $b:ident| $e:expr) => {{
            let $b = stack.pop().unwrap();
            let top = stack.last_mut().unwrap();
            let $a = *top;
            *top = $e;
        }};
    }

    match op {
        I32Eqz => un!(|a| b(a as u32 == 0)),
        I32Eq => bin!(|x, y| b(x as u32 == y as u32)),
        I32Ne => bin!(|x, y| b(x as u32 != y as u32)),
        I32LtS => bin!(|x, y| b((x as i32) < (y as i32))),
        I32LtU => bin!(|x, y| b((x as u32) < (y as u32))),
        I32GtS => bin!(|x, y| b((x as i32) > (y as i32))),
        I32GtU => bin!(|x, y| b((x as u32) > (y as u32))),
        I32LeS => bin!(|x, y| b((x as i32) <= (y as i32))),
        I32LeU => bin!(|x, y| b((x as u32) <= (y as u32))),
        I32GeS => bin!(|x, y| b((x as i32) >= (y as i32))),
        I32GeU => bin!(|x, y| b((x as u32) >= (y as u32))),
        I64Eqz => un!(|a| b(a == 0)),
        I64Eq => bin!(|x, y| b(x == y)),
        I64Ne => bin!(|x, y| b(x != y)),
        I64LtS => bin!(|x, y| b((x as i64) < (y as i64))),
        I64LtU => bin!(|x, y| b(x < y)),
        I64GtS => bin!(|x, y| b((x as i64) > (y as i64))),
        I64GtU => bin!(|x, y| b(x > y)),
        I64LeS => bin!(|x, y| b((x as i64) <= (y as i64))),
        I64LeU => bin!(|x, y| b(x <= y)),
        I64GeS => bin!(|x, y| b((x as i64) >= (y as i64))),
        I64GeU => bin!(|x, y| b(x >= y)),
        F32Eq => bin!(|x, y| b(f32_of(x) == f32_of(y))),
        F32Ne => bin!(|x, y| b(f32_of(x) != f32_of(y))),
        F32Lt => bin!(|x, y| b(f32_of(x) < f32_of(y))),
        F32Gt => bin!(|x, y| b(f32_of(x) > f32_of(y))),
        F32Le => bin!(|x, y| b(f32_of(x) <= f32_of(y))),
        F32Ge => bin!(|x, y| b(f32_of(x) >= f32_of(y))),
        F64Eq => bin!(|x, y| b(f64_of(x) == f64_of(y))),
        F64Ne => bin!(|x, y| b(f64_of(x) != f64_of(y))),
        F64Lt => bin!(|x, y| b(f64_of(x) < f64_of(y))),
        F64Gt => bin!(|x, y| b(f64_of(x) > f64_of(y))),
        F64Le => bin!(|x, y| b(f64_of(x) <= f64_of(y))),
        F64Ge => bin!(|x, y| b(f64_of(x) >= f64_of(y))),

        I32Clz => un!(|a| (a as u32).leading_zeros() as u64),
        I32Ctz => un!(|a| (a as u32).trailing_zeros() as u64),
        I32Popcnt => un!(|a| (a as u32).count_ones() as u64),
        I32Add => bin!(|x, y| (x as u32).wrapping_add(y as u32) as u64),
        I32Sub => bin!(|x, y| (x as u32).wrapping_sub(y as u32) as u64),
        I32Mul => bin!(|x, y| (x as u32).wrapping_mul(y as u32) as u64),
        I32DivS | I32DivU | I32RemS | I32RemU => {
            let y = stack.pop().unwrap() as u32;
            let x = *stack.last().unwrap() as u32;
            if y == 0 {
                return Err(TrapKind::DivByZero);
            }
            let r = match op {
                I32DivS => {
                    if x as i32 == i32::MIN && y as i32 == -1 {
                        return Err(TrapKind::IntegerOverflow);
                    }
                    (x as i32 / y as i32) as u32
                }
                I32DivU => x / y,
                I32RemS => (x as i32).wrapping_rem(y as i32) as u32,
                _ => x % y,
            };
            *stack.last_mut().unwrap() = r as u64;
        }
        I32And => bin!(|x, y| (x as u32 & y as u32) as u64),
        I32Or => bin!(|x, y| (x as u32 | y as u32) as u64),
        I32Xor => bin!(|x, y| (x as u32 ^ y as u32) as u64),
        I32Shl => bin!(|x, y| (x as u32).wrapping_shl(y as u32) as u64),
        I32ShrS => bin!(|x, y| ((x as i32).wrapping_shr(y as u32) as u32) as u64),
        I32ShrU => bin!(|x, y| (x as u32).wrapping_shr(y as u32) as u64),
        I32Rotl => bin!(|x, y| (x as u32).rotate_left(y as u32 % 32) as u64),
        I32Rotr => bin!(|x, y| (x as u32).rotate_right(y as u32 % 32) as u64),

        I64Clz => un!(|a| a.leading_zeros() as u64),
        I64Ctz => un!(|a| a.trailing_zeros() as u64),
        I64Popcnt => un!(|a| a.count_ones() as u64),
        I64Add => bin!(|x, y| x.wrapping_add(y)),
        I64Sub => bin!(|x, y| x.wrapping_sub(y)),
        I64Mul => bin!(|x, y| x.wrapping_mul(y)),
        I64DivS | I64DivU | I64RemS | I64RemU => {
            let y = stack.pop().unwrap();
            let x = *stack.last().unwrap();
            if y == 0 {
                return Err(TrapKind::DivByZero);
            }
            let r = match op {
                I64DivS => {
                    if x as i64 == i64::MIN && y as i64 == -1 {
                        return Err(TrapKind::IntegerOverflow);
                    }
                    (x as i64 / y as i64) as u64
                }
                I64DivU => x / y,
                I64RemS => (x as i64).wrapping_rem(y as i64) as u64,
                _ => x % y,
            };
            *stack.last_mut().unwrap() = r;
        }
        I64And => bin!(|x, y| x & y),
        I64Or => bin!(|x, y| x | y),
        I64Xor => bin!(|x, y| x ^ y),
        I64Shl => bin!(|x, y| x.wrapping_shl(y as u32)),
        I64ShrS => bin!(|x, y| (x as i64).wrapping_shr(y as u32) as u64),
        I64ShrU => bin!(|x, y| x.wrapping_shr(y as u32)),
        I64Rotl => bin!(|x, y| x.rotate_left((y % 64) as u32)),
        I64Rotr => bin!(|x, y| x.rotate_right((y % 64) as u32)),

        F32Abs => un!(|a| a & 0x7fff_ffff),
        F32Neg => un!(|a| (a as u32 ^ 0x8000_0000) as u64),
        F32Ceil => un!(|a| of_f32(f32_of(a).ceil())),
        F32Floor => un!(|a| of_f32(f32_of(a).floor())),
        F32Trunc => un!(|a| of_f32(f32_of(a).trunc())),
        F32Nearest => un!(|a| of_f32(f32_of(a).round_ties_even())),
        F32Sqrt => un!(|a| of_f32(f32_of(a).sqrt())),
        F32Add => bin!(|x, y| of_f32(f32_of(x) + f32_of(y))),
        F32Sub => bin!(|x, y| of_f32(f32_of(x) - f32_of(y))),
        F32Mul => bin!(|x, y| of_f32(f32_of(x) * f32_of(y))),
        F32Div => bin!(|x, y| of_f32(f32_of(x) / f32_of(y))),
        F32Min => bin!(|x, y| of_f32(fmin32(f32_of(x), f32_of(y)))),
        F32Max => bin!(|x, y| of_f32(fmax32(f32_of(x), f32_of(y)))),
        F32Copysign => bin!(|x, y| ((x as u32 & 0x7fff_ffff) | (y as u32 & 0x8000_0000)) as u64),
        F64Abs => un!(|a| a & 0x7fff_ffff_ffff_ffff),
        F64Neg => un!(|a| a ^ 0x8000_0000_0000_0000),
        F64Ceil => un!(|a| of_f64(f64_of(a).ceil())),
        F64Floor => un!(|a| of_f64(f64_of(a).floor())),
        F64Trunc => un!(|a| of_f64(f64_of(a).trunc())),
        F64Nearest => un!(|a| of_f64(f64_of(a).round_ties_even())),
        F64Sqrt => un!(|a| of_f64(f64_of(a).sqrt())),
        F64Add => bin!(|x, y| of_f64(f64_of(x) + f64_of(y))),
        F64Sub => bin!(|x, y| of_f64(f64_of(x) - f64_of(y))),
        F64Mul => bin!(|x, y| of_f64(f64_of(x) * f64_of(y))),
        F64Div => bin!(|x, y| of_f64(f64_of(x) / f64_of(y))),
        F64Min => bin!(|x, y| of_f64(fmin64(f64_of(x), f64_of(y)))),
        F64Max => bin!(|x, y| of_f64(fmax64(f64_of(x), f64_of(y)))),
        F64Copysign => bin!(|x, y| (x & 0x7fff_ffff_ffff_ffff) | (y & 0x8000_0000_0000_0000)),

        I32WrapI64 => un!(|a| a as u32 as u64),
        I32TruncF32S => {
            let v = trunc!(f32_of(*stack.last().unwrap()), -2147483904.0f32, 2147483648.0f32, i32);
            *stack.last_mut().unwrap() = v as u32 as u64;
        }
        I32TruncF32U => {
            let v = trunc!(f32_of(*stack.last().unwrap()), -1.0f32, 4294967296.0f32, u32);
            *stack.last_mut().unwrap() = v as u64;
        }
        I32TruncF64S => {
            let v = trunc!(f64_of(*stack.last().unwrap()), -2147483649.0f64, 2147483648.0f64, i32);
            *stack.last_mut().unwrap() = v as u32 as u64;
        }
        I32TruncF64U => {
            let v = trunc!(f64_of(*stack.last().unwrap()), -1.0f64, 4294967296.0f64, u32);
            *stack.last_mut().unwrap() = v as u64;
        }
        I64ExtendI32S => un!(|a| a as u32 as i32 as i64 as u64),
        I64ExtendI32U => un!(|a| a as u32 as u64),
        I64TruncF32S => {
            let v = trunc!(f32_of(*stack.last().unwrap()), -9223373136366403584.0f32, 9223372036854775808.0f32, i64);
            *stack.last_mut().unwrap() = v as u64;
        }
        I64TruncF32U => {
            let v = trunc!(f32_of(*stack.last().unwrap()), -1.0f32, 18446744073709551616.0f32, u64);
            *stack.last_mut().unwrap() = v;
        }
        I64TruncF64S => {
            let v = trunc!(f64_of(*stack.last().unwrap()), -9223372036854777856.0f64, 9223372036854775808.0f64, i64);
            *stack.last_mut().unwrap() = v as u64;
        }
        I64TruncF64U => {
            let v = trunc!(f64_of(*stack.last().unwrap()), -1.0f64, 18446744073709551616.0f64, u64);
            *stack.last_mut().unwrap() = v;
        }
        F32ConvertI32S => un!(|a| of_f32(a as u32 as i32 as f32)),
        F32ConvertI32U => un!(|a| of_f32(a as u32 as f32)),
        F32ConvertI64S => un!(|a| of_f32(a as i64 as f32)),
        F32ConvertI64U => un!(|a| of_f32(a as f32)),
        F32DemoteF64 => un!(|a| of_f32(f64_of(a) as f32)),
        F64ConvertI32S => un!(|a| of_f64(a as u32 as i32 as f64)),
        F64ConvertI32U => un!(|a| of_f64(a as u32 as f64)),
        F64ConvertI64S => un!(|a| of_f64(a as i64 as f64)),
        F64ConvertI64U => un!(|a| of_f64(a as f64)),
        F64PromoteF32 => un!(|a| of_f64(f32_of(a) as f64)),
        I32ReinterpretF32 | F32ReinterpretI32 => un!(|a| a as u32 as u64),
        I64ReinterpretF64 | F64ReinterpretI64 => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(op: NumOp, args: &[u64]) -> Result<u64, TrapKind> {
        let mut s = args.to_vec();
        eval(op, &mut s)?;
        assert_eq!(s.len(), 1);
        Ok(s[0])
    }

    #[test]
    fn integer_wraparound() {
        assert_eq!(run(NumOp::I32Add, &[u32::MAX as u64, 1]), Ok(0));
        assert_eq!(run(NumOp::I32Sub, &[0, 1]), Ok(u32::MAX as u64));
        assert_eq!(run(NumOp::I64Mul, &[u64::MAX, 2]), Ok(u64::MAX - 1));
        assert_eq!(run(NumOp::I32Shl, &[1, 33]), Ok(2));
        assert_eq!(run(NumOp::I32ShrS, &[0x8000_0000, 31]), Ok(u32::MAX as u64));
        assert_eq!(run(NumOp::I32Rotl, &[0x8000_0001, 1]), Ok(3));
    }

    #[test]
    fn division_traps() {
        assert_eq!(run(NumOp::I32DivU, &[1, 0]), Err(TrapKind::DivByZero));
        assert_eq!(run(NumOp::I64RemS, &[1, 0]), Err(TrapKind::DivByZero));
        assert_eq!(run(NumOp::I32DivS, &[0x8000_0000, u32::MAX as u64]), Err(TrapKind::IntegerOverflow));
        assert_eq!(run(NumOp::I32RemS, &[0x8000_0000, u32::MAX as u64]), Ok(0));
        assert_eq!(run(NumOp::I32DivS, &[(-7i32) as u32 as u64, 2]), Ok((-3i32) as u32 as u64));
    }

    #[test]
    fn float_conversions() {
        let nan = of_f32(f32::NAN);
        assert_eq!(run(NumOp::I32TruncF32S, &[nan]), Err(TrapKind::IntegerOverflow));
        assert_eq!(run(NumOp::I32TruncF32S, &[of_f32(2147483648.0)]), Err(TrapKind::IntegerOverflow));
        assert_eq!(run(NumOp::I32TruncF32S, &[of_f32(-2147483648.0)]), Ok(0x8000_0000));
        assert_eq!(run(NumOp::I32TruncF64U, &[of_f64(-0.9)]), Ok(0));
        assert_eq!(run(NumOp::I32TruncF64U, &[of_f64(-1.0)]), Err(TrapKind::IntegerOverflow));
        assert_eq!(run(NumOp::I64TruncF64S, &[of_f64(-9223372036854775808.0)]), Ok(i64::MIN as u64));
    }

    #[test]
    fn float_edge_semantics() {
        assert_eq!(run(NumOp::F64Nearest, &[of_f64(2.5)]), Ok(of_f64(2.0)));
        assert_eq!(run(NumOp::F64Nearest, &[of_f64(3.5)]), Ok(of_f64(4.0)));
        assert_eq!(run(NumOp::F64Nearest, &[of_f64(-0.5)]), Ok(of_f64(-0.0)));
        assert_eq!(run(NumOp::F32Nearest, &[of_f32(-1.5)]), Ok(of_f32(-2.0)));
        assert_eq!(run(NumOp::F64Min, &[of_f64(0.0), of_f64(-0.0)]), Ok(of_f64(-0.0)));
        assert_eq!(run(NumOp::F64Max, &[of_f64(-0.0), of_f64(0.0)]), Ok(of_f64(0.0)));
        assert!(f64_of(run(NumOp::F64Min, &[of_f64(f64::NAN), of_f64(1.0)]).unwrap()).is_nan());
        assert_eq!(run(NumOp::F32Copysign, &[of_f32(1.0), of_f32(-2.0)]), Ok(of_f32(-1.0)));
    }
}
