//! Platform-independent numerics for the workload.
//!
//! Only IEEE-754 correctly rounded operations are used (`+ - * /`, `sqrt`,
//! `floor`, exact power-of-two scaling), always in a fixed evaluation order,
//! so results are bit-identical across machines. `exp` is not taken from the
//! platform math library; see `docs/numerics.md`.

pub const LOG2_E: f64 = std::f64::consts::LOG2_E;
/// High part of ln 2 (exactly representable in 32 significant bits).
pub const LN2_HI: f64 = 6.931_471_803_691_238e-1;
/// ln 2 − LN2_HI.
pub const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// Number of Taylor terms used on the reduced argument.
pub const EXP_TERMS: u32 = 18;
/// Sigmoid input clamp; beyond it the result saturates well below 1 ulp.
pub const SIGMOID_CLAMP: f64 = 30.0;

/// `e^x` for `|x| <= 708`, via Cody–Waite reduction `x = k ln2 + r`,
/// `|r| <= ln2 / 2`, and a nested Taylor series on `r`.
pub fn exp_fixed(x: f64) -> f64 {
    debug_assert!(x.abs() <= 708.0, "exp_fixed argument out of range: {x}");
    let k = (x * LOG2_E + 0.5).floor();
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // 1 + r/1 (1 + r/2 (1 + r/3 (...)))
    let mut s = 1.0;
    for n in (1..=EXP_TERMS).rev() {
        s = 1.0 + r * s / f64::from(n);
    }
    s * pow2(k as i32)
}

/// Exact 2^k for normal-range k.
fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    1.0 / (1.0 + exp_fixed(-z))
}

/// Left-to-right sum.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |acc, v| acc + v)
}

/// Linear score `w·x + b`, accumulated in index order, bias last.
pub fn score(weights: &[f64; 4], bias: f64, x: &[f64; 4]) -> f64 {
    let mut acc = 0.0;
    for j in 0..4 {
        acc += weights[j] * x[j];
    }
    acc + bias
}

/// Mean log-loss gradient over `(features, label)` rows.
pub fn logistic_gradient(weights: &[f64; 4], bias: f64, rows: &[([f64; 4], u8)]) -> ([f64; 4], f64) {
    let mut grad_w = [0.0; 4];
    let mut grad_b = 0.0;
    for (x, y) in rows {
        let err = sigmoid(score(weights, bias, x)) - f64::from(*y);
        for j in 0..4 {
            grad_w[j] += err * x[j];
        }
        grad_b += err;
    }
    let m = rows.len() as f64;
    if rows.is_empty() {
        return (grad_w, grad_b);
    }
    for g in &mut grad_w {
        *g /= m;
    }
    (grad_w, grad_b / m)
}

/// One full-batch gradient descent step.
pub fn descend(weights: &mut [f64; 4], bias: &mut f64, rows: &[([f64; 4], u8)], learning_rate: f64) {
    let (grad_w, grad_b) = logistic_gradient(weights, *bias, rows);
    for j in 0..4 {
        weights[j] -= learning_rate * grad_w[j];
    }
    *bias -= learning_rate * grad_b;
}
