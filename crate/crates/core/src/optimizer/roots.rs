use std::f64::consts::PI;

#[inline]
fn eval(c: &[f64; 4], x: f64) -> f64 {
    ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
}

#[inline]
fn eval_abs(c: &[f64; 4], x: f64) -> f64 {
    let a = x.abs();
    ((c[3].abs() * a + c[2].abs()) * a + c[1].abs()) * a + c[0].abs()
}

fn polish(c: &[f64; 4], mut x: f64) -> f64 {
    for _ in 0..8 {
        let f = eval(c, x);
        let df = (3.0 * c[3] * x + 2.0 * c[2]) * x + c[1];
        if f == 0.0 || df == 0.0 {
            break;
        }
        let next = x - f / df;
        if !next.is_finite() || eval(c, next).abs() >= f.abs() {
            break;
        }
        x = next;
    }
    x
}

/// Real roots of `b x^2 + c x + d` (stable form).
fn quadratic_roots(b: f64, c: f64, d: f64, out: &mut Vec<f64>) {
    if b == 0.0 {
        if c != 0.0 {
            out.push(-d / c);
        }
        return;
    }
    let disc = c * c - 4.0 * b * d;
    if disc < 0.0 {
        // Nearly tangent: keep the vertex as a candidate; polishing and the
        // residual test decide.
        out.push(-c / (2.0 * b));
        return;
    }
    let q = -0.5 * (c + c.signum() * disc.sqrt());
    if q != 0.0 {
        out.push(q / b);
        out.push(d / q);
    } else {
        out.push(0.0);
    }
}

/// Real roots of `a x^3 + b x^2 + c x + d` with `a != 0`.
fn cubic_roots(a: f64, b: f64, c: f64, d: f64, out: &mut Vec<f64>) {
    let (b, c, d) = (b / a, c / a, d / a);
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if p == 0.0 && q == 0.0 {
        out.push(-shift);
    } else if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        out.push(u + v - shift);
        // Near-double pair: the vertex of the depressed cubic.
        out.push(-(u + v) / 2.0 - shift);
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        for k in 0..3 {
            out.push(m * (theta - 2.0 * PI * k as f64 / 3.0).cos() - shift);
        }
    }
}

/// Smallest strictly positive real root of `c3 x^3 + c2 x^2 + c1 x + c0`.
///
/// Falls back to the quadratic and linear cases when leading coefficients
/// vanish; every candidate is Newton-polished and must have a small residual.
pub fn smallest_positive_root(c3: f64, c2: f64, c1: f64, c0: f64) -> Option<f64> {
    let c = [c0, c1, c2, c3];
    if c.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut cand = Vec::with_capacity(6);
    if c3 != 0.0 {
        cubic_roots(c3, c2, c1, c0, &mut cand);
    }
    // The quadratic part locates small roots accurately when c3 is tiny.
    quadratic_roots(c2, c1, c0, &mut cand);
    cand.iter()
        .filter(|r| r.is_finite())
        .map(|&r| polish(&c, r))
        .filter(|&r| r > 0.0 && eval(&c, r).abs() <= 1e-9 * eval_abs(&c, r))
        .min_by(f64::total_cmp)
}
