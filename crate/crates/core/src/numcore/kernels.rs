//! Dense loops shared by the forward and backward rules.

use super::tensor::Real;

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<S: Real>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == S::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `ga[m×k] += g[m×n] · b[k×n]ᵀ`
pub fn matmul_bt_acc<S: Real>(g: &[S], b: &[S], ga: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let dot: S = gr
                .iter()
                .zip(&b[p * n..(p + 1) * n])
                .fold(S::zero(), |acc, (&x, &y)| acc + x * y);
            ga[i * k + p] = ga[i * k + p] + dot;
        }
    }
}

/// `gb[k×n] += a[m×k]ᵀ · g[m×n]`
pub fn matmul_at_acc<S: Real>(a: &[S], g: &[S], gb: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            for (d, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(gr) {
                *d = *d + aip * x;
            }
        }
    }
}

pub fn softmax_in_place<S: Real>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        // a: 2×3, b: 3×2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0f64];
        let g = [1.0, -1.0, 0.5, 2.0f64];
        // aᵀ·g by hand: [3×2]
        let mut gb = [0.0f64; 6];
        matmul_at_acc(&a, &g, &mut gb, 2, 3, 2);
        assert_eq!(gb, [3.0, 7.0, 4.5, 8.0, 6.0, 9.0]);
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0f64];
        let mut ga = [0.0f64; 6];
        matmul_bt_acc(&g, &b, &mut ga, 2, 3, 2);
        assert_eq!(ga, [1.0, -1.0, 0.0, 0.5, 2.0, 2.5]);
    }
}
