//! Quantiles and small least-squares fits for experiment summaries.

/// Nearest-rank quantile of `xs` (`q` in `[0, 1]`); `None` when empty.
pub fn quantile(xs: &[u64], q: f64) -> Option<u64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let rank = (q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.saturating_sub(1).min(v.len() - 1)])
}

/// Coefficients `β` minimizing `Σ (y − x·β)²`. Rows of `x` hold the regressors (add
/// a constant column for an intercept). `None` if the system is singular.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let p = x.first()?.len();
    if x.len() != y.len() || x.len() < p {
        return None;
    }
    // Normal equations, solved by Gaussian elimination with partial pivoting.
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * yi;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        let scale = a.iter().map(|r| r[c].abs()).fold(0.0, f64::max).max(1.0);
        if a[piv][c].abs() < 1e-9 * scale {
            return None;
        }
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Some((0..p).map(|i| a[i][p] / a[i][i]).collect())
}

/// Slope and intercept of `y ≈ a·x + b`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 1.0]).collect();
    least_squares(&rows, ys).map(|b| (b[0], b[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_use_nearest_rank() {
        let xs = [5, 1, 4, 2, 3];
        assert_eq!(quantile(&xs, 0.5), Some(3));
        assert_eq!(quantile(&xs, 0.9), Some(5));
        assert_eq!(quantile(&xs, 0.0), Some(1));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn exact_plane_is_recovered() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for d in [32.0, 64.0, 128.0] {
            for k in [1.0, 4.0, 16.0] {
                x.push(vec![d, k, 1.0]);
                y.push(3.0 * d + 7.0 * k + 11.0);
            }
        }
        let b = least_squares(&x, &y).unwrap();
        for (got, want) in b.iter().zip([3.0, 7.0, 11.0]) {
            assert!((got - want).abs() < 1e-6, "{b:?}");
        }
        assert_eq!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]), None);
    }
}
