//! Plain statistics used by the evaluation report.

/// Mean squared difference. Empty inputs give zero.
pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "mse needs equal lengths");
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

pub fn rmse(a: &[f32], b: &[f32]) -> f64 {
    mse(a, b).sqrt()
}

/// Pearson correlation; zero if either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson needs equal lengths");
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn moments(rows: &[&[f32]], dim: usize) -> Vec<(f64, f64, f64)> {
    let n = rows.len() as f64;
    (0..dim)
        .map(|d| {
            let mean = rows.iter().map(|r| r[d] as f64).sum::<f64>() / n;
            let (m2, m4) = rows.iter().fold((0.0, 0.0), |(m2, m4), r| {
                let c = r[d] as f64 - mean;
                (m2 + c * c, m4 + c.powi(4))
            });
            (mean, m2 / n, m4 / n)
        })
        .collect()
}

/// Population variance of each column.
pub fn variance_per_dim(rows: &[&[f32]], dim: usize) -> Vec<f64> {
    if rows.is_empty() {
        return vec![0.0; dim];
    }
    moments(rows, dim).into_iter().map(|(_, v, _)| v).collect()
}

/// `m4 / m2^2 - 3` per column; zero for constant columns.
pub fn excess_kurtosis_per_dim(rows: &[&[f32]], dim: usize) -> Vec<f64> {
    if rows.is_empty() {
        return vec![0.0; dim];
    }
    moments(rows, dim)
        .into_iter()
        .map(|(_, m2, m4)| if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[1.0; 4]), 0.0);
        // Hand value: centered (-1.5,-0.5,0.5,1.5) against (1,-1,-1,1)-ish.
        let r = pearson(&a, &[1.0, 0.0, 0.0, 1.0]);
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn moments_of_known_columns() {
        // Column 0: {-1, 1} twice -> var 1, kurtosis 1 - 3 = -2.
        // Column 1: {0, 0, 0, 4} -> mean 1, var 3, m4 = (3*1 + 81)/4 = 21, 21/9 - 3.
        let data = [[-1.0f32, 0.0], [1.0, 0.0], [-1.0, 0.0], [1.0, 4.0]];
        let rows: Vec<&[f32]> = data.iter().map(|r| &r[..]).collect();
        let v = variance_per_dim(&rows, 2);
        let k = excess_kurtosis_per_dim(&rows, 2);
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 3.0).abs() < 1e-12);
        assert!((k[0] + 2.0).abs() < 1e-12);
        assert!((k[1] - (21.0 / 9.0 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn mse_and_rmse() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 4.0]), 2.0);
        assert_eq!(rmse(&[0.0; 3], &[0.0; 3]), 0.0);
    }
}
