use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Agreement between overall and VBenchComp scores across models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub model_ids: Vec<String>,
    pub overall: Vec<f64>,
    pub vbenchcomp: Vec<f64>,
    /// Absent when either series is constant.
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
}

/// Pearson's r, or `None` for a constant series or fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "series lengths differ");
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn rank_average(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&rank_average(x), &rank_average(y))
}

/// Points are `(model_id, overall, vbenchcomp)`.
pub fn correlation(points: &[(String, f64, f64)]) -> Result<CorrelationReport, MetricsError> {
    if points.len() < 3 {
        return Err(MetricsError::TooFewPoints(points.len()));
    }
    let overall: Vec<f64> = points.iter().map(|p| p.1).collect();
    let vbenchcomp: Vec<f64> = points.iter().map(|p| p.2).collect();
    Ok(CorrelationReport {
        model_ids: points.iter().map(|p| p.0.clone()).collect(),
        pearson_r: pearson(&overall, &vbenchcomp),
        spearman_rho: spearman(&overall, &vbenchcomp),
        overall,
        vbenchcomp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[(f64, f64)]) -> Vec<(String, f64, f64)> {
        xs.iter().enumerate().map(|(i, (a, b))| (format!("m{i}"), *a, *b)).collect()
    }

    #[test]
    fn monotone_and_reversed() {
        let up = correlation(&pts(&[(1.0, 10.0), (2.0, 20.0), (3.0, 35.0), (4.0, 36.0)])).unwrap();
        assert_eq!(up.spearman_rho, Some(1.0));
        let down = correlation(&pts(&[(1.0, 4.0), (2.0, 3.0), (3.0, 2.0), (4.0, 1.0)])).unwrap();
        assert_eq!(down.spearman_rho, Some(-1.0));
        assert!((down.pearson_r.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        assert_eq!(correlation(&pts(&[(1.0, 1.0), (2.0, 2.0)])), Err(MetricsError::TooFewPoints(2)));
    }

    #[test]
    fn constant_series_is_absent() {
        let r = correlation(&pts(&[(1.0, 5.0), (2.0, 5.0), (3.0, 5.0)])).unwrap();
        assert_eq!((r.pearson_r, r.spearman_rho), (None, None));
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(rank_average(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn pearson_known_value() {
        // x = 1..5, y = [2,4,5,4,5]: sxy = 6, sxx = 10, syy = 6
        let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 5.0, 4.0, 5.0]).unwrap();
        assert!((r - 6.0 / (10.0f64 * 6.0).sqrt()).abs() < 1e-12);
    }
}
