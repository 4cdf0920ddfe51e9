//! O(n²) reference implementations used as independent oracles.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// Mid-rank of every element by direct counting.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| {
            let below = x.iter().filter(|&&xj| xj < xi).count() as f64;
            let tied = x.iter().filter(|&&xj| xj == xi).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Kendall τ-b by enumerating all pairs.
pub fn tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (conc - disc) as f64 / (((n0 - tx) * (n0 - ty)) as f64).sqrt()
}

fn groups<'a>(group: &'a [String], gt: &[f64], pred: &[f64]) -> BTreeMap<&'a str, (Vec<f64>, Vec<f64>)> {
    let mut out: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((g, &t), &p) in group.iter().zip(gt).zip(pred) {
        let e = out.entry(g.as_str()).or_default();
        e.0.push(t);
        e.1.push(p);
    }
    out
}

/// Same-group pairs with distinct GT; correct order 1, tied prediction ½.
pub fn pair_accuracy(group: &[String], gt: &[f64], pred: &[f64]) -> f64 {
    let (mut credit, mut pairs) = (0.0, 0.0);
    for (t, p) in groups(group, gt, pred).values() {
        for i in 0..t.len() {
            for j in i + 1..t.len() {
                if t[i] == t[j] {
                    continue;
                }
                pairs += 1.0;
                if p[i] == p[j] {
                    credit += 0.5;
                } else if (t[i] > t[j]) == (p[i] > p[j]) {
                    credit += 1.0;
                }
            }
        }
    }
    credit / pairs
}

/// Mean within-group τ-b over groups with ≥ 2 images and non-constant GT;
/// constant predictions count as τ = 0.
pub fn per_group_tau(group: &[String], gt: &[f64], pred: &[f64]) -> f64 {
    let mut taus = Vec::new();
    for (t, p) in groups(group, gt, pred).values() {
        if t.len() < 2 || t.iter().all(|&v| v == t[0]) {
            continue;
        }
        taus.push(if p.iter().all(|&v| v == p[0]) { 0.0 } else { tau_b(p, t) });
    }
    taus.iter().sum::<f64>() / taus.len() as f64
}

/// Population variance of all values, and the size-weighted split into
/// within-group and group-mean parts, each summed directly.
pub fn variance_parts(group: &[String], y: &[f64]) -> (f64, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let total = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut within = 0.0;
    let mut cross = 0.0;
    for (vals, _) in groups(group, y, y).values() {
        let k = vals.len() as f64;
        let gm = vals.iter().sum::<f64>() / k;
        within += vals.iter().map(|v| (v - gm).powi(2)).sum::<f64>() / n;
        cross += k * (gm - mean).powi(2) / n;
    }
    (within, cross, total)
}
