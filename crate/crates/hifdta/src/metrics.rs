//! Regression metrics for affinity prediction: MSE, Pearson correlation,
//! concordance index over comparable pairs, and the modified squared
//! correlation rm2. All reject non-finite inputs instead of propagating NaN
//! into reports.

use serde::Serialize;

use crate::error::{Error, Result};

fn check_inputs(name: &'static str, y: &[f64], yhat: &[f64], min_len: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Metric {
            name,
            detail: format!("length mismatch: {} true vs {} predicted", y.len(), yhat.len()),
        });
    }
    if y.len() < min_len {
        return Err(Error::Metric {
            name,
            detail: format!("needs at least {min_len} samples, got {}", y.len()),
        });
    }
    if let Some(i) = y.iter().chain(yhat.iter()).position(|v| !v.is_finite()) {
        let (which, at) = if i < y.len() { ("true", i) } else { ("predicted", i - y.len()) };
        return Err(Error::Metric { name, detail: format!("non-finite {which} value at index {at}") });
    }
    Ok(())
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_inputs("mse", y, yhat, 1)?;
    let n = y.len() as f64;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

pub fn pcc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_inputs("pcc", y, yhat, 2)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = yhat.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vy = 0.0;
    let mut vh = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        cov += (a - my) * (b - mh);
        vy += (a - my) * (a - my);
        vh += (b - mh) * (b - mh);
    }
    if vy == 0.0 || vh == 0.0 {
        let which = if vy == 0.0 { "true" } else { "predicted" };
        return Err(Error::Metric { name: "pcc", detail: format!("{which} values have zero variance") });
    }
    Ok(cov / (vy * vh).sqrt())
}

/// Fraction of comparable pairs (strictly different true values) the
/// predictions order correctly, with half credit for predicted ties.
///
/// Counted with a Fenwick tree over prediction ranks in one ascending sweep
/// of the true values, so the result is exact integer arithmetic until the
/// final division and therefore independent of input order.
pub fn concordance_index(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_inputs("ci", y, yhat, 2)?;
    let n = y.len();

    // Rank-compress predictions.
    let mut sorted = yhat.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let rank = |v: f64| sorted.partition_point(|&s| s < v); // 0-based dense rank

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| y[i].partial_cmp(&y[j]).unwrap());

    let mut tree = Fenwick::new(sorted.len());
    let mut wins = 0u64;
    let mut ties = 0u64;
    let mut comparable = 0u64;
    let mut i = 0;
    while i < n {
        // One group of tied true values: query all before inserting any, so
        // pairs inside the group never count.
        let mut j = i;
        while j < n && y[order[j]] == y[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            let r = rank(yhat[idx]);
            wins += tree.prefix(r) as u64; // inserted predictions strictly below
            ties += tree.at(r) as u64;
            comparable += i as u64; // everything inserted has strictly smaller y
        }
        for &idx in &order[i..j] {
            tree.add(rank(yhat[idx]));
        }
        i = j;
    }
    if comparable == 0 {
        return Err(Error::Metric { name: "ci", detail: "no pairs with distinct true values".to_string() });
    }
    Ok((wins as f64 + 0.5 * ties as f64) / comparable as f64)
}

struct Fenwick {
    tree: Vec<u32>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks strictly below `i`.
    fn prefix(&self, i: usize) -> u32 {
        let mut i = i; // exclusive: prefix of 1-based positions 1..=i covers ranks < i
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    fn at(&self, i: usize) -> u32 {
        self.prefix(i + 1) - self.prefix(i)
    }
}

/// rm2 = r2 * (1 - sqrt(|r2 - r0_2|)) with r0_2 the squared correlation
/// through the origin: k = sum(y*yh)/sum(yh^2),
/// r0_2 = 1 - sum((y - k*yh)^2)/sum((y - mean(y))^2).
pub fn rm_squared(y: &[f64], yhat: &[f64]) -> Result<f64> {
    let r = pcc(y, yhat)?;
    let r2 = r * r;
    // pcc rejected zero variance on both sides, so sum_hh > 0 and ss_tot > 0.
    let sum_hh: f64 = yhat.iter().map(|b| b * b).sum();
    let k = y.iter().zip(yhat).map(|(a, b)| a * b).sum::<f64>() / sum_hh;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|a| (a - my) * (a - my)).sum();
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - k * b) * (a - k * b)).sum();
    let r0_2 = 1.0 - ss_res / ss_tot;
    Ok(r2 * (1.0 - (r2 - r0_2).abs().sqrt()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalReport {
    pub ci: f64,
    pub rm2: f64,
    pub pcc: f64,
    pub mse: f64,
    pub n: usize,
}

impl EvalReport {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<EvalReport> {
        Ok(EvalReport {
            ci: concordance_index(y, yhat)?,
            rm2: rm_squared(y, yhat)?,
            pcc: pcc(y, yhat)?,
            mse: mse(y, yhat)?,
            n: y.len(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Fixed-width table over labeled reports (one row per fold, say).
pub fn table(rows: &[(String, EvalReport)]) -> String {
    let mut out = format!("{:<12} {:>6} {:>9} {:>9} {:>9} {:>9}\n", "split", "n", "mse", "pcc", "ci", "rm2");
    for (label, r) in rows {
        out.push_str(&format!(
            "{:<12} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
            label, r.n, r.mse, r.pcc, r.ci, r.rm2
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::{stream, StreamRng};

    // Frozen outputs of a literal one-pass transcription of each formula
    // (computed once in a separate script, not by this code).
    const ORACLE_Y: [f64; 8] = [7.0, 5.3, 6.1, 8.4, 5.9, 7.7, 6.5, 5.1];
    const ORACLE_YH: [f64; 8] = [6.6, 5.9, 6.3, 7.9, 6.2, 7.1, 6.0, 5.6];
    const ORACLE_PCC: f64 = 0.9504383376195111;
    const ORACLE_MSE: f64 = 0.2200000000000002;
    const ORACLE_RM2: f64 = 0.6353398526755463;
    const ORACLE_CI: f64 = 0.9285714285714286;

    fn brute_force_ci(y: &[f64], yhat: &[f64]) -> Option<f64> {
        let mut num = 0.0;
        let mut cnt = 0u64;
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] > y[j] {
                    cnt += 1;
                    if yhat[i] > yhat[j] {
                        num += 1.0;
                    } else if yhat[i] == yhat[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (cnt > 0).then(|| num / cnt as f64)
    }

    #[test]
    fn matches_independent_transcription_on_fixed_vectors() {
        assert!((pcc(&ORACLE_Y, &ORACLE_YH).unwrap() - ORACLE_PCC).abs() < 1e-12);
        assert!((mse(&ORACLE_Y, &ORACLE_YH).unwrap() - ORACLE_MSE).abs() < 1e-12);
        assert!((rm_squared(&ORACLE_Y, &ORACLE_YH).unwrap() - ORACLE_RM2).abs() < 1e-12);
        assert_eq!(concordance_index(&ORACLE_Y, &ORACLE_YH).unwrap(), ORACLE_CI);
    }

    #[test]
    fn perfect_predictions_saturate_every_metric() {
        let y = [1.0, 2.0, 3.0, 4.5, 0.5];
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert!((pcc(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(concordance_index(&y, &y).unwrap(), 1.0);
        assert!((rm_squared(&y, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcc_is_affine_invariant_and_mse_matches_arithmetic() {
        let y = [1.0, 2.0, 3.0];
        let scaled: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pcc(&y, &scaled).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(mse(&y, &[1.0, 2.0, 5.0]).unwrap(), 4.0 / 3.0);
    }

    #[test]
    fn ci_scores_orderings_and_predicted_ties() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(concordance_index(&y, &y).unwrap(), 1.0);
        assert_eq!(concordance_index(&y, &rev).unwrap(), 0.0);
        // All predictions equal: every comparable pair gets half credit.
        assert_eq!(concordance_index(&y, &[5.0; 4]).unwrap(), 0.5);
    }

    #[test]
    fn ci_excludes_pairs_with_tied_true_values() {
        // y ties at 1.0: only the (2.0 vs 1.0) pairs count, both ordered
        // correctly, so the discordant pair inside the tie group is ignored.
        let y = [1.0, 1.0, 2.0];
        let yhat = [9.0, 3.0, 11.0];
        assert_eq!(concordance_index(&y, &yhat).unwrap(), 1.0);
        assert!(matches!(
            concordance_index(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::Metric { name: "ci", .. })
        ));
    }

    #[test]
    fn ci_agrees_with_brute_force_on_random_sets() {
        let rng = StreamRng::new(0xc1);
        for set in 0..30 {
            let n = 3 + (rng.u64(stream("ci-n"), set) % 40) as usize;
            let mut y = Vec::with_capacity(n);
            let mut yh = Vec::with_capacity(n);
            for i in 0..n {
                // Coarse grid so both true and predicted ties actually occur.
                y.push((rng.uniform(stream("ci-y"), set * 1000 + i as u64) * 8.0).round() / 2.0);
                yh.push((rng.uniform(stream("ci-yh"), set * 1000 + i as u64) * 8.0).round() / 2.0);
            }
            match brute_force_ci(&y, &yh) {
                Some(want) => assert_eq!(concordance_index(&y, &yh).unwrap(), want, "set {set}"),
                None => assert!(concordance_index(&y, &yh).is_err(), "set {set}"),
            }
        }
    }

    #[test]
    fn ci_is_invariant_under_monotone_transforms_of_predictions() {
        let rng = StreamRng::new(0xc2);
        let n = 60;
        let y: Vec<f64> = (0..n).map(|i| rng.normal(stream("mt-y"), i)).collect();
        let yh: Vec<f64> = (0..n).map(|i| rng.normal(stream("mt-yh"), i)).collect();
        let base = concordance_index(&y, &yh).unwrap();
        let exp: Vec<f64> = yh.iter().map(|v| v.exp()).collect();
        let affine: Vec<f64> = yh.iter().map(|v| 0.3 * v - 7.0).collect();
        assert_eq!(concordance_index(&y, &exp).unwrap(), base);
        assert_eq!(concordance_index(&y, &affine).unwrap(), base);
    }

    #[test]
    fn metrics_are_order_invariant_over_permutations() {
        let rng = StreamRng::new(0xc3);
        let n = 50;
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (rng.normal(stream("pm-y"), i), rng.normal(stream("pm-yh"), i)))
            .collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let yh: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let before = EvalReport::compute(&y, &yh).unwrap();
        rng.shuffle(stream("pm-shuffle"), &mut pairs);
        let y2: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let yh2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let after = EvalReport::compute(&y2, &yh2).unwrap();
        assert_eq!(before.ci, after.ci); // integer counting: exactly equal
        assert!((before.mse - after.mse).abs() < 1e-12);
        assert!((before.pcc - after.pcc).abs() < 1e-12);
        assert!((before.rm2 - after.rm2).abs() < 1e-12);
    }

    #[test]
    fn rm2_never_exceeds_squared_correlation() {
        let rng = StreamRng::new(0xc4);
        for set in 0..20 {
            let n = 10 + (set as usize % 5) * 7;
            let y: Vec<f64> =
                (0..n).map(|i| rng.normal(stream("rm-y"), set * 100 + i as u64) + 6.0).collect();
            let yh: Vec<f64> = y
                .iter()
                .enumerate()
                .map(|(i, v)| v + rng.normal(stream("rm-e"), set * 100 + i as u64))
                .collect();
            let r = pcc(&y, &yh).unwrap();
            assert!(rm_squared(&y, &yh).unwrap() <= r * r + 1e-15, "set {set}");
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected_not_propagated() {
        assert!(matches!(pcc(&[1.0, 1.0], &[2.0, 3.0]), Err(Error::Metric { name: "pcc", .. })));
        assert!(matches!(pcc(&[1.0], &[2.0]), Err(Error::Metric { .. })));
        assert!(matches!(mse(&[1.0, 2.0], &[1.0]), Err(Error::Metric { .. })));
        assert!(matches!(mse(&[f64::NAN], &[1.0]), Err(Error::Metric { .. })));
        assert!(matches!(
            concordance_index(&[1.0, 2.0], &[f64::INFINITY, 0.0]),
            Err(Error::Metric { .. })
        ));
        assert!(matches!(
            rm_squared(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]),
            Err(Error::Metric { name: "pcc", .. })
        ));
    }

    #[test]
    fn report_serializes_to_json_and_table() {
        let r = EvalReport::compute(&ORACLE_Y, &ORACLE_YH).unwrap();
        let json = r.to_json();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["n"], 8);
        assert!((parsed["ci"].as_f64().unwrap() - ORACLE_CI).abs() < 1e-15);
        let t = table(&[("fold-1".to_string(), r)]);
        let mut lines = t.lines();
        let header = lines.next().unwrap();
        let row = lines.next().unwrap();
        assert_eq!(header.len(), row.len()); // fixed width means aligned columns
        assert!(row.starts_with("fold-1"));
        assert!(row.contains("0.9286"));
    }
}
