//! Ranking evaluation: precision/recall at k and AUC over per-user
//! candidate pools.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ingest::CandidateSet;
use crate::model::scorer::Scorer;
use crate::model::{ModelConfig, ModelParams};
use crate::types::{Real, UserId};

/// Scored candidates for one target user.
#[derive(Debug, Clone)]
pub struct UserRun {
    pub user: UserId,
    /// (candidate, score, is-true-link)
    pub candidates: Vec<(UserId, Real, bool)>,
}

/// All test users' scored pools.
#[derive(Debug, Clone, Default)]
pub struct RankingRun {
    pub users: Vec<UserRun>,
}

impl RankingRun {
    pub fn num_pairs(&self) -> usize {
        self.users.iter().map(|u| u.candidates.len()).sum()
    }
}

/// Mean P@k and R@k over users. Ranking ties break toward the lower
/// candidate id so results are deterministic.
pub fn precision_recall_at_k(run: &RankingRun, k: usize) -> (Real, Real) {
    let mut p_total = 0.0;
    let mut r_total = 0.0;
    for user in &run.users {
        let mut ranked = user.candidates.clone();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        let truths = ranked.iter().filter(|c| c.2).count();
        let hits = ranked.iter().take(k).filter(|c| c.2).count();
        p_total += hits as Real / k as Real;
        if truths > 0 {
            r_total += hits as Real / truths as Real;
        }
    }
    let q = run.users.len() as Real;
    (p_total / q, r_total / q)
}

/// Pooled AUC over every test pair: the Mann-Whitney statistic
/// `(concordant + 0.5 * ties) / (positives * negatives)`, computed with
/// average ranks.
pub fn auc(run: &RankingRun) -> Result<Real> {
    let scores: Vec<(Real, bool)> = run
        .users
        .iter()
        .flat_map(|u| u.candidates.iter().map(|&(_, s, y)| (s, y)))
        .collect();
    pooled_auc(&scores)
}

/// AUC from a flat (score, label) list.
pub fn pooled_auc(scores: &[(Real, bool)]) -> Result<Real> {
    let n_pos = scores.iter().filter(|(_, y)| *y).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid(format!(
            "degenerate ranking run: {n_pos} positives, {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .0
            .partial_cmp(&scores[b].0)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].0 == scores[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as Real / 2.0;
        for &idx in &order[i..j] {
            if scores[idx].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as Real / 2.0;
    Ok(u / (n_pos as Real * n_neg as Real))
}

/// Mean per-user AUC over users whose pool has both classes; a secondary
/// reading reported alongside the pooled headline number.
pub fn per_user_auc(run: &RankingRun) -> Option<Real> {
    let mut total = 0.0;
    let mut used = 0usize;
    for user in &run.users {
        let scores: Vec<(Real, bool)> =
            user.candidates.iter().map(|&(_, s, y)| (s, y)).collect();
        if let Ok(a) = pooled_auc(&scores) {
            total += a;
            used += 1;
        }
    }
    (used > 0).then(|| total / used as Real)
}

/// The metrics document written by `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub auc: Real,
    pub auc_per_user: Option<Real>,
    pub p_at_k: Real,
    pub r_at_k: Real,
    pub k: usize,
    pub num_test_users: usize,
    pub num_pairs: usize,
}

/// Scores every candidate pool with the frozen model and computes all
/// metrics.
pub fn evaluate(
    dataset: &Dataset,
    params: &ModelParams,
    config: &ModelConfig,
    candidates: &CandidateSet,
    k: usize,
) -> Result<MetricsReport> {
    let scorer = Scorer::new(dataset, params, config)?;
    let run = score_candidates(&scorer, dataset, candidates)?;
    report_from_run(&run, k)
}

/// Builds the scored ranking run for the candidate pools.
pub fn score_candidates(
    scorer: &Scorer,
    dataset: &Dataset,
    candidates: &CandidateSet,
) -> Result<RankingRun> {
    let n = dataset.num_users() as u32;
    let mut pairs: Vec<(UserId, UserId)> = Vec::with_capacity(candidates.num_pairs());
    let mut layout: Vec<(UserId, Vec<(UserId, bool)>)> = Vec::new();
    for (&user, pool) in &candidates.pools {
        if user >= n {
            return Err(Error::UnknownUser(user.to_string()));
        }
        let mut cands: Vec<(UserId, bool)> = Vec::new();
        for &p in &pool.positives {
            cands.push((p, true));
        }
        for &neg in &pool.negatives {
            cands.push((neg, false));
        }
        for &(c, _) in &cands {
            if c >= n {
                return Err(Error::UnknownUser(c.to_string()));
            }
            pairs.push((user, c));
        }
        layout.push((user, cands));
    }
    let scores = scorer.score_all(&pairs)?;
    let mut users = Vec::with_capacity(layout.len());
    let mut off = 0;
    for (user, cands) in layout {
        let scored = cands
            .into_iter()
            .enumerate()
            .map(|(i, (c, y))| (c, scores[off + i], y))
            .collect::<Vec<_>>();
        off += scored.len();
        users.push(UserRun { user, candidates: scored });
    }
    Ok(RankingRun { users })
}

pub fn report_from_run(run: &RankingRun, k: usize) -> Result<MetricsReport> {
    let (p_at_k, r_at_k) = precision_recall_at_k(run, k);
    Ok(MetricsReport {
        auc: auc(run)?,
        auc_per_user: per_user_auc(run),
        p_at_k,
        r_at_k,
        k,
        num_test_users: run.users.len(),
        num_pairs: run.num_pairs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn run_one(cands: Vec<(UserId, Real, bool)>) -> RankingRun {
        RankingRun {
            users: vec![UserRun { user: 0, candidates: cands }],
        }
    }

    #[test]
    fn precision_recall_example() {
        // 5 positives, exactly 3 inside the top 10 by score
        let mut cands = Vec::new();
        for i in 0..3 {
            cands.push((i, 1.0 - i as Real * 0.01, true)); // ranks 1..3
        }
        for i in 0..7 {
            cands.push((10 + i, 0.8 - i as Real * 0.01, false)); // ranks 4..10
        }
        cands.push((30, 0.1, true));
        cands.push((31, 0.05, true));
        for i in 0..40 {
            cands.push((40 + i, 0.01, false));
        }
        let run = run_one(cands);
        let (p, r) = precision_recall_at_k(&run, 10);
        assert!((p - 0.3).abs() < 1e-12);
        assert!((r - 0.6).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_has_full_recall() {
        let mut cands = vec![(0, 0.9, true), (1, 0.8, true)];
        for i in 0..20 {
            cands.push((10 + i, 0.1, false));
        }
        let run = run_one(cands);
        let (_, r) = precision_recall_at_k(&run, 10);
        assert_eq!(r, 1.0);
        assert_eq!(auc(&run).unwrap(), 1.0);
    }

    #[test]
    fn auc_hand_example() {
        // positive at 0.5 between negatives at 0.4 and 0.6: 1 concordant of 2
        let run = run_one(vec![(0, 0.5, true), (1, 0.4, false), (2, 0.6, false)]);
        assert_eq!(auc(&run).unwrap(), 0.5);
    }

    #[test]
    fn all_ties_give_half() {
        let run = run_one(vec![(0, 0.3, true), (1, 0.3, false), (2, 0.3, false)]);
        assert_eq!(auc(&run).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_run_is_error() {
        let run = run_one(vec![(0, 0.3, true)]);
        assert!(auc(&run).is_err());
    }

    /// Brute-force pair-counting oracle for the pooled AUC.
    fn auc_oracle(scores: &[(Real, bool)]) -> Real {
        let mut concordant = 0.0;
        let mut total = 0.0;
        for (sp, yp) in scores.iter().filter(|(_, y)| *y) {
            for (sn, _) in scores.iter().filter(|(_, y)| !*y) {
                total += 1.0;
                if sp > sn {
                    concordant += 1.0;
                } else if sp == sn {
                    concordant += 0.5;
                }
            }
            let _ = yp;
        }
        concordant / total
    }

    /// Brute-force sort-and-count oracle for P@k / R@k.
    fn pr_oracle(run: &RankingRun, k: usize) -> (Real, Real) {
        let mut p = 0.0;
        let mut r = 0.0;
        for u in &run.users {
            let mut c = u.candidates.clone();
            c.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap()
                    .then(a.0.cmp(&b.0))
            });
            let hits = c.iter().take(k).filter(|x| x.2).count() as Real;
            let pos = c.iter().filter(|x| x.2).count() as Real;
            p += hits / k as Real;
            r += hits / pos;
        }
        (p / run.users.len() as Real, r / run.users.len() as Real)
    }

    #[test]
    fn metrics_match_brute_force_on_random_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let users = rng.gen_range(1..8);
            let mut run = RankingRun::default();
            for u in 0..users {
                let n = rng.gen_range(2..30);
                let mut cands: Vec<(UserId, Real, bool)> = (0..n)
                    .map(|i| {
                        (
                            1000 + i as u32,
                            // coarse grid to provoke ties
                            (rng.gen_range(0..12) as Real) / 12.0,
                            rng.gen_bool(0.3),
                        )
                    })
                    .collect();
                // at least one positive per user
                cands[0].2 = true;
                run.users.push(UserRun { user: u, candidates: cands });
            }
            let flat: Vec<(Real, bool)> = run
                .users
                .iter()
                .flat_map(|u| u.candidates.iter().map(|&(_, s, y)| (s, y)))
                .collect();
            if flat.iter().all(|(_, y)| *y) || flat.iter().all(|(_, y)| !*y) {
                continue;
            }
            let got = auc(&run).unwrap();
            let want = auc_oracle(&flat);
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");

            let k = rng.gen_range(1..12);
            let (gp, gr) = precision_recall_at_k(&run, k);
            let (wp, wr) = pr_oracle(&run, k);
            assert!((gp - wp).abs() < 1e-12);
            assert!((gr - wr).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scores: Vec<(Real, bool)> = (0..200)
            .map(|_| (rng.gen_range(-3.0..3.0), rng.gen_bool(0.4)))
            .collect();
        let base = pooled_auc(&scores).unwrap();
        let squashed: Vec<(Real, bool)> = scores
            .iter()
            .map(|&(s, y)| (1.0 / (1.0 + (-2.0 * s as f64).exp()) as Real, y))
            .collect();
        assert!((pooled_auc(&squashed).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn p_at_k_integer_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 10;
        let mut run = RankingRun::default();
        let mut total_hits = 0usize;
        for u in 0..6 {
            let mut cands: Vec<(UserId, Real, bool)> = (0..25)
                .map(|i| (i as u32, rng.gen_range(0.0..1.0), rng.gen_bool(0.3)))
                .collect();
            cands[0].2 = true;
            let mut sorted = cands.clone();
            sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            total_hits += sorted.iter().take(k).filter(|c| c.2).count();
            run.users.push(UserRun { user: u, candidates: cands });
        }
        let (p, _) = precision_recall_at_k(&run, k);
        let q = run.users.len();
        assert!((p * (k * q) as Real - total_hits as Real).abs() < 1e-9);
    }
}
