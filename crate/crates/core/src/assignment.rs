//! Maximum-weight perfect matching on a square score matrix
//! (Hungarian algorithm, O(n³)).

/// Returns `assign` with `assign[i]` the column matched to row `i`,
/// maximizing `Σ_i score[i][assign[i]]`.
pub(crate) fn max_weight_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    if n == 0 {
        return Vec::new();
    }
    // Minimize cost = −score with the potentials formulation; 1-based
    // internally, column 0 is the virtual start.
    let cost = |i: usize, j: usize| -score[i - 1][j - 1];
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assign[matched_row[j] - 1] = j - 1;
        }
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(score: &[Vec<f64>], assign: &[usize]) -> f64 {
        assign.iter().enumerate().map(|(i, &j)| score[i][j]).sum()
    }

    fn brute_force_best(score: &[Vec<f64>]) -> f64 {
        fn go(score: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == score.len() {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for j in 0..score.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(score[row][j] + go(score, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(score, 0, &mut vec![false; score.len()])
    }

    #[test]
    fn picks_the_anti_diagonal() {
        let score = vec![vec![0.1, 0.9], vec![0.8, 0.2]];
        assert_eq!(max_weight_assignment(&score), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..6, seed in prop::collection::vec(0.0f64..1.0, 36)) {
            let score: Vec<Vec<f64>> = (0..n).map(|i| seed[i * 6..i * 6 + n].to_vec()).collect();
            let assign = max_weight_assignment(&score);
            let mut seen = assign.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert!((total(&score, &assign) - brute_force_best(&score)).abs() < 1e-12);
        }
    }
}
