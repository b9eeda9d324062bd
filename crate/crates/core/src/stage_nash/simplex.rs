//! Dense tableau simplex for `max 1ᵀu  s.t.  A u ≤ 1, u ≥ 0` with `A > 0`.
//!
//! Bland's rule (smallest eligible index for both the entering and the
//! leaving variable) rules out cycling on degenerate problems.

const PIVOT_EPS: f64 = 1e-12;

pub(crate) struct LpSolution {
    /// primal optimum `u`
    pub primal: Vec<f64>,
    /// dual optimum `w` of `min 1ᵀw  s.t.  Aᵀ w ≥ 1, w ≥ 0`
    pub dual: Vec<f64>,
}

/// `a` is `rows × cols`, entries strictly positive. The origin is feasible and
/// the problem is bounded, so the method always terminates with an optimum.
pub(crate) fn solve_packing(a: &[Vec<f64>]) -> LpSolution {
    let rows = a.len();
    let cols = a[0].len();
    let width = cols + rows + 1;
    let mut t = vec![vec![0.0; width]; rows + 1];
    for (r, arow) in a.iter().enumerate() {
        t[r][..cols].copy_from_slice(arow);
        t[r][cols + r] = 1.0;
        t[r][width - 1] = 1.0;
    }
    // objective row holds z - 1ᵀu
    for v in t[rows][..cols].iter_mut() {
        *v = -1.0;
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    loop {
        let Some(enter) = (0..cols + rows).find(|&c| t[rows][c] < -PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            let p = t[r][enter];
            if p > PIVOT_EPS {
                let ratio = t[r][width - 1] / p;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-15
                            || (ratio <= lratio + 1e-15 && basis[r] < basis[lr])
                        {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
        }
        let (pr, _) = leave.expect("packing LP is bounded");
        pivot(&mut t, pr, enter);
        basis[pr] = enter;
    }

    let mut primal = vec![0.0; cols];
    for (r, &b) in basis.iter().enumerate() {
        if b < cols {
            primal[b] = t[r][width - 1];
        }
    }
    let dual = (0..rows).map(|r| t[rows][cols + r].max(0.0)).collect();
    LpSolution { primal, dual }
}

fn pivot(t: &mut [Vec<f64>], pr: usize, pc: usize) {
    let p = t[pr][pc];
    for v in t[pr].iter_mut() {
        *v /= p;
    }
    let prow = t[pr].clone();
    for (r, row) in t.iter_mut().enumerate() {
        if r == pr {
            continue;
        }
        let f = row[pc];
        if f != 0.0 {
            for (v, pv) in row.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            row[pc] = 0.0;
        }
    }
}
