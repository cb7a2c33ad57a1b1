use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use super::{MetricError, TgospaParams, TgospaResult, TrajectorySet};

/// Size limits of [`tgospa_bruteforce`].
pub const BRUTE_FORCE_MAX_TRAJECTORIES: usize = 4;
pub const BRUTE_FORCE_MAX_TIME: usize = 5;

/// Per-step costs shared by both solvers.
struct Instance {
    nx: usize,
    ny: usize,
    window: usize,
    x_alive: Vec<Vec<bool>>,
    y_alive: Vec<Vec<bool>>,
    /// `dist[k][i][j]`: `d^p` between alive states, `None` otherwise.
    dist: Vec<Vec<Vec<Option<f64>>>>,
    /// `c^p`
    cp: f64,
    /// `gamma^p`
    gp: f64,
}

impl Instance {
    fn new(
        x: &TrajectorySet,
        y: &TrajectorySet,
        params: &TgospaParams,
    ) -> Result<Self, MetricError> {
        params.validate()?;
        if x.window != y.window {
            return Err(MetricError::WindowMismatch(x.window, y.window));
        }
        x.validate()?;
        y.validate()?;
        let window = x.window;
        let alive = |set: &TrajectorySet| -> Vec<Vec<bool>> {
            set.trajectories
                .iter()
                .map(|tr| (1..=window).map(|t| tr.state_at(t).is_some()).collect())
                .collect()
        };
        let dist = (1..=window)
            .map(|t| {
                x.trajectories
                    .iter()
                    .map(|a| {
                        y.trajectories
                            .iter()
                            .map(|b| match (a.state_at(t), b.state_at(t)) {
                                (Some(sa), Some(sb)) => {
                                    Some(params.base.distance(sa, sb).powf(params.p))
                                }
                                _ => None,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            nx: x.trajectories.len(),
            ny: y.trajectories.len(),
            window,
            x_alive: alive(x),
            y_alive: alive(y),
            dist,
            cp: params.c.powf(params.p),
            gp: params.gamma.powf(params.p),
        })
    }

    /// LP cost of putting weight on `(i, j)` at step `k`; `nx`/`ny` index the
    /// dummy row and column.
    fn cost(&self, k: usize, i: usize, j: usize) -> f64 {
        let half = self.cp / 2.0;
        let xa = i < self.nx && self.x_alive[i][k];
        let ya = j < self.ny && self.y_alive[j][k];
        if i < self.nx && j < self.ny {
            match self.dist[k][i][j] {
                Some(d) => d.min(self.cp),
                None if xa || ya => half,
                None => 0.0,
            }
        } else if xa || ya {
            half
        } else {
            0.0
        }
    }

    /// Whether `(i, j)` counts as a localization pair at step `k`.
    fn properly_assigned(&self, k: usize, i: usize, j: usize) -> Option<f64> {
        self.dist[k][i][j].filter(|&d| d < self.cp)
    }

    fn finish(&self, loc: f64, miss: f64, false_: f64, switch: f64, p: f64) -> TgospaResult {
        let sum = loc + miss + false_ + switch;
        TgospaResult {
            total: if p == 1.0 { sum } else { sum.powf(1.0 / p) },
            loc,
            miss,
            false_,
            switch,
        }
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// TGOSPA distance via its linear-programming relaxation over per-step
/// assignment weights with switching slacks.
pub fn tgospa(
    x: &TrajectorySet,
    y: &TrajectorySet,
    params: &TgospaParams,
) -> Result<TgospaResult, MetricError> {
    let inst = Instance::new(x, y, params)?;
    let (nx, ny, window) = (inst.nx, inst.ny, inst.window);
    if nx + ny == 0 {
        return Ok(TgospaResult::default());
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut w: Vec<Vec<Vec<Option<Variable>>>> = vec![vec![vec![None; ny + 1]; nx + 1]; window];
    for (k, wk) in w.iter_mut().enumerate() {
        for i in 0..=nx {
            for j in 0..=ny {
                if i < nx || j < ny {
                    wk[i][j] = Some(lp.add_var(inst.cost(k, i, j), (0.0, 1.0)));
                }
            }
        }
        for i in 0..nx {
            let row: Vec<(Variable, f64)> = (0..=ny).map(|j| (wk[i][j].unwrap(), 1.0)).collect();
            lp.add_constraint(row, ComparisonOp::Eq, 1.0);
        }
        for j in 0..ny {
            let col: Vec<(Variable, f64)> = (0..=nx).map(|i| (wk[i][j].unwrap(), 1.0)).collect();
            lp.add_constraint(col, ComparisonOp::Eq, 1.0);
        }
    }
    for k in 0..window.saturating_sub(1) {
        for i in 0..nx {
            for j in 0..ny {
                let e = lp.add_var(inst.gp / 2.0, (0.0, f64::INFINITY));
                let (a, b) = (w[k][i][j].unwrap(), w[k + 1][i][j].unwrap());
                lp.add_constraint([(e, 1.0), (a, -1.0), (b, 1.0)], ComparisonOp::Ge, 0.0);
                lp.add_constraint([(e, 1.0), (a, 1.0), (b, -1.0)], ComparisonOp::Ge, 0.0);
            }
        }
    }
    let solution = lp
        .solve()
        .map_err(|e| MetricError::Solver(e.to_string()))?
        .into_solution()
        .map_err(|_| MetricError::Solver("interrupted".into()))?;
    let value = |k: usize, i: usize, j: usize| snap(solution.var_value(w[k][i][j].unwrap()));

    let half = inst.cp / 2.0;
    let (mut loc, mut miss, mut false_, mut switch) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..window {
        let mut x_matched = vec![0.0; nx];
        let mut y_matched = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                if let Some(d) = inst.properly_assigned(k, i, j) {
                    let wij = value(k, i, j);
                    loc += wij * d;
                    x_matched[i] += wij;
                    y_matched[j] += wij;
                }
                if k + 1 < window {
                    switch += inst.gp / 2.0 * (value(k, i, j) - value(k + 1, i, j)).abs();
                }
            }
        }
        for i in (0..nx).filter(|&i| inst.x_alive[i][k]) {
            miss += half * (1.0 - x_matched[i]);
        }
        for j in (0..ny).filter(|&j| inst.y_alive[j][k]) {
            false_ += half * (1.0 - y_matched[j]);
        }
    }
    Ok(inst.finish(loc, miss, false_, switch, params.p))
}

/// Injective partial maps from `nx` items into `ny` slots.
fn assignment_vectors(nx: usize, ny: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(
        i: usize,
        nx: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if i == nx {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(i + 1, nx, used, cur, out);
        cur.pop();
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push(Some(j));
                rec(i + 1, nx, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, nx, &mut vec![false; ny], &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Copy, Default)]
struct Parts {
    loc: f64,
    miss: f64,
    false_: f64,
    switch: f64,
}

impl Parts {
    fn sum(&self) -> f64 {
        self.loc + self.miss + self.false_ + self.switch
    }
}

/// Exact minimum over every sequence of assignment vectors, by dynamic
/// programming over the steps (the switching cost couples adjacent steps
/// only).
pub fn tgospa_bruteforce(
    x: &TrajectorySet,
    y: &TrajectorySet,
    params: &TgospaParams,
) -> Result<TgospaResult, MetricError> {
    let inst = Instance::new(x, y, params)?;
    let (nx, ny, window) = (inst.nx, inst.ny, inst.window);
    if nx > BRUTE_FORCE_MAX_TRAJECTORIES
        || ny > BRUTE_FORCE_MAX_TRAJECTORIES
        || window > BRUTE_FORCE_MAX_TIME
    {
        return Err(MetricError::TooLarge(format!(
            "{nx} vs {ny} trajectories over {window} steps"
        )));
    }
    if window == 0 {
        return Ok(TgospaResult::default());
    }
    let vectors = assignment_vectors(nx, ny);
    let half = inst.cp / 2.0;
    let step_parts = |k: usize, pi: &[Option<usize>]| -> Parts {
        let mut parts = Parts::default();
        let mut y_used = vec![false; ny];
        for (i, a) in pi.iter().enumerate() {
            match *a {
                Some(j) => {
                    y_used[j] = true;
                    match (
                        inst.properly_assigned(k, i, j),
                        inst.x_alive[i][k],
                        inst.y_alive[j][k],
                    ) {
                        (Some(d), _, _) => parts.loc += d,
                        (None, xa, ya) => {
                            if xa {
                                parts.miss += half;
                            }
                            if ya {
                                parts.false_ += half;
                            }
                        }
                    }
                }
                None if inst.x_alive[i][k] => parts.miss += half,
                None => {}
            }
        }
        let unassigned = (0..ny)
            .filter(|&j| !y_used[j] && inst.y_alive[j][k])
            .count();
        parts.false_ += half * unassigned as f64;
        parts
    };
    let switch_cost = |a: &[Option<usize>], b: &[Option<usize>]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(u, v)| match (u, v) {
                (Some(p), Some(q)) if p != q => inst.gp,
                (Some(_), None) | (None, Some(_)) => inst.gp / 2.0,
                _ => 0.0,
            })
            .sum()
    };

    let mut best: Vec<Parts> = vectors.iter().map(|pi| step_parts(0, pi)).collect();
    for k in 1..window {
        let next = vectors
            .iter()
            .map(|pi| {
                let here = step_parts(k, pi);
                let mut choice: Option<Parts> = None;
                for (prev, acc) in vectors.iter().zip(&best) {
                    let s = switch_cost(prev, pi);
                    let cand = Parts {
                        loc: acc.loc + here.loc,
                        miss: acc.miss + here.miss,
                        false_: acc.false_ + here.false_,
                        switch: acc.switch + s,
                    };
                    if choice.is_none_or(|c| cand.sum() < c.sum()) {
                        choice = Some(cand);
                    }
                }
                choice.expect("at least the empty assignment")
            })
            .collect();
        best = next;
    }
    let opt = best
        .into_iter()
        .reduce(|a, b| if b.sum() < a.sum() { b } else { a })
        .expect("at least the empty assignment");
    Ok(inst.finish(opt.loc, opt.miss, opt.false_, opt.switch, params.p))
}
