//! Slow reference implementations written directly from the definitions.
//!
//! Nothing here shares code with the library paths it is compared
//! against: matrices are `Vec<Vec<f64>>`, maps are character grids and
//! every formula is a plain loop.

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in x {
        if v > max {
            max = v;
        }
    }
    let mut e = Vec::with_capacity(x.len());
    let mut total = 0.0;
    for &v in x {
        let z = (v - max).exp();
        total += z;
        e.push(z);
    }
    e.into_iter().map(|z| z / total).collect()
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = (var + eps).sqrt();
    (0..x.len()).map(|i| gain[i] * (x[i] - mean) / sd + bias[i]).collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// `(softmax(Q·Kᵀ/√d)·V, weights)`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> (Mat, Mat) {
    let d = q[0].len() as f64;
    let mut weights = Vec::new();
    for qi in q {
        let scores: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
            .collect();
        weights.push(softmax(&scores));
    }
    let out = matmul(&weights, v);
    (out, weights)
}

/// One head's `(W_Q, W_K, W_V)`.
pub struct HeadWeights {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
}

pub fn multi_head_attention(x: &Mat, heads: &[HeadWeights], w_o: &Mat) -> (Mat, Vec<Mat>) {
    let mut concat: Mat = vec![Vec::new(); x.len()];
    let mut all = Vec::new();
    for h in heads {
        let (o, w) = attention(&matmul(x, &h.w_q), &matmul(x, &h.w_k), &matmul(x, &h.w_v));
        for (row, part) in concat.iter_mut().zip(o) {
            row.extend(part);
        }
        all.push(w);
    }
    (matmul(&concat, w_o), all)
}

/// `mean_i (Q_i − y_i)²` with `y = r + (1 − done)·γ·max Q'`.
pub fn dqn_loss(q_taken: &[f64], rewards: &[f64], done: &[bool], next_q: &[Vec<f64>], gamma: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..q_taken.len() {
        let mut best = f64::NEG_INFINITY;
        for &q in &next_q[i] {
            best = best.max(q);
        }
        let y = if done[i] { rewards[i] } else { rewards[i] + gamma * best };
        total += (q_taken[i] - y).powi(2);
    }
    total / q_taken.len() as f64
}

/// Quantile Huber penalty written case by case.
pub fn quantile_huber(u: f64, tau: f64, kappa: f64) -> f64 {
    let weight = if u < 0.0 { 1.0 - tau } else { tau };
    let l = if u.abs() <= kappa {
        u * u / 2.0
    } else {
        kappa * u.abs() - kappa * kappa / 2.0
    };
    weight * l / kappa
}

/// Mean of the penalty over all `(τ_i, τ'_j)` pairs for one transition,
/// where `u_ij = target_j − z_i`.
pub fn iqn_pair_loss(z: &[f64], taus: &[f64], targets: &[f64], kappa: f64) -> f64 {
    let mut total = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        for &tj in targets {
            total += quantile_huber(tj - zi, taus[i], kappa);
        }
    }
    total / (z.len() * targets.len()) as f64
}

/// Outcome of one step under the movement rules.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub positions: Vec<(i32, i32)>,
    pub rewards: Vec<f32>,
    /// `Some(true)` for a wall or boundary hit, `Some(false)` for an agent conflict.
    pub collisions: Vec<Option<bool>>,
    /// Index of the object each agent collected.
    pub collected: Vec<Option<usize>>,
}

/// One agent's task: symbols (`'s'` star, `'t'` triangle) and regions
/// (`0` top-left, `1` top-right, `2` bottom-left, `3` bottom-right).
pub struct Task {
    pub symbols: Vec<char>,
    pub regions: Vec<u8>,
}

/// Brute-force transition over a character grid.
///
/// Objects are `(symbol, x, y)`. A move fails when its target is a wall
/// or off the grid, when any other agent stands on the target before the
/// step, or when some other agent proposes the same target.
pub fn env_step(grid: &[&str], agents: &[(i32, i32)], objects: &[(char, i32, i32)], tasks: &[Task], moves: &[(i32, i32)]) -> StepOutcome {
    let h = grid.len() as i32;
    let w = grid[0].chars().count() as i32;
    let wall = |x: i32, y: i32| -> bool {
        if x < 0 || y < 0 || x >= w || y >= h {
            return true;
        }
        grid[y as usize].chars().nth(x as usize) == Some('#')
    };
    let region = |x: i32, y: i32| -> u8 {
        let top = y <= (h - 1) / 2;
        let left = x <= (w - 1) / 2;
        match (top, left) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        }
    };
    let n = agents.len();
    let targets: Vec<(i32, i32)> = (0..n).map(|i| (agents[i].0 + moves[i].0, agents[i].1 + moves[i].1)).collect();
    let mut outcome = StepOutcome {
        positions: agents.to_vec(),
        rewards: vec![0.0; n],
        collisions: vec![None; n],
        collected: vec![None; n],
    };
    for i in 0..n {
        let (tx, ty) = targets[i];
        if wall(tx, ty) {
            outcome.collisions[i] = Some(true);
            continue;
        }
        let mut blocked = false;
        for j in 0..n {
            if j != i && (agents[j] == targets[i] || targets[j] == targets[i]) {
                blocked = true;
            }
        }
        if blocked {
            outcome.collisions[i] = Some(false);
        }
    }
    for i in 0..n {
        if outcome.collisions[i].is_some() {
            outcome.rewards[i] = -1.0;
            continue;
        }
        outcome.positions[i] = targets[i];
        let (x, y) = targets[i];
        for (k, &(sym, ox, oy)) in objects.iter().enumerate() {
            if (ox, oy) == (x, y) && tasks[i].symbols.contains(&sym) && tasks[i].regions.contains(&region(x, y)) {
                outcome.rewards[i] = 1.0;
                outcome.collected[i] = Some(k);
                break;
            }
        }
    }
    outcome
}
