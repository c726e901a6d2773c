//! Reference implementations used only by tests. None of these call into the
//! code paths they check beyond reading graph structure.

#![allow(dead_code, clippy::needless_range_loop)]

use colrel::topology::ConnectivityGraph;
use colrel::weights::RelayWeights;
use colrel::ObjectiveEnsemble;

/// `S(p, A)` straight from the triple sum over `(i, l, j ∈ N_il)`, with the
/// common neighborhood built from plain set membership.
pub fn brute_force_objective(g: &ConnectivityGraph<f64>, a: &RelayWeights<f64>) -> f64 {
    let n = g.n();
    let p = g.p();
    let closed = |i: usize| -> Vec<usize> {
        let mut v = g.neighborhood(i).unwrap().to_vec();
        v.push(i);
        v
    };
    let mut total = 0.0;
    for i in 0..n {
        for l in 0..n {
            let ci = closed(i);
            let cl = closed(l);
            for j in 0..n {
                if ci.contains(&j) && cl.contains(&j) {
                    total += p[j] * (1.0 - p[j]) * a.get(j, i) * a.get(j, l);
                }
            }
        }
    }
    total
}

/// Euclidean projection of `y` onto `{x ≥ 0, Σ w_k x_k = 1}` (all `w_k > 0`),
/// by sorting the breakpoints `y_k / w_k`.
pub fn project_weighted_simplex(y: &[f64], w: &[f64]) -> Vec<f64> {
    let m = y.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| (y[b] / w[b]).partial_cmp(&(y[a] / w[a])).unwrap());
    let mut num = 0.0;
    let mut den = 0.0;
    let mut theta = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        num += w[idx] * y[idx];
        den += w[idx] * w[idx];
        let t = (num - 1.0) / den;
        let next = order.get(k + 1).map(|&q| y[q] / w[q]);
        if next.is_none_or(|bp| t >= bp) {
            theta = t;
            break;
        }
    }
    y.iter().zip(w).map(|(&yk, &wk)| (yk - theta * wk).max(0.0)).collect()
}

/// `max_{s ∈ C} ⟨∇f(x), x - s⟩` over a product of weighted simplices; an
/// upper bound on `f(x) - f*` for convex `f`.
fn frank_wolfe_gap(blocks: &[(Vec<usize>, Vec<f64>)], g: &[f64], x: &[f64]) -> f64 {
    blocks
        .iter()
        .map(|(idx, w)| {
            let inner: f64 = idx.iter().map(|&k| g[k] * x[k]).sum();
            let best = idx.iter().zip(w).map(|(&k, &wk)| g[k] / wk).fold(f64::INFINITY, f64::min);
            inner - best
        })
        .sum()
}

/// Accelerated projected gradient on a convex quadratic with a product of
/// weighted-simplex constraints. `grad` writes the gradient; `blocks` lists
/// (variable indices, constraint weights) per block.
fn fista(
    x0: Vec<f64>,
    lipschitz: f64,
    blocks: &[(Vec<usize>, Vec<f64>)],
    objective: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64], &mut [f64]),
    max_iter: usize,
) -> Vec<f64> {
    let project = |z: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        for (idx, w) in blocks {
            let y: Vec<f64> = idx.iter().map(|&k| z[k]).collect();
            for (&k, v) in idx.iter().zip(project_weighted_simplex(&y, w)) {
                out[k] = v;
            }
        }
        out
    };
    let step = 1.0 / lipschitz;
    let mut x = project(&x0);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut g = vec![0.0; x.len()];
    let mut fx = objective(&x);
    for iter in 0..max_iter {
        if iter % 20 == 0 {
            // Frank-Wolfe gap: certified upper bound on f(x) - f*
            grad(&x, &mut g);
            let gap = frank_wolfe_gap(blocks, &g, &x);
            if gap <= 1e-9 * fx.abs().max(1e-300) {
                break;
            }
        }
        grad(&y, &mut g);
        let z: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let x_next = project(&z);
        let f_next = objective(&x_next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if f_next > fx {
            if t == 1.0 {
                // a plain projected-gradient step from x no longer descends
                break;
            }
            // adaptive restart
            y = x.clone();
            t = 1.0;
            continue;
        }
        y = x_next
            .iter()
            .zip(&x)
            .map(|(&xn, &xo)| xn + (t - 1.0) / t_next * (xn - xo))
            .collect();
        x = x_next;
        fx = f_next;
        t = t_next;
    }
    x
}

/// Column subproblem `min Σ v_j a_j² + 2 Σ v_j β_j a_j` over
/// `{a ≥ 0, Σ p_j a_j = 1}` with `v_j = p_j (1 - p_j)`, all `p_j ∈ (0, 1)`.
pub fn column_qp_oracle(beta: &[f64], p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let v: Vec<f64> = p.iter().map(|&q| q * (1.0 - q)).collect();
    let lip = 2.0 * v.iter().cloned().fold(0.0, f64::max);
    let blocks = vec![((0..m).collect::<Vec<_>>(), p.to_vec())];
    let x0 = vec![1.0; m];
    let obj = |a: &[f64]| (0..m).map(|j| v[j] * (a[j] * a[j] + 2.0 * beta[j] * a[j])).sum::<f64>();
    let grad = |a: &[f64], g: &mut [f64]| {
        for j in 0..m {
            g[j] = 2.0 * v[j] * (a[j] + beta[j]);
        }
    };
    fista(x0, lip, &blocks, obj, grad, 200_000)
}

/// Minimizes `S(p, A)` jointly over all columns. Every closed neighborhood
/// must contain some `p_j > 0`; members with `p_j = 0` stay at zero.
/// Returns the objective at the final iterate and its duality gap, so the
/// optimum lies in `[value - gap, value]`.
pub fn joint_objective_oracle(g: &ConnectivityGraph<f64>) -> (f64, f64) {
    let n = g.n();
    let p = g.p().to_vec();
    // variable list: (relayer j, source i)
    let mut vars = Vec::new();
    let mut blocks = Vec::new();
    for i in 0..n {
        let mut idx = Vec::new();
        let mut w = Vec::new();
        let mut members = g.neighborhood(i).unwrap().to_vec();
        members.push(i);
        for j in members {
            if p[j] > 0.0 {
                idx.push(vars.len());
                w.push(p[j]);
                vars.push((j, i));
            }
        }
        blocks.push((idx, w));
    }
    let v: Vec<f64> = p.iter().map(|&q| q * (1.0 - q)).collect();
    let row_sums = |x: &[f64]| {
        let mut s = vec![0.0; n];
        for (k, &(j, _)) in vars.iter().enumerate() {
            s[j] += x[k];
        }
        s
    };
    let obj = |x: &[f64]| {
        let s = row_sums(x);
        (0..n).map(|j| v[j] * s[j] * s[j]).sum::<f64>()
    };
    let grad = |x: &[f64], gr: &mut [f64]| {
        let s = row_sums(x);
        for (k, &(j, _)) in vars.iter().enumerate() {
            gr[k] = 2.0 * v[j] * s[j];
        }
    };
    let lip = (0..n)
        .map(|j| 2.0 * v[j] * (g.neighborhood(j).unwrap().len() + 1) as f64)
        .fold(1e-12, f64::max);
    let x0 = vec![1.0; vars.len()];
    let x = fista(x0, lip, &blocks, obj, grad, 400_000);
    let primal = obj(&x);

    // Lagrangian dual: for multipliers λ_i on the column constraints,
    // g(λ) = Σ λ_i - Σ_j (max_{i ∋ j} λ_i p_j)₊² / (4 v_j) ≤ S*. KKT gives
    // λ_i = 2 v_j s_j / p_j on the support; average that with weights p_j α_ji.
    let s = row_sums(&x);
    let mut lambda = vec![0.0; n];
    for (k, &(j, i)) in vars.iter().enumerate() {
        lambda[i] += x[k] * 2.0 * v[j] * s[j];
    }
    let mut dual: f64 = lambda.iter().sum();
    for j in 0..n {
        let mut best = 0.0f64;
        for &(jj, i) in &vars {
            if jj == j {
                best = best.max(lambda[i] * p[j]);
            }
        }
        if best > 0.0 {
            if v[j] == 0.0 {
                // a perfect relayer absorbs unbounded linear reward at no variance cost
                return (primal, f64::INFINITY);
            }
            dual -= best * best / (4.0 * v[j]);
        }
    }
    (primal, (primal - dual).max(0.0))
}

/// All connected graphs on `n` vertices, one per isomorphism class.
pub fn connected_graphs_up_to_isomorphism(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let perms = permutations(n);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << pairs.len()) {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &e)| e)
            .collect();
        if !is_connected(n, &edges) {
            continue;
        }
        let canon = perms
            .iter()
            .map(|perm| {
                let mut m = 0u32;
                for &(a, b) in &edges {
                    let (x, y) = (perm[a].min(perm[b]), perm[a].max(perm[b]));
                    let k = pairs.iter().position(|&e| e == (x, y)).unwrap();
                    m |= 1 << k;
                }
                m
            })
            .min()
            .unwrap();
        if seen.insert(canon) {
            out.push(edges);
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for pos in 0..n {
            let mut p = perm.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let root = find(&mut parent, 0);
    (0..n).all(|v| find(&mut parent, v) == root)
}

/// Minimizer of the average objective by plain gradient descent with step
/// `1/L`, run until `‖∇f‖ ≤ tol`.
pub fn gradient_descent_optimum(ens: &ObjectiveEnsemble, tol: f64) -> Vec<f64> {
    let d = ens.d();
    let n = ens.n();
    let step = 1.0 / ens.l_smooth();
    let mut x = vec![0.0; d];
    for _ in 0..1_000_000 {
        let mut grad = vec![0.0; d];
        for i in 0..n {
            let q = ens.curvature(i);
            let b = ens.target(i);
            for r in 0..d {
                let mut s = 0.0;
                for c in 0..d {
                    s += q[r * d + c] * (x[c] - b[c]);
                }
                grad[r] += s / n as f64;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm <= tol {
            return x;
        }
        for (xv, gv) in x.iter_mut().zip(&grad) {
            *xv -= step * gv;
        }
    }
    panic!("gradient descent did not reach tolerance {tol}");
}

/// The heterogeneous ring probabilities used throughout the experiments.
pub const RING_P: [f64; 10] = [0.1, 0.2, 0.3, 0.1, 0.1, 0.5, 0.8, 0.1, 0.2, 0.9];

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
