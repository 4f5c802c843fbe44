//! Kantorovich-Rubinstein (Wasserstein-1) distances between normalized
//! discrete measures: an exact network-simplex solver for small instances
//! and a log-domain Sinkhorn approximation for larger ones.
//!
//! The ground cost is Euclidean on `(p, q)` with a configurable diagonal
//! weighting of the momentum and position blocks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nbody::EmpiricalMeasure;
use crate::statefield::density::GridDensity;

/// Cost-matrix size cap for the exact solver.
pub const EXACT_SIZE_CAP: usize = 1_000_000;

/// Mass-sum tolerance for a valid normalized measure.
pub const MASS_TOL: f64 = 1e-12;

/// Weighted point masses on single-particle phase space `R^{2d}`: points
/// store momentum components first, then position.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub dim: usize,
    /// Flat support storage, `2*dim` per atom.
    pub points: Vec<f64>,
    pub mass: Vec<f64>,
}

/// Diagonal weighting of the ground metric between the momentum and
/// position blocks; `1:1` by default since the metric family is otherwise
/// unspecified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundCost {
    pub alpha_p: f64,
    pub alpha_q: f64,
}

impl Default for GroundCost {
    fn default() -> Self {
        GroundCost { alpha_p: 1.0, alpha_q: 1.0 }
    }
}

impl GroundCost {
    #[inline]
    pub fn distance(&self, dim: usize, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..dim {
            let d = self.alpha_p * (x[k] - y[k]);
            s += d * d;
        }
        for k in dim..2 * dim {
            let d = self.alpha_q * (x[k] - y[k]);
            s += d * d;
        }
        s.sqrt()
    }
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Dimension(dim));
        }
        if points.len() != mass.len() * 2 * dim {
            return Err(Error::Measure(format!(
                "{} coordinates inconsistent with {} atoms in dim {dim}",
                points.len(),
                mass.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::Measure("NaN coordinate in support".into()));
        }
        if mass.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Measure("masses must be finite and >= 0".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Measure(format!("masses sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { dim, points, mass })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * 2 * self.dim..(i + 1) * 2 * self.dim]
    }

    /// Atoms of an empirical measure as a discrete measure.
    pub fn from_empirical(mu: &EmpiricalMeasure) -> Result<Self> {
        let n = mu.n_atoms();
        DiscreteMeasure::new(mu.dim, mu.atoms.clone(), vec![mu.weight; n])
    }

    /// Cell centers with cell masses; cells below `drop_below` (relative to
    /// the max cell mass) are dropped and the rest renormalized, which
    /// commutes with the density normalization.
    pub fn from_grid_density(f: &GridDensity, drop_below: f64) -> Result<Self> {
        let d = f.grid.dim;
        let vol = f.grid.cell_volume();
        let npc = f.grid.n_p_cells();
        let max_mass = f.values.iter().cloned().fold(0.0, f64::max) * vol;
        let floor = drop_below * max_mass;
        let mut points = Vec::new();
        let mut mass = Vec::new();
        for (idx, &v) in f.values.iter().enumerate() {
            let m = v * vol;
            if m <= floor {
                continue;
            }
            let qc = f.grid.q_center(idx / npc);
            let pc = f.grid.p_center(idx % npc);
            points.extend_from_slice(&pc[..d]);
            points.extend_from_slice(&qc[..d]);
            mass.push(m);
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Measure("grid density has no mass".into()));
        }
        for m in mass.iter_mut() {
            *m /= total;
        }
        DiscreteMeasure::new(d, points, mass)
    }

    /// Multinomial resampling down to at most `max_atoms` equally weighted
    /// atoms; identity when already small enough.
    pub fn subsample(&self, max_atoms: usize, rng: &mut impl Rng) -> Self {
        if self.len() <= max_atoms {
            return self.clone();
        }
        let cdf: Vec<f64> = self
            .mass
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let total = *cdf.last().unwrap();
        let mut points = Vec::with_capacity(max_atoms * 2 * self.dim);
        for _ in 0..max_atoms {
            let u: f64 = rng.gen::<f64>() * total;
            let i = cdf.partition_point(|&c| c < u).min(self.len() - 1);
            points.extend_from_slice(self.point(i));
        }
        DiscreteMeasure {
            dim: self.dim,
            points,
            mass: vec![1.0 / max_atoms as f64; max_atoms],
        }
    }

    /// Largest pairwise-coordinate extent, a scale for regularization.
    pub fn diameter_with(&self, other: &Self, cost: &GroundCost) -> f64 {
        let mut lo = vec![f64::INFINITY; 2 * self.dim];
        let mut hi = vec![f64::NEG_INFINITY; 2 * self.dim];
        for m in [self, other] {
            for i in 0..m.len() {
                for (k, &x) in m.point(i).iter().enumerate() {
                    lo[k] = lo[k].min(x);
                    hi[k] = hi[k].max(x);
                }
            }
        }
        cost.distance(self.dim, &hi, &lo)
    }
}

/// Exact optimal-transport value between two normalized discrete measures
/// for the weighted Euclidean ground cost, via the transportation network
/// simplex. Errs if `|mu| * |nu|` exceeds [`EXACT_SIZE_CAP`].
pub fn kr_distance_exact(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &GroundCost,
) -> Result<f64> {
    if mu.dim != nu.dim {
        return Err(Error::Dimension(nu.dim));
    }
    let size = mu.len() * nu.len();
    if size > EXACT_SIZE_CAP {
        return Err(Error::TransportSizeCap { size, cap: EXACT_SIZE_CAP });
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::Measure("empty measure".into()));
    }
    let (m, n) = (mu.len(), nu.len());
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let xi = mu.point(i);
        for j in 0..n {
            c[i * n + j] = cost.distance(mu.dim, xi, nu.point(j));
        }
    }
    let solver = simplex::Transportation::new(&mu.mass, &nu.mass, &c);
    solver.solve()
}

/// Entropic-regularized transport value by log-domain Sinkhorn iteration.
/// The returned value is the transported cost of the regularized plan,
/// which upper-bounds the exact distance and converges to it as
/// `reg -> 0`.
pub fn kr_distance_entropic(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &GroundCost,
    reg: f64,
    max_iter: usize,
    tol: f64,
) -> Result<f64> {
    if mu.dim != nu.dim {
        return Err(Error::Dimension(nu.dim));
    }
    if !(reg > 0.0) {
        return Err(Error::Domain(format!("regularization must be positive, got {reg}")));
    }
    // drop zero-mass atoms (log domain)
    let keep = |m: &DiscreteMeasure| -> (Vec<usize>, Vec<f64>) {
        let idx: Vec<usize> = (0..m.len()).filter(|&i| m.mass[i] > 0.0).collect();
        let w: Vec<f64> = idx.iter().map(|&i| m.mass[i]).collect();
        (idx, w)
    };
    let (ia, a) = keep(mu);
    let (ib, b) = keep(nu);
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        return Err(Error::Measure("empty measure".into()));
    }
    let mut cmat = vec![0.0; m * n];
    for (r, &i) in ia.iter().enumerate() {
        for (s, &j) in ib.iter().enumerate() {
            cmat[r * n + s] = cost.distance(mu.dim, mu.point(i), nu.point(j));
        }
    }
    let la: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut lu = vec![0.0; m];
    let mut lv = vec![0.0; n];
    let lse = |terms: &mut dyn Iterator<Item = f64>| -> f64 {
        let vals: Vec<f64> = terms.collect();
        let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return mx;
        }
        mx + vals.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
    };

    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        for i in 0..m {
            let row = &cmat[i * n..(i + 1) * n];
            lu[i] = la[i] - lse(&mut (0..n).map(|j| lv[j] - row[j] / reg));
        }
        for j in 0..n {
            lv[j] = lb[j] - lse(&mut (0..m).map(|i| lu[i] - cmat[i * n + j] / reg));
        }
        // column marginals are exact right after the lv update; the row
        // marginals carry the remaining infeasibility
        residual = 0.0;
        for i in 0..m {
            let row = lse(&mut (0..n).map(|j| lu[i] + lv[j] - cmat[i * n + j] / reg));
            residual += (row.exp() - a[i]).abs();
        }
        if residual < tol {
            let mut value = 0.0;
            for i in 0..m {
                for j in 0..n {
                    let lp = lu[i] + lv[j] - cmat[i * n + j] / reg;
                    if lp > -600.0 {
                        value += lp.exp() * cmat[i * n + j];
                    }
                }
            }
            return Ok(value);
        }
    }
    Err(Error::SinkhornNonConvergence { iterations: max_iter, residual })
}

mod simplex {
    //! Transportation-problem network simplex with an artificial root basis
    //! and block pricing.

    use crate::error::{Error, Result};

    const NONE: usize = usize::MAX;

    pub struct Transportation<'a> {
        supply: &'a [f64],
        demand: &'a [f64],
        cost: &'a [f64],
        m: usize,
        n: usize,
    }

    struct Tree {
        parent: Vec<usize>,
        // arc from node to parent? true: node -> parent, false: parent -> node
        up: Vec<bool>,
        flow: Vec<f64>,
        pi: Vec<f64>,
        depth: Vec<usize>,
        children: Vec<Vec<usize>>,
    }

    impl<'a> Transportation<'a> {
        pub fn new(supply: &'a [f64], demand: &'a [f64], cost: &'a [f64]) -> Self {
            let (m, n) = (supply.len(), demand.len());
            assert_eq!(cost.len(), m * n);
            Transportation { supply, demand, cost, m, n }
        }

        pub fn solve(&self) -> Result<f64> {
            let (m, n) = (self.m, self.n);
            let root = m + n;
            let max_c = self.cost.iter().cloned().fold(0.0, f64::max);
            let big = (max_c + 1.0) * 4.0 * (m + n) as f64;

            let mut t = Tree {
                parent: vec![root; m + n + 1],
                up: vec![false; m + n + 1],
                flow: vec![0.0; m + n + 1],
                pi: vec![0.0; m + n + 1],
                depth: vec![1; m + n + 1],
                children: vec![Vec::new(); m + n + 1],
            };
            t.parent[root] = NONE;
            t.depth[root] = 0;
            t.children[root] = (0..m + n).collect();
            for i in 0..m {
                t.up[i] = true; // artificial arc i -> root
                t.flow[i] = self.supply[i];
                t.pi[i] = big;
            }
            for j in 0..n {
                t.up[m + j] = false; // artificial arc root -> sink
                t.flow[m + j] = self.demand[j];
                t.pi[m + j] = -big;
            }

            let n_arcs = m * n;
            let block = ((n_arcs as f64).sqrt() as usize).clamp(16, 4096);
            let eps = 1e-11 * (max_c + 1.0);
            let mut cursor = 0usize;
            // generous anti-cycling budget; typical runs use a tiny fraction
            let max_pivots = 1000 + 500 * (m + n);

            for _pivot in 0..max_pivots {
                // entering arc: best within blocks, starting at the cursor
                let mut entering = NONE;
                let mut best = -eps;
                let mut scanned = 0;
                while scanned < n_arcs {
                    let hi = (cursor + block).min(cursor + n_arcs - scanned);
                    for a in cursor..hi {
                        let a = a % n_arcs;
                        let (i, j) = (a / n, a % n);
                        let rc = self.cost[a] - t.pi[i] + t.pi[m + j];
                        if rc < best {
                            best = rc;
                            entering = a;
                        }
                    }
                    scanned += hi - cursor;
                    cursor = hi % n_arcs;
                    if entering != NONE {
                        break;
                    }
                }
                if entering == NONE {
                    return self.finish(&t, big);
                }
                let (u, v) = (entering / n, m + entering % n);
                self.pivot(&mut t, u, v, self.cost[entering])?;
            }
            Err(Error::Measure(
                "network simplex exceeded its pivot budget (degenerate cycling?)".into(),
            ))
        }

        /// Push flow around the cycle closed by arc `u -> v`, remove the
        /// blocking arc, re-root the detached subtree, shift potentials.
        fn pivot(&self, t: &mut Tree, u: usize, v: usize, c_enter: f64) -> Result<()> {
            // collect paths to the join (LCA)
            let (mut x, mut y) = (u, v);
            let mut path_u = Vec::new(); // nodes on the u side (child endpoints)
            let mut path_v = Vec::new();
            while x != y {
                if t.depth[x] >= t.depth[y] {
                    path_u.push(x);
                    x = t.parent[x];
                } else {
                    path_v.push(y);
                    y = t.parent[y];
                }
            }

            // bottleneck over arcs whose flow decreases: on the u side the
            // return flow runs parent -> node, on the v side node -> parent
            let mut theta = f64::INFINITY;
            let mut leave = NONE;
            for &x in &path_u {
                if t.up[x] && t.flow[x] < theta {
                    theta = t.flow[x];
                    leave = x;
                }
            }
            for &x in &path_v {
                if !t.up[x] && t.flow[x] < theta {
                    theta = t.flow[x];
                    leave = x;
                }
            }
            if leave == NONE {
                // a directed negative cycle needs a negative arc cost;
                // distances are nonnegative, so this is numerical breakage
                return Err(Error::Measure(
                    "network simplex found an unbounded cycle".into(),
                ));
            }

            for &x in &path_u {
                t.flow[x] += if t.up[x] { -theta } else { theta };
            }
            for &x in &path_v {
                t.flow[x] += if t.up[x] { theta } else { -theta };
            }

            // the subtree hanging below `leave` detaches; the entering-arc
            // endpoint inside it becomes its new root, and every potential
            // in it shifts by the entering arc's reduced cost (sign by side)
            let rc = c_enter - t.pi[u] + t.pi[v];
            let subtree = collect_subtree(t, leave);
            let mut inside = vec![false; t.parent.len()];
            for &s in &subtree {
                inside[s] = true;
            }
            let (new_root, attach_to, delta, enter_up) = if inside[u] {
                (u, v, rc, true) // arc u -> v with u below: pi_u = pi_v + c
            } else {
                (v, u, -rc, false) // v below: pi_v = pi_u - c
            };
            for &s in &subtree {
                t.pi[s] += delta;
            }

            // chain from the new root up to the leaving edge's child node
            let mut chain = vec![new_root];
            let mut node = new_root;
            while node != leave {
                node = t.parent[node];
                chain.push(node);
            }
            remove_child(t, t.parent[leave], leave);
            rebuild_chain(t, &chain);

            t.parent[new_root] = attach_to;
            t.up[new_root] = enter_up;
            t.flow[new_root] = theta;
            t.children[attach_to].push(new_root);
            refresh_depths(t, new_root);
            Ok(())
        }

        fn finish(&self, t: &Tree, big: f64) -> Result<f64> {
            let (m, n) = (self.m, self.n);
            let root = m + n;
            let mass_scale: f64 = self.supply.iter().sum();
            let mut total = 0.0;
            for x in 0..m + n {
                if t.flow[x] < -1e-9 * mass_scale {
                    return Err(Error::Measure(format!(
                        "network simplex produced negative flow {}",
                        t.flow[x]
                    )));
                }
                if t.parent[x] == root {
                    // artificial arc: must carry ~no flow at optimality
                    if t.flow[x] > 1e-9 * mass_scale {
                        return Err(Error::Measure(
                            "network simplex left flow on an artificial arc".into(),
                        ));
                    }
                    continue;
                }
                // real tree arc between x and parent
                let (i, j) = if x < m { (x, t.parent[x] - m) } else { (t.parent[x], x - m) };
                total += t.flow[x] * self.cost[i * n + j];
            }
            let _ = big;
            Ok(total)
        }
    }

    fn collect_subtree(t: &Tree, root: usize) -> Vec<usize> {
        let mut out = vec![root];
        let mut stack = vec![root];
        while let Some(x) = stack.pop() {
            for &c in &t.children[x] {
                out.push(c);
                stack.push(c);
            }
        }
        out
    }

    fn remove_child(t: &mut Tree, parent: usize, child: usize) {
        if parent == NONE || child == NONE {
            return;
        }
        if let Some(pos) = t.children[parent].iter().position(|&c| c == child) {
            t.children[parent].swap_remove(pos);
        }
    }

    /// Reverse the parent chain `[new_root, ..., leave]`: after the call,
    /// `chain[w+1]` is a child of `chain[w]`, with arc direction and flow
    /// carried over from the old orientation.
    fn rebuild_chain(t: &mut Tree, chain: &[usize]) {
        // save old edge data (edge between chain[w] and chain[w+1] was the
        // pred arc of chain[w])
        let saved: Vec<(bool, f64)> = chain[..chain.len() - 1]
            .iter()
            .map(|&x| (t.up[x], t.flow[x]))
            .collect();
        for w in 0..chain.len() - 1 {
            let lower = chain[w];
            let upper = chain[w + 1];
            remove_child(t, upper, lower);
            t.parent[upper] = lower;
            t.children[lower].push(upper);
            // direction flips relative to the new child (upper)
            t.up[upper] = !saved[w].0;
            t.flow[upper] = saved[w].1;
        }
    }

    fn refresh_depths(t: &mut Tree, root: usize) {
        let base = t.depth[t.parent[root]];
        let mut stack = vec![(root, base + 1)];
        while let Some((x, d)) = stack.pop() {
            t.depth[x] = d;
            for &c in &t.children[x] {
                stack.push((c, d + 1));
            }
        }
    }
}
