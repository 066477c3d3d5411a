//! Honest binary trees grown on presorted feature indices.
//!
//! Structure is learned on one half of a subsample; leaf statistics are
//! re-estimated on the other half. Splits maximize `sL^2/nL + sR^2/nR` for a
//! per-node response (plain outcomes for regression trees, gradient
//! pseudo-outcomes for causal trees).

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Training matrix in row-major layout.
pub(crate) struct Matrix<'a> {
    pub data: &'a [f64],
    pub cols: usize,
}

impl Matrix<'_> {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node<S> {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(S),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree<S> {
    pub nodes: Vec<Node<S>>,
    /// Bitset over training rows that were part of this tree's subsample.
    pub in_bag: Vec<u64>,
}

impl<S> Tree<S> {
    pub fn leaf(&self, x: &[f64]) -> &S {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf(s) => return s,
            }
        }
    }

    pub fn is_in_bag(&self, row: usize) -> bool {
        self.in_bag[row / 64] >> (row % 64) & 1 == 1
    }

}

/// What a tree learns from: the per-node response used for splitting and the
/// additive statistics kept in honest leaves.
pub(crate) trait SplitRule: Sync {
    type Stats: Clone + Default + Send;

    /// Fills `out[k]` with the response of `units[k]` for a node.
    fn node_response(&self, units: &[usize], out: &mut [f64]);
    /// Extra per-unit constraint: returns a 0/1 "treated" flag when children
    /// must contain both values, otherwise `None`.
    fn arm(&self, unit: usize) -> Option<bool>;
    fn add(&self, stats: &mut Self::Stats, unit: usize);
    fn leaf_valid(&self, stats: &Self::Stats) -> bool;
}

pub(crate) struct TreeParams {
    pub min_leaf_size: usize,
    pub mtry: usize,
    pub subsample: usize,
    pub structure: usize,
}

/// Grows one honest tree. Returns `None` when no valid root survives the
/// honest repopulation.
pub(crate) fn grow<R: SplitRule, G: Rng>(
    x: &Matrix,
    n_rows: usize,
    rule: &R,
    params: &TreeParams,
    rng: &mut G,
) -> Option<Tree<R::Stats>> {
    let sub = sample(rng, n_rows, params.subsample).into_vec();
    let (structure, honest) = sub.split_at(params.structure);
    let mut in_bag = vec![0u64; n_rows.div_ceil(64)];
    for &i in &sub {
        in_bag[i / 64] |= 1 << (i % 64);
    }

    let nodes = build_structure(x, structure, rule, params, rng);
    let pruned = repopulate(x, nodes, honest, rule)?;
    Some(Tree {
        nodes: pruned,
        in_bag,
    })
}

enum Proto {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf,
}

fn build_structure<R: SplitRule, G: Rng>(
    x: &Matrix,
    units: &[usize],
    rule: &R,
    params: &TreeParams,
    rng: &mut G,
) -> Vec<Proto> {
    let m = units.len();
    let p = x.cols;
    // Per-feature orderings of local positions; node k owns [lo, hi) in each.
    let mut sorted: Vec<Vec<u32>> = (0..p)
        .map(|f| {
            let mut v: Vec<u32> = (0..m as u32).collect();
            v.sort_by(|&a, &b| {
                x.get(units[a as usize], f)
                    .total_cmp(&x.get(units[b as usize], f))
                    .then(a.cmp(&b))
            });
            v
        })
        .collect();
    let arms: Vec<Option<bool>> = units.iter().map(|&u| rule.arm(u)).collect();
    let mut goes_left = vec![false; m];
    let mut response = vec![0.0; m];
    let mut scratch_units: Vec<usize> = Vec::with_capacity(m);
    let mut scratch_resp: Vec<f64> = Vec::with_capacity(m);
    let mut buf: Vec<u32> = Vec::with_capacity(m);

    let mut nodes = vec![Proto::Leaf];
    let mut stack = vec![(0usize, 0usize, m)];
    while let Some((node, lo, hi)) = stack.pop() {
        let n = hi - lo;
        if n < 2 * params.min_leaf_size {
            continue;
        }
        // Node response, indexed by local position.
        scratch_units.clear();
        scratch_units.extend(sorted[0][lo..hi].iter().map(|&l| units[l as usize]));
        scratch_resp.clear();
        scratch_resp.resize(n, 0.0);
        rule.node_response(&scratch_units, &mut scratch_resp);
        for (k, &l) in sorted[0][lo..hi].iter().enumerate() {
            response[l as usize] = scratch_resp[k];
        }

        let mut features: Vec<usize> = if params.mtry >= p {
            (0..p).collect()
        } else {
            sample(rng, p, params.mtry).into_vec()
        };
        features.sort_unstable();

        let total: f64 = sorted[0][lo..hi].iter().map(|&l| response[l as usize]).sum();
        let (n_arm1, n_arm0) = count_arms(&arms, &sorted[0][lo..hi]);
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let seg = &sorted[f][lo..hi];
            let mut sum_l = 0.0;
            let mut arm1_l = 0;
            let mut arm0_l = 0;
            for k in 0..n - 1 {
                let l = seg[k] as usize;
                sum_l += response[l];
                match arms[l] {
                    Some(true) => arm1_l += 1,
                    Some(false) => arm0_l += 1,
                    None => {}
                }
                let n_l = k + 1;
                let n_r = n - n_l;
                if n_l < params.min_leaf_size {
                    continue;
                }
                if n_r < params.min_leaf_size {
                    break;
                }
                let v = x.get(units[l], f);
                let v_next = x.get(units[seg[k + 1] as usize], f);
                if v == v_next {
                    continue;
                }
                if arms[l].is_some()
                    && (arm1_l == 0 || arm0_l == 0 || n_arm1 == arm1_l || n_arm0 == arm0_l)
                {
                    continue;
                }
                let sum_r = total - sum_l;
                let gain = sum_l * sum_l / n_l as f64 + sum_r * sum_r / n_r as f64 - base;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (v + v_next)));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            continue;
        };
        if gain.is_nan() || gain <= 1e-12 * (base.abs() + 1e-12) {
            continue;
        }
        for &l in &sorted[feature][lo..hi] {
            goes_left[l as usize] = x.get(units[l as usize], feature) <= threshold;
        }
        let n_left = sorted[feature][lo..hi]
            .iter()
            .filter(|&&l| goes_left[l as usize])
            .count();
        for seg_vec in sorted.iter_mut() {
            let seg = &mut seg_vec[lo..hi];
            buf.clear();
            buf.extend(seg.iter().copied().filter(|&l| goes_left[l as usize]));
            buf.extend(seg.iter().copied().filter(|&l| !goes_left[l as usize]));
            seg.copy_from_slice(&buf);
        }
        let left = nodes.len();
        nodes.push(Proto::Leaf);
        nodes.push(Proto::Leaf);
        nodes[node] = Proto::Split {
            feature,
            threshold,
            left,
            right: left + 1,
        };
        stack.push((left + 1, lo + n_left, hi));
        stack.push((left, lo, lo + n_left));
    }
    nodes
}

fn count_arms(arms: &[Option<bool>], seg: &[u32]) -> (usize, usize) {
    let mut a1 = 0;
    let mut a0 = 0;
    for &l in seg {
        match arms[l as usize] {
            Some(true) => a1 += 1,
            Some(false) => a0 += 1,
            None => {}
        }
    }
    (a1, a0)
}

/// Routes the honest units, accumulates statistics in every node and prunes
/// splits whose children cannot both serve as valid leaves.
fn repopulate<R: SplitRule>(
    x: &Matrix,
    proto: Vec<Proto>,
    honest: &[usize],
    rule: &R,
) -> Option<Vec<Node<R::Stats>>> {
    let mut stats: Vec<R::Stats> = vec![R::Stats::default(); proto.len()];
    for &u in honest {
        let mut i = 0;
        loop {
            rule.add(&mut stats[i], u);
            match proto[i] {
                Proto::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x.get(u, feature) <= threshold { left } else { right },
                Proto::Leaf => break,
            }
        }
    }

    // Post-order validity: keep a split only if both children survive.
    fn keep<R: SplitRule>(i: usize, proto: &[Proto], stats: &[R::Stats], rule: &R, kept: &mut [bool]) -> bool {
        if let Proto::Split { left, right, .. } = proto[i] {
            let l = keep(left, proto, stats, rule, kept);
            let r = keep(right, proto, stats, rule, kept);
            kept[i] = l && r;
        }
        rule.leaf_valid(&stats[i]) || kept[i]
    }
    let mut kept = vec![false; proto.len()];
    if !keep(0, &proto, &stats, rule, &mut kept) {
        return None;
    }

    let mut out: Vec<Node<R::Stats>> = Vec::new();
    fn emit<S: Clone>(i: usize, proto: &[Proto], stats: &[S], kept: &[bool], out: &mut Vec<Node<S>>) -> usize {
        let at = out.len();
        match proto[i] {
            Proto::Split {
                feature,
                threshold,
                left,
                right,
            } if kept[i] => {
                out.push(Node::Leaf(stats[i].clone()));
                let l = emit(left, proto, stats, kept, out);
                let r = emit(right, proto, stats, kept, out);
                out[at] = Node::Split {
                    feature,
                    threshold,
                    left: l,
                    right: r,
                };
            }
            _ => out.push(Node::Leaf(stats[i].clone())),
        }
        at
    }
    emit(0, &proto, &stats, &kept, &mut out);
    Some(out)
}

/// Plain regression: response is the outcome, leaves store count and sum.
pub(crate) struct Regression<'a> {
    pub y: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct MeanStats {
    pub n: f64,
    pub sum: f64,
}

impl SplitRule for Regression<'_> {
    type Stats = MeanStats;

    fn node_response(&self, units: &[usize], out: &mut [f64]) {
        for (o, &u) in out.iter_mut().zip(units) {
            *o = self.y[u];
        }
    }

    fn arm(&self, _unit: usize) -> Option<bool> {
        None
    }

    fn add(&self, s: &mut MeanStats, unit: usize) {
        s.n += 1.0;
        s.sum += self.y[unit];
    }


    fn leaf_valid(&self, s: &MeanStats) -> bool {
        s.n >= 1.0
    }
}

/// Locally centred treatment-effect splitting on residualized outcome and
/// treatment.
pub(crate) struct CausalRule<'a> {
    pub y_res: &'a [f64],
    pub w_res: &'a [f64],
    pub treated: &'a [bool],
    pub min_leaf_size: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct EffectStats {
    pub n: f64,
    pub n_treated: f64,
    pub sum_w: f64,
    pub sum_y: f64,
    pub sum_wy: f64,
    pub sum_ww: f64,
}

impl SplitRule for CausalRule<'_> {
    type Stats = EffectStats;

    fn node_response(&self, units: &[usize], out: &mut [f64]) {
        let n = units.len() as f64;
        let (mut sw, mut sy) = (0.0, 0.0);
        for &u in units {
            sw += self.w_res[u];
            sy += self.y_res[u];
        }
        let (mw, my) = (sw / n, sy / n);
        let (mut sww, mut swy) = (0.0, 0.0);
        for &u in units {
            let dw = self.w_res[u] - mw;
            sww += dw * dw;
            swy += dw * (self.y_res[u] - my);
        }
        if sww <= 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let tau = swy / sww;
        let var_w = sww / n;
        for (o, &u) in out.iter_mut().zip(units) {
            let dw = self.w_res[u] - mw;
            *o = dw * ((self.y_res[u] - my) - dw * tau) / var_w;
        }
    }

    fn arm(&self, unit: usize) -> Option<bool> {
        Some(self.treated[unit])
    }

    fn add(&self, s: &mut EffectStats, unit: usize) {
        let w = self.w_res[unit];
        let y = self.y_res[unit];
        s.n += 1.0;
        if self.treated[unit] {
            s.n_treated += 1.0;
        }
        s.sum_w += w;
        s.sum_y += y;
        s.sum_wy += w * y;
        s.sum_ww += w * w;
    }


    fn leaf_valid(&self, s: &EffectStats) -> bool {
        s.n >= self.min_leaf_size as f64 && s.n_treated >= 1.0 && s.n_treated < s.n
    }
}
