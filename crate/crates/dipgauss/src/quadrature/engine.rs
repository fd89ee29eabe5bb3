//! Certified integration of a truncated Gaussian/Laplace density product over
//! a polyhedron.
//!
//! A region is a set of independent variables, each with a density and a box,
//! together with linear constraints between them. Variables linked by
//! constraints form components that are integrated separately. Within a
//! component a maximum independent set of the constraint graph is chosen as
//! the "leaves": each leaf only appears in constraints with the remaining
//! "outer" variables, so for fixed outer values its integral is a difference
//! of distribution functions. The outer variables (at most two) are
//! integrated numerically.
//!
//! The outer domain is split exactly, in rational arithmetic, along every line
//! where the integrand fails to be analytic: where two candidate limits of a
//! leaf swap roles, where a leaf's interval becomes empty, where a Laplace
//! argument crosses its mean, and along the region's own boundary. Each
//! resulting piece is a trapezoid `x in [xa, xb]`, `l(x) <= y <= u(x)` on which
//! the integrand is one analytic expression. It is mapped to a rectangle
//! through `y = l(x) + t (u(x) - l(x))` and integrated with interval Taylor
//! series and a Lagrange remainder, bisecting the widest rectangles until the
//! requested tolerance is met.

use super::interval::Iv;
use super::taylor::{cdf_series, pdf_series, Branch, Series, Space};
use super::{DensityKernel, Enclosure};
use crate::dsl::DistKind;
use crate::rational::{to_f64_down, to_f64_up, Rat};
use num_traits::{Signed, Zero};
use petgraph::unionfind::UnionFind;
use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::LazyLock;

/// Taylor order used for one outer variable.
const ORDER_1D: usize = 12;
/// Taylor order used for two outer variables.
const ORDER_2D: usize = 8;
/// Width of the initial cells in standard deviations.
const INITIAL_CELL: f64 = 1.0;
/// Maximum number of initial cells per piece and direction.
const MAX_INITIAL: f64 = 64.0;
/// Components with more variables than this use a greedy independent set.
const EXACT_MIS_LIMIT: usize = 40;

static SPACE_1D: LazyLock<Space> = LazyLock::new(|| Space::new(1, ORDER_1D));
static SPACE_2D: LazyLock<Space> = LazyLock::new(|| Space::new(2, ORDER_2D));

/// An integration variable.
#[derive(Debug, Clone)]
pub(crate) struct VarSpec {
    pub kernel: DensityKernel,
    pub mean: Rat,
    pub lo: Rat,
    pub hi: Rat,
    /// Sampling order, used to break ties deterministically.
    pub order: usize,
}

/// Linear constraint `sum c_i x_i + constant <= 0`.
#[derive(Debug, Clone)]
pub(crate) struct RatCon {
    pub coeffs: Vec<(usize, Rat)>,
    pub constant: Rat,
}

#[derive(Debug, Clone)]
pub(crate) struct Region {
    pub vars: Vec<VarSpec>,
    pub cons: Vec<RatCon>,
}

/// Counts evaluated cells against a cap.
#[derive(Debug)]
pub(crate) struct Budget {
    used: Cell<usize>,
    cap: usize,
    exceeded: Cell<bool>,
}

impl Budget {
    pub fn new(cap: usize) -> Budget {
        Budget { used: Cell::new(0), cap, exceeded: Cell::new(false) }
    }

    /// Records one evaluation; false once the cap is reached.
    fn tick(&self) -> bool {
        if self.used.get() >= self.cap {
            self.exceeded.set(true);
            return false;
        }
        self.used.set(self.used.get() + 1);
        true
    }

    fn give_up(&self) {
        self.exceeded.set(true);
    }

    pub fn exceeded(&self) -> bool {
        self.exceeded.get()
    }

    pub fn used(&self) -> usize {
        self.used.get()
    }
}

fn iv_of(r: &Rat) -> Iv {
    Enclosure::point(r.clone()).to_iv()
}

/// Encloses the integral of the region's density product.
pub(crate) fn integrate_region(region: &Region, tol: f64, budget: &Budget) -> Iv {
    let n = region.vars.len();
    let mut lo: Vec<Rat> = region.vars.iter().map(|v| v.lo.clone()).collect();
    let mut hi: Vec<Rat> = region.vars.iter().map(|v| v.hi.clone()).collect();
    let mut multi: Vec<(BTreeMap<usize, Rat>, Rat)> = Vec::new();
    for c in &region.cons {
        let mut coeffs: BTreeMap<usize, Rat> = BTreeMap::new();
        for (v, k) in &c.coeffs {
            *coeffs.entry(*v).or_insert_with(Rat::zero) += k;
        }
        coeffs.retain(|_, k| !k.is_zero());
        match coeffs.len() {
            0 => {
                if c.constant.is_positive() {
                    return Iv::ZERO;
                }
            }
            1 => {
                let (v, k) = coeffs.into_iter().next().expect("one coefficient");
                let bound = -&c.constant / &k;
                if k.is_positive() {
                    if bound < hi[v] {
                        hi[v] = bound;
                    }
                } else if bound > lo[v] {
                    lo[v] = bound;
                }
            }
            _ => multi.push((coeffs, c.constant.clone())),
        }
    }
    if (0..n).any(|v| lo[v] >= hi[v]) {
        return Iv::ZERO;
    }
    let mut uf = UnionFind::<usize>::new(n);
    let mut linked = vec![false; n];
    for (coeffs, _) in &multi {
        let first = *coeffs.keys().next().expect("non-empty");
        for v in coeffs.keys() {
            uf.union(first, *v);
            linked[*v] = true;
        }
    }
    let mut result = Iv::ONE;
    for v in (0..n).filter(|&v| !linked[v]) {
        result = result * region.vars[v].kernel.mass(iv_of(&lo[v]), iv_of(&hi[v]));
    }
    let mut groups: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for v in (0..n).filter(|&v| linked[v]) {
        groups.entry(uf.find(v)).or_default().0.push(v);
    }
    for (i, (coeffs, _)) in multi.iter().enumerate() {
        let root = uf.find(*coeffs.keys().next().expect("non-empty"));
        groups.get_mut(&root).expect("group exists").1.push(i);
    }
    if groups.is_empty() {
        return result;
    }
    let share = tol / groups.len() as f64;
    for (vars, cons) in groups.values() {
        let cons: Vec<&(BTreeMap<usize, Rat>, Rat)> = cons.iter().map(|i| &multi[*i]).collect();
        result = result * integrate_component(region, &lo, &hi, vars, &cons, share, budget);
        if result == Iv::ZERO {
            break;
        }
    }
    result
}

/// Maximum independent set of a graph given by adjacency bitmasks, preferring
/// higher-indexed vertices among optimal choices.
fn max_independent_set(adj: &[u64]) -> u64 {
    fn rec(adj: &[u64], cand: u64, cur: u64, best: &mut u64) {
        if cur.count_ones() + cand.count_ones() <= best.count_ones() {
            return;
        }
        if cand == 0 {
            *best = cur;
            return;
        }
        let v = 63 - cand.leading_zeros() as usize;
        let bit = 1u64 << v;
        rec(adj, cand & !adj[v] & !bit, cur | bit, best);
        rec(adj, cand & !bit, cur, best);
    }
    let n = adj.len();
    let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut best = 0u64;
    rec(adj, all, 0, &mut best);
    best
}

fn greedy_independent_set(adj: &[Vec<bool>]) -> Vec<bool> {
    let n = adj.len();
    let mut chosen = vec![false; n];
    let mut blocked = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|v| (adj[*v].iter().filter(|x| **x).count(), std::cmp::Reverse(*v)));
    for v in order {
        if !blocked[v] {
            chosen[v] = true;
            for u in 0..n {
                if adj[v][u] {
                    blocked[u] = true;
                }
            }
        }
    }
    chosen
}

/// Affine function `a[0] x + a[1] y + c` of the outer variables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Aff {
    a: [Rat; 2],
    c: Rat,
}

impl Aff {
    fn constant(c: Rat) -> Aff {
        Aff { a: [Rat::zero(), Rat::zero()], c }
    }

    fn is_constant(&self) -> bool {
        self.a[0].is_zero() && self.a[1].is_zero()
    }

    fn at(&self, x: &Rat, y: &Rat) -> Rat {
        &self.a[0] * x + &self.a[1] * y + &self.c
    }

    fn sub(&self, o: &Aff) -> Aff {
        Aff { a: [&self.a[0] - &o.a[0], &self.a[1] - &o.a[1]], c: &self.c - &o.c }
    }
}

/// Numeric form of an affine function.
#[derive(Debug, Clone, Copy)]
struct AffIv {
    a: [Iv; 2],
    c: Iv,
}

impl AffIv {
    fn of(f: &Aff) -> AffIv {
        AffIv { a: [iv_of(&f.a[0]), iv_of(&f.a[1])], c: iv_of(&f.c) }
    }
}

/// A leaf variable: its distribution and candidate limits.
#[derive(Debug, Clone)]
struct Leaf {
    kernel: DensityKernel,
    mean: Rat,
    lower: Vec<Aff>,
    upper: Vec<Aff>,
}

/// One side of a leaf's interval on a smooth piece.
#[derive(Debug, Clone)]
enum End {
    /// Distribution function value at a constant limit.
    Const(Iv),
    Form(AffIv, Branch),
}

/// Non-vertical line `y = alpha x + beta`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Line {
    alpha: Rat,
    beta: Rat,
}

impl Line {
    fn at(&self, x: &Rat) -> Rat {
        &self.alpha * x + &self.beta
    }
}

/// A piece of the outer domain on which the integrand is analytic.
#[derive(Debug, Clone)]
struct Piece {
    xa: Rat,
    xb: Rat,
    /// `y` limits (two outer variables only).
    lower: Option<(Iv, Iv)>,
    upper: Option<(Iv, Iv)>,
    x_branch: Branch,
    y_branch: Branch,
    ends: Vec<(End, End)>,
    /// Bisection scale factors for `x` and `t`.
    scale: [f64; 2],
}

struct Component<'a> {
    outer: Vec<&'a VarSpec>,
    leaves: Vec<Leaf>,
    xlim: (Rat, Rat),
    ylower: Vec<Aff>,
    yupper: Vec<Aff>,
}

fn integrate_component(
    region: &Region,
    lo: &[Rat],
    hi: &[Rat],
    vars: &[usize],
    cons: &[&(BTreeMap<usize, Rat>, Rat)],
    tol: f64,
    budget: &Budget,
) -> Iv {
    let mut vars = vars.to_vec();
    vars.sort_by_key(|v| region.vars[*v].order);
    let n = vars.len();
    let local: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut adj = vec![vec![false; n]; n];
    for (coeffs, _) in cons {
        let ids: Vec<usize> = coeffs.keys().map(|v| local[v]).collect();
        for &a in &ids {
            for &b in &ids {
                if a != b {
                    adj[a][b] = true;
                }
            }
        }
    }
    let is_leaf: Vec<bool> = if n <= EXACT_MIS_LIMIT {
        let masks: Vec<u64> =
            adj.iter().map(|row| row.iter().enumerate().filter(|(_, x)| **x).fold(0u64, |m, (j, _)| m | (1 << j))).collect();
        let set = max_independent_set(&masks);
        (0..n).map(|i| set & (1 << i) != 0).collect()
    } else {
        greedy_independent_set(&adj)
    };
    let outer_ids: Vec<usize> = (0..n).filter(|i| !is_leaf[*i]).map(|i| vars[i]).collect();
    let crude = || {
        let bound = vars.iter().fold(Iv::ONE, |acc, v| {
            acc * region.vars[*v].kernel.mass(iv_of(&lo[*v]), iv_of(&hi[*v]))
        });
        Iv { lo: 0.0, hi: bound.hi }
    };
    if outer_ids.len() > 2 || outer_ids.is_empty() {
        budget.give_up();
        return crude();
    }
    let pos: BTreeMap<usize, usize> = outer_ids.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut leaves: BTreeMap<usize, Leaf> = BTreeMap::new();
    for (i, v) in vars.iter().enumerate() {
        if is_leaf[i] {
            let spec = &region.vars[*v];
            leaves.insert(
                *v,
                Leaf {
                    kernel: spec.kernel,
                    mean: spec.mean.clone(),
                    lower: vec![Aff::constant(lo[*v].clone())],
                    upper: vec![Aff::constant(hi[*v].clone())],
                },
            );
        }
    }
    let mut ylower = vec![];
    let mut yupper = vec![];
    if outer_ids.len() == 2 {
        ylower.push(Aff::constant(lo[outer_ids[1]].clone()));
        yupper.push(Aff::constant(hi[outer_ids[1]].clone()));
    }
    for (coeffs, constant) in cons {
        let leaf = coeffs.keys().find(|v| leaves.contains_key(v)).copied();
        let target = leaf.unwrap_or(outer_ids[outer_ids.len() - 1]);
        let ct = &coeffs[&target];
        let mut form = Aff::constant(-constant / ct);
        for (v, k) in coeffs.iter() {
            if *v != target {
                form.a[pos[v]] = -k / ct;
            }
        }
        let is_upper = ct.is_positive();
        match leaf {
            Some(l) => {
                let leaf = leaves.get_mut(&l).expect("leaf");
                let list = if is_upper { &mut leaf.upper } else { &mut leaf.lower };
                if !list.contains(&form) {
                    list.push(form);
                }
            }
            None => {
                let list = if is_upper { &mut yupper } else { &mut ylower };
                if !list.contains(&form) {
                    list.push(form);
                }
            }
        }
    }
    let comp = Component {
        outer: outer_ids.iter().map(|v| &region.vars[*v]).collect(),
        leaves: leaves.into_values().collect(),
        xlim: (lo[outer_ids[0]].clone(), hi[outer_ids[0]].clone()),
        ylower,
        yupper,
    };
    let pieces = decompose(&comp);
    integrate_pieces(&comp, &pieces, tol, budget)
}

/// Lines and points where the integrand of a component is not analytic.
fn kink_lines(comp: &Component) -> Vec<Aff> {
    let mut out: Vec<Aff> = Vec::new();
    let mut push = |f: Aff| {
        if f.is_constant() {
            return;
        }
        // Normalise so that the first non-zero coefficient is one.
        let lead = if f.a[0].is_zero() { f.a[1].clone() } else { f.a[0].clone() };
        let g = Aff { a: [&f.a[0] / &lead, &f.a[1] / &lead], c: &f.c / &lead };
        if !out.contains(&g) {
            out.push(g);
        }
    };
    let x = Aff { a: [Rat::from_integer(1.into()), Rat::zero()], c: Rat::zero() };
    let y = Aff { a: [Rat::zero(), Rat::from_integer(1.into())], c: Rat::zero() };
    push(x.sub(&Aff::constant(comp.xlim.0.clone())));
    push(x.sub(&Aff::constant(comp.xlim.1.clone())));
    if comp.outer[0].kernel.kind == DistKind::Laplace {
        push(x.sub(&Aff::constant(comp.outer[0].mean.clone())));
    }
    if comp.outer.len() == 2 {
        for f in comp.ylower.iter().chain(&comp.yupper) {
            push(y.sub(f));
        }
        if comp.outer[1].kernel.kind == DistKind::Laplace {
            push(y.sub(&Aff::constant(comp.outer[1].mean.clone())));
        }
    }
    for leaf in &comp.leaves {
        let all: Vec<&Aff> = leaf.lower.iter().chain(&leaf.upper).collect();
        for (i, f) in all.iter().enumerate() {
            for g in &all[i + 1..] {
                push(f.sub(g));
            }
            if leaf.kernel.kind == DistKind::Laplace {
                push(f.sub(&Aff::constant(leaf.mean.clone())));
            }
        }
    }
    out
}

fn decompose(comp: &Component) -> Vec<Piece> {
    let lines = kink_lines(comp);
    let (x0, x1) = comp.xlim.clone();
    let mut breaks: Vec<Rat> = vec![x0.clone(), x1.clone()];
    let mut slanted: Vec<Line> = Vec::new();
    for l in &lines {
        if l.a[1].is_zero() {
            breaks.push(-&l.c / &l.a[0]);
        } else {
            let line = Line { alpha: -&l.a[0] / &l.a[1], beta: -&l.c / &l.a[1] };
            if !slanted.contains(&line) {
                slanted.push(line);
            }
        }
    }
    for (i, p) in slanted.iter().enumerate() {
        for q in &slanted[i + 1..] {
            if p.alpha != q.alpha {
                breaks.push((&q.beta - &p.beta) / (&p.alpha - &q.alpha));
            }
        }
    }
    breaks.retain(|b| *b >= x0 && *b <= x1);
    breaks.sort();
    breaks.dedup();
    let two = Rat::from_integer(2.into());
    let mut pieces = Vec::new();
    for w in breaks.windows(2) {
        let (xa, xb) = (&w[0], &w[1]);
        let xm = (xa + xb) / &two;
        if comp.outer.len() == 1 {
            if let Some(p) = make_piece(comp, xa, xb, &xm, &Rat::zero(), None) {
                pieces.push(p);
            }
            continue;
        }
        let mut order: Vec<&Line> = slanted.iter().collect();
        order.sort_by_key(|p| p.at(&xm));
        for pair in order.windows(2) {
            let (l, u) = (pair[0], pair[1]);
            let ym = (l.at(&xm) + u.at(&xm)) / &two;
            if let Some(p) = make_piece(comp, xa, xb, &xm, &ym, Some((l, u))) {
                pieces.push(p);
            }
        }
    }
    pieces
}

fn branch_at(k: &DensityKernel, mean: &Rat, v: &Rat) -> Branch {
    match k.kind {
        DistKind::Gaussian => Branch::Whole,
        DistKind::Laplace => {
            if v <= mean {
                Branch::Left
            } else {
                Branch::Right
            }
        }
    }
}

/// Builds the analytic description of the piece containing `(xm, ym)`, or
/// `None` when the integrand vanishes there.
fn make_piece(comp: &Component, xa: &Rat, xb: &Rat, xm: &Rat, ym: &Rat, ylines: Option<(&Line, &Line)>) -> Option<Piece> {
    if comp.outer.len() == 2
        && (comp.ylower.iter().any(|f| f.at(xm, ym) >= *ym) || comp.yupper.iter().any(|f| f.at(xm, ym) <= *ym))
    {
        return None;
    }
    let x_spec = comp.outer[0];
    let x_branch = branch_at(&x_spec.kernel, &x_spec.mean, xm);
    let y_branch = match comp.outer.get(1) {
        Some(s) => branch_at(&s.kernel, &s.mean, ym),
        None => Branch::Whole,
    };
    let mut ends = Vec::with_capacity(comp.leaves.len());
    let mut sx = 1.0 / x_spec.kernel.std_dev().lo;
    let mut sy = comp.outer.get(1).map_or(0.0, |s| 1.0 / s.kernel.std_dev().lo);
    for leaf in &comp.leaves {
        let l = leaf.lower.iter().max_by(|f, g| f.at(xm, ym).cmp(&g.at(xm, ym))).expect("box limit");
        let u = leaf.upper.iter().min_by(|f, g| f.at(xm, ym).cmp(&g.at(xm, ym))).expect("box limit");
        let (lv, uv) = (l.at(xm, ym), u.at(xm, ym));
        if uv <= lv {
            return None;
        }
        let end = |f: &Aff, v: &Rat| {
            if f.is_constant() {
                End::Const(leaf.kernel.cdf(iv_of(&f.c)))
            } else {
                End::Form(AffIv::of(f), branch_at(&leaf.kernel, &leaf.mean, v))
            }
        };
        let inv_sd = 1.0 / leaf.kernel.std_dev().lo;
        for f in [l, u] {
            sx = sx.max(to_f64_up(&f.a[0].abs()) * inv_sd);
            sy = sy.max(to_f64_up(&f.a[1].abs()) * inv_sd);
        }
        ends.push((end(l, &lv), end(u, &uv)));
    }
    let line_iv = |l: &Line| (iv_of(&l.alpha), iv_of(&l.beta));
    Some(Piece {
        xa: xa.clone(),
        xb: xb.clone(),
        lower: ylines.map(|(l, _)| line_iv(l)),
        upper: ylines.map(|(_, u)| line_iv(u)),
        x_branch,
        y_branch,
        ends,
        scale: [sx, sy],
    })
}

/// Rectangle of the parameter domain of a piece.
#[derive(Debug, Clone)]
struct Rect {
    piece: usize,
    x: (f64, f64),
    t: (f64, f64),
    value: Iv,
}

impl Rect {
    fn width(&self) -> f64 {
        self.value.width()
    }
}

impl PartialEq for Rect {
    fn eq(&self, o: &Rect) -> bool {
        self.width() == o.width()
    }
}

impl Eq for Rect {}

impl PartialOrd for Rect {
    fn partial_cmp(&self, o: &Rect) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Rect {
    fn cmp(&self, o: &Rect) -> Ordering {
        self.width().total_cmp(&o.width())
    }
}

fn integrate_pieces(comp: &Component, pieces: &[Piece], tol: f64, budget: &Budget) -> Iv {
    let hmax_x = comp.outer[0].kernel.hmax;
    let mut fixed = Iv::ZERO;
    let mut heap = BinaryHeap::new();
    for (i, p) in pieces.iter().enumerate() {
        let xa = to_f64_up(&p.xa);
        let xb = to_f64_down(&p.xb);
        // Slivers at the rational endpoints are bounded by the outer density.
        let outside = |a: f64, b: f64| Iv { lo: 0.0, hi: (Iv::point(b) - Iv::point(a)).hi * hmax_x * (1.0 + 1e-12) };
        if xa >= xb {
            fixed = fixed + outside(to_f64_down(&p.xa), to_f64_up(&p.xb));
            continue;
        }
        fixed = fixed + outside(to_f64_down(&p.xa), xa) + outside(xb, to_f64_up(&p.xb));
        // Start from cells of about one standard deviation.
        let nx = ((xb - xa) * p.scale[0] / INITIAL_CELL).ceil().clamp(1.0, MAX_INITIAL) as usize;
        let nt = if comp.outer.len() == 2 {
            let h = rect_height(p, (xa, xb), (0.0, 1.0));
            (h * p.scale[1] / INITIAL_CELL).ceil().clamp(1.0, MAX_INITIAL) as usize
        } else {
            1
        };
        let grid = |a: f64, b: f64, n: usize, k: usize| if k == n { b } else { a + (b - a) * (k as f64 / n as f64) };
        for ix in 0..nx {
            let x = (grid(xa, xb, nx, ix), grid(xa, xb, nx, ix + 1));
            for it in 0..nt {
                let t = (grid(0.0, 1.0, nt, it), grid(0.0, 1.0, nt, it + 1));
                if !budget.tick() {
                    return crude_total(fixed);
                }
                let value = eval_rect(comp, p, x, t);
                heap.push(Rect { piece: i, x, t, value });
            }
        }
    }
    let exact_width = |heap: &BinaryHeap<Rect>| heap.iter().map(|r| r.width()).sum::<f64>() + fixed.width();
    let mut width = exact_width(&heap);
    loop {
        if width <= tol || !width.is_finite() {
            // The running sum drifts once huge early widths cancel out.
            width = exact_width(&heap);
            if width <= tol {
                break;
            }
        }
        let Some(r) = heap.pop() else { break };
        let p = &pieces[r.piece];
        let split_x = comp.outer.len() == 1 || {
            let h = rect_height(p, r.x, r.t);
            (r.x.1 - r.x.0) * p.scale[0] >= h * p.scale[1]
        };
        let halves = if split_x {
            let m = 0.5 * (r.x.0 + r.x.1);
            if !(m > r.x.0 && m < r.x.1) {
                heap.push(r);
                break;
            }
            [((r.x.0, m), r.t), ((m, r.x.1), r.t)]
        } else {
            let m = 0.5 * (r.t.0 + r.t.1);
            if !(m > r.t.0 && m < r.t.1) {
                heap.push(r);
                break;
            }
            [(r.x, (r.t.0, m)), (r.x, (m, r.t.1))]
        };
        if !budget.tick() || !budget.tick() {
            heap.push(r);
            break;
        }
        width -= r.width();
        for (x, t) in halves {
            let value = eval_rect(comp, p, x, t);
            width += value.width();
            heap.push(Rect { piece: r.piece, x, t, value });
        }
    }
    heap.iter().fold(fixed, |acc, r| acc + r.value)
}

fn crude_total(fixed: Iv) -> Iv {
    Iv { lo: fixed.lo, hi: f64::max(fixed.hi, 1.0) }
}

/// Lines `y = alpha x + beta` bounding a rectangle of the parameter domain
/// from below and above.
fn cell_lines(p: &Piece, t: (f64, f64)) -> Option<[(Iv, Iv); 2]> {
    let ((la, lb), (ua, ub)) = (p.lower?, p.upper?);
    let at = |t: f64| {
        let t = Iv::point(t);
        (la + t * (ua - la), lb + t * (ub - lb))
    };
    Some([at(t.0), at(t.1)])
}

/// Largest vertical extent of a cell, attained at one of its ends since the
/// bounding lines are affine.
fn cell_height(lines: [(Iv, Iv); 2], xc: f64, s0: Iv, s1: Iv) -> f64 {
    let [(ba, bb), (ta, tb)] = lines;
    let x = Iv::point(xc);
    let at = |s: Iv| ((ta - ba) * (x + s) + (tb - bb)).abs().hi;
    at(s0).max(at(s1))
}

/// Largest vertical extent of a rectangle of the parameter domain.
fn rect_height(p: &Piece, x: (f64, f64), t: (f64, f64)) -> f64 {
    match cell_lines(p, t) {
        Some(lines) => cell_height(lines, 0.0, Iv::point(x.0), Iv::point(x.1)),
        None => 0.0,
    }
}

/// Encloses the integral of a piece's integrand over one cell: the
/// trapezoid between the lines at parameters `t.0` and `t.1` for `x` in
/// `x.0..x.1`.
fn eval_rect(comp: &Component, p: &Piece, x: (f64, f64), t: (f64, f64)) -> Iv {
    let lines = cell_lines(p, t);
    let sp: &Space = if lines.is_some() { &SPACE_2D } else { &SPACE_1D };
    let xc = 0.5 * (x.0 + x.1);
    let xbox = Iv::new(x.0, x.1);
    let s0 = Iv::point(x.0) - Iv::point(xc);
    let s1 = Iv::point(x.1) - Iv::point(xc);
    let (yc, ybox) = match lines {
        Some([(ba, bb), (ta, tb)]) => {
            let mid = (ba * xc + bb + ta * xc + tb) * 0.5;
            (mid.mid(), (ba * xbox + bb).hull(ta * xbox + tb))
        }
        None => (0.0, Iv::ZERO),
    };
    let center = integrand(comp, p, sp, Iv::point(xc), Iv::point(yc));
    let boxed = integrand(comp, p, sp, xbox, ybox);
    let (plain, absolute) = moments(sp, s0, s1, xc, yc, lines, ybox);
    let v = sp.integrate(&center, &boxed, &plain, &absolute);
    Iv { lo: v.lo.max(0.0), hi: v.hi.max(0.0) }
}

/// Powers `v^0..=v^n`.
fn powers(v: Iv, n: usize) -> Vec<Iv> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = Iv::ONE;
    for _ in 0..=n {
        out.push(acc);
        acc = acc * v;
    }
    out
}

/// `int_{s0}^{s1} s^k ds` for `k = 0..=n`, with `s0 <= 0 <= s1`, and the
/// same integrals of `|s|^k`.
fn line_moments(s0: Iv, s1: Iv, n: usize) -> (Vec<Iv>, Vec<Iv>) {
    let p0 = powers(s0, n + 1);
    let p1 = powers(s1, n + 1);
    let mut plain = Vec::with_capacity(n + 1);
    let mut absolute = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let d = Iv::point((k + 1) as f64);
        plain.push((p1[k + 1] - p0[k + 1]) / d);
        // |s|^k integrates to (s1^(k+1) + |s0|^(k+1)) / (k+1).
        absolute.push((p1[k + 1] + p0[k + 1].abs()) / d);
    }
    (plain, absolute)
}

/// Moments `int s^a r^b` of the cell around `(xc, yc)` for every monomial,
/// and upper bounds on the moments of `|s^a r^b|`.
fn moments(
    sp: &Space,
    s0: Iv,
    s1: Iv,
    xc: f64,
    yc: f64,
    lines: Option<[(Iv, Iv); 2]>,
    ybox: Iv,
) -> (Vec<Iv>, Vec<Iv>) {
    let k = sp.order;
    let s0 = Iv { lo: s0.lo, hi: s0.hi.min(0.0) };
    let s1 = Iv { lo: s1.lo.max(0.0), hi: s1.hi };
    let Some(lines) = lines else {
        let (plain, absolute) = line_moments(s0, s1, k);
        return (
            sp.exps.iter().map(|e| plain[e[0] as usize]).collect(),
            sp.exps.iter().map(|e| absolute[e[0] as usize]).collect(),
        );
    };
    let (sx, sx_abs) = line_moments(s0, s1, 2 * k + 1);
    let r0 = Iv::point(ybox.lo) - Iv::point(yc);
    let r1 = Iv::point(ybox.hi) - Iv::point(yc);
    let rmax = r0.abs().max(r1.abs());
    let height = Iv { lo: 0.0, hi: cell_height(lines, xc, s0, s1) };
    let rpow = powers(rmax, k);
    // Offsets of the bounding lines: top(s) - yc = alpha s + gamma.
    let offsets: Vec<(Vec<Iv>, Vec<Iv>)> = lines
        .iter()
        .map(|(alpha, beta)| {
            let gamma = *alpha * xc + *beta - Iv::point(yc);
            (powers(*alpha, k + 1), powers(gamma, k + 1))
        })
        .collect();
    let binom = binomials(k + 1);
    let mut plain = Vec::with_capacity(sp.len());
    let mut absolute = Vec::with_capacity(sp.len());
    for e in &sp.exps {
        let (a, b) = (e[0] as usize, e[1] as usize);
        // int s^a [(top - yc)^(b+1) - (bottom - yc)^(b+1)] / (b+1) ds
        let n = b + 1;
        let mut acc = Iv::ZERO;
        for (sign, (ap, gp)) in [(-1.0, &offsets[0]), (1.0, &offsets[1])] {
            let mut part = Iv::ZERO;
            for j in 0..=n {
                part = part + Iv::point(binom[n][j]) * ap[j] * gp[n - j] * sx[a + j];
            }
            acc = acc + part * sign;
        }
        plain.push(acc / Iv::point(n as f64));
        // The cell has vertical extent at most `height` and |r| <= rmax.
        absolute.push(sx_abs[a] * height * rpow[b]);
    }
    (plain, absolute)
}

fn binomials(n: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![1.0]];
    for i in 1..=n {
        let prev = &rows[i - 1];
        let mut row = vec![1.0; i + 1];
        for j in 1..i {
            row[j] = prev[j - 1] + prev[j];
        }
        rows.push(row);
    }
    rows
}

/// Taylor series of the integrand in `(x - xb, y - yb)`.
fn integrand(comp: &Component, p: &Piece, sp: &Space, xb: Iv, yb: Iv) -> Series {
    let order = sp.order;
    let xs = comp.outer[0];
    let mut f = sp.compose_linear(&pdf_series(&xs.kernel, p.x_branch, xb, order), Iv::ONE, Iv::ZERO);
    if sp.dim == 2 {
        let ys = comp.outer[1];
        let hy = sp.compose_linear(&pdf_series(&ys.kernel, p.y_branch, yb, order), Iv::ZERO, Iv::ONE);
        f = sp.mul(&f, &hy);
    }
    for (leaf, (lo_end, hi_end)) in comp.leaves.iter().zip(&p.ends) {
        let eval = |e: &End| -> Series {
            match e {
                End::Const(v) => sp.constant(*v),
                End::Form(a, branch) => {
                    let mut base = a.a[0] * xb + a.c;
                    if sp.dim == 2 {
                        base = base + a.a[1] * yb;
                    }
                    sp.compose_linear(&cdf_series(&leaf.kernel, *branch, base, order), a.a[0], a.a[1])
                }
            }
        };
        let g = sp.sub(&eval(hi_end), &eval(lo_end));
        f = sp.mul(&f, &g);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::DistSpec;

    fn r(n: i64) -> Rat {
        Rat::from_integer(n.into())
    }

    fn var(kind: DistKind, mean: i64, a: i64, order: usize) -> VarSpec {
        let d = DistSpec { kind, mean: r(mean), a: r(a) };
        let k = DensityKernel::new(&d, &r(1));
        let w = 40 * a;
        VarSpec { kernel: k, mean: r(mean), lo: r(mean - w), hi: r(mean + w), order }
    }

    #[test]
    fn independent_set_prefers_later_vertices() {
        // Path 0 - 1 - 2: the best set is {0, 2}.
        let adj = [0b010, 0b101, 0b010];
        assert_eq!(max_independent_set(&adj), 0b101);
        // Single edge: the later vertex is kept.
        assert_eq!(max_independent_set(&[0b10, 0b01]), 0b10);
    }

    #[test]
    fn symmetric_comparison_is_one_half() {
        // P(x <= y) for iid standard Gaussians.
        let region = Region {
            vars: vec![var(DistKind::Gaussian, 0, 1, 0), var(DistKind::Gaussian, 0, 1, 1)],
            cons: vec![RatCon { coeffs: vec![(0, r(1)), (1, r(-1))], constant: r(0) }],
        };
        let budget = Budget::new(100_000);
        let v = integrate_region(&region, 1e-10, &budget);
        assert!(v.lo <= 0.5 && 0.5 <= v.hi, "{v:?}");
        assert!(v.width() < 1e-9, "{v:?}");
    }

    #[test]
    fn three_way_ordering_is_one_sixth() {
        // P(x0 < x1 < x2) for iid Laplace variables.
        let region = Region {
            vars: (0..3).map(|i| var(DistKind::Laplace, 0, 1, i)).collect(),
            cons: vec![
                RatCon { coeffs: vec![(0, r(1)), (1, r(-1))], constant: r(0) },
                RatCon { coeffs: vec![(1, r(1)), (2, r(-1))], constant: r(0) },
            ],
        };
        let budget = Budget::new(100_000);
        let v = integrate_region(&region, 1e-9, &budget);
        let truth = 1.0 / 6.0;
        assert!(v.lo <= truth && truth <= v.hi, "{v:?}");
        assert!(v.width() < 1e-8, "{v:?} after {} cells", budget.used());
    }

    #[test]
    fn two_outer_variables() {
        // P(x0 < x2, x1 < x2, x0 < x1) = 1/6 needs two outer variables
        // because every pair is constrained.
        let region = Region {
            vars: (0..3).map(|i| var(DistKind::Gaussian, 0, 1, i)).collect(),
            cons: vec![
                RatCon { coeffs: vec![(0, r(1)), (2, r(-1))], constant: r(0) },
                RatCon { coeffs: vec![(1, r(1)), (2, r(-1))], constant: r(0) },
                RatCon { coeffs: vec![(0, r(1)), (1, r(-1))], constant: r(0) },
            ],
        };
        let budget = Budget::new(200_000);
        let v = integrate_region(&region, 1e-8, &budget);
        let truth = 1.0 / 6.0;
        assert!(v.lo <= truth && truth <= v.hi, "{v:?}");
        assert!(v.width() < 1e-7, "{v:?} after {} cells", budget.used());
    }
}
