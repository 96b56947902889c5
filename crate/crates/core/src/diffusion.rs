//! Per-class proposal graphs and diffusion-based score refinement.
//!
//! Within one predicted class, proposal `i` has a directed edge to every proposal `j` whose
//! objectness score is not lower than its own, weighted by how much of `i`'s mask `j` covers.
//! A fragment sitting inside a better proposal therefore pushes mass towards it, and the
//! stationary vector of the restart iteration
//!
//! ```text
//! pi[i] <- alpha * sum_j P[i][j] * pi[j] + (1 - alpha) * w[i]
//! ```
//!
//! with `w[i]` the strongest outgoing edge of `i` ends up high on fragments and exactly zero
//! on proposals that dominate their class. Scores are then decayed by `(1 - pi)^lambda`.

use std::collections::BTreeMap;

use crate::geometry::{mask_coverage, BinaryMask, BoundingBox};
use crate::features::FeatureVector;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal<S> {
    pub bbox: BoundingBox<S>,
    pub mask: BinaryMask,
    /// Class-agnostic objectness score from the proposal generator.
    pub upn_score: S,
    pub feature: FeatureVector<S>,
    pub pred_class: u32,
    /// Cosine similarity to the predicted class prototype.
    pub similarity: S,
}

/// Diffusion state for the proposals of one class. Matrices are dense row-major `n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGraph<S> {
    pub node_ids: Vec<usize>,
    pub edges: Vec<S>,
    pub prior: Vec<S>,
    pub transition: Vec<S>,
    /// Non-zero entries of each transition row as `(column, probability)`.
    rows: Vec<Vec<(usize, S)>>,
}

impl<S: Scalar> ClassGraph<S> {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    #[inline]
    pub fn edge(&self, i: usize, j: usize) -> S {
        self.edges[i * self.len() + j]
    }

    #[inline]
    pub fn transition_at(&self, i: usize, j: usize) -> S {
        self.transition[i * self.len() + j]
    }

    /// Builds a graph from an explicit edge matrix (diagonal must be zero, entries in `[0, 1]`).
    pub fn from_edges(node_ids: Vec<usize>, edges: Vec<S>) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(Error::InvalidParam("class graph needs at least one node".into()));
        }
        if edges.len() != n * n {
            return Err(Error::dims(n * n, edges.len()));
        }
        for i in 0..n {
            for j in 0..n {
                let e = edges[i * n + j];
                if !(e >= S::zero() && e <= S::one()) || (i == j && e != S::zero()) {
                    return Err(Error::InvalidParam(format!(
                        "edge ({i}, {j}) = {e} outside [0, 1] or on the diagonal"
                    )));
                }
            }
        }
        let prior: Vec<S> = (0..n)
            .map(|i| {
                edges[i * n..(i + 1) * n]
                    .iter()
                    .fold(S::zero(), |m, &e| m.max(e))
            })
            .collect();
        let mut transition = vec![S::zero(); n * n];
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let row = &edges[i * n..(i + 1) * n];
            let sum = S::total(row.iter().copied());
            let mut nz = Vec::new();
            if sum > S::zero() {
                for (j, &e) in row.iter().enumerate() {
                    if e > S::zero() {
                        let p = e / sum;
                        transition[i * n + j] = p;
                        nz.push((j, p));
                    }
                }
            }
            rows.push(nz);
        }
        Ok(Self {
            node_ids,
            edges,
            prior,
            transition,
            rows,
        })
    }
}

/// Builds the class graph over `props[members]`. All members must share `pred_class`.
///
/// `E[i][j] = 0` when `score_i > score_j`, otherwise the fraction of mask `i` covered by
/// mask `j`. Self-edges are excluded, zero rows of `E` stay zero in `P`.
pub fn build_class_graph<S: Scalar>(props: &[Proposal<S>], members: &[usize]) -> Result<ClassGraph<S>> {
    let n = members.len();
    let Some(&first) = members.first() else {
        return Err(Error::InvalidParam("class graph needs at least one node".into()));
    };
    let class = props[first].pred_class;
    if let Some(&m) = members.iter().find(|&&m| props[m].pred_class != class) {
        return Err(Error::InvalidParam(format!(
            "proposal {m} has class {} but the graph is for class {class}",
            props[m].pred_class
        )));
    }
    let mut edges = vec![S::zero(); n * n];
    for (a, &i) in members.iter().enumerate() {
        let pi = &props[i];
        for (b, &j) in members.iter().enumerate() {
            if a == b {
                continue;
            }
            let pj = &props[j];
            if pi.upn_score > pj.upn_score {
                continue;
            }
            edges[a * n + b] = mask_coverage(&pi.mask, &pj.mask)?;
        }
    }
    ClassGraph::from_edges(members.to_vec(), edges)
}

/// Convenience wrapper: graph over every proposal in `props`.
pub fn build_graph_all<S: Scalar>(props: &[Proposal<S>]) -> Result<ClassGraph<S>> {
    let members: Vec<usize> = (0..props.len()).collect();
    build_class_graph(props, &members)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionParams<S> {
    /// Weight on propagated mass; `1 - alpha` goes to the prior.
    pub alpha: S,
    /// Decay exponent applied to `1 - pi`.
    pub lambda: S,
    /// Early-stopping threshold on the L2 norm of successive differences.
    pub tau: S,
    pub max_steps: usize,
}

impl<S: Scalar> Default for DiffusionParams<S> {
    fn default() -> Self {
        Self {
            alpha: S::of(0.3),
            lambda: S::of(0.5),
            tau: S::of(1e-6),
            max_steps: 30,
        }
    }
}

impl<S: Scalar> DiffusionParams<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= S::zero() && self.alpha < S::one()) {
            return Err(Error::InvalidParam(format!("alpha {} not in [0, 1)", self.alpha)));
        }
        if !(self.lambda >= S::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidParam(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.tau > S::zero()) {
            return Err(Error::InvalidParam(format!("tau {} must be > 0", self.tau)));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParam("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionResult<S> {
    pub pi: Vec<S>,
    pub steps_taken: usize,
    pub converged: bool,
}

/// One application of the recurrence.
pub fn step<S: Scalar>(g: &ClassGraph<S>, alpha: S, pi: &[S]) -> Vec<S> {
    let restart = S::one() - alpha;
    g.rows
        .iter()
        .zip(&g.prior)
        .map(|(row, &w)| {
            let propagated = S::total(row.iter().map(|&(j, p)| p * pi[j]));
            alpha * propagated + restart * w
        })
        .collect()
}

fn l2_diff<S: Scalar>(a: &[S], b: &[S]) -> S {
    S::total(a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y))).sqrt()
}

/// Iterates from the uniform start until the update norm drops below `tau` or
/// `max_steps` updates have been applied.
pub fn diffuse<S: Scalar>(g: &ClassGraph<S>, params: &DiffusionParams<S>) -> DiffusionResult<S> {
    let n = g.len();
    diffuse_from(g, params, vec![S::one() / S::of(n as f64); n])
}

pub fn diffuse_from<S: Scalar>(
    g: &ClassGraph<S>,
    params: &DiffusionParams<S>,
    init: Vec<S>,
) -> DiffusionResult<S> {
    assert_eq!(init.len(), g.len(), "initial vector length must match the graph");
    let mut pi = init;
    let mut steps_taken = 0;
    let mut converged = false;
    while steps_taken < params.max_steps {
        let next = step(g, params.alpha, &pi);
        debug_assert!(
            next.iter().all(|&v| v >= S::zero() && v <= S::one() + S::of(1e-12)),
            "diffusion iterate left [0, 1]"
        );
        let delta = l2_diff(&next, &pi);
        pi = next;
        steps_taken += 1;
        if delta < params.tau {
            converged = true;
            break;
        }
    }
    for v in &mut pi {
        *v = v.max(S::zero()).min(S::one());
    }
    DiffusionResult {
        pi,
        steps_taken,
        converged,
    }
}

/// `(1 - pi[j])^lambda * similarity[j]`. With `lambda == 0` similarities are returned as is.
pub fn refine_scores<S: Scalar>(similarity: &[S], result: &DiffusionResult<S>, lambda: S) -> Vec<S> {
    assert_eq!(similarity.len(), result.pi.len(), "one similarity per node");
    similarity
        .iter()
        .zip(&result.pi)
        .map(|(&s, &p)| {
            assert!(p <= S::one() && p >= S::zero(), "diffusion score {p} outside [0, 1]");
            if lambda == S::zero() {
                s
            } else {
                (S::one() - p).powf(lambda) * s
            }
        })
        .collect()
}

/// Refined score for one proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refined<S> {
    /// Index into the input proposal slice.
    pub index: usize,
    pub class_id: u32,
    pub pi: S,
    pub score: S,
    pub steps_taken: usize,
}

/// Partitions by predicted class and runs graph construction, diffusion and refinement per
/// class. Output is ordered by class id, then input order.
pub fn diffuse_all_classes<S: Scalar>(
    props: &[Proposal<S>],
    params: &DiffusionParams<S>,
) -> Result<Vec<Refined<S>>> {
    params.validate()?;
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, p) in props.iter().enumerate() {
        by_class.entry(p.pred_class).or_default().push(i);
    }
    let mut out = Vec::with_capacity(props.len());
    for (class_id, members) in by_class {
        let g = build_class_graph(props, &members)?;
        let res = diffuse(&g, params);
        let sims: Vec<S> = members.iter().map(|&i| props[i].similarity).collect();
        let scores = refine_scores(&sims, &res, params.lambda);
        out.extend(members.iter().enumerate().map(|(k, &index)| Refined {
            index,
            class_id,
            pi: res.pi[k],
            score: scores[k],
            steps_taken: res.steps_taken,
        }));
    }
    Ok(out)
}
