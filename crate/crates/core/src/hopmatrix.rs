//! Exact hop-contribution tables.
//!
//! On a regular tree of branching factor `n`, both fixed templates mix hop
//! neighborhoods in a way captured by a small triangular table `M[k][i]`:
//! how much (or how often) a single node at hop `i` of the center
//! contributes to the template's level-`k` entry.
//!
//! * The **overview table** ([`m_ho`]) tracks iterated neighborhood means:
//!   `M[0][0] = 1`, `M[k][0] = M[k-1][1]`, and
//!   `M[k][i] = (M[k-1][i-1] + (n-1) * M[k-1][i+1]) / n` for `i >= 1`.
//!   Entries are probabilities of a reflected walk; row `k` satisfies the
//!   mass identity `sum_i M[k][i] * |hop i| = 1`.
//! * The **detail table** ([`m_nd`]) counts how many times each hop-`i` node
//!   appears in layer `k` of the fully expanded computational tree:
//!   `M[0][0] = 1`, `M[k][0] = n * M[k-1][1]`, and
//!   `M[k][i] = M[k-1][i-1] + (n-1) * M[k-1][i+1]` for `i >= 1`.
//!   Entries are nonnegative integers.
//!
//! All entries are exact arbitrary-precision rationals; nothing here rounds.
//! [`oracle_ho_coefficients`] provides an independent brute-force check: it
//! expands the averaging recursion symbolically on an explicit tree, never
//! touching the closed-form recursion above.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Which template a table describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// Iterated-mean overview template (probability mass entries).
    Overview,
    /// Expanded-tree detail template (occurrence count entries).
    Detail,
}

/// Triangular table of exact per-node hop contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct HopContribTable {
    kind: TableKind,
    branching: usize,
    depth: usize,
    /// `entries[k][i]` for `0 <= k, i <= depth`; zero where `i > k` or the
    /// parities of `i` and `k` differ.
    entries: Vec<Vec<BigRational>>,
}

impl HopContribTable {
    /// The template this table describes.
    pub fn kind(&self) -> TableKind {
        self.kind
    }

    /// Branching factor `n` of the underlying regular tree.
    pub fn branching(&self) -> usize {
        self.branching
    }

    /// Largest level `K`; rows and columns run `0..=K`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Exact entry `M[k][i]`; zero outside the stored triangle.
    pub fn entry(&self, k: usize, i: usize) -> BigRational {
        if k <= self.depth && i <= self.depth {
            self.entries[k][i].clone()
        } else {
            BigRational::zero()
        }
    }

    /// `M[k][i]` rounded to f64.
    pub fn entry_f64(&self, k: usize, i: usize) -> f64 {
        rational_to_f64(&self.entry(k, i))
    }

    /// Number of nodes at hop `i` of the root of the regular tree
    /// (`1` at hop 0, `n * (n-1)^(i-1)` beyond).
    pub fn hop_size(&self, i: usize) -> BigInt {
        tree_hop_size(self.branching, i)
    }

    /// Exact row mass `sum_i M[k][i] * |hop i|`. For the overview table this
    /// is 1 for every `k`; for the detail table it is the layer width `n^k`.
    pub fn row_mass(&self, k: usize) -> BigRational {
        let mut acc = BigRational::zero();
        for i in 0..=self.depth {
            acc += self.entry(k, i) * BigRational::from_integer(self.hop_size(i));
        }
        acc
    }
}

/// `|hop i|` of the root of a regular tree with branching `n`.
pub fn tree_hop_size(n: usize, i: usize) -> BigInt {
    if i == 0 {
        BigInt::one()
    } else {
        BigInt::from(n) * BigInt::from(n - 1).pow(i as u32 - 1)
    }
}

fn check_table_args(n: usize, depth: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("branching factor {n} must be at least 2")));
    }
    // Depth is unbounded in principle; cap generously to keep misuse obvious.
    if depth > 64 {
        return Err(Error::Config(format!("table depth {depth} exceeds the supported 64")));
    }
    Ok(())
}

/// Exact overview table for branching `n` up to level `depth`.
pub fn m_ho(n: usize, depth: usize) -> Result<HopContribTable> {
    check_table_args(n, depth)?;
    let nn = BigRational::from_integer(BigInt::from(n));
    let n_minus_1 = BigRational::from_integer(BigInt::from(n - 1));
    let mut entries = vec![vec![BigRational::zero(); depth + 1]; depth + 1];
    entries[0][0] = BigRational::one();
    for k in 1..=depth {
        entries[k][0] = entries[k - 1][1].clone();
        for i in 1..=depth {
            let up = if i >= 1 { entries[k - 1][i - 1].clone() } else { BigRational::zero() };
            let down = if i + 1 <= depth {
                entries[k - 1][i + 1].clone()
            } else {
                BigRational::zero()
            };
            entries[k][i] = (up + &n_minus_1 * down) / &nn;
        }
    }
    Ok(HopContribTable {
        kind: TableKind::Overview,
        branching: n,
        depth,
        entries,
    })
}

/// Exact detail table for branching `n` up to layer `depth`.
pub fn m_nd(n: usize, depth: usize) -> Result<HopContribTable> {
    check_table_args(n, depth)?;
    let nn = BigRational::from_integer(BigInt::from(n));
    let n_minus_1 = BigRational::from_integer(BigInt::from(n - 1));
    let mut entries = vec![vec![BigRational::zero(); depth + 1]; depth + 1];
    entries[0][0] = BigRational::one();
    for k in 1..=depth {
        entries[k][0] = &nn * entries[k - 1][1].clone();
        for i in 1..=depth {
            let up = entries[k - 1][i - 1].clone();
            let down = if i + 1 <= depth {
                entries[k - 1][i + 1].clone()
            } else {
                BigRational::zero()
            };
            entries[k][i] = up + &n_minus_1 * down;
        }
    }
    Ok(HopContribTable {
        kind: TableKind::Detail,
        branching: n,
        depth,
        entries,
    })
}

/// Cumulative per-hop occurrence weight of the detail template.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiVector {
    pub branching: usize,
    pub depth: usize,
    /// `values[k] = sum over layers i = k, k+2, ... <= depth of M_detail[i][k]`:
    /// how often each hop-`k` node appears in the whole flattened list.
    pub values: Vec<BigRational>,
}

impl PhiVector {
    /// Exact `phi[k]`.
    pub fn value(&self, k: usize) -> BigRational {
        self.values.get(k).cloned().unwrap_or_else(BigRational::zero)
    }

    /// `phi[k]` rounded to f64.
    pub fn value_f64(&self, k: usize) -> f64 {
        rational_to_f64(&self.value(k))
    }

    /// All values rounded to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(rational_to_f64).collect()
    }

    /// Number of stored hop weights (`depth + 1`).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when no hop weights are stored (never produced by [`phi`]).
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Total occurrence weight of each hop across a depth-`depth` detail list.
pub fn phi(n: usize, depth: usize) -> Result<PhiVector> {
    let table = m_nd(n, depth)?;
    let mut values = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        let mut acc = BigRational::zero();
        let mut i = k;
        while i <= depth {
            acc += table.entry(i, k);
            i += 2;
        }
        values.push(acc);
    }
    Ok(PhiVector {
        branching: n,
        depth,
        values,
    })
}

/// Per-hop effective attention of the overview template, exact in rationals.
///
/// Given token-level attention `alpha` (one weight per level `0..=K`), the
/// weight landing on each individual hop-`k` node is
/// `sum over i = k, k+2, ... of alpha[i] * M[i][k]`.
pub fn effective_attention_ho_exact(
    alpha: &[BigRational],
    table: &HopContribTable,
) -> Result<Vec<BigRational>> {
    if table.kind() != TableKind::Overview {
        return Err(Error::Config(
            "effective attention decomposition needs an overview table".into(),
        ));
    }
    if alpha.len() != table.depth() + 1 {
        return Err(Error::Shape(format!(
            "{} attention weights for a depth-{} table",
            alpha.len(),
            table.depth()
        )));
    }
    let mut out = Vec::with_capacity(alpha.len());
    for k in 0..alpha.len() {
        let mut acc = BigRational::zero();
        let mut i = k;
        while i < alpha.len() {
            acc += &alpha[i] * table.entry(i, k);
            i += 2;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Float version of [`effective_attention_ho_exact`] for pipeline use.
pub fn effective_attention_ho(alpha: &[f64], table: &HopContribTable) -> Result<Vec<f64>> {
    for &a in alpha {
        if !a.is_finite() {
            return Err(Error::Domain("non-finite attention weight".into()));
        }
    }
    let exact: Vec<BigRational> = alpha
        .iter()
        .map(|&a| BigRational::from_float(a).expect("finite floats convert exactly"))
        .collect();
    Ok(effective_attention_ho_exact(&exact, table)?
        .iter()
        .map(rational_to_f64)
        .collect())
}

/// Per-node effective attention of the detail template: each node's direct
/// score scaled by its hop's cumulative occurrence weight.
///
/// `alpha_node[k]` holds the direct per-node attention scores of the hop-`k`
/// nodes (hop 0 is the center itself). Output mirrors the input shape with
/// every entry multiplied by `phi[k]`.
pub fn effective_attention_nd(alpha_node: &[Vec<f64>], phi: &PhiVector) -> Result<Vec<Vec<f64>>> {
    if alpha_node.len() != phi.depth + 1 {
        return Err(Error::Shape(format!(
            "{} hop groups for a depth-{} cumulative weight vector",
            alpha_node.len(),
            phi.depth
        )));
    }
    let mut out = Vec::with_capacity(alpha_node.len());
    for (k, group) in alpha_node.iter().enumerate() {
        let scale = phi.value_f64(k);
        out.push(group.iter().map(|&a| a * scale).collect());
    }
    Ok(out)
}

/// Exact equivalent of [`effective_attention_nd`].
pub fn effective_attention_nd_exact(
    alpha_node: &[Vec<BigRational>],
    phi: &PhiVector,
) -> Result<Vec<Vec<BigRational>>> {
    if alpha_node.len() != phi.depth + 1 {
        return Err(Error::Shape(format!(
            "{} hop groups for a depth-{} cumulative weight vector",
            alpha_node.len(),
            phi.depth
        )));
    }
    Ok(alpha_node
        .iter()
        .enumerate()
        .map(|(k, group)| group.iter().map(|a| a * phi.value(k)).collect())
        .collect())
}

/// Brute-force symbolic expansion of the iterated-mean recursion on an
/// explicit tree.
///
/// Returns, for each level `k = 0..=depth`, the exact coefficient each node
/// carries in the center's level-`k` entry. This implementation walks the
/// graph and merges per-node coefficient maps; it never consults the
/// closed-form recursion, so it serves as an independent reference for
/// [`m_ho`]. Errors if the recursion hits a degree-0 node.
pub fn oracle_ho_coefficients(
    g: &Graph,
    center: u32,
    depth: usize,
) -> Result<Vec<HashMap<u32, BigRational>>> {
    let mut memo: HashMap<(u32, usize), std::rc::Rc<HashMap<u32, BigRational>>> = HashMap::new();

    fn coeffs(
        g: &Graph,
        v: u32,
        level: usize,
        memo: &mut HashMap<(u32, usize), std::rc::Rc<HashMap<u32, BigRational>>>,
    ) -> Result<std::rc::Rc<HashMap<u32, BigRational>>> {
        if let Some(m) = memo.get(&(v, level)) {
            return Ok(m.clone());
        }
        let result = if level == 0 {
            let mut m = HashMap::new();
            m.insert(v, BigRational::one());
            m
        } else {
            let nbrs = g.neighbors(v)?;
            if nbrs.is_empty() {
                return Err(Error::Degenerate(format!(
                    "iterated mean reached degree-0 node {v}"
                )));
            }
            let inv_deg = BigRational::new(BigInt::one(), BigInt::from(nbrs.len()));
            let mut m: HashMap<u32, BigRational> = HashMap::new();
            for &w in nbrs {
                let sub = coeffs(g, w, level - 1, memo)?;
                for (node, c) in sub.iter() {
                    let scaled = c * &inv_deg;
                    m.entry(*node)
                        .and_modify(|acc| *acc += &scaled)
                        .or_insert(scaled);
                }
            }
            m
        };
        let rc = std::rc::Rc::new(result);
        memo.insert((v, level), rc.clone());
        Ok(rc)
    }

    let mut out = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        let m = coeffs(g, center, k, &mut memo)?;
        out.push((*m).clone());
    }
    Ok(out)
}

/// Outcome of the structural checks on a table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyReport {
    /// Entries are nonzero exactly when `i <= k` and `i ≡ k (mod 2)`.
    pub parity: bool,
    /// Within each row, weight decreases toward farther hops:
    /// `M[k][i] > M[k][i+2]` wherever both are in the triangle.
    pub near_hop_dominance: bool,
    /// Across rows at a fixed hop: detail counts grow (`M[k][i] < M[k+2][i]`)
    /// at every hop, while overview mass decays (`M[k][i] > M[k+2][i]`) at
    /// hops below the branching factor. At hop `i = n` the first step is an
    /// exact tie (`M[n][n] = M[n+2][n]`, since `M[i+2][i]/M[i][i] =
    /// ((i+1)n - i)/n²`), and for `i > n` the mass initially grows, so the
    /// decay check is scoped to `i < n` where it holds strictly.
    pub depth_trend: bool,
    /// Human-readable descriptions of every violation found.
    pub violations: Vec<String>,
}

impl PropertyReport {
    /// True when every checked property holds.
    pub fn all_hold(&self) -> bool {
        self.parity && self.near_hop_dominance && self.depth_trend
    }
}

/// Verifies the parity / dominance / trend structure of a table.
pub fn check_properties(table: &HopContribTable) -> PropertyReport {
    let depth = table.depth();
    let mut violations = Vec::new();
    let mut parity = true;
    let mut near = true;
    let mut trend = true;

    for k in 0..=depth {
        for i in 0..=depth {
            let e = table.entry(k, i);
            let in_triangle = i <= k && (k - i) % 2 == 0;
            if in_triangle && !e.is_positive() {
                parity = false;
                violations.push(format!("entry[{k}][{i}] should be positive, is {e}"));
            }
            if !in_triangle && !e.is_zero() {
                parity = false;
                violations.push(format!("entry[{k}][{i}] should be zero, is {e}"));
            }
        }
    }

    // Within-row decay toward farther hops.
    for k in 0..=depth {
        let start = k % 2;
        let mut i = start;
        while i + 2 <= k {
            if table.entry(k, i) <= table.entry(k, i + 2) {
                near = false;
                violations.push(format!(
                    "row {k}: entry[{k}][{i}] <= entry[{k}][{}]",
                    i + 2
                ));
            }
            i += 2;
        }
    }

    // Across-row trend at a fixed hop. Overview decay is only claimed below
    // the branching factor: at hop i the first downward step satisfies
    // M[i+2][i]/M[i][i] = ((i+1)n - i)/n², which is < 1 iff i < n, exactly 1
    // at i = n, and > 1 beyond, so at and past hop n the leading entries tie
    // or grow before the eventual decay sets in.
    for i in 0..=depth {
        if table.kind() == TableKind::Overview && i >= table.branching() {
            continue;
        }
        let mut k = i;
        while k + 2 <= depth {
            let here = table.entry(k, i);
            let deeper = table.entry(k + 2, i);
            let ok = match table.kind() {
                TableKind::Overview => here > deeper,
                TableKind::Detail => here < deeper,
            };
            if !ok {
                trend = false;
                violations.push(format!(
                    "hop {i}: entry[{k}][{i}] vs entry[{}][{i}] breaks the {:?} trend",
                    k + 2,
                    table.kind()
                ));
            }
            k += 2;
        }
    }

    PropertyReport {
        parity,
        near_hop_dominance: near,
        depth_trend: trend,
        violations,
    }
}

/// Rounds an exact rational to the nearest f64.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    // Scale into i128 range when possible; otherwise fall back to a string
    // round-trip (never needed at the depths used here, but total anyway).
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or_else(|| {
        let s = r.to_string();
        s.parse().unwrap_or(f64::NAN)
    })
}

/// Parses `alpha` floats into exact rationals (finite values convert
/// without rounding).
pub fn floats_to_rationals(values: &[f64]) -> Result<Vec<BigRational>> {
    values
        .iter()
        .map(|&v| {
            BigRational::from_float(v).ok_or_else(|| Error::Domain(format!("non-finite value {v}")))
        })
        .collect()
}
