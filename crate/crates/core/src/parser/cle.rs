//! Maximum spanning arborescence by recursive cycle contraction.

use ndarray::Array2;

use crate::error::{Error, Result};

/// `scores[[h, d]]` is the weight of edge h -> d over nodes 0..=n, node 0 the
/// root. Returns `heads[d - 1]` for every d in 1..=n.
///
/// Non-finite weights mark absent edges. Column 0 and the diagonal are ignored.
pub fn max_arborescence(scores: &Array2<f64>) -> Result<Vec<usize>> {
    let size = scores.nrows();
    if scores.ncols() != size || size == 0 {
        return Err(Error::shape(format!(
            "score matrix must be square, got {:?}",
            scores.dim()
        )));
    }
    let mut w = scores.clone();
    for h in 0..size {
        w[[h, h]] = f64::NEG_INFINITY;
        w[[h, 0]] = f64::NEG_INFINITY;
    }
    w.mapv_inplace(|v| if v.is_finite() { v } else { f64::NEG_INFINITY });
    for d in 1..size {
        if !(0..size).any(|h| w[[h, d]].is_finite()) {
            return Err(Error::NoArborescence(format!("token {d} has no admissible head")));
        }
    }
    let heads = contract(&w)?;
    Ok(heads[1..].to_vec())
}

fn best_head(w: &Array2<f64>, d: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for h in 0..w.nrows() {
        if w[[h, d]].is_finite() && best.is_none_or(|b| w[[h, d]] > w[[b, d]]) {
            best = Some(h);
        }
    }
    best
}

/// Nodes on a cycle of `heads`, if any.
fn find_cycle(heads: &[usize]) -> Option<Vec<usize>> {
    let n = heads.len();
    let mut color = vec![0u8; n];
    color[0] = 2;
    for start in 1..n {
        if color[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        while color[v] == 0 {
            color[v] = 1;
            path.push(v);
            v = heads[v];
        }
        if color[v] == 1 {
            let pos = path.iter().position(|&p| p == v).expect("on path");
            return Some(path[pos..].to_vec());
        }
        for p in path {
            color[p] = 2;
        }
    }
    None
}

/// Returns a head for every node (entry 0 unused).
fn contract(w: &Array2<f64>) -> Result<Vec<usize>> {
    let size = w.nrows();
    let mut heads = vec![0usize; size];
    for d in 1..size {
        heads[d] = best_head(w, d).ok_or_else(|| Error::NoArborescence(format!("node {d} cannot be reached")))?;
    }
    let Some(cycle) = find_cycle(&heads) else {
        return Ok(heads);
    };

    let mut in_cycle = vec![false; size];
    for &c in &cycle {
        in_cycle[c] = true;
    }
    // Contracted graph: old non-cycle nodes keep their order, the cycle becomes the last node.
    let outside: Vec<usize> = (0..size).filter(|&v| !in_cycle[v]).collect();
    let m = outside.len() + 1;
    let cnode = m - 1;
    let mut cw = Array2::from_elem((m, m), f64::NEG_INFINITY);
    // enter[h'] = cycle node whose incoming edge from h' is best; leave[d'] = cycle node heading d'
    let mut enter = vec![usize::MAX; m];
    let mut leave = vec![usize::MAX; m];
    for (a, &h) in outside.iter().enumerate() {
        for (b, &d) in outside.iter().enumerate() {
            cw[[a, b]] = w[[h, d]];
        }
        let mut best = f64::NEG_INFINITY;
        for &c in &cycle {
            let s = w[[h, c]] - w[[heads[c], c]];
            if s > best {
                best = s;
                enter[a] = c;
            }
        }
        cw[[a, cnode]] = best;
    }
    for (b, &d) in outside.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for &c in &cycle {
            if w[[c, d]] > best {
                best = w[[c, d]];
                leave[b] = c;
            }
        }
        cw[[cnode, b]] = best;
    }
    for v in 0..m {
        cw[[v, v]] = f64::NEG_INFINITY;
        cw[[v, 0]] = f64::NEG_INFINITY;
    }

    let sub = contract(&cw)?;
    let mut result = heads.clone();
    for (b, &d) in outside.iter().enumerate().skip(1) {
        result[d] = if sub[b] == cnode { leave[b] } else { outside[sub[b]] };
    }
    let from = sub[cnode];
    let broken = enter[from];
    result[broken] = outside[from];
    Ok(result)
}
