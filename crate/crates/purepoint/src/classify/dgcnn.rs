//! DGCNN-style classifier built from EdgeConv blocks.
//!
//! Each EdgeConv recomputes a kNN graph over the *current* features at
//! forward time, gathers neighbor features through those indices, applies a
//! shared linear + LeakyReLU to edge features `concat(h_i, h_j - h_i)`, and
//! max-pools over each point's k neighbors. The gather indices are recorded
//! on the tape as frozen data: gradients flow through the gathered values but
//! never through the index selection. This faithfully reproduces the gradient
//! blind spot of top-k indexing architectures.

use crate::error::{Error, Result};
use crate::geom::knn_indices;
use crate::nn::{xavier, zeros_row, ParamSet, Tape, Var};
use crate::rng::named_stream;

use super::ClassifierConfig;

pub(super) fn init_params(cfg: &ClassifierConfig, seed: u64) -> ParamSet {
    let mut rng = named_stream(seed, "init", &[]);
    let mut params = ParamSet::new();
    let mut d = 3;
    for (i, &w) in cfg.edge_widths.iter().enumerate() {
        params.push(&format!("edge{i}.w"), xavier(&mut rng, 2 * d, w));
        params.push(&format!("edge{i}.b"), zeros_row(w));
        d = w;
    }
    params.push("proj.w", xavier(&mut rng, d, cfg.proj_width));
    params.push("proj.b", zeros_row(cfg.proj_width));
    params.push("head.w", xavier(&mut rng, cfg.proj_width, cfg.head_width));
    params.push("head.b", zeros_row(cfg.head_width));
    params.push("out.w", xavier(&mut rng, cfg.head_width, cfg.n_classes));
    params.push("out.b", zeros_row(cfg.n_classes));
    params
}

/// Flattened neighbor list (k entries per point, the point itself included as
/// its own nearest neighbor, as in the reference top-k formulation) from the
/// current values of `h`.
fn neighbor_indices(tape: &Tape, h: Var, k: usize) -> Result<Vec<usize>> {
    let feats = tape.value(h);
    let n = feats.nrows();
    if k > n {
        return Err(Error::Model(format!(
            "edgeconv needs k <= N points, got k={k}, N={n}"
        )));
    }
    let idx = knn_indices(feats.view(), k)?;
    let mut flat = Vec::with_capacity(n * k);
    for i in 0..n {
        for j in 0..k {
            flat.push(idx[[i, j]]);
        }
    }
    Ok(flat)
}

fn edgeconv(tape: &mut Tape, h: Var, w: Var, b: Var, k: usize, slope: f64) -> Result<Var> {
    let flat = neighbor_indices(tape, h, k)?;
    let center = tape.repeat_rows(h, k);
    let nbr = tape.gather_rows(h, flat);
    let rel = tape.sub(nbr, center);
    let edge = tape.concat_cols(center, rel);
    let lin = tape.matmul(edge, w);
    let lin = tape.add_row(lin, b);
    let act = tape.leaky_relu(lin, slope);
    Ok(tape.maxpool_groups(act, k))
}

const LEAKY_SLOPE: f64 = 0.2;

pub(super) fn forward(
    cfg: &ClassifierConfig,
    params: &ParamSet,
    tape: &mut Tape,
    x: Var,
) -> Result<(Var, Vec<Var>)> {
    let vars = params.bind(tape);
    let mut p = vars.iter().copied();

    let mut h = x;
    for _ in &cfg.edge_widths {
        let (w, b) = (p.next().unwrap(), p.next().unwrap());
        h = edgeconv(tape, h, w, b, cfg.k, LEAKY_SLOPE)?;
    }

    let (pw, pb) = (p.next().unwrap(), p.next().unwrap());
    let proj = tape.matmul(h, pw);
    let proj = tape.add_row(proj, pb);
    let proj = tape.leaky_relu(proj, LEAKY_SLOPE);
    let pooled = tape.maxpool_rows(proj);

    let (hw, hb) = (p.next().unwrap(), p.next().unwrap());
    let head = tape.matmul(pooled, hw);
    let head = tape.add_row(head, hb);
    let head = tape.leaky_relu(head, LEAKY_SLOPE);

    let (ow, ob) = (p.next().unwrap(), p.next().unwrap());
    let logits = tape.matmul(head, ow);
    let logits = tape.add_row(logits, ob);
    Ok((logits, vars))
}

/// Flattened kNN index lists per EdgeConv layer for the given input, exactly
/// as the forward pass would compute them. Used by the flip-sensitivity
/// diagnostic.
pub(crate) fn layer_indices(
    cfg: &ClassifierConfig,
    params: &ParamSet,
    points: &ndarray::Array2<f64>,
) -> Result<Vec<Vec<usize>>> {
    let mut tape = Tape::new();
    let x = tape.leaf(points.clone());
    let vars = params.bind(&mut tape);
    let mut p = vars.iter().copied();
    let mut out = Vec::new();
    let mut h = x;
    for _ in &cfg.edge_widths {
        let (w, b) = (p.next().unwrap(), p.next().unwrap());
        out.push(neighbor_indices(&tape, h, cfg.k)?);
        h = edgeconv(&mut tape, h, w, b, cfg.k, LEAKY_SLOPE)?;
    }
    Ok(out)
}
