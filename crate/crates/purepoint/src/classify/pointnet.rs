//! PointNet-style classifier: shared per-point MLP, global max pool,
//! classification head. Smooth (tanh) everywhere except the pool, so input
//! gradients are trustworthy wherever the pool's argmax set is stable.

use crate::error::Result;
use crate::nn::{xavier, zeros_row, ParamSet, Tape, Var};
use crate::rng::named_stream;

use super::ClassifierConfig;

pub(super) fn init_params(cfg: &ClassifierConfig, seed: u64) -> ParamSet {
    let mut rng = named_stream(seed, "init", &[]);
    let mut params = ParamSet::new();
    let mut d = 3;
    for (i, &w) in cfg.point_widths.iter().enumerate() {
        params.push(&format!("point{i}.w"), xavier(&mut rng, d, w));
        params.push(&format!("point{i}.b"), zeros_row(w));
        d = w;
    }
    params.push("head.w", xavier(&mut rng, d, cfg.head_width));
    params.push("head.b", zeros_row(cfg.head_width));
    params.push("out.w", xavier(&mut rng, cfg.head_width, cfg.n_classes));
    params.push("out.b", zeros_row(cfg.n_classes));
    params
}

pub(super) fn forward(
    cfg: &ClassifierConfig,
    params: &ParamSet,
    tape: &mut Tape,
    x: Var,
) -> Result<(Var, Vec<Var>)> {
    let vars = params.bind(tape);
    let mut p = vars.iter().copied();
    let mut h = x;
    for _ in &cfg.point_widths {
        let (w, b) = (p.next().unwrap(), p.next().unwrap());
        let lin = tape.matmul(h, w);
        let lin = tape.add_row(lin, b);
        h = tape.tanh(lin);
    }
    let pooled = tape.maxpool_rows(h);

    let (hw, hb) = (p.next().unwrap(), p.next().unwrap());
    let head = tape.matmul(pooled, hw);
    let head = tape.add_row(head, hb);
    let head = tape.tanh(head);

    let (ow, ob) = (p.next().unwrap(), p.next().unwrap());
    let logits = tape.matmul(head, ow);
    let logits = tape.add_row(logits, ob);
    Ok((logits, vars))
}
