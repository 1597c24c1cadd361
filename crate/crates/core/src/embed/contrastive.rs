use crate::autodiff::{Graph, Var};
use crate::error::{ensure, Result};

fn cross_entropy_diag(g: &Graph, logits: Var, n: usize) -> Var {
    let idx: Vec<usize> = (0..n).collect();
    let picked = g.pick_rows(g.log_softmax_rows(logits), &idx);
    g.scale(g.mean(picked), -1.0)
}

/// Symmetric InfoNCE over the `N x N` similarity matrix of two unit-norm
/// batches, with row `i` of each batch forming the positive pair.
pub fn info_nce_loss(g: &Graph, anchors: Var, positives: Var, tau: f64) -> Result<Var> {
    let (sa, sp) = (g.shape(anchors), g.shape(positives));
    ensure!(sa.len() == 2 && sa == sp, "InfoNCE batches must have equal [N, d] shapes, got {sa:?} and {sp:?}");
    ensure!(sa[0] >= 2, "InfoNCE needs at least two pairs, got {}", sa[0]);
    ensure!(tau > 0.0, "temperature must be positive");
    let n = sa[0];
    let logits = g.scale(g.matmul_nt(anchors, positives), 1.0 / tau);
    let fwd = cross_entropy_diag(g, logits, n);
    let bwd = cross_entropy_diag(g, g.transpose(logits), n);
    Ok(g.scale(g.add(fwd, bwd), 0.5))
}

/// InfoNCE where the anchor-to-positive direction also competes against
/// extra `negatives: [M, d]` that match no anchor.
pub fn info_nce_with_negatives(g: &Graph, anchors: Var, positives: Var, negatives: Var, tau: f64) -> Result<Var> {
    let sym = info_nce_loss(g, anchors, positives, tau)?;
    let sn = g.shape(negatives);
    ensure!(sn.len() == 2 && sn[1] == g.shape(anchors)[1], "negatives must be [M, d], got {sn:?}");
    let n = g.shape(anchors)[0];
    let keys = g.concat_rows(&[positives, negatives]);
    let logits = g.scale(g.matmul_nt(anchors, keys), 1.0 / tau);
    let with_neg = cross_entropy_diag(g, logits, n);
    Ok(g.scale(g.add(sym, with_neg), 0.5))
}
