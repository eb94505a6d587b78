//! Central finite-difference gradient verification.
//!
//! Every differentiable op ships with a case in [`standard_suite`]; the same
//! machinery drives whole-model checks. The error measure per coordinate is
//! |analytic - central| / max(1, |central|) with h = 1e-6.

use std::sync::Arc;

use super::rng::StreamRng;
use super::{Tape, TensorId, Value};
use crate::error::Result;

pub const DEFAULT_H: f64 = 1e-6;
pub const PASS_TOL: f64 = 1e-5;

/// Builds the graph under test from already-pushed input leaves and returns
/// the output node (any shape; the harness reduces it to a scalar).
pub type BuildFn = dyn Fn(&mut Tape, &[TensorId]) -> Result<TensorId>;

pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

pub struct Case {
    pub name: String,
    pub inputs: Vec<Value>,
    pub build: Box<BuildFn>,
}

/// Scalar loss for a case: sum(output * w) with fixed pseudorandom positive
/// weights. The weights make the adjoint non-uniform so transposition and
/// indexing mistakes cannot cancel out.
fn loss_of(case: &Case, inputs: &[Value]) -> Result<(f64, Tape, Vec<TensorId>, TensorId)> {
    let mut tape = Tape::new(0x5eed, 0, true);
    let ids: Vec<TensorId> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = (case.build)(&mut tape, &ids)?;
    let rng = StreamRng::new(0xc0ffee);
    let w: Vec<f64> = (0..tape.val(out).numel())
        .map(|i| rng.uniform_in(1, i as u64, 0.5, 1.5))
        .collect();
    let wshape = tape.shape(out).to_vec();
    let wid = tape.constv(Value::new(wshape, w));
    let weighted = tape.mul(out, wid)?;
    let loss = tape.sum_all(weighted)?;
    Ok((tape.val(loss).item(), tape, ids, loss))
}

/// Run one case: analytic gradients via the tape, then central differences
/// per coordinate (sampled down to `max_coords` per input when positive).
pub fn run_case(case: &Case, h: f64, max_coords: usize) -> Result<CheckReport> {
    let (_, tape, ids, loss) = loss_of(case, &case.inputs)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| grads.get_or_zeros(id)).collect();

    let sampler = StreamRng::new(0x5a17);
    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    for (i, input) in case.inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if max_coords == 0 || n <= max_coords {
            (0..n).collect()
        } else {
            // Sample without replacement by shuffling the index list.
            let mut idx: Vec<usize> = (0..n).collect();
            sampler.shuffle(i as u64, &mut idx);
            idx.truncate(max_coords);
            idx
        };
        for &j in &coords {
            let mut plus = case.inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let (fp, ..) = loss_of(case, &plus)?;
            let mut minus = case.inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let (fm, ..) = loss_of(case, &minus)?;
            let central = (fp - fm) / (2.0 * h);
            let err = (analytic[i][j] - central).abs() / central.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
            checked += 1;
        }
    }
    Ok(CheckReport { name: case.name.clone(), max_rel_err: max_err, coords_checked: checked })
}

/// Direct harness for model-level checks: the caller owns parameter flattening.
/// `f` must be deterministic across calls with the same inputs.
pub fn check_fn(
    f: &dyn Fn(&[Value]) -> Result<f64>,
    inputs: &[Value],
    analytic: &[Vec<f64>],
    h: f64,
    max_coords: usize,
) -> Result<CheckReport> {
    let sampler = StreamRng::new(0x5a17);
    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if max_coords == 0 || n <= max_coords {
            (0..n).collect()
        } else {
            let mut idx: Vec<usize> = (0..n).collect();
            sampler.shuffle(i as u64, &mut idx);
            idx.truncate(max_coords);
            idx
        };
        for &j in &coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let fp = f(&plus)?;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let fm = f(&minus)?;
            let central = (fp - fm) / (2.0 * h);
            let err = (analytic[i][j] - central).abs() / central.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
            checked += 1;
        }
    }
    Ok(CheckReport { name: "fn".to_string(), max_rel_err: max_err, coords_checked: checked })
}

/// Pseudorandom test tensor. `lo`/`hi` bound the values; kink-sensitive ops
/// pass ranges that keep every coordinate at least `gap` away from the kink.
fn rnd(stream: u64, shape: &[usize], lo: f64, hi: f64) -> Value {
    let rng = StreamRng::new(0x7e57_da7a);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| rng.uniform_in(stream, i as u64, lo, hi)).collect();
    Value::new(shape.to_vec(), data)
}

/// Like `rnd` but with values in (-hi, -lo] U [lo, hi): sign chosen per
/// coordinate, magnitude bounded away from zero.
fn rnd_signed(stream: u64, shape: &[usize], lo: f64, hi: f64) -> Value {
    let rng = StreamRng::new(0x7e57_da7a);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|i| {
            let mag = rng.uniform_in(stream, 2 * i as u64, lo, hi);
            if rng.uniform(stream, (2 * i + 1) as u64) < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    Value::new(shape.to_vec(), data)
}

fn case(name: &str, inputs: Vec<Value>, build: impl Fn(&mut Tape, &[TensorId]) -> Result<TensorId> + 'static) -> Case {
    Case { name: name.to_string(), inputs, build: Box::new(build) }
}

/// One finite-difference case per core op (plus broadcast, mask, aliasing and
/// packing variants that exercise distinct backward paths).
pub fn standard_suite() -> Vec<Case> {
    let mut cases = Vec::new();

    cases.push(case(
        "matmul",
        vec![rnd_signed(1, &[3, 4], 0.1, 1.0), rnd_signed(2, &[4, 5], 0.1, 1.0)],
        |t, xs| t.matmul(xs[0], xs[1]),
    ));
    cases.push(case(
        "bmm",
        vec![rnd_signed(3, &[2, 3, 4], 0.1, 1.0), rnd_signed(4, &[2, 4, 5], 0.1, 1.0)],
        |t, xs| t.bmm(xs[0], xs[1]),
    ));
    cases.push(case("transpose2", vec![rnd_signed(5, &[3, 5], 0.1, 1.0)], |t, xs| t.transpose2(xs[0])));
    cases.push(case("transpose12", vec![rnd_signed(6, &[2, 3, 4], 0.1, 1.0)], |t, xs| t.transpose12(xs[0])));
    cases.push(case("reshape", vec![rnd_signed(7, &[2, 6], 0.1, 1.0)], |t, xs| {
        t.reshape(xs[0], vec![3, 4])
    }));
    cases.push(case(
        "concat_axis0",
        vec![rnd_signed(8, &[2, 3], 0.1, 1.0), rnd_signed(9, &[3, 3], 0.1, 1.0)],
        |t, xs| t.concat(&[xs[0], xs[1]], 0),
    ));
    cases.push(case(
        "concat_axis1",
        vec![rnd_signed(10, &[3, 2], 0.1, 1.0), rnd_signed(11, &[3, 4], 0.1, 1.0)],
        |t, xs| t.concat(&[xs[0], xs[1]], 1),
    ));
    cases.push(case(
        "add_broadcast_row",
        vec![rnd_signed(12, &[3, 4], 0.1, 1.0), rnd_signed(13, &[4], 0.1, 1.0)],
        |t, xs| t.add(xs[0], xs[1]),
    ));
    cases.push(case(
        "sub_broadcast_col",
        vec![rnd_signed(14, &[3, 4], 0.1, 1.0), rnd_signed(15, &[3, 1], 0.1, 1.0)],
        |t, xs| t.sub(xs[0], xs[1]),
    ));
    cases.push(case(
        "mul",
        vec![rnd_signed(16, &[3, 4], 0.1, 1.0), rnd_signed(17, &[3, 4], 0.1, 1.0)],
        |t, xs| t.mul(xs[0], xs[1]),
    ));
    cases.push(case(
        "mul_scalar_rhs",
        vec![rnd_signed(18, &[3, 4], 0.1, 1.0), rnd_signed(19, &[1], 0.1, 1.0)],
        |t, xs| t.mul(xs[0], xs[1]),
    ));
    // Same node on both sides: the backward pass must accumulate both partials.
    cases.push(case("mul_aliased", vec![rnd_signed(20, &[3, 4], 0.1, 1.0)], |t, xs| {
        t.mul(xs[0], xs[0])
    }));
    cases.push(case(
        "div",
        vec![rnd_signed(21, &[3, 4], 0.1, 1.0), rnd_signed(22, &[3, 4], 0.5, 1.5)],
        |t, xs| t.div(xs[0], xs[1]),
    ));
    cases.push(case(
        "div_guarded_nonzero",
        vec![rnd_signed(23, &[3, 4], 0.1, 1.0), rnd_signed(24, &[3, 4], 0.5, 1.5)],
        |t, xs| t.div_guarded(xs[0], xs[1]),
    ));
    cases.push(case("scale", vec![rnd_signed(25, &[3, 4], 0.1, 1.0)], |t, xs| t.scale(xs[0], -2.5)));
    // Magnitudes >= 0.1 keep every coordinate away from the relu kink.
    cases.push(case("relu", vec![rnd_signed(26, &[3, 4], 0.1, 1.0)], |t, xs| t.relu(xs[0])));
    cases.push(case("sigmoid", vec![rnd_signed(27, &[3, 4], 0.1, 2.0)], |t, xs| t.sigmoid(xs[0])));
    cases.push(case("tanh", vec![rnd_signed(28, &[3, 4], 0.1, 2.0)], |t, xs| t.tanh_t(xs[0])));
    cases.push(case("exp", vec![rnd_signed(29, &[3, 4], 0.1, 1.0)], |t, xs| t.exp_t(xs[0])));
    cases.push(case("softplus", vec![rnd_signed(30, &[3, 4], 0.1, 2.0)], |t, xs| t.softplus(xs[0])));
    cases.push(case("sqrt", vec![rnd(31, &[3, 4], 0.25, 1.5)], |t, xs| t.sqrt_t(xs[0])));
    cases.push(case("sum_all", vec![rnd_signed(32, &[3, 4], 0.1, 1.0)], |t, xs| t.sum_all(xs[0])));
    cases.push(case("mean_all", vec![rnd_signed(33, &[3, 4], 0.1, 1.0)], |t, xs| t.mean_all(xs[0])));
    cases.push(case("sum_axis0", vec![rnd_signed(34, &[3, 4], 0.1, 1.0)], |t, xs| t.sum_axis(xs[0], 0)));
    cases.push(case("sum_axis1", vec![rnd_signed(35, &[3, 4], 0.1, 1.0)], |t, xs| t.sum_axis(xs[0], 1)));
    cases.push(case(
        "sum_axis_mid",
        vec![rnd_signed(36, &[2, 3, 4], 0.1, 1.0)],
        |t, xs| t.sum_axis(xs[0], 1),
    ));
    cases.push(case("softmax_axis1", vec![rnd_signed(37, &[3, 5], 0.1, 2.0)], |t, xs| {
        t.softmax(xs[0], 1, None)
    }));
    cases.push(case("softmax_axis0", vec![rnd_signed(38, &[3, 5], 0.1, 2.0)], |t, xs| {
        t.softmax(xs[0], 0, None)
    }));
    // Row 2 fully masked: outputs there are zero and must stay zero under FD.
    cases.push(case("softmax_masked", vec![rnd_signed(39, &[3, 5], 0.1, 2.0)], |t, xs| {
        let mask: Vec<bool> = (0..15).map(|i| !(5..10).contains(&i) && i != 3).collect();
        t.softmax(xs[0], 1, Some(Arc::new(mask)))
    }));
    cases.push(case(
        "layer_norm",
        vec![
            rnd_signed(40, &[3, 5], 0.1, 1.0),
            rnd_signed(41, &[5], 0.5, 1.5),
            rnd_signed(42, &[5], 0.1, 0.5),
        ],
        |t, xs| t.layer_norm(xs[0], xs[1], xs[2]),
    ));
    // Fixed stream id; the mask depends only on tape seed + structure, so the
    // FD reruns see the identical mask.
    cases.push(case("dropout_train", vec![rnd_signed(43, &[4, 5], 0.1, 1.0)], |t, xs| {
        t.dropout(xs[0], 0.3, 99)
    }));

    // Segment ops share ids [0,0,1,1,1,3] over 4 segments: segment 2 is empty,
    // segment 3 is a singleton.
    let seg_ids: Arc<Vec<usize>> = Arc::new(vec![0, 0, 1, 1, 1, 3]);
    for (name, f) in [
        ("segment_sum", 0usize),
        ("segment_mean", 1),
        ("segment_max", 2),
        ("segment_min", 3),
        ("segment_std", 4),
        ("segment_softmax", 5),
    ] {
        let ids = seg_ids.clone();
        // Spread-out values keep max/min selections stable under the h-perturbation.
        let x = Value::new(
            vec![6, 3],
            vec![
                0.9, -1.4, 0.3, //
                0.1, 0.8, -0.7, //
                -0.2, 1.9, 1.1, //
                1.3, -0.6, 0.5, //
                -1.1, 0.4, -1.7, //
                0.6, 1.2, -0.9,
            ],
        );
        cases.push(case(name, vec![x], move |t, xs| match f {
            0 => t.seg_sum(xs[0], ids.clone(), 4),
            1 => t.seg_mean(xs[0], ids.clone(), 4),
            2 => t.seg_max(xs[0], ids.clone(), 4),
            3 => t.seg_min(xs[0], ids.clone(), 4),
            4 => t.seg_std(xs[0], ids.clone(), 4),
            _ => t.seg_softmax(xs[0], ids.clone(), 4),
        }));
    }

    // Repeated row 2 checks gradient accumulation through gather.
    cases.push(case("gather_rows", vec![rnd_signed(50, &[4, 3], 0.1, 1.0)], |t, xs| {
        t.gather_rows(xs[0], Arc::new(vec![2, 0, 2, 3]))
    }));

    for (name, reverse) in [("lstm_forward", false), ("lstm_reverse", true)] {
        cases.push(case(
            name,
            vec![
                rnd_signed(60, &[7, 3], 0.1, 1.0),
                rnd_signed(61, &[3, 16], 0.1, 0.6),
                rnd_signed(62, &[4, 16], 0.1, 0.6),
                rnd_signed(63, &[16], 0.1, 0.4),
            ],
            move |t, xs| {
                t.lstm_packed(xs[0], xs[1], xs[2], xs[3], Arc::new(vec![0, 4, 7]), reverse)
            },
        ));
    }

    // Mask with dead steps inside both sequences: state must carry across them.
    cases.push(case(
        "ssm_scan",
        vec![
            rnd_signed(70, &[2, 4, 3], 0.1, 1.0),          // x
            rnd(71, &[2, 4, 3], 0.1, 0.6),                 // delta > 0
            rnd_signed(72, &[2, 4, 2], 0.1, 1.0),          // b
            rnd_signed(73, &[2, 4, 2], 0.1, 1.0),          // c
            {
                let mut a = rnd(74, &[3, 2], 0.2, 1.2);    // a < 0
                for v in a.data_mut() {
                    *v = -*v;
                }
                a
            },
            rnd_signed(75, &[3], 0.1, 1.0),                // d skip
        ],
        |t, xs| {
            let mask = Arc::new(vec![true, true, false, true, true, false, true, true]);
            t.ssm_scan(xs[0], xs[1], xs[2], xs[3], xs[4], xs[5], mask)
        },
    ));

    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Core acceptance property: every op's analytic gradient matches central
    /// differences to < 1e-5 relative error.
    #[test]
    fn all_core_ops_match_finite_differences() {
        let mut failures = Vec::new();
        for c in standard_suite() {
            let report = run_case(&c, DEFAULT_H, 0).unwrap();
            if report.max_rel_err >= PASS_TOL {
                failures.push(format!("{}: {:.3e}", report.name, report.max_rel_err));
            }
        }
        assert!(failures.is_empty(), "gradients off: {failures:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let c = case("const", vec![rnd_signed(90, &[3], 0.1, 1.0)], |t, xs| {
            // Output ignores the input: detach by pushing a constant.
            let _ = xs;
            Ok(t.constv(Value::new(vec![2], vec![1.0, 2.0])))
        });
        let report = run_case(&c, DEFAULT_H, 0).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn linear_model_mse_is_tight() {
        // One linear layer + MSE against fixed targets: error well under 1e-7.
        let c = case(
            "linear_mse",
            vec![
                rnd_signed(91, &[4, 3], 0.1, 1.0),
                rnd_signed(92, &[3], 0.1, 1.0),
                rnd_signed(93, &[2, 4], 0.1, 1.0),
            ],
            |t, xs| {
                let (w, b, x) = (xs[0], xs[1], xs[2]);
                let y = t.matmul(x, w)?;
                let y = t.add(y, b)?;
                let target = t.constv(Value::new(vec![2, 3], vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6]));
                let d = t.sub(y, target)?;
                let sq = t.mul(d, d)?;
                t.mean_all(sq)
            },
        );
        let report = run_case(&c, DEFAULT_H, 0).unwrap();
        assert!(report.max_rel_err < 1e-7, "rel err {:.3e}", report.max_rel_err);
    }
}
