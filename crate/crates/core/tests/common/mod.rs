#![allow(dead_code)]

pub mod fixtures;
pub mod gradients;
pub mod oracles;

use memnorm::tensor::{Graph, Primitive, Tensor, Var};
use memnorm::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so kinks (relu) are never straddled.
pub fn random_nonzero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(c * out)` for a fixed random weighting `c`, so every output entry
/// contributes a distinct coefficient.
pub fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed);
    let c = random_tensor(&mut r, g.shape(out));
    let c = g.constant(c);
    let prod = g.mul(out, c)?;
    Ok(g.sum_all(prod))
}

pub type LossFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct PrimitiveCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub loss: LossFn,
}

fn case(name: &'static str, inputs: Vec<Tensor>, prim: Primitive) -> PrimitiveCase {
    PrimitiveCase {
        name,
        inputs,
        loss: Box::new(move |g, vs| {
            let out = g.apply(prim.clone(), vs)?;
            weighted_sum(g, out, 99)
        }),
    }
}

/// One finite-difference case per primitive, on random 3x4-sized inputs.
pub fn primitive_cases(seed: u64) -> Vec<PrimitiveCase> {
    use Primitive::*;
    let mut r = rng(seed);
    let mut t = |shape: &[usize]| random_nonzero(&mut r, shape);
    vec![
        case("matmul", vec![t(&[3, 4]), t(&[4, 3])], MatMul),
        case("matmul_batched", vec![t(&[2, 3, 4]), t(&[2, 4, 3])], MatMul),
        case("add", vec![t(&[3, 4]), t(&[3, 4])], Add),
        case("add_broadcast", vec![t(&[3, 4]), t(&[4])], Add),
        case("sub_broadcast", vec![t(&[3, 1]), t(&[3, 4])], Sub),
        case("mul", vec![t(&[3, 4]), t(&[3, 4])], Mul),
        case("mul_broadcast", vec![t(&[2, 3, 4]), t(&[2, 3, 1])], Mul),
        case(
            "affine",
            vec![t(&[3, 4])],
            Affine {
                scale: -1.7,
                shift: 0.3,
            },
        ),
        case("sigmoid", vec![t(&[3, 4])], Sigmoid),
        case("tanh", vec![t(&[3, 4])], Tanh),
        case("relu", vec![t(&[3, 4])], Relu),
        case("softmax", vec![t(&[3, 4])], Softmax),
        case("oneplus", vec![t(&[3, 4])], OnePlus),
        case("cosine", vec![t(&[3, 4]), t(&[1, 4])], Cosine),
        case("cosine_batched", vec![t(&[2, 3, 4]), t(&[2, 2, 4])], Cosine),
        case("concat", vec![t(&[3, 4]), t(&[3, 2])], Concat { axis: 1 }),
        case(
            "slice",
            vec![t(&[3, 4])],
            Slice {
                axis: 1,
                start: 1,
                len: 2,
            },
        ),
        case("sum", vec![t(&[3, 4])], Sum { axis: 0 }),
        case("mean", vec![t(&[3, 4])], Mean { axis: 1 }),
        case("sum_all", vec![t(&[3, 4])], SumAll),
        case("reshape", vec![t(&[3, 4])], Reshape { shape: vec![2, 6] }),
        case("transpose", vec![t(&[3, 4])], Transpose),
        case(
            "softmax_cross_entropy",
            vec![t(&[3, 4])],
            SoftmaxCrossEntropy {
                targets: vec![Some(2), None, Some(0)],
            },
        ),
        case(
            "embedding",
            vec![t(&[5, 4])],
            Embedding { ids: vec![3, 0, 3] },
        ),
        case(
            "select_rows",
            vec![t(&[3, 4]), t(&[3, 4])],
            SelectRows {
                mask: vec![true, false, true],
            },
        ),
    ]
}
