//! Registered finite-difference cases, one or more per primitive.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check_graph, random_tensor, FD_EPS};
use crate::autodiff::graph::{Graph, NodeId};
use crate::autodiff::ops::Op;
use crate::autodiff::plans::{CompositePlan, LabelConvPlan, TrilerpPlan};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;

pub type Builder = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + Send + Sync>;

/// A named gradient check: inputs and the computation over them.
pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Builder,
    pub tolerance: f64,
    /// Also probe the gradients of parameters registered by `build`.
    pub check_params: bool,
    /// Finite-difference step.
    pub eps: f64,
}

impl Case {
    pub fn new(name: impl Into<String>, inputs: Vec<Tensor>, tolerance: f64, build: Builder) -> Self {
        Self { name: name.into(), inputs, build, tolerance, check_params: false, eps: FD_EPS }
    }

    pub fn with_params(mut self) -> Self {
        self.check_params = true;
        self
    }

    /// Full renders contain many ReLU kinks; a smaller step keeps probes from crossing them.
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn run(&self, seed: u64, faulty: Option<(&str, f64)>) -> Result<CheckOutcome> {
        let err = check_graph(&self.build, &self.inputs, seed, faulty, self.check_params, self.eps)?;
        Ok(CheckOutcome { name: self.name.clone(), max_rel_err: err, tolerance: self.tolerance })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

pub const PRIMITIVE_TOL: f64 = 1e-4;

fn unary(name: &str, op: Op, shape: &[usize], rng: &mut ChaCha8Rng) -> Case {
    Case::new(
        name,
        vec![random_tensor(shape, rng, 1.0)],
        PRIMITIVE_TOL,
        Box::new(move |g, ids| g.apply(op.clone(), &[ids[0]])),
    )
}

fn nary(name: &str, op: Op, shapes: &[&[usize]], rng: &mut ChaCha8Rng) -> Case {
    let inputs = shapes.iter().map(|s| random_tensor(s, rng, 1.0)).collect();
    Case::new(name, inputs, PRIMITIVE_TOL, Box::new(move |g, ids| g.apply(op.clone(), ids)))
}

fn random_composite_plan(rng: &mut ChaCha8Rng, rays: usize, max_per_ray: usize, objects: i64) -> CompositePlan {
    let mut ray_starts = vec![0];
    let mut total = 0;
    for _ in 0..rays {
        total += rng.random_range(0..=max_per_ray);
        ray_starts.push(total);
    }
    let mut order: Vec<usize> = (0..total).collect();
    for i in (1..total).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let delta = (0..total).map(|_| rng.random_range(0.05..0.8)).collect();
    let tag = (0..total).map(|_| rng.random_range(-1..objects)).collect();
    CompositePlan { num_samples: total, ray_starts, order, delta, tag }
}

fn positive_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.1..2.0)).collect()).expect("sized")
}

/// One case per primitive (several for ops with distinct code paths).
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = vec![
        nary("matmul", Op::MatMul, &[&[3, 4], &[4, 2]], r),
        nary("add_row_bias", Op::AddRowBias, &[&[3, 4], &[4]], r),
        nary("add_channel_bias", Op::AddChannelBias, &[&[2, 3, 4], &[2]], r),
        nary("conv2d", Op::Conv { stride: 1, pad: 1 }, &[&[2, 5, 5], &[3, 2, 3, 3], &[3]], r),
        nary("conv2d_stride2", Op::Conv { stride: 2, pad: 1 }, &[&[2, 6, 5], &[2, 2, 3, 3]], r),
        nary("conv3d", Op::Conv { stride: 1, pad: 1 }, &[&[2, 3, 4, 4], &[2, 2, 3, 3, 3], &[2]], r),
        nary("conv3d_stride2", Op::Conv { stride: 2, pad: 1 }, &[&[2, 4, 4, 4], &[3, 2, 3, 3, 3]], r),
        nary("conv_1x1", Op::Conv { stride: 1, pad: 0 }, &[&[4, 3, 3], &[3, 4, 1, 1], &[3]], r),
        nary("mod_demod", Op::ModDemod { eps: 1e-8 }, &[&[3, 2, 3, 3], &[2]], r),
        unary("upsample2x_2d", Op::Upsample2x, &[2, 3, 2], r),
        unary("upsample2x_3d", Op::Upsample2x, &[2, 2, 3, 2], r),
        unary("instance_norm", Op::InstanceNorm { eps: 1e-5 }, &[2, 3, 4], r),
        unary("relu", Op::Relu, &[3, 4], r),
        unary("leaky_relu", Op::LeakyRelu(0.2), &[3, 4], r),
        unary("softplus", Op::Softplus, &[3, 4], r),
        unary("sigmoid", Op::Sigmoid, &[3, 4], r),
        unary("exp", Op::Exp, &[3, 4], r),
        unary("square", Op::Square, &[3, 4], r),
        unary("scale", Op::Scale(-1.7), &[5], r),
        unary("add_scalar", Op::AddScalar(0.3), &[5], r),
        nary("add", Op::Add, &[&[2, 3], &[2, 3]], r),
        nary("sub", Op::Sub, &[&[2, 3], &[2, 3]], r),
        nary("mul", Op::Mul, &[&[2, 3], &[2, 3]], r),
        unary("sum", Op::Sum, &[2, 3], r),
        unary("mean", Op::Mean, &[2, 3], r),
        nary("concat", Op::Concat { axis: 1 }, &[&[2, 3], &[2, 1], &[2, 2]], r),
        unary("slice", Op::Slice { axis: 1, start: 1, end: 3 }, &[2, 4, 2], r),
        unary("reshape", Op::Reshape(vec![3, 4]), &[2, 6], r),
        unary("transpose", Op::Transpose, &[2, 5], r),
        unary("broadcast", Op::Broadcast(vec![2, 3]), &[4], r),
        unary("gather_rows", Op::GatherRows(Arc::new(vec![2, 0, 2, 1])), &[3, 2], r),
        unary("resize_bilinear_down", Op::ResizeBilinear { out_h: 3, out_w: 2 }, &[2, 5, 6], r),
        unary("resize_bilinear_up", Op::ResizeBilinear { out_h: 7, out_w: 9 }, &[1, 4, 3], r),
    ];

    let stencils = (0..6)
        .map(|_| {
            let mut st = [(0u32, 0.0); 8];
            for slot in st.iter_mut() {
                *slot = (r.random_range(0..24u32), r.random_range(0.0..1.0));
            }
            st
        })
        .collect();
    let plan = Arc::new(TrilerpPlan { spatial_len: 24, stencils });
    cases.push(Case::new(
        "trilerp",
        vec![random_tensor(&[3, 2, 3, 4], r, 1.0)],
        PRIMITIVE_TOL,
        Box::new(move |g, ids| g.trilerp(ids[0], plan.clone())),
    ));

    let labels = (0..18).map(|_| r.random_range(0..3u8)).collect();
    let lplan = Arc::new(LabelConvPlan { labels, in_dims: [2, 3, 3], num_labels: 3, kernel: 3, stride: 1 });
    let labels = (0..64).map(|_| r.random_range(0..3u8)).collect();
    let splan = Arc::new(LabelConvPlan { labels, in_dims: [4, 4, 4], num_labels: 3, kernel: 3, stride: 2 });
    cases.push(Case::new(
        "label_conv_stride2",
        vec![random_tensor(&[2, 3, 27], r, 1.0), random_tensor(&[2], r, 1.0)],
        PRIMITIVE_TOL,
        Box::new(move |g, ids| g.label_conv(splan.clone(), ids)),
    ));
    let p2 = lplan.clone();
    cases.push(Case::new(
        "label_conv",
        vec![random_tensor(&[2, 3, 27], r, 1.0), random_tensor(&[2], r, 1.0)],
        PRIMITIVE_TOL,
        Box::new(move |g, ids| g.label_conv(p2.clone(), ids)),
    ));
    cases.push(Case::new(
        "label_conv_code",
        vec![
            random_tensor(&[2, 3, 27], r, 1.0),
            random_tensor(&[2], r, 1.0),
            random_tensor(&[2, 2, 27], r, 1.0),
            random_tensor(&[2], r, 1.0),
        ],
        PRIMITIVE_TOL,
        Box::new(move |g, ids| g.label_conv(lplan.clone(), ids)),
    ));

    let cplan = Arc::new(random_composite_plan(r, 5, 5, 2));
    let s = cplan.num_samples;
    let c2 = cplan.clone();
    cases.push(Case::new(
        "composite",
        vec![random_tensor(&[s, 3], r, 1.0), positive_tensor(&[s], r), random_tensor(&[5, 3], r, 1.0)],
        PRIMITIVE_TOL,
        Box::new(move |g, ids| g.composite(ids[0], ids[1], ids[2], c2.clone())),
    ));
    cases.push(Case::new(
        "object_alpha",
        vec![positive_tensor(&[s], r)],
        PRIMITIVE_TOL,
        Box::new(move |g, ids| g.object_alpha(ids[0], cplan.clone(), 1)),
    ));
    cases
}
