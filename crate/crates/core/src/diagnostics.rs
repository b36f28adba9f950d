//! Finite-difference gradient suite over every differentiable operation and
//! an end-to-end composite: a two-layer generator with one attention block,
//! rendering, and both discriminators.

use std::f64::consts::PI;
use std::rc::Rc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tpa3d_autodiff::{grad_check_report, Array, Param, SampleGrid, Tensor, TensorError};

use crate::adversarial::{clip_distance, generator_loss, r1_penalty, DiscCondition, DiscriminatorConfig, ImageEmbedder};
use crate::config::RunConfig;
use crate::error::Result;
use crate::generator::{GeneratorConfig, ModulatedConv};
use crate::model::Tpa3d;
use crate::render::{composite, Camera};
use crate::surface::{mesh_vertex_positions, sample_triplane};
use crate::text::TextConfig;
use crate::tpa::{Ablation, Attention, TpaBlock, TpaConfig};
use crate::triplane::Triplane;

pub const OP_TOLERANCE: f64 = 1e-5;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;
const OP_EPS: f64 = 1e-6;
/// Larger steps keep cancellation error below tolerance on tiny composite gradients.
const COMPOSITE_EPS: f64 = 2e-5;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// Analytic and numeric derivative at the worst index.
    pub worst: (f64, f64),
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientSuiteReport {
    pub entries: Vec<GradCheckEntry>,
    pub seconds: f64,
}

impl GradientSuiteReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| (a.max_rel_err / a.tolerance).total_cmp(&(b.max_rel_err / b.tolerance)))
    }
}

type Fun = Box<dyn Fn(&Tensor) -> std::result::Result<Tensor, TensorError>>;

struct Case {
    name: &'static str,
    x: Array,
    f: Fun,
}

fn weights(shape: &[usize], seed: u64) -> Tensor {
    Tensor::constant(Array::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// `sum(y * w)` for a fixed random `w`, so every output entry matters.
fn project(y: &Tensor, seed: u64) -> std::result::Result<Tensor, TensorError> {
    Ok(y.mul(&weights(y.shape(), seed))?.sum())
}

fn case(name: &'static str, x: Array, f: impl Fn(&Tensor) -> std::result::Result<Tensor, TensorError> + 'static) -> Case {
    Case { name, x, f: Box::new(f) }
}

fn unary(name: &'static str, x: Array, op: impl Fn(&Tensor) -> Tensor + 'static) -> Case {
    case(name, x, move |t| project(&op(t), 11))
}

fn op_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut randn = |shape: &[usize]| Array::randn(shape.to_vec(), 1.0, &mut rng);
    let positive = |a: Array| a.map(|v| v.abs() + 0.5);
    let other = Tensor::constant(randn(&[3, 4]));
    let denom = Tensor::constant(positive(randn(&[3, 4])));
    let rhs = Tensor::constant(randn(&[4, 5]));
    let kernel = Tensor::constant(randn(&[3, 2, 3, 3]));
    let image = Tensor::constant(randn(&[2, 6, 6]));
    let column = Tensor::constant(randn(&[3]));
    let row = Tensor::constant(randn(&[4]));
    let scalar = Tensor::constant(Array::from_vec(vec![0.7]));
    let mul_c = randn(&[3, 4]);
    let grid = SampleGrid::new(5, 5, &[[0.1, -0.3], [0.77, 0.41], [-0.9, 0.95], [0.33, 0.0]]);
    let idx: Rc<[usize]> = vec![0, 3, 3, 7, 11, 5].into();
    let mask = vec![true, false, true, true];
    let c1 = Tensor::constant(randn(&[2, 4]));

    let mut v = vec![
        case("add", randn(&[3, 4]), move |x| project(&x.add(&other)?, 1)),
        case("sub", randn(&[3, 4]), {
            let o = Tensor::constant(mul_c.clone());
            move |x| project(&o.sub(x)?, 2)
        }),
        case("mul", randn(&[3, 4]), {
            let o = Tensor::constant(mul_c.clone());
            move |x| project(&x.mul(&x.mul(&o)?)?, 3)
        }),
        case("div", randn(&[3, 4]), {
            let d = denom.clone();
            move |x| project(&x.div(&d)?, 4)
        }),
        case("div_denominator", positive(randn(&[3, 4])), {
            let n = Tensor::constant(mul_c.clone());
            move |x| project(&n.div(x)?, 5)
        }),
        unary("neg", randn(&[3, 4]), |t| t.neg()),
        unary("exp", randn(&[3, 4]), |t| t.exp()),
        unary("ln", positive(randn(&[3, 4])), |t| t.ln()),
        unary("sigmoid", randn(&[3, 4]), |t| t.sigmoid()),
        unary("tanh", randn(&[3, 4]), |t| t.tanh()),
        unary("softplus", randn(&[3, 4]), |t| t.softplus()),
        unary("log_sigmoid", randn(&[3, 4]), |t| t.log_sigmoid()),
        unary("sqrt", positive(randn(&[3, 4])), |t| t.sqrt()),
        unary("square", randn(&[3, 4]), |t| t.square()),
        unary("scale", randn(&[3, 4]), |t| t.scale(-1.7)),
        unary("add_scalar", randn(&[3, 4]), |t| t.add_scalar(0.3).square()),
        unary("powf", positive(randn(&[3, 4])), |t| t.powf(1.5)),
        case("mul_const", randn(&[3, 4]), move |x| project(&x.mul_const(&mul_c)?, 6)),
        unary("leaky_relu", randn(&[3, 4]), |t| t.leaky_relu(0.2)),
        unary("relu", randn(&[3, 4]), |t| t.relu()),
        case("matmul", randn(&[3, 4]), move |x| project(&x.matmul(&rhs)?, 7)),
        case("transpose", randn(&[3, 4]), |x| project(&x.transpose()?, 8)),
        case("softmax_rows", randn(&[3, 4]), |x| project(&x.softmax_rows()?, 9)),
        case("masked_softmax_rows", randn(&[3, 4]), move |x| project(&x.masked_softmax_rows(Some(&mask))?, 10)),
        case("layer_norm_rows", randn(&[3, 4]), |x| project(&x.layer_norm_rows(1e-5)?, 12)),
        case("conv2d_input", randn(&[2, 6, 6]), move |x| project(&x.conv2d(&kernel)?, 13)),
        case("conv2d_kernel", randn(&[3, 2, 3, 3]), move |k| project(&image.conv2d(k)?, 14)),
        case("avg_pool2", randn(&[2, 6, 6]), |x| project(&x.avg_pool2()?, 15)),
        case("avg_pool2_adjoint", randn(&[2, 3, 3]), |x| project(&x.avg_pool2_adjoint()?, 16)),
        case("bilinear_upsample", randn(&[2, 3, 3]), |x| project(&x.bilinear_upsample(2)?, 17)),
        case("bilinear_upsample_adjoint", randn(&[2, 6, 6]), |x| project(&x.bilinear_upsample_adjoint(2)?, 18)),
        case("bilinear_sample", randn(&[2, 5, 5]), {
            let g = grid.clone();
            move |x| project(&x.bilinear_sample(&g)?, 19)
        }),
        case("bilinear_scatter", randn(&[4, 2]), move |x| project(&x.bilinear_scatter(&grid)?, 20)),
        case("gather", randn(&[12]), {
            let i = idx.clone();
            move |x| project(&x.gather(&i)?, 21)
        }),
        case("scatter_add", randn(&[6]), move |x| project(&x.scatter_add(&idx, &[12])?, 22)),
        case("sum", randn(&[3, 4]), |x| Ok(x.square().sum())),
        case("mean", randn(&[3, 4]), |x| Ok(x.square().mean())),
        case("broadcast_scalar", randn(&[1]), |x| project(&x.broadcast_scalar(&[3, 4])?, 23)),
        case("sum_to_axis", randn(&[3, 4]), |x| project(&x.sum_to_axis(1)?, 24)),
        case("broadcast_axis", randn(&[3]), |x| project(&x.broadcast_axis(0, &[3, 4])?, 25)),
        case("add_axis", randn(&[4]), {
            let base = Tensor::constant(Array::ones([3, 4]));
            move |x| project(&base.add_axis(x, 1)?.square(), 26)
        }),
        case("mul_axis", randn(&[3, 4]), move |x| project(&x.mul_axis(&column, 0)?, 27)),
        case("mul_axis_factor", randn(&[4]), {
            let base = Tensor::constant(Array::ones([3, 4]).map(|v| v * 0.5));
            move |x| project(&base.mul_axis(x, 1)?, 28)
        }),
        case("mul_scalar", randn(&[3, 4]), move |x| project(&x.mul_scalar(&scalar)?.square(), 29)),
        case("dot", randn(&[4]), move |x| Ok(x.dot(&row)?.square())),
        case("reshape", randn(&[3, 4]), |x| project(&x.reshape(&[2, 6])?, 30)),
        case("narrow", randn(&[3, 4]), |x| project(&x.narrow(1, 1, 2)?, 31)),
        case("pad_axis", randn(&[3, 2]), |x| project(&x.pad_axis(1, 1, 4)?, 32)),
        case("concat", randn(&[1, 4]), move |x| project(&Tensor::concat(&[c1.clone(), x.clone()], 0)?, 33)),
    ];
    v.extend(model_op_cases());
    v
}

fn model_op_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut v = Vec::new();

    let rays = 3;
    let samples = 16;
    let sdf: Vec<f64> = (0..rays * samples).map(|i| 0.6 - 0.1 * (i % samples) as f64 + 0.05 * (i / samples) as f64).collect();
    let rgb = Array::uniform([rays, samples, 3], 0.1, 0.9, &mut rng);
    let rgb_t = Tensor::constant(rgb.clone());
    v.push(case("composite_sdf", Array::new([rays, samples], sdf.clone()).expect("shape"), move |x| {
        project(&composite(x, &rgb_t, 8.0)?, 40)
    }));
    let sdf_t = Tensor::constant(Array::new([rays, samples], sdf).expect("shape"));
    v.push(case("composite_rgb", rgb, move |x| project(&composite(&sdf_t, x, 8.0)?, 41)));

    let conv = Rc::new(ModulatedConv::new("probe.conv", 3, 4, 3, 5, &mut rng));
    let input = Tensor::constant(Array::randn([3, 5, 5], 1.0, &mut rng));
    v.push(case("modulated_conv_style", Array::randn([1, 5], 1.0, &mut rng), move |s| {
        project(&conv.forward(&input, s)?, 42)
    }));

    let attn = Rc::new(Attention::new("probe.attn", 4, 3, 4, 2, &mut rng).expect("dims"));
    let keys = Tensor::constant(Array::randn([5, 3], 1.0, &mut rng));
    let key_mask = vec![true, true, false, true, true];
    v.push(case("attention_queries", Array::randn([6, 4], 1.0, &mut rng), {
        let attn = attn.clone();
        move |q| project(&attn.forward(q, q, &keys, Some(&key_mask))?, 43)
    }));
    let queries = Tensor::constant(Array::randn([6, 4], 1.0, &mut rng));
    v.push(case("attention_keys", Array::randn([5, 3], 1.0, &mut rng), move |k| {
        project(&attn.forward(&queries, &queries, k, None)?, 44)
    }));

    let block = Rc::new(TpaBlock::new("probe.tpa", 4, 3, TpaConfig { heads: 2, ..TpaConfig::default() }, &mut rng).expect("dims"));
    let words = Array::randn([3, 3], 1.0, &mut rng);
    let word_mask = vec![true, true, false];
    v.push(case("tpa_block_input", Array::randn([12, 2, 2], 1.0, &mut rng), {
        let (block, words, word_mask) = (block.clone(), Tensor::constant(words.clone()), word_mask.clone());
        move |x| {
            let tp = Triplane::from_stacked(x)?;
            project(&block.forward(&tp, &words, &word_mask, Ablation::Full)?.stacked()?, 45)
        }
    }));
    let fixed = Triplane::from_stacked(&Tensor::constant(Array::randn([12, 2, 2], 1.0, &mut rng))).expect("stacked");
    v.push(case("tpa_block_words", words, move |w| {
        project(&block.forward(&fixed, w, &word_mask, Ablation::Full)?.stacked()?, 46)
    }));

    let points = vec![[0.1, -0.2, 0.3], [0.75, 0.5, -0.6], [-0.33, 0.9, 0.05]];
    v.push(case("sample_triplane", Array::randn([6, 3, 3], 1.0, &mut rng), move |x| {
        project(&sample_triplane(&Triplane::from_stacked(x)?, &points)?, 47)
    }));

    let edges = vec![[0, 1], [1, 2], [0, 3]];
    let positions = Tensor::constant(Array::randn([4, 3], 1.0, &mut rng));
    v.push(case("mesh_vertex_positions", Array::from_vec(vec![-0.4, 0.7, 0.9, 0.3]), move |s| {
        project(&mesh_vertex_positions(&edges, s, &positions)?, 48)
    }));

    let sentence = vec![0.3, -0.5, 0.8];
    v.push(case("clip_distance", Array::randn([1, 3], 1.0, &mut rng), move |e| Ok(clip_distance(e, &sentence)?)));
    v
}

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.text = TextConfig { sentence_dim: 4, word_dim: 4, max_tokens: 4, ..TextConfig::default() };
    c.generator = GeneratorConfig {
        layers: 2,
        base_res: 2,
        channels: 4,
        trunk_channels: 4,
        style_dim: 4,
        z_dim: 3,
        mapping_depth: 2,
        alpha: 0.5,
        tpa_geo: vec![false, true],
        tpa_tex: vec![false, false],
    };
    c.tpa = TpaConfig { heads: 2, ..TpaConfig::default() };
    c.surface.hidden = 6;
    c.render.img_res = 8;
    c.render.eval_img_res = 8;
    c.render.samples = 16;
    c.render.k_sharp = 6.0;
    c.discriminator = DiscriminatorConfig { base_channels: 2, max_channels: 4, feature_dim: 4 };
    c.eval.captions = vec!["a red sphere".into(), "a blue box".into()];
    c
}

/// Generator loss through mapping, generator, attention, render and both
/// discriminators, probed wrt a chosen parameter.
fn composite_cases(model: Rc<Tpa3d>) -> Result<Vec<(String, Array, Fun)>> {
    let features = model.encode("a red sphere")?;
    let camera = Camera::new(PI / 5.0, 0.35, 3.0, model.config.render.img_res, true)?;
    let names = [
        "map.geo.0.weight",
        "gen.const",
        "gen.layer2.trunk.weight",
        "tpa.geo.2.cross_word.query",
        "tpa.geo.2.cross_plane.value",
        "head.geo.1.weight",
        "head.color.0.bias",
        "disc.rgb.fc.weight",
        "disc.mask.out.bias",
    ];
    let mut out = Vec::new();
    for name in names {
        let value = {
            let params = tpa3d_autodiff::Parameterized::params(&*model);
            params.iter().find(|p| p.name() == name).map(|p| p.value())
        };
        let Some(value) = value else {
            return Err(crate::Error::Usage(format!("composite probe `{name}` is not a parameter")));
        };
        let (m, f, n) = (model.clone(), features.clone(), name.to_string());
        let fun: Fun = Box::new(move |x: &Tensor| {
            let params = tpa3d_autodiff::Parameterized::params(&*m);
            let p: &Param = params.iter().find(|p| p.name() == n).expect("probe exists");
            let original = p.value();
            p.replace_leaf(x.clone());
            let result = (|| -> Result<Tensor> {
                let g = m.generate_features(f.clone(), 5)?;
                let view = m.render(&g.output.geo, &g.output.tex, &camera)?;
                let cond = DiscCondition::new(&camera, &f.sentence);
                let clip = m.embedder.as_ref().map(|e| (e as &dyn ImageEmbedder, 0.1));
                Ok(generator_loss(&m.discs, &view, &cond, clip)?.objective)
            })();
            p.set_value(original)?;
            Ok(result?)
        });
        out.push((format!("composite/{name}"), value, fun));
    }
    Ok(out)
}

fn run(name: String, x: &Array, f: &dyn Fn(&Tensor) -> std::result::Result<Tensor, TensorError>, eps: f64, tolerance: f64, max_entries: usize) -> Result<GradCheckEntry> {
    let n = x.len();
    let stride = n.div_ceil(max_entries).max(1);
    let indices: Vec<usize> = (0..n).step_by(stride).collect();
    let report = grad_check_report(f, x, eps, &indices)?;
    let at = indices.iter().position(|&i| i == report.worst_index).unwrap_or(0);
    Ok(GradCheckEntry {
        name,
        max_rel_err: report.max_rel_err,
        tolerance,
        checked: indices.len(),
        worst: (report.analytic[at], report.numeric[at]),
        passed: report.max_rel_err < tolerance,
    })
}

/// The r1 penalty is itself a gradient, so this exercises second-order paths.
fn r1_case(model: Rc<Tpa3d>) -> Result<(String, Array, Fun)> {
    let res = model.config.render.img_res;
    let image = Array::uniform([1, res, res], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(23));
    let camera = Camera::new(0.4, 0.2, 3.0, res, true)?;
    let cond = DiscCondition::new(&camera, &model.encode("a blue box")?.sentence);
    let name = "disc.mask.conv0.weight".to_string();
    let value = {
        let params = model.discs.mask.params();
        params.iter().find(|p| p.name() == name).map(|p| p.value()).expect("first mask conv")
    };
    let img = Tensor::constant(image);
    let fun: Fun = Box::new(move |x: &Tensor| {
        let p = model.discs.mask.params().into_iter().find(|p| p.name() == name).expect("probe exists");
        let original = p.value();
        p.replace_leaf(x.clone());
        let r = r1_penalty(&model.discs.mask, &img, &cond);
        p.set_value(original)?;
        Ok(r?)
    });
    Ok(("r1_penalty/disc.mask.conv0.weight".into(), value, fun))
}

/// Every op check plus the composite checks, in a fixed order.
pub fn gradient_suite() -> Result<GradientSuiteReport> {
    let start = Instant::now();
    let mut entries = Vec::new();
    for c in op_cases() {
        entries.push(run(c.name.to_string(), &c.x, &c.f, OP_EPS, OP_TOLERANCE, 64)?);
    }
    let model = Rc::new(Tpa3d::new(&tiny_config())?);
    let (name, x, f) = r1_case(model.clone())?;
    entries.push(run(name, &x, &f, COMPOSITE_EPS, COMPOSITE_TOLERANCE, 32)?);
    for (name, x, f) in composite_cases(model)? {
        entries.push(run(name, &x, &f, COMPOSITE_EPS, COMPOSITE_TOLERANCE, 32)?);
    }
    Ok(GradientSuiteReport { entries, seconds: start.elapsed().as_secs_f64() })
}
