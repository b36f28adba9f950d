//! Finite-difference checks for every differentiable op, including
//! gradients of gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tpa3d_autodiff::{grad, grad_check, set_grad_enabled, Array, Result, SampleGrid, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random fixed projection so the checked scalar does not cancel.
fn weighted_sum(y: &Tensor, seed: u64) -> Result<Tensor> {
    let w = Tensor::constant(Array::uniform(y.shape().to_vec(), 0.5, 1.5, &mut rng(seed)));
    y.dot(&w)
}

fn check(name: &str, x: &Array, tol: f64, f: impl Fn(&Tensor) -> Result<Tensor>) {
    let err = grad_check(f, x, 1e-5).unwrap();
    assert!(err < tol, "{name}: rel err {err:e} >= {tol:e}");
}

#[test]
fn matmul_grad_matches_central_differences() {
    let a = Array::randn([3, 4], 1.0, &mut rng(1));
    let b = Tensor::constant(Array::randn([4, 2], 1.0, &mut rng(2)));
    check("matmul/A", &a, 1e-6, |x| Ok(x.matmul(&b)?.sum()));
    let a_t = Tensor::constant(a.clone());
    check("matmul/B", b.value(), 1e-6, |x| weighted_sum(&a_t.matmul(x)?, 3));
}

#[test]
fn softmax_grad_matches_central_differences() {
    let x = Array::randn([3, 5], 1.0, &mut rng(4));
    check("softmax", &x, 1e-6, |x| weighted_sum(&x.softmax_rows()?, 5));
    let mask = [true, false, true, true, false];
    check("masked softmax", &x, 1e-6, |x| weighted_sum(&x.masked_softmax_rows(Some(&mask))?, 6));
}

#[test]
fn conv2d_grads_match_central_differences() {
    let x = Array::randn([2, 5, 4], 1.0, &mut rng(7));
    let k = Array::randn([3, 2, 3, 3], 1.0, &mut rng(8));
    let kt = Tensor::constant(k.clone());
    let xt = Tensor::constant(x.clone());
    check("conv2d/x", &x, 1e-5, |x| weighted_sum(&x.conv2d(&kt)?, 9));
    check("conv2d/kernel", &k, 1e-5, |k| weighted_sum(&xt.conv2d(k)?, 10));
}

#[test]
fn pooling_and_upsampling_grads() {
    let x = Array::randn([2, 4, 6], 1.0, &mut rng(11));
    check("avg_pool2", &x, 1e-6, |x| weighted_sum(&x.avg_pool2()?, 12));
    let x = Array::randn([2, 3, 2], 1.0, &mut rng(13));
    check("upsample", &x, 1e-6, |x| weighted_sum(&x.bilinear_upsample(3)?, 14));
    let g = Array::randn([2, 6, 4], 1.0, &mut rng(15));
    check("upsample adjoint", &g, 1e-6, |x| weighted_sum(&x.bilinear_upsample_adjoint(2)?, 16));
}

#[test]
fn elementwise_grads() {
    let x = Array::uniform([7], 0.2, 2.0, &mut rng(17));
    let y = Tensor::constant(Array::uniform([7], 0.5, 1.5, &mut rng(18)));
    type UnaryFn = fn(&Tensor) -> Tensor;
    let unaries: [(&str, UnaryFn); 11] = [
        ("exp", |t| t.exp()),
        ("ln", |t| t.ln()),
        ("sigmoid", |t| t.sigmoid()),
        ("tanh", |t| t.tanh()),
        ("softplus", |t| t.softplus()),
        ("log_sigmoid", |t| t.log_sigmoid()),
        ("sqrt", |t| t.sqrt()),
        ("square", |t| t.square()),
        ("powf", |t| t.powf(-0.5)),
        ("leaky_relu", |t| t.add_scalar(-1.0).leaky_relu(0.2)),
        ("neg", |t| t.neg().scale(3.0)),
    ];
    for (name, f) in unaries {
        check(name, &x, 1e-6, |t| weighted_sum(&f(t), 19));
    }
    check("add", &x, 1e-6, |t| weighted_sum(&t.add(&y)?, 20));
    check("sub", &x, 1e-6, |t| weighted_sum(&y.sub(t)?, 21));
    check("mul", &x, 1e-6, |t| weighted_sum(&t.mul(&y)?, 22));
    check("div/num", &x, 1e-6, |t| weighted_sum(&t.div(&y)?, 23));
    check("div/den", &x, 1e-6, |t| weighted_sum(&y.div(t)?, 24));
}

#[test]
fn shape_and_broadcast_grads() {
    let x = Array::randn([3, 4], 1.0, &mut rng(25));
    let v = Tensor::constant(Array::randn([4], 1.0, &mut rng(26)));
    check("transpose", &x, 1e-6, |t| weighted_sum(&t.transpose()?, 27));
    check("narrow", &x, 1e-6, |t| weighted_sum(&t.narrow(1, 1, 2)?, 28));
    check("concat", &x, 1e-6, |t| weighted_sum(&Tensor::concat(&[t.clone(), t.square()], 0)?, 29));
    check("add_axis", &x, 1e-6, |t| weighted_sum(&t.add_axis(&v, 1)?.square(), 30));
    check("mul_axis/vec", v.value(), 1e-6, |b| {
        weighted_sum(&Tensor::constant(x.clone()).mul_axis(b, 1)?, 31)
    });
    check("sum_to_axis", &x, 1e-6, |t| weighted_sum(&t.sum_to_axis(0)?.square(), 32));
    check("layer_norm", &x, 1e-5, |t| weighted_sum(&t.layer_norm_rows(1e-5)?, 33));
}

#[test]
fn sampling_and_gather_grads() {
    let plane = Array::randn([2, 4, 5], 1.0, &mut rng(34));
    let coords = [[-0.3, 0.7], [0.9, -1.0], [0.1, 0.25], [1.2, 0.0]];
    let grid = SampleGrid::new(4, 5, &coords);
    check("bilinear_sample", &plane, 1e-6, |t| weighted_sum(&t.bilinear_sample(&grid)?, 35));
    let idx: std::rc::Rc<[usize]> = vec![3, 0, 3, 7].into();
    let x = Array::randn([2, 4], 1.0, &mut rng(36));
    check("gather", &x, 1e-6, |t| weighted_sum(&t.gather(&idx)?.square(), 37));
}

#[test]
fn composite_softmax_of_linear_map() {
    let w = Tensor::constant(Array::randn([4, 3], 1.0, &mut rng(38)));
    let x = Array::randn([2, 4], 1.0, &mut rng(39));
    check("sum(softmax(xW)) weighted", &x, 1e-6, |t| {
        weighted_sum(&t.matmul(&w)?.softmax_rows()?, 40)
    });
}

/// Squared input-gradient norm of a small conv critic, differentiated with
/// respect to the kernel: the shape of a gradient penalty.
#[test]
fn gradient_penalty_second_order_matches_central_differences() {
    let image = Array::randn([2, 4, 4], 1.0, &mut rng(41));
    let readout = Tensor::constant(Array::randn([3, 2, 2], 1.0, &mut rng(42)));
    let kernel = Array::randn([3, 2, 3, 3], 0.5, &mut rng(43));
    let penalty = |k: &Tensor| -> Result<Tensor> {
        // grad_check evaluates probes with recording off; the inner gradient needs it on.
        let _mode = set_grad_enabled(true);
        let x = Tensor::param(image.clone());
        let logit = x.conv2d(k)?.leaky_relu(0.2).avg_pool2()?.dot(&readout)?;
        let gx = grad(&logit, &[&x], true)?.pop().flatten().expect("input grad");
        Ok(gx.square().sum())
    };
    check("r1 wrt kernel", &kernel, 1e-5, penalty);
}

#[test]
fn second_order_through_matmul_and_upsample() {
    let x0 = Array::randn([1, 2, 2], 1.0, &mut rng(44));
    let w = Array::randn([1, 2, 3, 3], 1.0, &mut rng(45));
    let f = |k: &Tensor| -> Result<Tensor> {
        let _mode = set_grad_enabled(true);
        let x = Tensor::param(x0.clone());
        let up = x.bilinear_upsample(2)?.reshape(&[1, 4, 4])?;
        let m = up.reshape(&[4, 4])?.matmul(&k.reshape(&[2, 9])?.narrow(1, 0, 4)?.transpose()?)?;
        let y = m.tanh().sum();
        let g = grad(&y, &[&x], true)?.pop().flatten().expect("grad");
        Ok(g.square().sum())
    };
    check("second order mixed", &w, 1e-5, f);
}
