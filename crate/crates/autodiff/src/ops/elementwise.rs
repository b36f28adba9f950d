use crate::array::Array;
use crate::error::{dim_err, Result};
use crate::tensor::{Op, Tensor};

const EXP_CLAMP: f64 = 700.0;
const LN_FLOOR: f64 = 1e-300;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Neg,
    Exp,
    Ln,
    Sigmoid,
    Tanh,
    Softplus,
    LogSigmoid,
    Sqrt,
    Square,
    Scale(f64),
    AddScalar(f64),
    Powf(f64),
}

impl Unary {
    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.min(EXP_CLAMP).exp(),
            Unary::Ln => x.max(LN_FLOOR).ln(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Softplus => softplus(x),
            Unary::LogSigmoid => -softplus(-x),
            Unary::Sqrt => x.max(0.0).sqrt(),
            Unary::Square => x * x,
            Unary::Scale(c) => c * x,
            Unary::AddScalar(c) => x + c,
            Unary::Powf(p) => x.powf(p),
        }
    }
}

impl Op for Unary {
    fn name(&self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Softplus => "softplus",
            Unary::LogSigmoid => "log_sigmoid",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
            Unary::Powf(_) => "powf",
        }
    }

    fn backward(&self, inputs: &[Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = &inputs[0];
        let gx = match *self {
            Unary::Neg => g.neg(),
            Unary::Exp => g.mul(y)?,
            Unary::Ln => g.div(x)?,
            Unary::Sigmoid => g.mul(&y.mul(&y.neg().add_scalar(1.0))?)?,
            Unary::Tanh => g.mul(&y.square().neg().add_scalar(1.0))?,
            Unary::Softplus => g.mul(&x.sigmoid())?,
            Unary::LogSigmoid => g.mul(&x.neg().sigmoid())?,
            Unary::Sqrt => g.div(y)?.scale(0.5),
            Unary::Square => g.mul(x)?.scale(2.0),
            Unary::Scale(c) => g.scale(c),
            Unary::AddScalar(_) => g.clone(),
            Unary::Powf(p) => g.mul(&x.powf(p - 1.0))?.scale(p),
        };
        Ok(vec![Some(gx)])
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op for Binary {
    fn name(&self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn backward(&self, inputs: &[Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        Ok(match self {
            Binary::Add => vec![Some(g.clone()), Some(g.clone())],
            Binary::Sub => vec![Some(g.clone()), Some(g.neg())],
            Binary::Mul => vec![
                a.requires_grad().then(|| g.mul(b)).transpose()?,
                b.requires_grad().then(|| g.mul(a)).transpose()?,
            ],
            Binary::Div => {
                let ga = g.div(b)?;
                let gb = if b.requires_grad() { Some(ga.mul(y)?.neg()) } else { None };
                vec![Some(ga), gb]
            }
        })
    }
}

/// Multiplication by a constant array (no gradient to the constant).
struct MulConst(Array);

impl Op for MulConst {
    fn name(&self) -> &'static str {
        "mul_const"
    }

    fn backward(&self, _inputs: &[Tensor], _y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.mul_const(&self.0)?)])
    }
}

impl Tensor {
    fn unary(&self, op: Unary) -> Tensor {
        let value = self.value().map(|x| op.eval(x));
        Tensor::from_op(value, op, vec![self.clone()])
    }

    fn binary(&self, other: &Tensor, op: Binary) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return dim_err(op.name(), format!("{:?}", self.shape()), format!("{:?}", other.shape()));
        }
        let value = self.value().zip_map(other.value(), |a, b| match op {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        })?;
        Ok(Tensor::from_op(value, op, vec![self.clone(), other.clone()]))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Div)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Unary::Neg)
    }

    /// `exp`, with the argument clamped at 700 to stay finite.
    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp)
    }

    /// Natural log with the argument floored at 1e-300.
    pub fn ln(&self) -> Tensor {
        self.unary(Unary::Ln)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Unary::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Unary::Tanh)
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Unary::Softplus)
    }

    /// `log(sigmoid(x)) = -log(1 + exp(-x))`, evaluated stably.
    pub fn log_sigmoid(&self) -> Tensor {
        self.unary(Unary::LogSigmoid)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Unary::Sqrt)
    }

    pub fn square(&self) -> Tensor {
        self.unary(Unary::Square)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(Unary::Scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(Unary::AddScalar(c))
    }

    pub fn powf(&self, p: f64) -> Tensor {
        self.unary(Unary::Powf(p))
    }

    pub fn mul_const(&self, c: &Array) -> Result<Tensor> {
        let value = self.value().zip_map(c, |a, b| a * b)?;
        Ok(Tensor::from_op(value, MulConst(c.clone()), vec![self.clone()]))
    }

    pub fn leaky_relu(&self, negative_slope: f64) -> Tensor {
        let slope = self.value().map(|x| if x >= 0.0 { 1.0 } else { negative_slope });
        let value = self.value().zip_map(&slope, |a, s| a * s).expect("same shape");
        Tensor::from_op(value, MulConst(slope), vec![self.clone()])
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }
}
