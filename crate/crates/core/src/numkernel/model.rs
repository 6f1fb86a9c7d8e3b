//! Differentiable model contract and the evaluation entry points built on it.
//!
//! Conventions: a model maps a flat input `x` of length `d` to an output of
//! length `c`. `jvp` returns `J u` where `J` is the standard `c x d` Jacobian;
//! `vjp` returns `J^T v`. ReLU-style kinks use subgradient 0 at exactly 0.

use crate::error::{Error, Result};
use crate::numkernel::linalg::gemm;
use crate::numkernel::tensor::Tensor;

pub trait DiffModel {
    /// Declared input shape; the flat input length is its product.
    fn input_shape(&self) -> Vec<usize>;
    fn output_len(&self) -> usize;

    fn eval(&self, x: &[f64]) -> Vec<f64>;
    fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Vec<f64>;
    fn jvp(&self, x: &[f64], tangent: &[f64]) -> Vec<f64>;

    /// `count` tangents stacked row-wise; returns `count` output tangents stacked row-wise.
    fn jvp_batch(&self, x: &[f64], tangents: &[f64], count: usize) -> Vec<f64> {
        let d = self.input_len();
        let mut out = Vec::with_capacity(count * self.output_len());
        for t in tangents.chunks(d).take(count) {
            out.extend(self.jvp(x, t));
        }
        out
    }

    fn input_len(&self) -> usize {
        self.input_shape().iter().product()
    }
}

impl<M: DiffModel + ?Sized> DiffModel for &M {
    fn input_shape(&self) -> Vec<usize> {
        (**self).input_shape()
    }
    fn output_len(&self) -> usize {
        (**self).output_len()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (**self).eval(x)
    }
    fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Vec<f64> {
        (**self).vjp(x, cotangent)
    }
    fn jvp(&self, x: &[f64], tangent: &[f64]) -> Vec<f64> {
        (**self).jvp(x, tangent)
    }
    fn jvp_batch(&self, x: &[f64], tangents: &[f64], count: usize) -> Vec<f64> {
        (**self).jvp_batch(x, tangents, count)
    }
}

fn check_input<M: DiffModel + ?Sized>(model: &M, input: &Tensor) -> Result<()> {
    let want = model.input_shape();
    let flat_ok = input.numel() == want.iter().product::<usize>();
    if input.shape() != want.as_slice() && !(flat_ok && input.shape().len() == 1) {
        return Err(Error::Shape(format!(
            "model expects input of shape {:?}, got {:?}",
            want,
            input.shape()
        )));
    }
    Ok(())
}

pub fn forward<M: DiffModel + ?Sized>(model: &M, input: &Tensor) -> Result<Tensor> {
    check_input(model, input)?;
    Ok(Tensor::vector(model.eval(input.data())))
}

/// Gradient of output coordinate `output_index` with respect to the input.
pub fn input_gradient<M: DiffModel + ?Sized>(model: &M, input: &Tensor, output_index: usize) -> Result<Tensor> {
    check_input(model, input)?;
    let c = model.output_len();
    if output_index >= c {
        return Err(Error::InvalidArgument(format!(
            "output index {output_index} out of range for {c} outputs"
        )));
    }
    let mut e = vec![0.0; c];
    e[output_index] = 1.0;
    Tensor::new(input.shape().to_vec(), model.vjp(input.data(), &e))
}

pub fn directional_derivative<M: DiffModel + ?Sized>(model: &M, input: &Tensor, tangent: &Tensor) -> Result<Tensor> {
    check_input(model, input)?;
    if tangent.numel() != input.numel() {
        return Err(Error::Shape(format!(
            "tangent shape {:?} does not match input shape {:?}",
            tangent.shape(),
            input.shape()
        )));
    }
    Ok(Tensor::vector(model.jvp(input.data(), tangent.data())))
}

/// Standard `c x d` Jacobian, built from whichever of VJP/JVP needs fewer passes.
pub fn jacobian<M: DiffModel + ?Sized>(model: &M, x: &[f64]) -> Vec<f64> {
    let d = model.input_len();
    let c = model.output_len();
    let mut jac = vec![0.0; c * d];
    if c <= d {
        let mut e = vec![0.0; c];
        for i in 0..c {
            e[i] = 1.0;
            let row = model.vjp(x, &e);
            jac[i * d..(i + 1) * d].copy_from_slice(&row);
            e[i] = 0.0;
        }
    } else {
        let mut basis = vec![0.0; d * d];
        for j in 0..d {
            basis[j * d + j] = 1.0;
        }
        let cols = model.jvp_batch(x, &basis, d);
        for j in 0..d {
            for i in 0..c {
                jac[i * d + j] = cols[j * c + i];
            }
        }
    }
    jac
}

/// `f(x) = A x` with `A` of shape `c x d`.
#[derive(Clone, Debug)]
pub struct LinearMap {
    a: Tensor,
}

impl LinearMap {
    pub fn new(a: Tensor) -> Result<Self> {
        if !a.is_matrix() {
            return Err(Error::Shape("linear map needs a matrix".into()));
        }
        Ok(LinearMap { a })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.a
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let (c, d) = (self.a.rows(), self.a.cols());
        let mut out = vec![0.0; c];
        gemm(c, d, 1, 1.0, self.a.data(), false, v, false, 0.0, &mut out);
        out
    }
}

impl DiffModel for LinearMap {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.a.cols()]
    }
    fn output_len(&self) -> usize {
        self.a.rows()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x)
    }
    fn vjp(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        let (c, d) = (self.a.rows(), self.a.cols());
        let mut out = vec![0.0; d];
        gemm(d, c, 1, 1.0, self.a.data(), true, v, false, 0.0, &mut out);
        out
    }
    fn jvp(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        self.apply(u)
    }
    fn jvp_batch(&self, _x: &[f64], tangents: &[f64], count: usize) -> Vec<f64> {
        let (c, d) = (self.a.rows(), self.a.cols());
        let mut out = vec![0.0; count * c];
        gemm(count, d, c, 1.0, tangents, false, self.a.data(), true, 0.0, &mut out);
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl DiffModel for Identity {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.0]
    }
    fn output_len(&self) -> usize {
        self.0
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn vjp(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
    fn jvp(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

/// Elementwise ReLU with the strict `x > 0` mask.
#[derive(Clone, Copy, Debug)]
pub struct Relu(pub usize);

impl DiffModel for Relu {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.0]
    }
    fn output_len(&self) -> usize {
        self.0
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
    }
    fn vjp(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(v)
            .map(|(&xi, &vi)| if xi > 0.0 { vi } else { 0.0 })
            .collect()
    }
    fn jvp(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.vjp(x, u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Gelu => gelu(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Gelu => gelu_grad(x),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

/// GELU value and derivative sharing one transcendental evaluation.
#[inline]
pub fn gelu_with_grad(x: f64) -> (f64, f64) {
    let x2 = x * x;
    let inner = GELU_C * (x + 0.044715 * x2 * x);
    // tanh(u) = 1 - 2 / (exp(2u) + 1); saturates correctly at both ends
    let t = 1.0 - 2.0 / ((2.0 * inner).exp() + 1.0);
    let value = 0.5 * x * (1.0 + t);
    let grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x2);
    (value, grad)
}

pub fn gelu_grad(x: f64) -> f64 {
    let x2 = x * x;
    let inner = GELU_C * (x + 0.044715 * x2 * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x2)
}

/// Two-layer perceptron `W2 act(W1 x + b1) + b2`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Vec<f64>,
    pub w2: Tensor,
    pub b2: Vec<f64>,
    pub activation: Activation,
}

impl Mlp {
    pub fn random(d: usize, hidden: usize, c: usize, activation: Activation, seed: u64) -> Self {
        use crate::numkernel::rng;
        let mut r = rng::named_stream(seed, "mlp-init");
        let s1 = 1.0 / (d as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        Mlp {
            w1: Tensor::matrix(hidden, d, rng::normal_vec(&mut r, hidden * d, s1)).unwrap(),
            b1: rng::normal_vec(&mut r, hidden, 0.1),
            w2: Tensor::matrix(c, hidden, rng::normal_vec(&mut r, c * hidden, s2)).unwrap(),
            b2: rng::normal_vec(&mut r, c, 0.1),
            activation,
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let (h, d) = (self.w1.rows(), self.w1.cols());
        let mut z = self.b1.clone();
        gemm(h, d, 1, 1.0, self.w1.data(), false, x, false, 1.0, &mut z);
        z
    }
}

impl DiffModel for Mlp {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.w1.cols()]
    }
    fn output_len(&self) -> usize {
        self.w2.rows()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let z = self.pre_activation(x);
        let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
        let (c, h) = (self.w2.rows(), self.w2.cols());
        let mut out = self.b2.clone();
        gemm(c, h, 1, 1.0, self.w2.data(), false, &a, false, 1.0, &mut out);
        out
    }
    fn vjp(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let z = self.pre_activation(x);
        let (c, h) = (self.w2.rows(), self.w2.cols());
        let mut da = vec![0.0; h];
        gemm(h, c, 1, 1.0, self.w2.data(), true, v, false, 0.0, &mut da);
        for (g, &zi) in da.iter_mut().zip(&z) {
            *g *= self.activation.derivative(zi);
        }
        let d = self.w1.cols();
        let mut dx = vec![0.0; d];
        gemm(d, h, 1, 1.0, self.w1.data(), true, &da, false, 0.0, &mut dx);
        dx
    }
    fn jvp(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let z = self.pre_activation(x);
        let (h, d) = (self.w1.rows(), self.w1.cols());
        let mut dz = vec![0.0; h];
        gemm(h, d, 1, 1.0, self.w1.data(), false, u, false, 0.0, &mut dz);
        for (t, &zi) in dz.iter_mut().zip(&z) {
            *t *= self.activation.derivative(zi);
        }
        let c = self.w2.rows();
        let mut out = vec![0.0; c];
        gemm(c, h, 1, 1.0, self.w2.data(), false, &dz, false, 0.0, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_model() -> LinearMap {
        LinearMap::new(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap()).unwrap()
    }

    #[test]
    fn forward_linear_identity() {
        let y = forward(&diag_model(), &Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
        let x = Tensor::vector(vec![0.3, -1.5, 2.0]);
        assert_eq!(forward(&Identity(3), &x).unwrap(), x);
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let err = forward(&diag_model(), &Tensor::vector(vec![1.0, 1.0, 1.0])).unwrap_err();
        assert!(err.to_string().contains("expects input"));
    }

    #[test]
    fn linear_gradient_is_row() {
        let m = LinearMap::new(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap()).unwrap();
        let x = Tensor::vector(vec![0.5, -0.2, 7.0]);
        assert_eq!(input_gradient(&m, &x, 1).unwrap().data(), &[4.0, 5.0, 6.0]);
        assert!(input_gradient(&m, &x, 2).is_err());
        let u = Tensor::vector(vec![1.0, 0.0, -1.0]);
        assert_eq!(directional_derivative(&m, &x, &u).unwrap().data(), &[-2.0, -2.0]);
        let zero = Tensor::vector(vec![0.0; 3]);
        assert_eq!(directional_derivative(&m, &x, &zero).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_gradient_masks() {
        let x = Tensor::vector(vec![1.0, -1.0]);
        assert_eq!(input_gradient(&Relu(2), &x, 0).unwrap().data(), &[1.0, 0.0]);
        // kink: subgradient 0
        let x0 = Tensor::vector(vec![0.0, 2.0]);
        assert_eq!(input_gradient(&Relu(2), &x0, 0).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn jacobian_routes_agree() {
        let wide = Mlp::random(5, 7, 3, Activation::Tanh, 1);
        let tall = Mlp::random(3, 7, 5, Activation::Tanh, 2);
        for m in [&wide, &tall] {
            let x: Vec<f64> = (0..m.input_len()).map(|i| 0.1 * i as f64 - 0.2).collect();
            let jac = jacobian(m, &x);
            let (c, d) = (m.output_len(), m.input_len());
            for i in 0..c {
                let mut e = vec![0.0; c];
                e[i] = 1.0;
                let row = m.vjp(&x, &e);
                for j in 0..d {
                    assert!((jac[i * d + j] - row[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
