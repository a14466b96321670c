//! Reverse-mode differentiation over a recorded chain of layer primitives.
//!
//! A [`Recorder`] executes primitives eagerly and keeps whatever each one
//! needs for its adjoint (the ReLU input, the pooling argmax, the sampling
//! location). The finished [`ComputationRecord`] is immutable and can be
//! replayed by [`vjp`] any number of times, from any number of threads.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::{self, Location};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum Step {
    Conv2d {
        input_shape: Vec<usize>,
        kernel: Arc<Tensor>,
        stride: usize,
        padding: usize,
    },
    Relu {
        input: Tensor,
    },
    MaxPool2d {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    BilinearSample {
        featmap_shape: Vec<usize>,
        location: Location,
    },
}

impl Step {
    fn name(&self) -> &'static str {
        match self {
            Step::Conv2d { .. } => "conv2d",
            Step::Relu { .. } => "relu",
            Step::MaxPool2d { .. } => "maxpool2d",
            Step::BilinearSample { .. } => "bilinear_sample",
        }
    }
}

/// Executed primitives of one forward pass, in order.
#[derive(Debug, Clone)]
pub struct ComputationRecord {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    steps: Vec<Step>,
}

impl ComputationRecord {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Primitive names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.steps.iter().map(Step::name).collect()
    }
}

/// Runs primitives forward while building a [`ComputationRecord`].
#[derive(Debug)]
pub struct Recorder {
    current: Tensor,
    record: ComputationRecord,
}

impl Recorder {
    pub fn new(input: Tensor) -> Self {
        let shape = input.shape().to_vec();
        Self {
            current: input,
            record: ComputationRecord {
                input_shape: shape.clone(),
                output_shape: shape,
                steps: Vec::new(),
            },
        }
    }

    pub fn current(&self) -> &Tensor {
        &self.current
    }

    fn push(&mut self, out: Tensor, step: Step) {
        self.record.output_shape = out.shape().to_vec();
        self.record.steps.push(step);
        self.current = out;
    }

    pub fn conv2d(
        &mut self,
        kernel: &Arc<Tensor>,
        bias: &[f64],
        stride: usize,
        padding: usize,
    ) -> Result<&mut Self> {
        let out = ops::conv2d(&self.current, kernel, bias, stride, padding)?;
        let step = Step::Conv2d {
            input_shape: self.current.shape().to_vec(),
            kernel: Arc::clone(kernel),
            stride,
            padding,
        };
        self.push(out, step);
        Ok(self)
    }

    pub fn relu(&mut self) -> &mut Self {
        let out = ops::relu(&self.current);
        let input = std::mem::replace(&mut self.current, Tensor::zeros(&[1]));
        self.push(out, Step::Relu { input });
        self
    }

    pub fn maxpool2d(&mut self, window: usize, stride: usize) -> Result<&mut Self> {
        let (out, argmax) = ops::maxpool2d_with_indices(&self.current, window, stride)?;
        let step = Step::MaxPool2d {
            input_shape: self.current.shape().to_vec(),
            argmax,
        };
        self.push(out, step);
        Ok(self)
    }

    pub fn bilinear_sample(&mut self, location: Location) -> Result<&mut Self> {
        let values = ops::bilinear_sample(&self.current, location)?;
        let out = Tensor::new(vec![values.len()], values)?;
        let step = Step::BilinearSample {
            featmap_shape: self.current.shape().to_vec(),
            location,
        };
        self.push(out, step);
        Ok(self)
    }

    pub fn finish(self) -> (Tensor, ComputationRecord) {
        (self.current, self.record)
    }
}

/// Vector-Jacobian product: the adjoint of the recorded input given an
/// adjoint of the recorded output.
pub fn vjp(record: &ComputationRecord, output_adjoint: &Tensor) -> Result<Tensor> {
    if output_adjoint.shape() != record.output_shape.as_slice() {
        return Err(Error::shape(
            "vjp",
            format!(
                "adjoint shape {:?} does not match recorded output {:?}",
                output_adjoint.shape(),
                record.output_shape
            ),
        ));
    }
    let mut adj = output_adjoint.clone();
    for step in record.steps.iter().rev() {
        adj = match step {
            Step::Conv2d {
                input_shape,
                kernel,
                stride,
                padding,
            } => ops::conv2d_backward(&adj, kernel, input_shape, *stride, *padding)?,
            Step::Relu { input } => ops::relu_backward(&adj, input)?,
            Step::MaxPool2d {
                input_shape,
                argmax,
            } => ops::maxpool2d_backward(&adj, argmax, input_shape)?,
            Step::BilinearSample {
                featmap_shape,
                location,
            } => ops::bilinear_sample_backward(adj.data(), featmap_shape, *location)?,
        };
    }
    Ok(adj)
}

/// Central finite differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// element of `x`.
pub fn finite_diff(f: impl Fn(&Tensor) -> f64, x: &Tensor, step: f64) -> Result<Tensor> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite_diff", format!("step must be positive, got {step}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - step;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let x = Tensor::from_fn(&[2, 6, 6], |i| ((i * 7) % 11) as f64 - 5.0);
        let kernel = Arc::new(Tensor::from_fn(&[3, 2, 3, 3], |i| ((i % 5) as f64 - 2.0) * 0.1));
        let mut rec = Recorder::new(x.clone());
        rec.conv2d(&kernel, &[0.1, -0.2, 0.3], 1, 1).unwrap().relu();
        rec.maxpool2d(2, 2).unwrap().bilinear_sample(Location::CENTER).unwrap();
        let (out, record) = rec.finish();
        assert_eq!(record.op_names(), ["conv2d", "relu", "maxpool2d", "bilinear_sample"]);
        let g = vjp(&record, &Tensor::zeros(out.shape())).unwrap();
        assert_eq!(g.shape(), x.shape());
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_relu_indicator() {
        let x = Tensor::new(vec![5], vec![-2.0, -0.5, 0.0, 0.5, 3.0]).unwrap();
        let mut rec = Recorder::new(x);
        rec.relu();
        let (_, record) = rec.finish();
        let g = vjp(&record, &Tensor::filled(&[5], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn adjoint_shape_is_checked() {
        let mut rec = Recorder::new(Tensor::zeros(&[4]));
        rec.relu();
        let (_, record) = rec.finish();
        assert!(matches!(
            vjp(&record, &Tensor::zeros(&[3])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn finite_diff_of_sum_and_square() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.37 - 1.0);
        let g = finite_diff(|t| t.data().iter().sum(), &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-9));

        let x = Tensor::new(vec![1], vec![3.0]).unwrap();
        let g = finite_diff(|t| t.data()[0] * t.data()[0], &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);

        assert!(finite_diff(|_| 0.0, &x, 0.0).is_err());
    }
}
