use super::{Gradients, Tape, Tensor, TensorError, Var};

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Ordered collection of parameters. Order is insertion order and is the
/// order used by optimizers and checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its index. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize, TensorError> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(TensorError::Invalid(format!("duplicate parameter name {name:?}")));
        }
        self.params.push(Parameter::new(name, value));
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape` as a differentiable borrowed leaf,
    /// returning their vars in store order.
    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.borrowed(&p.value, trainable))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `scale · grads[vars[i]]` to parameter `i`'s gradient.
    pub fn accumulate(&mut self, vars: &[Var], grads: &Gradients, scale: f32) {
        for (p, v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = grads.get(*v) {
                for (d, s) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *d += scale * s;
                }
            }
        }
    }

    /// Adds a flat gradient buffer laid out in store order.
    pub fn accumulate_flat(&mut self, flat: &[f32]) {
        let mut off = 0;
        for p in &mut self.params {
            let n = p.grad.len();
            for (d, s) in p.grad.data_mut().iter_mut().zip(&flat[off..off + n]) {
                *d += s;
            }
            off += n;
        }
    }

    /// Copies the gradients for `vars` into one flat buffer in store order;
    /// missing gradients are zero.
    pub fn flatten_grads(&self, vars: &[Var], grads: &Gradients, scale: f32) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (p, v) in self.params.iter().zip(vars) {
            match grads.get(*v) {
                Some(g) => out.extend(g.data().iter().map(|x| x * scale)),
                None => out.extend(std::iter::repeat_n(0.0, p.value.len())),
            }
        }
        out
    }

    /// Euclidean norm of all gradients together.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|&g| (g as f64) * (g as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f32) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Replaces every value, checking names and shapes against this store.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<(), TensorError> {
        if values.len() != self.params.len() {
            return Err(TensorError::Invalid(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (name, t) in &values {
            let p = self
                .get(name)
                .ok_or_else(|| TensorError::Invalid(format!("unexpected tensor {name:?}")))?;
            if p.value.shape() != t.shape() {
                return Err(TensorError::Shape {
                    op: "load",
                    expected: format!("{name} {:?}", p.value.shape()),
                    actual: format!("{:?}", t.shape()),
                });
            }
        }
        for (name, t) in values {
            let idx = self.index_of(&name).expect("checked above");
            self.params[idx].value = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.add("w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn load_values_checks_shapes() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.load_values(vec![("w".into(), Tensor::zeros(&[3]))]).is_err());
        assert!(s.load_values(vec![("v".into(), Tensor::zeros(&[2]))]).is_err());
        s.load_values(vec![("w".into(), Tensor::full(&[2], 1.5))]).unwrap();
        assert_eq!(s.value(0).data(), &[1.5, 1.5]);
    }
}
