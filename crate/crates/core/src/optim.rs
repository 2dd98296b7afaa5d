//! Adam over flat parameter slices.

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Grow the moment buffers for parameters appended at the end.
    pub fn resize(&mut self, len: usize) {
        self.m.resize(len, 0.0);
        self.v.resize(len, 0.0);
    }

    /// Keep only the entries whose flag is set, in order.
    pub fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.m.retain(|_| *it.next().unwrap_or(&true));
        let mut it = keep.iter();
        self.v.retain(|_| *it.next().unwrap_or(&true));
    }

    /// Advance the shared step counter; call once per iteration before
    /// [`Adam::update`].
    pub fn tick(&mut self) {
        self.t += 1;
    }

    /// Bias-corrected step for entries `offset..offset + grad.len()`; returns
    /// the increments to add to the parameters.
    pub fn update(&mut self, offset: usize, grad: &[f64], lr: &[f64], out: &mut [f64]) {
        let t = self.t.max(1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, &g) in grad.iter().enumerate() {
            let m = &mut self.m[offset + i];
            let v = &mut self.v[offset + i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            out[i] = -lr[i % lr.len()] * mh / (vh.sqrt() + self.epsilon);
        }
    }
}
