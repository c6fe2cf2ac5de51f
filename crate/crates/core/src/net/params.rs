//! Parameter container for the score network.
//!
//! Tensors are visited in one canonical order everywhere (initialization,
//! optimizer updates, checkpoint serialization), keyed by stable names like
//! `blk0.fc1.w`.

use ndarray::{Array1, Array2};

use crate::element::Element;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T: Element> {
    pub gn1_scale: Array1<T>,
    pub gn1_shift: Array1<T>,
    pub fc1_w: Array2<T>,
    pub fc1_b: Array1<T>,
    pub gn2_scale: Array1<T>,
    pub gn2_shift: Array1<T>,
    pub fc2_w: Array2<T>,
    pub fc2_b: Array1<T>,
}

/// All trainable tensors. Weight matrices are `(in, out)` so a batch of
/// rows multiplies as `x.dot(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T: Element> {
    pub in_w: Array2<T>,
    pub in_b: Array1<T>,
    pub temb_w: Array2<T>,
    pub temb_b: Array1<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub out_w: Array2<T>,
    pub out_b: Array1<T>,
}

impl<T: Element> NetParams<T> {
    pub fn zeros(input_dim: usize, cond_dim: usize, hidden: usize, temb: usize, blocks: usize) -> Self {
        let block = || BlockParams {
            gn1_scale: Array1::zeros(hidden),
            gn1_shift: Array1::zeros(hidden),
            fc1_w: Array2::zeros((hidden, hidden)),
            fc1_b: Array1::zeros(hidden),
            gn2_scale: Array1::zeros(hidden),
            gn2_shift: Array1::zeros(hidden),
            fc2_w: Array2::zeros((hidden, hidden)),
            fc2_b: Array1::zeros(hidden),
        };
        NetParams {
            in_w: Array2::zeros((input_dim + cond_dim, hidden)),
            in_b: Array1::zeros(hidden),
            temb_w: Array2::zeros((temb, temb)),
            temb_b: Array1::zeros(hidden),
            blocks: (0..blocks).map(|_| block()).collect(),
            out_w: Array2::zeros((hidden, input_dim)),
            out_b: Array1::zeros(input_dim),
        }
    }

    /// Canonical tensor names in visit order.
    pub fn names(num_blocks: usize) -> Vec<String> {
        let mut out = vec![
            "in.w".to_string(),
            "in.b".to_string(),
            "temb.w".to_string(),
            "temb.b".to_string(),
        ];
        for i in 0..num_blocks {
            for part in [
                "gn1.scale", "gn1.shift", "fc1.w", "fc1.b", "gn2.scale", "gn2.shift", "fc2.w",
                "fc2.b",
            ] {
                out.push(format!("blk{i}.{part}"));
            }
        }
        out.push("out.w".to_string());
        out.push("out.b".to_string());
        out
    }

    /// Tensor shapes in visit order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.for_each(|name, slice, shape| {
            let _ = slice;
            out.push((name.to_string(), shape));
        });
        out
    }

    pub fn for_each(&self, mut f: impl FnMut(&str, &[T], Vec<usize>)) {
        let m2 = |a: &Array2<T>| a.shape().to_vec();
        let m1 = |a: &Array1<T>| a.shape().to_vec();
        f("in.w", self.in_w.as_slice().unwrap(), m2(&self.in_w));
        f("in.b", self.in_b.as_slice().unwrap(), m1(&self.in_b));
        f("temb.w", self.temb_w.as_slice().unwrap(), m2(&self.temb_w));
        f("temb.b", self.temb_b.as_slice().unwrap(), m1(&self.temb_b));
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("blk{i}.{s}");
            f(&p("gn1.scale"), b.gn1_scale.as_slice().unwrap(), m1(&b.gn1_scale));
            f(&p("gn1.shift"), b.gn1_shift.as_slice().unwrap(), m1(&b.gn1_shift));
            f(&p("fc1.w"), b.fc1_w.as_slice().unwrap(), m2(&b.fc1_w));
            f(&p("fc1.b"), b.fc1_b.as_slice().unwrap(), m1(&b.fc1_b));
            f(&p("gn2.scale"), b.gn2_scale.as_slice().unwrap(), m1(&b.gn2_scale));
            f(&p("gn2.shift"), b.gn2_shift.as_slice().unwrap(), m1(&b.gn2_shift));
            f(&p("fc2.w"), b.fc2_w.as_slice().unwrap(), m2(&b.fc2_w));
            f(&p("fc2.b"), b.fc2_b.as_slice().unwrap(), m1(&b.fc2_b));
        }
        f("out.w", self.out_w.as_slice().unwrap(), m2(&self.out_w));
        f("out.b", self.out_b.as_slice().unwrap(), m1(&self.out_b));
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        f("in.w", self.in_w.as_slice_mut().unwrap());
        f("in.b", self.in_b.as_slice_mut().unwrap());
        f("temb.w", self.temb_w.as_slice_mut().unwrap());
        f("temb.b", self.temb_b.as_slice_mut().unwrap());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = |s: &str| format!("blk{i}.{s}");
            f(&p("gn1.scale"), b.gn1_scale.as_slice_mut().unwrap());
            f(&p("gn1.shift"), b.gn1_shift.as_slice_mut().unwrap());
            f(&p("fc1.w"), b.fc1_w.as_slice_mut().unwrap());
            f(&p("fc1.b"), b.fc1_b.as_slice_mut().unwrap());
            f(&p("gn2.scale"), b.gn2_scale.as_slice_mut().unwrap());
            f(&p("gn2.shift"), b.gn2_shift.as_slice_mut().unwrap());
            f(&p("fc2.w"), b.fc2_w.as_slice_mut().unwrap());
            f(&p("fc2.b"), b.fc2_b.as_slice_mut().unwrap());
        }
        f("out.w", self.out_w.as_slice_mut().unwrap());
        f("out.b", self.out_b.as_slice_mut().unwrap());
    }

    /// Zips `self` (mutably) against another parameter set with identical
    /// structure, in canonical order.
    pub fn zip_mut(&mut self, other: &NetParams<T>, mut f: impl FnMut(&str, &mut [T], &[T])) {
        let mut theirs: Vec<(String, &[T])> = Vec::new();
        other.for_each(|name, slice, _| theirs.push((name.to_string(), slice)));
        let mut idx = 0;
        self.for_each_mut(|name, slice| {
            let (other_name, other_slice) = &theirs[idx];
            debug_assert_eq!(name, other_name);
            f(name, slice, other_slice);
            idx += 1;
        });
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, s, _| n += s.len());
        n
    }

    /// Reads the scalar at a flat offset (canonical order), for gradient checks.
    pub fn get_flat(&self, index: usize) -> T {
        let mut remaining = index;
        let mut out = None;
        self.for_each(|_, s, _| {
            if out.is_none() {
                if remaining < s.len() {
                    out = Some(s[remaining]);
                } else {
                    remaining -= s.len();
                }
            }
        });
        out.expect("flat index out of range")
    }

    /// Writes the scalar at a flat offset (canonical order).
    pub fn set_flat(&mut self, index: usize, value: T) {
        let mut remaining = index;
        let mut done = false;
        self.for_each_mut(|_, s| {
            if !done {
                if remaining < s.len() {
                    s[remaining] = value;
                    done = true;
                } else {
                    remaining -= s.len();
                }
            }
        });
        assert!(done, "flat index out of range");
    }

    /// Converts element type (used by checkpoint load/save).
    pub fn cast<U: Element>(&self) -> NetParams<U> {
        NetParams {
            in_w: self.in_w.mapv(|v| U::from_f64(v.to_f64())),
            in_b: self.in_b.mapv(|v| U::from_f64(v.to_f64())),
            temb_w: self.temb_w.mapv(|v| U::from_f64(v.to_f64())),
            temb_b: self.temb_b.mapv(|v| U::from_f64(v.to_f64())),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    gn1_scale: b.gn1_scale.mapv(|v| U::from_f64(v.to_f64())),
                    gn1_shift: b.gn1_shift.mapv(|v| U::from_f64(v.to_f64())),
                    fc1_w: b.fc1_w.mapv(|v| U::from_f64(v.to_f64())),
                    fc1_b: b.fc1_b.mapv(|v| U::from_f64(v.to_f64())),
                    gn2_scale: b.gn2_scale.mapv(|v| U::from_f64(v.to_f64())),
                    gn2_shift: b.gn2_shift.mapv(|v| U::from_f64(v.to_f64())),
                    fc2_w: b.fc2_w.mapv(|v| U::from_f64(v.to_f64())),
                    fc2_b: b.fc2_b.mapv(|v| U::from_f64(v.to_f64())),
                })
                .collect(),
            out_w: self.out_w.mapv(|v| U::from_f64(v.to_f64())),
            out_b: self.out_b.mapv(|v| U::from_f64(v.to_f64())),
        }
    }
}
