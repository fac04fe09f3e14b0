//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] is an append-only list of nodes. Each node stores its forward
//! value and the operation that produced it; node ids are therefore
//! topologically ordered. [`Tape::backward`] seeds a scalar root with 1 and
//! walks the nodes in reverse insertion order, accumulating gradients
//! additively across fan-out.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::DistanceMetric;
use crate::ops;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One end of a recorded distance: either a constant point or a row of the
/// source node.
#[derive(Debug, Clone, PartialEq)]
pub enum Anchor {
    Point(Vec<f64>),
    Row(usize),
}

/// Distance between `anchor` and row `target` of the source node.
#[derive(Debug, Clone, PartialEq)]
pub struct DistancePair {
    pub anchor: Anchor,
    pub target: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Div(NodeId, NodeId),
    Abs(NodeId),
    Gelu(NodeId),
    Softmax(NodeId),
    Dropout(NodeId, Vec<f64>),
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Matrix,
    },
    Mse(NodeId, NodeId),
    Distances {
        source: NodeId,
        pairs: Vec<DistancePair>,
        metric: DistanceMetric,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the node does not influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records an input, parameter or constant.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `x + bias` with a `1×k` bias broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim(
                "add_row",
                format!("bias {}x{} for input with {} columns", bv.rows(), bv.cols(), xv.cols()),
            ));
        }
        let mut v = xv.clone();
        for r in 0..v.rows() {
            for (o, b) in v.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    /// Elementwise absolute value. The derivative at 0 is the left
    /// derivative, −1.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = ops::gelu(self.value(a));
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = ops::softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1−rate)`. Eval
    /// mode and `rate == 0` return `x` unchanged.
    pub fn dropout(&mut self, x: NodeId, rate: f64, mode: Mode, rng: &mut Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let v = Matrix::from_vec(xv.rows(), xv.cols(), data)?;
        Ok(self.push(v, Op::Dropout(x, mask)))
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let loss = ops::cross_entropy(lv, labels)?;
        let probs = ops::softmax_rows(lv);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let loss = ops::mse(self.value(a), self.value(b))?;
        Ok(self.push(Matrix::scalar(loss), Op::Mse(a, b)))
    }

    /// Records one distance per pair as an `m×1` column. Gradients flow into
    /// the source rows named by each pair; constant anchors receive none.
    pub fn distances(
        &mut self,
        source: NodeId,
        pairs: Vec<DistancePair>,
        metric: &DistanceMetric,
    ) -> Result<NodeId> {
        let sv = self.value(source);
        let mut out = Vec::with_capacity(pairs.len());
        for p in &pairs {
            if p.target >= sv.rows() {
                return Err(Error::Index {
                    op: "distances",
                    index: p.target,
                    bound: sv.rows(),
                });
            }
            let a = match &p.anchor {
                Anchor::Point(pt) => pt.as_slice(),
                Anchor::Row(i) => {
                    if *i >= sv.rows() {
                        return Err(Error::Index {
                            op: "distances",
                            index: *i,
                            bound: sv.rows(),
                        });
                    }
                    sv.row(*i)
                }
            };
            out.push(metric.distance(a, sv.row(p.target))?);
        }
        let v = Matrix::from_vec(pairs.len(), 1, out)?;
        Ok(self.push(
            v,
            Op::Distances {
                source,
                pairs,
                metric: metric.clone(),
            },
        ))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Index {
                op: "backward",
                index: root.0,
                bound: self.nodes.len(),
            });
        }
        if self.value(root).shape() != (1, 1) {
            let (r, c) = self.value(root).shape();
            return Err(Error::contract(
                "backward",
                format!("root must be 1x1, got {r}x{c}"),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for row in g.row_iter() {
                        for (o, v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb)?;
                    accumulate(&mut grads, *x, g.clone())?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0))?;
                    accumulate(&mut grads, *a, g.clone())?;
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s))?,
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone())?,
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = g.zip_map(bv, |gi, bi| gi / bi)?;
                    let gb = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                        -g.get(i, j) * av.get(i, j) / (bv.get(i, j) * bv.get(i, j))
                    });
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Abs(a) => {
                    let ga = g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { -gi })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), |gi, x| gi * ops::gelu_derivative(x))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let mut ga = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let (sr, gr) = (s.row(r), g.row(r));
                        let dot: f64 = sr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for (o, (si, gi)) in ga.row_mut(r).iter_mut().zip(sr.iter().zip(gr)) {
                            *o = si * (gi - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Dropout(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(gi, m)| gi * m).collect();
                    accumulate(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), data)?)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.data()[0]))?;
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.data()[0] / labels.len() as f64;
                    let mut gl = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        let v = gl.get(r, l);
                        gl.set(r, l, v - 1.0);
                    }
                    accumulate(&mut grads, *logits, gl.scale(scale))?;
                }
                Op::Mse(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let scale = 2.0 * g.data()[0] / av.len() as f64;
                    let ga = av.zip_map(bv, |x, y| scale * (x - y))?;
                    accumulate(&mut grads, *b, ga.scale(-1.0))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Distances {
                    source,
                    pairs,
                    metric,
                } => {
                    let sv = self.value(*source);
                    let mut gs = Matrix::zeros(sv.rows(), sv.cols());
                    for (k, p) in pairs.iter().enumerate() {
                        let gk = g.data()[k];
                        if gk == 0.0 {
                            continue;
                        }
                        let a = match &p.anchor {
                            Anchor::Point(pt) => pt.as_slice(),
                            Anchor::Row(i) => sv.row(*i),
                        };
                        let (ga, gb) = metric.gradient(a, sv.row(p.target));
                        if let Anchor::Row(i) = p.anchor {
                            for (o, v) in gs.row_mut(i).iter_mut().zip(&ga) {
                                *o += gk * v;
                            }
                        }
                        for (o, v) in gs.row_mut(p.target).iter_mut().zip(&gb) {
                            *o += gk * v;
                        }
                    }
                    accumulate(&mut grads, *source, gs)?;
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_is_input() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(3.0));
        let g = t.backward(x).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(3.0));
        let y = t.add(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(x), Err(Error::Contract { .. })));
    }

    #[test]
    fn matmul_gradients_analytic() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = t.leaf(Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let c = t.matmul(a, b).unwrap();
        let g = t.backward(c).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn abs_uses_left_derivative_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0));
        let y = t.abs(x);
        assert_eq!(t.backward(y).unwrap().get(x).unwrap().data(), &[-1.0]);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = Rng::new(0);
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(4, 4, 1.0));
        assert_eq!(t.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(t.dropout(x, 0.2, Mode::Eval, &mut rng).unwrap(), x);
        assert!(t.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_law_of_large_numbers() {
        let mut rng = Rng::new(17);
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(1000, 100, 1.0));
        let y = t.dropout(x, 0.2, Mode::Train, &mut rng).unwrap();
        let v = t.value(y).clone();
        let mean = v.sum() / v.len() as f64;
        let zeros = v.data().iter().filter(|&&e| e == 0.0).count() as f64 / v.len() as f64;
        assert!((mean - 1.0).abs() < 0.01);
        assert!((zeros - 0.2).abs() < 0.01);
        // mask reused in backward
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), v.data());
    }

    #[test]
    fn unused_nodes_have_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(1.0));
        let unused = t.leaf(Matrix::scalar(2.0));
        let y = t.scale(x, 3.0);
        let g = t.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
    }
}
