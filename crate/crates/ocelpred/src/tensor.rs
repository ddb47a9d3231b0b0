//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! Small by design: exactly the operations the model needs, each with a
//! hand-written exact adjoint. Tensors are reference-counted graph nodes;
//! calling [`Tensor::backward`] on a scalar walks the recorded graph in
//! reverse creation order and accumulates gradients into every node that
//! requires them. Graphs are rebuilt per step, parameters are long-lived
//! leaves whose data the optimizer updates in place.
//!
//! Everything is single-threaded and deterministic: identical inputs produce
//! bit-identical values and gradients.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt::{Debug, Display};
use std::rc::Rc;

/// Floating-point element type; implemented for `f32` and `f64`.
///
/// `f64` is the reference precision used by gradient checks; `f32` is the
/// training default.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + Copy + Debug + Display + Default + 'static
{
    const DTYPE: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// C := alpha * A(m,k) * B(k,n) + beta * C(m,n), row-major with explicit
    /// strides so transposed views need no copies.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// C += alpha * op(A) @ op(B) over row-major slices; `ta`/`tb` select the
/// transposed view. Logical shapes: op(A) is m x k, op(B) is k x n.
pub(crate) fn gemm<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: F,
    a: &[F],
    ta: bool,
    b: &[F],
    tb: bool,
    beta: F,
    c: &mut [F],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: out size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Adjoint: receives (output gradient, output data) and accumulates into the
/// parents it captured.
type BackwardFn<F> = Box<dyn Fn(&[F], &[F])>;

struct Node<F: Scalar> {
    id: u64,
    rows: usize,
    cols: usize,
    data: RefCell<Vec<F>>,
    grad: RefCell<Option<Vec<F>>>,
    requires_grad: bool,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
}

/// A dense row-major matrix node in the autodiff graph. Cloning is shallow.
pub struct Tensor<F: Scalar>(Rc<Node<F>>);

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Scalar> Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &(self.0.rows, self.0.cols))
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<F: Scalar> Tensor<F> {
    fn leaf(rows: usize, cols: usize, data: Vec<F>, requires_grad: bool) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Tensor(Rc::new(Node {
            id: next_id(),
            rows,
            cols,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Trainable leaf.
    pub fn param(rows: usize, cols: usize, data: Vec<F>) -> Self {
        Self::leaf(rows, cols, data, true)
    }

    /// Non-trainable leaf (inputs, masks, constants).
    pub fn constant(rows: usize, cols: usize, data: Vec<F>) -> Self {
        Self::leaf(rows, cols, data, false)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(rows, cols, vec![F::zero(); rows * cols])
    }

    fn from_op(
        rows: usize,
        cols: usize,
        data: Vec<F>,
        parents: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        Tensor(Rc::new(Node {
            id: next_id(),
            rows,
            cols,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: if requires_grad { parents } else { Vec::new() },
            backward: if requires_grad { Some(backward) } else { None },
        }))
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn len(&self) -> usize {
        self.0.rows * self.0.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, [F]> {
        Ref::map(self.0.data.borrow(), |v| v.as_slice())
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|v| v.as_f64()).collect()
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.0.data.borrow()[0]
    }

    /// Replace leaf data in place (optimizer updates, perturbations).
    pub fn set_data(&self, values: &[F]) {
        let mut data = self.0.data.borrow_mut();
        assert_eq!(data.len(), values.len(), "set_data length");
        data.copy_from_slice(values);
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn grad_buf(&self) -> RefMut<'_, Vec<F>> {
        let slot = self.0.grad.borrow_mut();
        RefMut::map(slot, |opt| {
            opt.get_or_insert_with(|| vec![F::zero(); self.0.rows * self.0.cols])
        })
    }

    /// Reverse pass from a scalar. Gradients accumulate into every
    /// reachable node with `requires_grad`; leaves keep theirs until
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() needs a scalar loss");
        if !self.0.requires_grad {
            return;
        }
        // Creation order is a topological order, so a reverse id sort gives
        // children before parents.
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<Tensor<F>> = vec![self.clone()];
        while let Some(node) = stack.pop() {
            if !seen.insert(node.0.id) {
                continue;
            }
            for parent in &node.0.parents {
                if parent.0.requires_grad {
                    stack.push(parent.clone());
                }
            }
            order.push(node);
        }
        order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        *self.0.grad.borrow_mut() = Some(vec![F::one()]);
        for node in &order {
            let Some(backward) = &node.0.backward else {
                continue;
            };
            let grad = node.0.grad.borrow();
            let Some(grad) = grad.as_ref() else { continue };
            let data = node.0.data.borrow();
            backward(grad, &data);
        }
    }

    // ----- elementwise -----

    fn same_shape(&self, other: &Tensor<F>, op: &str) {
        assert!(
            self.rows() == other.rows() && self.cols() == other.cols(),
            "{op}: shape mismatch {:?} vs {:?}",
            (self.rows(), self.cols()),
            (other.rows(), other.cols())
        );
    }

    pub fn add(&self, other: &Tensor<F>) -> Tensor<F> {
        self.same_shape(other, "add");
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            self.rows(),
            self.cols(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                if pa.0.requires_grad {
                    let mut da = pa.grad_buf();
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if pb.0.requires_grad {
                    let mut db = pb.grad_buf();
                    for (d, &gi) in db.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }),
        )
    }

    pub fn sub(&self, other: &Tensor<F>) -> Tensor<F> {
        self.same_shape(other, "sub");
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            self.rows(),
            self.cols(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                if pa.0.requires_grad {
                    let mut da = pa.grad_buf();
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if pb.0.requires_grad {
                    let mut db = pb.grad_buf();
                    for (d, &gi) in db.iter_mut().zip(g) {
                        *d -= gi;
                    }
                }
            }),
        )
    }

    pub fn mul(&self, other: &Tensor<F>) -> Tensor<F> {
        self.same_shape(other, "mul");
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            self.rows(),
            self.cols(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                if pa.0.requires_grad {
                    let b = pb.data();
                    let mut da = pa.grad_buf();
                    for i in 0..g.len() {
                        da[i] += g[i] * b[i];
                    }
                }
                if pb.0.requires_grad {
                    let a = pa.data();
                    let mut db = pb.grad_buf();
                    for i in 0..g.len() {
                        db[i] += g[i] * a[i];
                    }
                }
            }),
        )
    }

    pub fn scale(&self, factor: f64) -> Tensor<F> {
        let k = F::from_f64(factor);
        let data = self.data().iter().map(|&x| x * k).collect();
        let p = self.clone();
        Tensor::from_op(
            self.rows(),
            self.cols(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dp = p.grad_buf();
                for (d, &gi) in dp.iter_mut().zip(g) {
                    *d += gi * k;
                }
            }),
        )
    }

    /// Broadcast-add a 1 x cols bias row to every row.
    pub fn add_row(&self, bias: &Tensor<F>) -> Tensor<F> {
        assert_eq!(bias.rows(), 1, "add_row: bias must be a single row");
        assert_eq!(bias.cols(), self.cols(), "add_row: width mismatch");
        let cols = self.cols();
        let data = {
            let a = self.data();
            let b = bias.data();
            a.iter()
                .enumerate()
                .map(|(i, &x)| x + b[i % cols])
                .collect()
        };
        let (pa, pb) = (self.clone(), bias.clone());
        Tensor::from_op(
            self.rows(),
            self.cols(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _| {
                if pa.0.requires_grad {
                    let mut da = pa.grad_buf();
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if pb.0.requires_grad {
                    let mut db = pb.grad_buf();
                    for (i, &gi) in g.iter().enumerate() {
                        db[i % cols] += gi;
                    }
                }
            }),
        )
    }

    // ----- activations -----

    fn unary(&self, f: impl Fn(F) -> F, dfdy: impl Fn(F) -> F + 'static) -> Tensor<F> {
        let data: Vec<F> = self.data().iter().map(|&x| f(x)).collect();
        let p = self.clone();
        Tensor::from_op(
            self.rows(),
            self.cols(),
            data,
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut dp = p.grad_buf();
                for i in 0..g.len() {
                    dp[i] += g[i] * dfdy(y[i]);
                }
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        self.unary(
            |x| F::one() / (F::one() + (-x).exp()),
            |y| y * (F::one() - y),
        )
    }

    pub fn tanh_act(&self) -> Tensor<F> {
        self.unary(|x| x.tanh(), |y| F::one() - y * y)
    }

    pub fn elu(&self) -> Tensor<F> {
        self.unary(
            |x| {
                if x > F::zero() {
                    x
                } else {
                    x.exp() - F::one()
                }
            },
            |y| {
                if y > F::zero() {
                    F::one()
                } else {
                    y + F::one()
                }
            },
        )
    }

    pub fn relu(&self) -> Tensor<F> {
        self.unary(
            |x| if x > F::zero() { x } else { F::zero() },
            |y| if y > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<F> {
        let s = F::from_f64(slope);
        self.unary(
            move |x| if x > F::zero() { x } else { x * s },
            move |y| if y > F::zero() { F::one() } else { s },
        )
    }

    // ----- linear algebra -----

    pub fn matmul(&self, other: &Tensor<F>) -> Tensor<F> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
        let mut data = vec![F::zero(); m * n];
        gemm(m, k, n, F::one(), &self.data(), false, &other.data(), false, F::zero(), &mut data);
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            m,
            n,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                if pa.0.requires_grad {
                    // dA += G @ B^T
                    let b = pb.data();
                    let mut da = pa.grad_buf();
                    gemm(m, n, k, F::one(), g, false, &b, true, F::one(), &mut da);
                }
                if pb.0.requires_grad {
                    // dB += A^T @ G
                    let a = pa.data();
                    let mut db = pb.grad_buf();
                    gemm(k, m, n, F::one(), &a, true, g, false, F::one(), &mut db);
                }
            }),
        )
    }

    // ----- gather / scatter -----

    /// Select rows by index; `PAD` entries (negative) yield zero rows and
    /// receive no gradient. Gradients scatter-add back into the source rows,
    /// which is what lets sequence lookups train the embedding producer.
    pub fn gather_rows(&self, indices: &[i64]) -> Tensor<F> {
        let d = self.cols();
        let n = self.rows() as i64;
        let mut data = vec![F::zero(); indices.len() * d];
        {
            let src = self.data();
            for (i, &idx) in indices.iter().enumerate() {
                if idx >= 0 {
                    assert!(idx < n, "gather_rows: index {idx} out of {n}");
                    data[i * d..(i + 1) * d]
                        .copy_from_slice(&src[idx as usize * d..(idx as usize + 1) * d]);
                }
            }
        }
        let p = self.clone();
        let idxs = indices.to_vec();
        Tensor::from_op(
            indices.len(),
            d,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dp = p.grad_buf();
                for (i, &idx) in idxs.iter().enumerate() {
                    if idx >= 0 {
                        let dst = idx as usize * d;
                        for j in 0..d {
                            dp[dst + j] += g[i * d + j];
                        }
                    }
                }
            }),
        )
    }

    /// Sum rows into `out_rows` buckets selected by `dst`.
    pub fn scatter_add_rows(&self, dst: &[usize], out_rows: usize) -> Tensor<F> {
        assert_eq!(dst.len(), self.rows(), "scatter_add_rows: index length");
        let d = self.cols();
        let mut data = vec![F::zero(); out_rows * d];
        {
            let src = self.data();
            for (i, &target) in dst.iter().enumerate() {
                assert!(target < out_rows, "scatter_add_rows: target row");
                for j in 0..d {
                    data[target * d + j] += src[i * d + j];
                }
            }
        }
        let p = self.clone();
        let dsts = dst.to_vec();
        Tensor::from_op(
            out_rows,
            d,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dp = p.grad_buf();
                for (i, &target) in dsts.iter().enumerate() {
                    for j in 0..d {
                        dp[i * d + j] += g[target * d + j];
                    }
                }
            }),
        )
    }

    /// Scale row `i` by `weights[i]` (an e x 1 column).
    pub fn row_scale(&self, weights: &Tensor<F>) -> Tensor<F> {
        assert_eq!(weights.cols(), 1, "row_scale: weights must be a column");
        assert_eq!(weights.rows(), self.rows(), "row_scale: row count");
        let d = self.cols();
        let data = {
            let a = self.data();
            let w = weights.data();
            a.iter()
                .enumerate()
                .map(|(i, &x)| x * w[i / d])
                .collect()
        };
        let (pa, pw) = (self.clone(), weights.clone());
        Tensor::from_op(
            self.rows(),
            d,
            data,
            vec![self.clone(), weights.clone()],
            Box::new(move |g, _| {
                if pa.0.requires_grad {
                    let w = pw.data();
                    let mut da = pa.grad_buf();
                    for i in 0..g.len() {
                        da[i] += g[i] * w[i / d];
                    }
                }
                if pw.0.requires_grad {
                    let a = pa.data();
                    let mut dw = pw.grad_buf();
                    for (i, &gi) in g.iter().enumerate() {
                        dw[i / d] += gi * a[i];
                    }
                }
            }),
        )
    }

    // ----- shape -----

    pub fn concat_cols(&self, other: &Tensor<F>) -> Tensor<F> {
        assert_eq!(self.rows(), other.rows(), "concat_cols: row count");
        let (r, c1, c2) = (self.rows(), self.cols(), other.cols());
        let mut data = Vec::with_capacity(r * (c1 + c2));
        {
            let a = self.data();
            let b = other.data();
            for i in 0..r {
                data.extend_from_slice(&a[i * c1..(i + 1) * c1]);
                data.extend_from_slice(&b[i * c2..(i + 1) * c2]);
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            r,
            c1 + c2,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let cw = c1 + c2;
                if pa.0.requires_grad {
                    let mut da = pa.grad_buf();
                    for i in 0..r {
                        for j in 0..c1 {
                            da[i * c1 + j] += g[i * cw + j];
                        }
                    }
                }
                if pb.0.requires_grad {
                    let mut db = pb.grad_buf();
                    for i in 0..r {
                        for j in 0..c2 {
                            db[i * c2 + j] += g[i * cw + c1 + j];
                        }
                    }
                }
            }),
        )
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor<F> {
        assert!(start <= end && end <= self.cols(), "slice_cols: bounds");
        let (r, c) = (self.rows(), self.cols());
        let width = end - start;
        let data = {
            let a = self.data();
            let mut out = Vec::with_capacity(r * width);
            for i in 0..r {
                out.extend_from_slice(&a[i * c + start..i * c + end]);
            }
            out
        };
        let p = self.clone();
        Tensor::from_op(
            r,
            width,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dp = p.grad_buf();
                for i in 0..r {
                    for j in 0..width {
                        dp[i * c + start + j] += g[i * width + j];
                    }
                }
            }),
        )
    }

    // ----- normalization and reductions -----

    /// Softmax within index groups of a column vector: entry `i` is
    /// normalized over all entries sharing `segments[i]`. Used for attention
    /// over in-neighborhoods.
    pub fn segment_softmax(&self, segments: &[usize], n_segments: usize) -> Tensor<F> {
        assert_eq!(self.cols(), 1, "segment_softmax: column vector expected");
        assert_eq!(segments.len(), self.rows(), "segment_softmax: index length");
        let data = {
            let z = self.data();
            let mut max = vec![F::neg_infinity(); n_segments];
            for (i, &seg) in segments.iter().enumerate() {
                if z[i] > max[seg] {
                    max[seg] = z[i];
                }
            }
            let mut exp = vec![F::zero(); z.len()];
            let mut sum = vec![F::zero(); n_segments];
            for (i, &seg) in segments.iter().enumerate() {
                exp[i] = (z[i] - max[seg]).exp();
                sum[seg] += exp[i];
            }
            for (i, &seg) in segments.iter().enumerate() {
                exp[i] = exp[i] / sum[seg];
            }
            exp
        };
        let p = self.clone();
        let segs = segments.to_vec();
        Tensor::from_op(
            self.rows(),
            1,
            data,
            vec![self.clone()],
            Box::new(move |g, alpha| {
                // dz_i = alpha_i * (g_i - sum_j alpha_j g_j) within a segment
                let mut weighted = vec![F::zero(); n_segments];
                for (i, &seg) in segs.iter().enumerate() {
                    weighted[seg] += alpha[i] * g[i];
                }
                let mut dp = p.grad_buf();
                for (i, &seg) in segs.iter().enumerate() {
                    dp[i] += alpha[i] * (g[i] - weighted[seg]);
                }
            }),
        )
    }

    pub fn sum_all(&self) -> Tensor<F> {
        let total = self.data().iter().fold(F::zero(), |acc, &x| acc + x);
        let p = self.clone();
        Tensor::from_op(
            1,
            1,
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dp = p.grad_buf();
                for d in dp.iter_mut() {
                    *d += g[0];
                }
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = F::from_f64(self.len() as f64);
        let total = self.data().iter().fold(F::zero(), |acc, &x| acc + x) / n;
        let p = self.clone();
        Tensor::from_op(
            1,
            1,
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _| {
                let scaled = g[0] / n;
                let mut dp = p.grad_buf();
                for d in dp.iter_mut() {
                    *d += scaled;
                }
            }),
        )
    }

    // ----- losses -----

    /// Mean cross-entropy between row-wise logits and target class indices.
    pub fn cross_entropy_mean(&self, targets: &[usize]) -> Tensor<F> {
        let (b, k) = (self.rows(), self.cols());
        assert_eq!(targets.len(), b, "cross_entropy_mean: target count");
        let mut probs = vec![F::zero(); b * k];
        let mut total = F::zero();
        {
            let z = self.data();
            for (row, &target) in targets.iter().enumerate() {
                assert!(target < k, "cross_entropy_mean: target class");
                let logits = &z[row * k..(row + 1) * k];
                let max = logits.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
                let mut sum = F::zero();
                for (j, &x) in logits.iter().enumerate() {
                    let e = (x - max).exp();
                    probs[row * k + j] = e;
                    sum += e;
                }
                for j in 0..k {
                    probs[row * k + j] = probs[row * k + j] / sum;
                }
                total += sum.ln() + max - logits[target];
            }
        }
        let loss = total / F::from_f64(b as f64);
        let p = self.clone();
        let tg = targets.to_vec();
        Tensor::from_op(
            1,
            1,
            vec![loss],
            vec![self.clone()],
            Box::new(move |g, _| {
                let inv_b = g[0] / F::from_f64(b as f64);
                let mut dp = p.grad_buf();
                for (row, &target) in tg.iter().enumerate() {
                    for j in 0..k {
                        let indicator = if j == target { F::one() } else { F::zero() };
                        dp[row * k + j] += inv_b * (probs[row * k + j] - indicator);
                    }
                }
            }),
        )
    }

    /// Mean absolute error of a column of predictions against targets.
    pub fn mae_mean(&self, targets: &[F]) -> Tensor<F> {
        assert_eq!(self.cols(), 1, "mae_mean: column vector expected");
        assert_eq!(targets.len(), self.rows(), "mae_mean: target count");
        let b = self.rows();
        let total = {
            let pred = self.data();
            pred.iter()
                .zip(targets)
                .fold(F::zero(), |acc, (&p, &t)| acc + (p - t).abs())
        };
        let loss = total / F::from_f64(b as f64);
        let p = self.clone();
        let tg = targets.to_vec();
        Tensor::from_op(
            1,
            1,
            vec![loss],
            vec![self.clone()],
            Box::new(move |g, _| {
                let inv_b = g[0] / F::from_f64(b as f64);
                let pred = p.to_vec();
                let mut dp = p.grad_buf();
                for i in 0..b {
                    let diff = pred[i] - tg[i];
                    let sign = if diff > F::zero() {
                        F::one()
                    } else if diff < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    };
                    dp[i] += inv_b * sign;
                }
            }),
        )
    }
}

/// Row-wise softmax on plain data, outside the graph (inference helper).
pub fn softmax_rows<F: Scalar>(data: &[F], rows: usize, cols: usize) -> Vec<F> {
    assert_eq!(data.len(), rows * cols);
    let mut out = vec![F::zero(); data.len()];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let mut sum = F::zero();
        for (j, &x) in row.iter().enumerate() {
            let e = (x - max).exp();
            out[r * cols + j] = e;
            sum += e;
        }
        for j in 0..cols {
            out[r * cols + j] = out[r * cols + j] / sum;
        }
    }
    out
}

/// Central finite differences for verification. Forward-only: it never
/// touches the reverse pass it is used to check.
pub mod gradcheck {
    use super::{Scalar, Tensor};

    /// d(loss)/d(param[i]) for every component, via central differences.
    /// `loss_fn` must rebuild the forward graph from current leaf data.
    pub fn finite_difference<F: Scalar>(
        param: &Tensor<F>,
        eps: f64,
        mut loss_fn: impl FnMut() -> Tensor<F>,
    ) -> Vec<f64> {
        let original = param.to_vec();
        let mut grads = Vec::with_capacity(original.len());
        for i in 0..original.len() {
            let mut plus = original.clone();
            plus[i] = plus[i] + F::from_f64(eps);
            param.set_data(&plus);
            let up = loss_fn().item().as_f64();

            let mut minus = original.clone();
            minus[i] = minus[i] - F::from_f64(eps);
            param.set_data(&minus);
            let down = loss_fn().item().as_f64();

            grads.push((up - down) / (2.0 * eps));
        }
        param.set_data(&original);
        grads
    }

    /// `|a - b| / max(1, |a|, |b|)`: absolute for small values, relative for
    /// large ones.
    pub fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
    }
}
