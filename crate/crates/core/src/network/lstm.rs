//! LSTM cell, unidirectional layer and bidirectional layer, forward and BPTT.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix, Vector};

/// Gate weights act on the concatenation `[h_{t-1}, x_t]`, so each matrix is
/// `hidden × (hidden + input)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = || Matrix::zeros(hidden, hidden + input);
        let b = || Vector::zeros(hidden);
        Self {
            w_i: w(),
            w_f: w(),
            w_c: w(),
            w_o: w(),
            b_i: b(),
            b_f: b(),
            b_c: b(),
            b_o: b(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_i.len()
    }

    pub fn input(&self) -> usize {
        self.w_i.cols() - self.hidden()
    }

    pub fn check_shape(&self, hidden: usize, input: usize) -> Result<()> {
        let want = (hidden, hidden + input);
        for (name, m) in [
            ("w_i", &self.w_i),
            ("w_f", &self.w_f),
            ("w_c", &self.w_c),
            ("w_o", &self.w_o),
        ] {
            if m.shape() != want {
                return Err(Error::shape(format!(
                    "lstm {name} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    want.0,
                    want.1
                )));
            }
        }
        for (name, b) in [
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
        ] {
            if b.len() != hidden {
                return Err(Error::shape(format!(
                    "lstm {name} has length {}, expected {hidden}",
                    b.len()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.w_i.as_slice(),
            self.w_f.as_slice(),
            self.w_c.as_slice(),
            self.w_o.as_slice(),
            &self.b_i,
            &self.b_f,
            &self.b_c,
            &self.b_o,
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_i.as_mut_slice(),
            self.w_f.as_mut_slice(),
            self.w_c.as_mut_slice(),
            self.w_o.as_mut_slice(),
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Vector::zeros(hidden),
            c: Vector::zeros(hidden),
        }
    }
}

/// Everything one timestep needs for the backward pass, packed into one
/// buffer: eight `hidden`-wide blocks followed by `[h_{t-1}, x_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    hidden: usize,
    buf: Vec<f64>,
}

const I: usize = 0;
const F: usize = 1;
const G: usize = 2;
const O: usize = 3;
const C: usize = 4;
const C_TANH: usize = 5;
const H: usize = 6;
const C_PREV: usize = 7;
const BLOCKS: usize = 8;

impl StepCache {
    fn block(&self, k: usize) -> &[f64] {
        &self.buf[k * self.hidden..(k + 1) * self.hidden]
    }

    pub fn input_gate(&self) -> &[f64] {
        self.block(I)
    }

    pub fn forget_gate(&self) -> &[f64] {
        self.block(F)
    }

    pub fn candidate(&self) -> &[f64] {
        self.block(G)
    }

    pub fn output_gate(&self) -> &[f64] {
        self.block(O)
    }

    pub fn cell(&self) -> &[f64] {
        self.block(C)
    }

    pub fn cell_tanh(&self) -> &[f64] {
        self.block(C_TANH)
    }

    pub fn hidden(&self) -> &[f64] {
        self.block(H)
    }

    pub fn prev_cell(&self) -> &[f64] {
        self.block(C_PREV)
    }

    /// `[h_{t-1}, x_t]`.
    pub fn concat_input(&self) -> &[f64] {
        &self.buf[BLOCKS * self.hidden..]
    }
}

fn step(p: &LstmParams, prev_h: &[f64], prev_c: &[f64], x: &[f64]) -> StepCache {
    let hidden = p.hidden();
    let mut buf = vec![0.0; BLOCKS * hidden + hidden + x.len()];
    let (blocks, z) = buf.split_at_mut(BLOCKS * hidden);
    z[..hidden].copy_from_slice(prev_h);
    z[hidden..].copy_from_slice(x);
    let (gates, rest) = blocks.split_at_mut(4 * hidden);
    p.w_i.matvec_into(z, &mut gates[I * hidden..(I + 1) * hidden]);
    p.w_f.matvec_into(z, &mut gates[F * hidden..(F + 1) * hidden]);
    p.w_c.matvec_into(z, &mut gates[G * hidden..(G + 1) * hidden]);
    p.w_o.matvec_into(z, &mut gates[O * hidden..(O + 1) * hidden]);
    for k in 0..hidden {
        let i = sigmoid(gates[I * hidden + k] + p.b_i[k]);
        let f = sigmoid(gates[F * hidden + k] + p.b_f[k]);
        let g = (gates[G * hidden + k] + p.b_c[k]).tanh();
        let o = sigmoid(gates[O * hidden + k] + p.b_o[k]);
        gates[I * hidden + k] = i;
        gates[F * hidden + k] = f;
        gates[G * hidden + k] = g;
        gates[O * hidden + k] = o;
        let c = f * prev_c[k] + i * g;
        let tc = c.tanh();
        rest[k] = c;
        rest[hidden + k] = tc;
        rest[2 * hidden + k] = o * tc;
        rest[3 * hidden + k] = prev_c[k];
    }
    StepCache { hidden, buf }
}

pub fn lstm_cell_step(p: &LstmParams, prev: &LstmState, x: &[f64]) -> Result<(LstmState, StepCache)> {
    let hidden = p.hidden();
    let input = p.input();
    if x.len() != input {
        return Err(Error::shape(format!(
            "lstm step expects input width {input}, got {}",
            x.len()
        )));
    }
    if prev.h.len() != hidden || prev.c.len() != hidden {
        return Err(Error::shape(format!(
            "lstm state widths ({}, {}) do not match {hidden} units",
            prev.h.len(),
            prev.c.len()
        )));
    }
    let cache = step(p, &prev.h, &prev.c, x);
    let state = LstmState {
        h: Vector(cache.hidden().to_vec()),
        c: Vector(cache.cell().to_vec()),
    };
    Ok((state, cache))
}

/// Runs the cell over `xs` from a zero state, returning every hidden vector.
pub fn lstm_forward<X: AsRef<[f64]>>(p: &LstmParams, xs: &[X]) -> Result<(Vec<Vector>, Vec<StepCache>)> {
    if xs.is_empty() {
        return Err(Error::input("lstm_forward needs a nonempty sequence"));
    }
    let input = p.input();
    if let Some(x) = xs.iter().find(|x| x.as_ref().len() != input) {
        return Err(Error::shape(format!(
            "lstm step expects input width {input}, got {}",
            x.as_ref().len()
        )));
    }
    let zeros = vec![0.0; p.hidden()];
    let mut outputs: Vec<Vector> = Vec::with_capacity(xs.len());
    let mut caches: Vec<StepCache> = Vec::with_capacity(xs.len());
    for x in xs {
        let cache = match caches.last() {
            Some(prev) => step(p, prev.hidden(), prev.cell(), x.as_ref()),
            None => step(p, &zeros, &zeros, x.as_ref()),
        };
        outputs.push(Vector(cache.hidden().to_vec()));
        caches.push(cache);
    }
    Ok((outputs, caches))
}

/// Backpropagation through time for one LSTM layer.
///
/// `dh_ext[t]` is the loss gradient arriving at `h_t` from above (an empty
/// slice means zero). Parameter gradients are accumulated into `grad`; the
/// returned vectors are the gradients with respect to each input `x_t`.
pub(crate) fn lstm_backward(
    p: &LstmParams,
    caches: &[StepCache],
    dh_ext: &[Vec<f64>],
    grad: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let hidden = p.hidden();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dxs = vec![Vec::new(); caches.len()];

    let mut dzi = vec![0.0; hidden];
    let mut dzf = vec![0.0; hidden];
    let mut dzc = vec![0.0; hidden];
    let mut dzo = vec![0.0; hidden];
    let mut dz = vec![0.0; hidden + p.input()];

    for t in (0..caches.len()).rev() {
        let s = &caches[t];
        let ext = &dh_ext[t];
        let (ig, fg, og, cand, tcs, prev_c) = (
            s.input_gate(),
            s.forget_gate(),
            s.output_gate(),
            s.candidate(),
            s.cell_tanh(),
            s.prev_cell(),
        );
        for k in 0..hidden {
            let dh = dh_next[k] + ext.get(k).copied().unwrap_or(0.0);
            let (i, f, o, g) = (ig[k], fg[k], og[k], cand[k]);
            let tc = tcs[k];
            let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
            dzo[k] = dh * tc * o * (1.0 - o);
            dzi[k] = dc * g * i * (1.0 - i);
            dzf[k] = dc * prev_c[k] * f * (1.0 - f);
            dzc[k] = dc * i * (1.0 - g * g);
            dc_next[k] = dc * f;
        }

        let z = s.concat_input();
        grad.w_i.add_outer(&dzi, z);
        grad.w_f.add_outer(&dzf, z);
        grad.w_c.add_outer(&dzc, z);
        grad.w_o.add_outer(&dzo, z);
        for k in 0..hidden {
            grad.b_i[k] += dzi[k];
            grad.b_f[k] += dzf[k];
            grad.b_c[k] += dzc[k];
            grad.b_o[k] += dzo[k];
        }

        dz.iter_mut().for_each(|v| *v = 0.0);
        p.w_i.matvec_t_acc(&dzi, &mut dz);
        p.w_f.matvec_t_acc(&dzf, &mut dz);
        p.w_c.matvec_t_acc(&dzc, &mut dz);
        p.w_o.matvec_t_acc(&dzo, &mut dz);
        dh_next.copy_from_slice(&dz[..hidden]);
        dxs[t] = dz[hidden..].to_vec();
    }
    dxs
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmCache {
    pub forward: Vec<StepCache>,
    /// Caches of the reversed pass, in processing order (first entry is `xs[last]`).
    pub backward: Vec<StepCache>,
}

/// Runs `pf` over `xs` and `pb` over `xs` reversed, both from zero states,
/// and concatenates their final hidden vectors (forward first).
pub fn bilstm_forward(pf: &LstmParams, pb: &LstmParams, xs: &[Vector]) -> Result<(Vector, BiLstmCache)> {
    if xs.is_empty() {
        return Err(Error::input("bilstm_forward needs a nonempty sequence"));
    }
    let (hf, forward) = lstm_forward(pf, xs)?;
    let reversed: Vec<&Vector> = xs.iter().rev().collect();
    let (hb, backward) = lstm_forward(pb, &reversed)?;
    let mut out = Vec::with_capacity(pf.hidden() + pb.hidden());
    out.extend_from_slice(hf.last().expect("nonempty"));
    out.extend_from_slice(hb.last().expect("nonempty"));
    Ok((Vector(out), BiLstmCache { forward, backward }))
}

/// Backward pass of [`bilstm_forward`]; returns the gradient for each `xs[t]`
/// in original order.
pub(crate) fn bilstm_backward(
    pf: &LstmParams,
    pb: &LstmParams,
    cache: &BiLstmCache,
    dout: &[f64],
    grad_f: &mut LstmParams,
    grad_b: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let hf = pf.hidden();
    let steps = cache.forward.len();
    let mut dh_f = vec![Vec::new(); steps];
    let mut dh_b = vec![Vec::new(); steps];
    dh_f[steps - 1] = dout[..hf].to_vec();
    dh_b[steps - 1] = dout[hf..].to_vec();

    let mut dx = lstm_backward(pf, &cache.forward, &dh_f, grad_f);
    let dx_rev = lstm_backward(pb, &cache.backward, &dh_b, grad_b);
    for (t, d) in dx.iter_mut().enumerate() {
        for (a, b) in d.iter_mut().zip(&dx_rev[steps - 1 - t]) {
            *a += b;
        }
    }
    dx
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn params(hidden: usize, input: usize) -> impl Strategy<Value = LstmParams> {
        let n = hidden * (hidden + input);
        (
            prop::collection::vec(-1.0f64..1.0, 4 * n),
            prop::collection::vec(-1.0f64..1.0, 4 * hidden),
        )
            .prop_map(move |(w, b)| {
                let m = |k: usize| Matrix::new(hidden, hidden + input, w[k * n..(k + 1) * n].to_vec()).unwrap();
                let v = |k: usize| Vector(b[k * hidden..(k + 1) * hidden].to_vec());
                LstmParams {
                    w_i: m(0),
                    w_f: m(1),
                    w_c: m(2),
                    w_o: m(3),
                    b_i: v(0),
                    b_f: v(1),
                    b_c: v(2),
                    b_o: v(3),
                }
            })
    }

    proptest! {
        #[test]
        fn gates_stay_in_range(
            p in params(3, 2),
            xs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..16),
        ) {
            let xs: Vec<Vector> = xs.into_iter().map(Vector).collect();
            let (_, caches) = lstm_forward(&p, &xs).unwrap();
            for c in &caches {
                for g in [c.input_gate(), c.forget_gate(), c.output_gate()] {
                    prop_assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
                }
                prop_assert!(c.candidate().iter().all(|v| v.abs() < 1.0));
                prop_assert!(c.hidden().iter().all(|v| v.abs() < 1.0));
            }
        }
    }
}
