//! LSTM layer with full backpropagation through time.
//!
//! Standard recurrence with logistic input/forget/output gates and tanh
//! candidate/cell output, zero initial state. Gate blocks are laid out
//! [i | f | g | o] inside the 4U-wide kernel, recurrent and bias tensors.

use crate::neural::tensor::{Scalar, Tensor};
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// Input kernel [input_dim, 4 * units].
    pub kernel: Tensor<T>,
    /// Recurrent kernel [units, 4 * units].
    pub recurrent: Tensor<T>,
    /// Bias [4 * units].
    pub bias: Tensor<T>,
    pub input_dim: usize,
    pub units: usize,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[input_dim, 4 * units]),
            recurrent: Tensor::zeros(&[units, 4 * units]),
            bias: Tensor::zeros(&[4 * units]),
            input_dim,
            units,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.recurrent.len() + self.bias.len()
    }
}

/// Everything the backward pass needs: inputs, states and gate activations
/// per step.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    x: Tensor<T>,      // [T, D]
    h: Tensor<T>,      // [T + 1, U]; row 0 is the zero initial state
    c: Tensor<T>,      // [T + 1, U]
    gates: Tensor<T>,  // [T, 4U], post-activation
    tanh_c: Tensor<T>, // [T, U]
}

impl<T: Scalar> LstmCache<T> {
    /// Shape of the input sequence this cache was built from.
    pub fn input_shape(&self) -> &[usize] {
        self.x.shape()
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Runs the recurrence over `x` of shape [T, D]. Returns the full hidden
/// sequence [T, U] when `return_sequence`, otherwise the last state [U].
pub fn lstm_forward<T: Scalar>(
    params: &LstmParams<T>,
    x: &Tensor<T>,
    return_sequence: bool,
) -> Result<(Tensor<T>, LstmCache<T>)> {
    let [t_steps, d] = x.shape() else {
        return Err(CoreError::ShapeMismatch {
            layer: "lstm".into(),
            expected: "[T, D]".into(),
            got: format!("{:?}", x.shape()),
        });
    };
    let (t_steps, d) = (*t_steps, *d);
    if d != params.input_dim {
        return Err(CoreError::ShapeMismatch {
            layer: "lstm".into(),
            expected: format!("[T, {}]", params.input_dim),
            got: format!("{:?}", x.shape()),
        });
    }
    let u = params.units;
    let g4 = 4 * u;

    let mut h = Tensor::zeros(&[t_steps + 1, u]);
    let mut c = Tensor::zeros(&[t_steps + 1, u]);
    let mut gates = Tensor::zeros(&[t_steps, g4]);
    let mut tanh_c = Tensor::zeros(&[t_steps, u]);

    let xd = x.data();
    let kd = params.kernel.data();
    let rd = params.recurrent.data();
    let bd = params.bias.data();

    let mut z = vec![T::zero(); g4];
    for t in 0..t_steps {
        z.copy_from_slice(bd);
        let xt = &xd[t * d..(t + 1) * d];
        for (di, xv) in xt.iter().enumerate() {
            let krow = &kd[di * g4..(di + 1) * g4];
            for (zv, kv) in z.iter_mut().zip(krow) {
                *zv += *xv * *kv;
            }
        }
        let h_prev_start = t * u;
        for ui in 0..u {
            let hv = h.data()[h_prev_start + ui];
            if hv != T::zero() {
                let rrow = &rd[ui * g4..(ui + 1) * g4];
                for (zv, rv) in z.iter_mut().zip(rrow) {
                    *zv += hv * *rv;
                }
            }
        }
        let gate_row = &mut gates.data_mut()[t * g4..(t + 1) * g4];
        for ui in 0..u {
            gate_row[ui] = sigmoid(z[ui]); // input gate
            gate_row[u + ui] = sigmoid(z[u + ui]); // forget gate
            gate_row[2 * u + ui] = z[2 * u + ui].tanh(); // candidate
            gate_row[3 * u + ui] = sigmoid(z[3 * u + ui]); // output gate
        }
        for ui in 0..u {
            let i_g = gate_row[ui];
            let f_g = gate_row[u + ui];
            let g_g = gate_row[2 * u + ui];
            let o_g = gate_row[3 * u + ui];
            let c_prev = c.data()[t * u + ui];
            let c_t = f_g * c_prev + i_g * g_g;
            let tc = c_t.tanh();
            c.data_mut()[(t + 1) * u + ui] = c_t;
            tanh_c.data_mut()[t * u + ui] = tc;
            h.data_mut()[(t + 1) * u + ui] = o_g * tc;
        }
    }

    let out = if return_sequence {
        Tensor::from_vec(&[t_steps, u], h.data()[u..].to_vec())
    } else {
        Tensor::from_vec(&[u], h.data()[t_steps * u..].to_vec())
    };
    Ok((
        out,
        LstmCache {
            x: x.clone(),
            h,
            c,
            gates,
            tanh_c,
        },
    ))
}

/// Backpropagation through time. `dout` is [T, U] when the layer returned a
/// sequence, else [U] holding the gradient at the last step. Returns
/// (dx, dkernel, drecurrent, dbias).
pub fn lstm_backward<T: Scalar>(
    params: &LstmParams<T>,
    cache: &LstmCache<T>,
    dout: &Tensor<T>,
    return_sequence: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>) {
    let t_steps = cache.x.shape()[0];
    let d = params.input_dim;
    let u = params.units;
    let g4 = 4 * u;

    let mut dx = Tensor::zeros(&[t_steps, d]);
    let mut dk = Tensor::zeros(&[d, g4]);
    let mut dr = Tensor::zeros(&[u, g4]);
    let mut db = Tensor::zeros(&[g4]);

    let mut dh = vec![T::zero(); u];
    let mut dc = vec![T::zero(); u];
    let mut dz = vec![T::zero(); g4];

    let kd = params.kernel.data();
    let rd = params.recurrent.data();

    for t in (0..t_steps).rev() {
        if return_sequence {
            let row = &dout.data()[t * u..(t + 1) * u];
            for (a, b) in dh.iter_mut().zip(row) {
                *a += *b;
            }
        } else if t == t_steps - 1 {
            for (a, b) in dh.iter_mut().zip(dout.data()) {
                *a += *b;
            }
        }

        let gate_row = &cache.gates.data()[t * g4..(t + 1) * g4];
        let tanh_row = &cache.tanh_c.data()[t * u..(t + 1) * u];
        let c_prev = &cache.c.data()[t * u..(t + 1) * u];
        for ui in 0..u {
            let i_g = gate_row[ui];
            let f_g = gate_row[u + ui];
            let g_g = gate_row[2 * u + ui];
            let o_g = gate_row[3 * u + ui];
            let tc = tanh_row[ui];

            let d_o = dh[ui] * tc;
            let dc_t = dc[ui] + dh[ui] * o_g * (T::one() - tc * tc);
            let d_i = dc_t * g_g;
            let d_f = dc_t * c_prev[ui];
            let d_g = dc_t * i_g;

            dz[ui] = d_i * i_g * (T::one() - i_g);
            dz[u + ui] = d_f * f_g * (T::one() - f_g);
            dz[2 * u + ui] = d_g * (T::one() - g_g * g_g);
            dz[3 * u + ui] = d_o * o_g * (T::one() - o_g);

            dc[ui] = dc_t * f_g; // becomes dc_{t-1}
        }

        for (b, z) in db.data_mut().iter_mut().zip(&dz) {
            *b += *z;
        }
        let xt = &cache.x.data()[t * d..(t + 1) * d];
        {
            let dkd = dk.data_mut();
            let dxd = &mut dx.data_mut()[t * d..(t + 1) * d];
            for di in 0..d {
                let xv = xt[di];
                let dkrow = &mut dkd[di * g4..(di + 1) * g4];
                let krow = &kd[di * g4..(di + 1) * g4];
                let mut acc = T::zero();
                for j in 0..g4 {
                    dkrow[j] += xv * dz[j];
                    acc += krow[j] * dz[j];
                }
                dxd[di] = acc;
            }
        }
        let h_prev = &cache.h.data()[t * u..(t + 1) * u];
        {
            let drd = dr.data_mut();
            for ui in 0..u {
                let hv = h_prev[ui];
                let drrow = &mut drd[ui * g4..(ui + 1) * g4];
                let rrow = &rd[ui * g4..(ui + 1) * g4];
                let mut acc = T::zero();
                for j in 0..g4 {
                    drrow[j] += hv * dz[j];
                    acc += rrow[j] * dz[j];
                }
                dh[ui] = acc; // dh_{t-1}
            }
        }
    }
    (dx, dk, dr, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn output_shapes() {
        let p = LstmParams::<f32>::zeros(128, 256);
        let x = Tensor::zeros(&[5, 128]);
        let (seq, _) = lstm_forward(&p, &x, true).unwrap();
        assert_eq!(seq.shape(), &[5, 256]);
        let (last, _) = lstm_forward(&p, &x, false).unwrap();
        assert_eq!(last.shape(), &[256]);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = LstmParams::<f64>::zeros(4, 3);
        let x = Tensor::from_vec(&[2, 4], (0..8).map(|i| i as f64).collect());
        let (out, _) = lstm_forward(&p, &x, true).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_single_step_recurrence() {
        // T=1, D=1, U=1 with hand-set weights: h1 = o * tanh(i * g)
        let mut p = LstmParams::<f64>::zeros(1, 1);
        // kernel row for x: [i, f, g, o]
        p.kernel.data_mut().copy_from_slice(&[0.5, 0.3, -0.7, 0.9]);
        p.bias.data_mut().copy_from_slice(&[0.1, -0.2, 0.4, 0.0]);
        let x_val = 1.3;
        let x = Tensor::from_vec(&[1, 1], vec![x_val]);
        let (out, _) = lstm_forward(&p, &x, false).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i_g = sig(0.5 * x_val + 0.1);
        let g_g = (-0.7 * x_val + 0.4).tanh();
        let o_g = sig(0.9 * x_val);
        let c1 = i_g * g_g; // c0 = 0, forget term vanishes
        let expected = o_g * c1.tanh();
        assert_abs_diff_eq!(out.data()[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn input_dim_mismatch_is_error() {
        let p = LstmParams::<f32>::zeros(8, 4);
        let x = Tensor::zeros(&[3, 5]);
        assert!(lstm_forward(&p, &x, true).is_err());
    }
}
