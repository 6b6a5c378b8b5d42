//! Forward passes on a tape.
//!
//! A batch of `m` sequences of `T` frames is carried as a single matrix with
//! `T * m` rows in time-major order (row `t * m + i` is frame `t` of item
//! `i`). Feed-forward layers then run as one GEMM over the whole batch; only
//! the recurrent part steps through time.

use super::{EncoderConfig, ModelError, ModelParams};
use crate::autodiff::{Real, Tape, Tensor, Var};

/// Tape handles for every parameter, aligned with [`ModelParams::names`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    /// Registers every parameter as a borrowed leaf of `tape`.
    pub fn register<'p, T: Real>(tape: &mut Tape<'p, T>, params: &'p ModelParams<T>) -> Self {
        Self {
            vars: params.tensors().iter().map(|t| tape.param(t)).collect(),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn get<T: Real>(&self, params: &ModelParams<T>, name: &str) -> Result<Var, ModelError> {
        params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }
}

struct Net<'a, 't, 'p, T: Real> {
    tape: &'t mut Tape<'p, T>,
    params: &'a ModelParams<T>,
    vars: &'a ParamVars,
    hidden: usize,
}

impl<T: Real> Net<'_, '_, '_, T> {
    fn dense(&mut self, prefix: &str, x: Var, activate: bool) -> Result<Var, ModelError> {
        let w = self.vars.get(self.params, &format!("{prefix}.w"))?;
        let b = self.vars.get(self.params, &format!("{prefix}.b"))?;
        let y = self.tape.matmul(x, w)?;
        let y = self.tape.add_bias(y, b)?;
        Ok(if activate { self.tape.tanh(y)? } else { y })
    }

    fn lstm(&mut self, prefix: &str, x: Var, steps: usize) -> Result<Var, ModelError> {
        let w_x = self.vars.get(self.params, &format!("{prefix}.w_x"))?;
        let w_h = self.vars.get(self.params, &format!("{prefix}.w_h"))?;
        let b = self.vars.get(self.params, &format!("{prefix}.b"))?;
        let h = self.hidden;
        let rows = self.tape.value(x).dims2().map_or(0, |d| d.0);
        if steps == 0 || !rows.is_multiple_of(steps) {
            return Err(ModelError::ShapeMismatch(format!("{rows} rows do not split into {steps} steps")));
        }
        let m = rows / steps;

        let xw = self.tape.matmul(x, w_x)?;
        let xw = self.tape.add_bias(xw, b)?;
        let mut state: Option<(Var, Var)> = None;
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut gates = self.tape.slice_rows(xw, t * m, (t + 1) * m)?;
            if let Some((h_prev, _)) = state {
                let rec = self.tape.matmul(h_prev, w_h)?;
                gates = self.tape.add(gates, rec)?;
            }
            let i = self.tape.slice_cols(gates, 0, h)?;
            let i = self.tape.sigmoid(i)?;
            let g = self.tape.slice_cols(gates, 2 * h, 3 * h)?;
            let g = self.tape.tanh(g)?;
            let o = self.tape.slice_cols(gates, 3 * h, 4 * h)?;
            let o = self.tape.sigmoid(o)?;
            let mut c = self.tape.mul(i, g)?;
            if let Some((_, c_prev)) = state {
                let f = self.tape.slice_cols(gates, h, 2 * h)?;
                let f = self.tape.sigmoid(f)?;
                let kept = self.tape.mul(f, c_prev)?;
                c = self.tape.add(kept, c)?;
            }
            let tc = self.tape.tanh(c)?;
            let h_t = self.tape.mul(o, tc)?;
            outputs.push(h_t);
            state = Some((h_t, c));
        }
        Ok(self.tape.concat_rows(&outputs)?)
    }
}

fn check_width<T: Real>(tape: &Tape<'_, T>, x: Var, width: usize, what: &str) -> Result<(), ModelError> {
    match tape.value(x).dims2() {
        Some((_, w)) if w == width => Ok(()),
        _ => Err(ModelError::ShapeMismatch(format!(
            "{what} expects {width} columns, got {:?}",
            tape.value(x).shape()
        ))),
    }
}

/// Encoder: `T * m x input_dim` normalized frames to `T * m x feature_dim`.
pub fn encode_on<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    params: &ModelParams<T>,
    vars: &ParamVars,
    config: &EncoderConfig,
    frames: Var,
    steps: usize,
) -> Result<Var, ModelError> {
    check_width(tape, frames, config.input_dim, "encoder")?;
    let mut net = Net {
        tape,
        params,
        vars,
        hidden: config.hidden,
    };
    let mut x = frames;
    for k in 0..config.lstm_layers {
        x = net.lstm(&format!("enc.lstm{k}"), x, steps)?;
    }
    for k in 0..config.fc_layers {
        x = net.dense(&format!("enc.fc{k}"), x, true)?;
    }
    net.dense("enc.head", x, false)
}

/// Decoder: `T * m x feature_dim` features to `T * m x input_dim` frames in
/// normalized units.
pub fn decode_on<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    params: &ModelParams<T>,
    vars: &ParamVars,
    config: &EncoderConfig,
    features: Var,
    steps: usize,
) -> Result<Var, ModelError> {
    check_width(tape, features, config.feature_dim, "decoder")?;
    let mut net = Net {
        tape,
        params,
        vars,
        hidden: config.hidden,
    };
    let mut x = features;
    for k in 0..config.fc_layers {
        x = net.dense(&format!("dec.fc{k}"), x, true)?;
    }
    for k in 0..config.lstm_layers {
        x = net.lstm(&format!("dec.lstm{k}"), x, steps)?;
    }
    net.dense("dec.head", x, false)
}

fn run_single<T: Real>(
    params: &ModelParams<T>,
    config: &EncoderConfig,
    input: &Tensor<T>,
    decode: bool,
) -> Result<Tensor<T>, ModelError> {
    let Some((steps, _)) = input.dims2() else {
        return Err(ModelError::ShapeMismatch(format!("expected a T x D matrix, got {:?}", input.shape())));
    };
    let mut tape = Tape::with_finite_checks(false);
    let vars = ParamVars::register(&mut tape, params);
    let x = tape.constant_ref(input);
    let out = if decode {
        decode_on(&mut tape, params, &vars, config, x, steps)?
    } else {
        encode_on(&mut tape, params, &vars, config, x, steps)?
    };
    Ok(tape.value(out).clone())
}

/// Encodes one utterance of `T x input_dim` normalized frames.
pub fn encode_sequence<T: Real>(
    params: &ModelParams<T>,
    config: &EncoderConfig,
    frames: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    run_single(params, config, frames, false)
}

/// Decodes one `T x feature_dim` feature track to normalized frames.
pub fn decode_sequence<T: Real>(
    params: &ModelParams<T>,
    config: &EncoderConfig,
    features: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    run_single(params, config, features, true)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::autodiff::{grad_check, relative_error};
    use crate::model::init_params;
    use crate::rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            lstm_layers: 2,
            fc_layers: 1,
            hidden: 5,
            feature_dim: 3,
            input_dim: 7,
        }
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, "test-input", 0);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect())
    }

    /// Scalar reference LSTM cell, written independently of the tape.
    fn reference_lstm(x: &[Vec<f64>], wx: &Tensor<f64>, wh: &Tensor<f64>, b: &Tensor<f64>, h: usize) -> Vec<Vec<f64>> {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let input = wx.shape()[0];
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut out = Vec::new();
        for xt in x {
            let mut gates = b.data().to_vec();
            for (g, gate) in gates.iter_mut().enumerate() {
                for k in 0..input {
                    *gate += xt[k] * wx.data()[k * 4 * h + g];
                }
                for k in 0..h {
                    *gate += hs[k] * wh.data()[k * 4 * h + g];
                }
            }
            for u in 0..h {
                let (i, f, g, o) = (sig(gates[u]), sig(gates[h + u]), gates[2 * h + u].tanh(), sig(gates[3 * h + u]));
                cs[u] = f * cs[u] + i * g;
                hs[u] = o * cs[u].tanh();
            }
            out.push(hs.clone());
        }
        out
    }

    #[test]
    fn matches_scalar_reference() {
        let cfg = EncoderConfig {
            lstm_layers: 1,
            fc_layers: 1,
            ..tiny()
        };
        let params = init_params(&cfg, 11).unwrap().cast::<f64>();
        let input = random_matrix(4, 7, 1);
        let got = encode_sequence(&params, &cfg, &input).unwrap();

        let rows: Vec<Vec<f64>> = input.data().chunks(7).map(|r| r.to_vec()).collect();
        let p = |n: &str| params.get(n).unwrap();
        let hs = reference_lstm(&rows, p("enc.lstm0.w_x"), p("enc.lstm0.w_h"), p("enc.lstm0.b"), 5);
        let dense = |x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>| -> Vec<f64> {
            let (i, o) = w.dims2().unwrap();
            (0..o)
                .map(|j| b.data()[j] + (0..i).map(|k| x[k] * w.data()[k * o + j]).sum::<f64>())
                .collect()
        };
        for (t, ht) in hs.iter().enumerate() {
            let fc: Vec<f64> = dense(ht, p("enc.fc0.w"), p("enc.fc0.b")).iter().map(|v| v.tanh()).collect();
            let z = dense(&fc, p("enc.head.w"), p("enc.head.b"));
            for (j, zj) in z.iter().enumerate() {
                let g = got.data()[t * 3 + j];
                assert!((g - zj).abs() < 1e-12, "t={t} j={j}: {g} vs {zj}");
            }
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let cfg = tiny();
        let params = init_params(&cfg, 2).unwrap().cast::<f64>();
        let a = random_matrix(3, 7, 5);
        let b = random_matrix(3, 7, 6);
        // Interleave the two sequences time-major.
        let mut both = Vec::new();
        for t in 0..3 {
            both.extend_from_slice(&a.data()[t * 7..(t + 1) * 7]);
            both.extend_from_slice(&b.data()[t * 7..(t + 1) * 7]);
        }
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &params);
        let x = tape.constant(Tensor::matrix(6, 7, both));
        let z = encode_on(&mut tape, &params, &vars, &cfg, x, 3).unwrap();
        let za = encode_sequence(&params, &cfg, &a).unwrap();
        let zb = encode_sequence(&params, &cfg, &b).unwrap();
        let zz = tape.value(z).data();
        for t in 0..3 {
            assert_eq!(&zz[(2 * t) * 3..(2 * t + 1) * 3], &za.data()[t * 3..(t + 1) * 3]);
            assert_eq!(&zz[(2 * t + 1) * 3..(2 * t + 2) * 3], &zb.data()[t * 3..(t + 1) * 3]);
        }
    }

    #[test]
    fn output_shapes() {
        let cfg = tiny();
        let params = init_params(&cfg, 2).unwrap().cast::<f64>();
        let z = encode_sequence(&params, &cfg, &random_matrix(9, 7, 0)).unwrap();
        assert_eq!(z.shape(), &[9, 3]);
        let y = decode_sequence(&params, &cfg, &z).unwrap();
        assert_eq!(y.shape(), &[9, 7]);
        assert!(encode_sequence(&params, &cfg, &random_matrix(9, 6, 0)).is_err());
    }

    #[test]
    fn causal() {
        let cfg = tiny();
        let params = init_params(&cfg, 4).unwrap().cast::<f64>();
        let a = random_matrix(5, 7, 9);
        let mut b = a.clone();
        for v in &mut b.data_mut()[4 * 7..] {
            *v += 1.0;
        }
        let za = encode_sequence(&params, &cfg, &a).unwrap();
        let zb = encode_sequence(&params, &cfg, &b).unwrap();
        assert_eq!(&za.data()[..12], &zb.data()[..12]);
        assert_ne!(&za.data()[12..], &zb.data()[12..]);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let cfg = tiny();
        let params = init_params(&cfg, 8).unwrap().cast::<f64>();
        let point = random_matrix(6, 7, 3);
        let report = grad_check(
            |tape, x| {
                let vars = ParamVars {
                    vars: params.tensors().iter().map(|t| tape.constant(t.clone())).collect(),
                };
                let z = encode_on(tape, &params, &vars, &cfg, x, 3).map_err(|e| match e {
                    ModelError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })?;
                let y = decode_on(tape, &params, &vars, &cfg, z, 3).map_err(|e| match e {
                    ModelError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })?;
                tape.sqnorm(y)
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(report < 1e-6, "max relative error {report}");
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let cfg = tiny();
        let base = init_params(&cfg, 21).unwrap().cast::<f64>();
        let input = random_matrix(6, 7, 4);
        let loss_of = |p: &ModelParams<f64>| -> (f64, Vec<Tensor<f64>>) {
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, p);
            let x = tape.constant_ref(&input);
            let z = encode_on(&mut tape, p, &vars, &cfg, x, 2).unwrap();
            let y = decode_on(&mut tape, p, &vars, &cfg, z, 2).unwrap();
            let loss = tape.sqnorm(y).unwrap();
            let value = tape.value(loss).item();
            let mut g = tape.backward(loss).unwrap();
            let grads = vars
                .vars()
                .iter()
                .zip(p.tensors())
                .map(|(&v, t)| g.take_or_zeros(v, t.shape()))
                .collect();
            (value, grads)
        };
        let (_, grads) = loss_of(&base);
        let h = 1e-6;
        let mut r = rng::stream(0, "coords", 0);
        for (k, name) in base.names().iter().enumerate() {
            for _ in 0..3 {
                let j = r.gen_range(0..base.tensors()[k].numel());
                let mut plus = base.clone();
                plus.tensors_mut()[k].data_mut()[j] += h;
                let mut minus = base.clone();
                minus.tensors_mut()[k].data_mut()[j] -= h;
                let numeric = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * h);
                let analytic = grads[k].data()[j];
                let err = relative_error(analytic, numeric);
                assert!(err < 1e-5 || (analytic - numeric).abs() < 1e-9, "{name}[{j}]: {analytic} vs {numeric}");
            }
        }
    }
}
