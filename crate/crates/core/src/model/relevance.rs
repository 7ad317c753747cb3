use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{glorot, Head};
use crate::error::{Error, Result};
use crate::types::softmax;

/// Output index of the "pair is annotated" logit.
pub const ANNOTATED_INDEX: usize = 0;

/// Two-layer pair relevance predictor:
/// `h = relu(W_s x_s + W_o x_o + b_so)`, `r = softmax(W_r h + b)[annotated]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceHead {
    pub feature_dim: usize,
    pub hidden: usize,
    /// `hidden × feature_dim`, row-major.
    pub w_s: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_so: Vec<f64>,
    /// `2 × hidden`, row-major.
    pub w_r: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RelevanceCache {
    x_s: Vec<f64>,
    x_o: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl RelevanceHead {
    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        Self {
            feature_dim,
            hidden,
            w_s: vec![0.0; hidden * feature_dim],
            w_o: vec![0.0; hidden * feature_dim],
            b_so: vec![0.0; hidden],
            w_r: vec![0.0; 2 * hidden],
            b: vec![0.0; 2],
        }
    }

    pub fn new(feature_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = Self::zeros(feature_dim, hidden);
        head.w_s = glorot(&mut rng, 2 * feature_dim, hidden, hidden * feature_dim);
        head.w_o = glorot(&mut rng, 2 * feature_dim, hidden, hidden * feature_dim);
        head.w_r = glorot(&mut rng, hidden, 2, 2 * hidden);
        head
    }

    /// Probability that the pair `(x_s, x_o)` is annotated.
    pub fn relevance_forward(&self, x_s: &[f64], x_o: &[f64]) -> Result<f64> {
        let (logits, _) = self.forward(&(x_s.to_vec(), x_o.to_vec()))?;
        Ok(softmax(&logits)[ANNOTATED_INDEX])
    }

    fn check_shapes(&self) -> Result<()> {
        let (d, h) = (self.feature_dim, self.hidden);
        let ok = self.w_s.len() == h * d
            && self.w_o.len() == h * d
            && self.b_so.len() == h
            && self.w_r.len() == 2 * h
            && self.b.len() == 2;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "relevance head parameter shapes are inconsistent",
            ))
        }
    }
}

impl Head for RelevanceHead {
    type Input = (Vec<f64>, Vec<f64>);
    type Cache = RelevanceCache;

    fn num_params(&self) -> usize {
        2 * self.hidden * self.feature_dim + self.hidden + 2 * self.hidden + 2
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(&self.w_s);
        out.extend_from_slice(&self.w_o);
        out.extend_from_slice(&self.b_so);
        out.extend_from_slice(&self.w_r);
        out.extend_from_slice(&self.b);
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.check_shapes()?;
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        let mut rest = params;
        for dst in [
            &mut self.w_s,
            &mut self.w_o,
            &mut self.b_so,
            &mut self.w_r,
            &mut self.b,
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn num_outputs(&self) -> usize {
        2
    }

    fn forward(&self, input: &Self::Input) -> Result<(Vec<f64>, RelevanceCache)> {
        let (x_s, x_o) = input;
        for x in [x_s, x_o] {
            if x.len() != self.feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.feature_dim,
                    found: x.len(),
                });
            }
        }
        let d = self.feature_dim;
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let ws = &self.w_s[j * d..(j + 1) * d];
                let wo = &self.w_o[j * d..(j + 1) * d];
                ws.iter().zip(x_s).map(|(w, x)| w * x).sum::<f64>()
                    + wo.iter().zip(x_o).map(|(w, x)| w * x).sum::<f64>()
                    + self.b_so[j]
            })
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
        if hidden.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: 0 });
        }
        let h = self.hidden;
        let logits: Vec<f64> = (0..2)
            .map(|k| {
                self.w_r[k * h..(k + 1) * h]
                    .iter()
                    .zip(&hidden)
                    .map(|(w, a)| w * a)
                    .sum::<f64>()
                    + self.b[k]
            })
            .collect();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: 1 });
        }
        Ok((
            logits,
            RelevanceCache {
                x_s: x_s.clone(),
                x_o: x_o.clone(),
                pre,
                hidden,
            },
        ))
    }

    fn backward(&self, cache: &RelevanceCache, d_logits: &[f64], scale: f64, grad: &mut [f64]) {
        let (d, h) = (self.feature_dim, self.hidden);
        let ws_off = 0;
        let wo_off = h * d;
        let bso_off = 2 * h * d;
        let wr_off = bso_off + h;
        let b_off = wr_off + 2 * h;

        let mut d_hidden = vec![0.0; h];
        for (k, &dz) in d_logits.iter().enumerate() {
            for j in 0..h {
                grad[wr_off + k * h + j] += scale * dz * cache.hidden[j];
                d_hidden[j] += dz * self.w_r[k * h + j];
            }
            grad[b_off + k] += scale * dz;
        }
        for j in 0..h {
            if cache.pre[j] <= 0.0 {
                continue;
            }
            let g = scale * d_hidden[j];
            for i in 0..d {
                grad[ws_off + j * d + i] += g * cache.x_s[i];
                grad[wo_off + j * d + i] += g * cache.x_o[i];
            }
            grad[bso_off + j] += g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_is_half() {
        let head = RelevanceHead::zeros(3, 4);
        let r = head
            .relevance_forward(&[1.0, 2.0, 3.0], &[-1.0, 0.0, 5.0])
            .unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn identical_output_rows_are_half() {
        let mut head = RelevanceHead::new(3, 4, 1);
        let row: Vec<f64> = head.w_r[..4].to_vec();
        head.w_r[4..].copy_from_slice(&row);
        let r = head
            .relevance_forward(&[0.3, -2.0, 1.0], &[1.0, 1.0, 1.0])
            .unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_fixture() {
        let head = RelevanceHead {
            feature_dim: 1,
            hidden: 1,
            w_s: vec![1.0],
            w_o: vec![1.0],
            b_so: vec![0.0],
            w_r: vec![1.0, -1.0],
            b: vec![0.0, 0.0],
        };
        let r = head.relevance_forward(&[1.0], &[1.0]).unwrap();
        assert!((r - 1.0 / (1.0 + (-4.0f64).exp())).abs() < 1e-12);
        assert!((r - 0.9820).abs() < 1e-4);
    }

    #[test]
    fn shifting_both_output_rows_is_invariant() {
        let head = RelevanceHead::new(3, 5, 4);
        let x_s = [0.4, -1.0, 2.0];
        let x_o = [1.5, 0.2, -0.7];
        let before = head.relevance_forward(&x_s, &x_o).unwrap();
        let mut shifted = head.clone();
        let c = [0.3, -1.1, 2.0, 0.0, 0.7];
        for row in shifted.w_r.chunks_mut(5) {
            for (w, shift) in row.iter_mut().zip(&c) {
                *w += shift;
            }
        }
        let after = shifted.relevance_forward(&x_s, &x_o).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn wrong_feature_length() {
        let head = RelevanceHead::zeros(2, 2);
        assert!(head.relevance_forward(&[1.0], &[1.0, 2.0]).is_err());
    }
}
