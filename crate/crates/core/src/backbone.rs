//! Backbone networks: the embedding-producing forward contract and the
//! default small convolutional implementation.
//!
//! Any model can stand behind the trainer and the evaluators by
//! implementing [`Backbone`]: a batch of aligned face crops in, a batch of
//! pre-normalization feature vectors out, deterministic in inference mode.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::exec;
use crate::face::{FaceImage, IMAGE_SIZE};
use crate::rng::make_rng;

/// Inference contract every embedding model satisfies.
pub trait Backbone: Sync {
    fn embedding_dim(&self) -> usize;

    /// Pre-normalization features, one row per image. Deterministic for
    /// fixed parameters and inputs.
    fn embed_batch(&self, images: &[FaceImage]) -> Result<Array2<f64>>;
}

/// 3x3 stride-2 convolution, padding 1.
#[derive(Debug, Clone)]
struct Conv {
    w: Vec<f64>, // [out_c][in_c][3][3]
    b: Vec<f64>, // [out_c]
    in_c: usize,
    out_c: usize,
}

#[derive(Debug, Clone)]
struct Linear {
    w: Vec<f64>, // [out_f][in_f]
    b: Vec<f64>, // [out_f]
    in_f: usize,
    out_f: usize,
}

/// Default small backbone: four stride-2 conv+ReLU stages
/// (112 -> 56 -> 28 -> 14 -> 7), global average pooling, and a linear
/// projection to the embedding dimension.
#[derive(Debug, Clone)]
pub struct TinyConvNet {
    convs: Vec<Conv>,
    fc: Linear,
    widths: [usize; 4],
    dim: usize,
}

/// Spatial side length at the input of each conv stage.
const STAGE_SIZES: [usize; 5] = [112, 56, 28, 14, 7];

impl TinyConvNet {
    /// He-normal initialization from the `"backbone/*"` seed streams.
    pub fn new(dim: usize, widths: [usize; 4], seed: i64) -> Self {
        use rand_distr::{Distribution, Normal};
        let mut convs = Vec::with_capacity(4);
        let mut in_c = 3usize;
        for (stage, &out_c) in widths.iter().enumerate() {
            let mut rng = make_rng(seed, &format!("backbone/conv{stage}.w"));
            let std = (2.0 / (in_c * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std > 0");
            let w = (0..out_c * in_c * 9).map(|_| normal.sample(&mut rng)).collect();
            convs.push(Conv {
                w,
                b: vec![0.0; out_c],
                in_c,
                out_c,
            });
            in_c = out_c;
        }
        let mut rng = make_rng(seed, "backbone/fc.w");
        let std = (1.0 / widths[3] as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std > 0");
        let fc = Linear {
            w: (0..dim * widths[3]).map(|_| normal.sample(&mut rng)).collect(),
            b: vec![0.0; dim],
            in_f: widths[3],
            out_f: dim,
        };
        TinyConvNet {
            convs,
            fc,
            widths,
            dim,
        }
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    /// Flattened parameter tensors in a fixed order
    /// (conv0.w, conv0.b, ..., conv3.b, fc.w, fc.b).
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(10);
        for c in &self.convs {
            out.push(c.w.as_slice());
            out.push(c.b.as_slice());
        }
        out.push(self.fc.w.as_slice());
        out.push(self.fc.b.as_slice());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(10);
        for c in &mut self.convs {
            out.push(c.w.as_mut_slice());
            out.push(c.b.as_mut_slice());
        }
        out.push(self.fc.w.as_mut_slice());
        out.push(self.fc.b.as_mut_slice());
        out
    }

    /// SHA-256 over all parameter bytes; constant iff the parameters are.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for tensor in self.params() {
            for v in tensor {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn forward_sample(&self, input: &[f64]) -> SampleTape {
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(5);
        activations.push(input.to_vec());
        for (stage, conv) in self.convs.iter().enumerate() {
            let in_size = STAGE_SIZES[stage];
            let out_size = STAGE_SIZES[stage + 1];
            let mut out = conv_forward(conv, activations.last().unwrap(), in_size, out_size);
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            activations.push(out);
        }
        let last = activations.last().unwrap();
        let spatial = STAGE_SIZES[4] * STAGE_SIZES[4];
        let mut pooled = vec![0.0; self.widths[3]];
        for (c, p) in pooled.iter_mut().enumerate() {
            *p = last[c * spatial..(c + 1) * spatial].iter().sum::<f64>() / spatial as f64;
        }
        let mut feature = vec![0.0; self.dim];
        for (o, f) in feature.iter_mut().enumerate() {
            let row = &self.fc.w[o * self.fc.in_f..(o + 1) * self.fc.in_f];
            *f = self.fc.b[o] + row.iter().zip(&pooled).map(|(w, x)| w * x).sum::<f64>();
        }
        SampleTape {
            activations,
            pooled,
            feature,
        }
    }

    /// Forward pass keeping the activations needed for backward.
    pub fn forward_cached(&self, images: &[FaceImage]) -> Result<(Array2<f64>, BatchTape)> {
        if images.is_empty() {
            return Err(Error::Contract("empty image batch".to_string()));
        }
        let tapes: Vec<SampleTape> = exec::map(images, |img| {
            let input = img
                .pixels()
                .as_slice()
                .expect("pixel raster is contiguous");
            self.forward_sample(input)
        });
        let mut features = Array2::zeros((images.len(), self.dim));
        for (i, tape) in tapes.iter().enumerate() {
            for (j, &v) in tape.feature.iter().enumerate() {
                features[[i, j]] = v;
            }
        }
        Ok((features, BatchTape { tapes }))
    }

    fn backward_sample(&self, tape: &SampleTape, d_feature: &[f64]) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let n_t = grads.tensors.len();
        let spatial = STAGE_SIZES[4] * STAGE_SIZES[4];

        // linear
        let mut d_fc_w = vec![0.0; self.fc.w.len()];
        let mut d_fc_b = vec![0.0; self.fc.b.len()];
        for o in 0..self.fc.out_f {
            d_fc_b[o] = d_feature[o];
            for i in 0..self.fc.in_f {
                d_fc_w[o * self.fc.in_f + i] = d_feature[o] * tape.pooled[i];
            }
        }
        grads.tensors[n_t - 2] = d_fc_w;
        grads.tensors[n_t - 1] = d_fc_b;

        let mut d_pooled = vec![0.0; self.fc.in_f];
        for (i, dp) in d_pooled.iter_mut().enumerate() {
            *dp = (0..self.fc.out_f)
                .map(|o| d_feature[o] * self.fc.w[o * self.fc.in_f + i])
                .sum();
        }

        // global average pool
        let mut d_act = vec![0.0; self.widths[3] * spatial];
        for c in 0..self.widths[3] {
            let g = d_pooled[c] / spatial as f64;
            for v in &mut d_act[c * spatial..(c + 1) * spatial] {
                *v = g;
            }
        }

        // conv stages, last to first
        for stage in (0..4).rev() {
            let conv = &self.convs[stage];
            let in_size = STAGE_SIZES[stage];
            let out_size = STAGE_SIZES[stage + 1];
            let out_act = &tape.activations[stage + 1];
            // ReLU backward in place
            for (d, &a) in d_act.iter_mut().zip(out_act.iter()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let input = &tape.activations[stage];
            let (d_w, d_b, d_in) = conv_backward(conv, input, &d_act, in_size, out_size, stage > 0);
            grads.tensors[stage * 2] = d_w;
            grads.tensors[stage * 2 + 1] = d_b;
            if stage > 0 {
                d_act = d_in;
            }
        }
        grads
    }

    /// Backward pass; `d_features` has one row per image in the forward
    /// batch. Per-sample gradients are computed in parallel and summed in
    /// index order, so results are identical to the sequential build.
    pub fn backward(&self, tape: &BatchTape, d_features: &Array2<f64>) -> Result<Gradients> {
        if d_features.nrows() != tape.tapes.len() || d_features.ncols() != self.dim {
            return Err(Error::Contract(format!(
                "backward shape mismatch: tape {} x {}, grads {:?}",
                tape.tapes.len(),
                self.dim,
                d_features.dim()
            )));
        }
        let per_sample: Vec<Gradients> = exec::map_indexed(&tape.tapes, |i, t| {
            let row: Vec<f64> = d_features.row(i).to_vec();
            self.backward_sample(t, &row)
        });
        let mut total = Gradients::zeros_like(self);
        for g in per_sample {
            total.add_assign(&g);
        }
        Ok(total)
    }

    /// Sequential twin of [`Backbone::embed_batch`], used by the benches and
    /// the parallel-equivalence tests.
    pub fn embed_batch_serial(&self, images: &[FaceImage]) -> Result<Array2<f64>> {
        if images.is_empty() {
            return Err(Error::Contract("empty image batch".to_string()));
        }
        let rows: Vec<Vec<f64>> = exec::map_serial(images, |img| {
            self.forward_sample(img.pixels().as_slice().expect("contiguous"))
                .feature
        });
        let mut out = Array2::zeros((images.len(), self.dim));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

impl Backbone for TinyConvNet {
    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, images: &[FaceImage]) -> Result<Array2<f64>> {
        if images.is_empty() {
            return Err(Error::Contract("empty image batch".to_string()));
        }
        let rows: Vec<Vec<f64>> = exec::map(images, |img| {
            self.forward_sample(img.pixels().as_slice().expect("contiguous"))
                .feature
        });
        let mut out = Array2::zeros((images.len(), self.dim));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

fn conv_forward(conv: &Conv, input: &[f64], in_size: usize, out_size: usize) -> Vec<f64> {
    let mut out = vec![0.0; conv.out_c * out_size * out_size];
    let in_plane = in_size * in_size;
    let out_plane = out_size * out_size;
    for oc in 0..conv.out_c {
        let w_oc = &conv.w[oc * conv.in_c * 9..(oc + 1) * conv.in_c * 9];
        let out_oc = &mut out[oc * out_plane..(oc + 1) * out_plane];
        for v in out_oc.iter_mut() {
            *v = conv.b[oc];
        }
        for ic in 0..conv.in_c {
            let w_k = &w_oc[ic * 9..ic * 9 + 9];
            let in_ic = &input[ic * in_plane..(ic + 1) * in_plane];
            for oy in 0..out_size {
                let iy0 = 2 * oy as isize - 1;
                for (ky, w_row) in w_k.chunks_exact(3).enumerate() {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= in_size as isize {
                        continue;
                    }
                    let in_row = &in_ic[iy as usize * in_size..(iy as usize + 1) * in_size];
                    let out_row = &mut out_oc[oy * out_size..(oy + 1) * out_size];
                    for ox in 0..out_size {
                        let ix0 = 2 * ox as isize - 1;
                        let mut acc = 0.0;
                        for (kx, &w) in w_row.iter().enumerate() {
                            let ix = ix0 + kx as isize;
                            if ix >= 0 && ix < in_size as isize {
                                acc += w * in_row[ix as usize];
                            }
                        }
                        out_row[ox] += acc;
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    conv: &Conv,
    input: &[f64],
    d_out: &[f64],
    in_size: usize,
    out_size: usize,
    need_d_in: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_plane = in_size * in_size;
    let out_plane = out_size * out_size;
    let mut d_w = vec![0.0; conv.w.len()];
    let mut d_b = vec![0.0; conv.b.len()];
    let mut d_in = vec![0.0; if need_d_in { conv.in_c * in_plane } else { 0 }];
    for oc in 0..conv.out_c {
        let d_out_oc = &d_out[oc * out_plane..(oc + 1) * out_plane];
        d_b[oc] += d_out_oc.iter().sum::<f64>();
        for ic in 0..conv.in_c {
            let w_k = &conv.w[(oc * conv.in_c + ic) * 9..(oc * conv.in_c + ic) * 9 + 9];
            let d_w_k = &mut d_w[(oc * conv.in_c + ic) * 9..(oc * conv.in_c + ic) * 9 + 9];
            let in_ic = &input[ic * in_plane..(ic + 1) * in_plane];
            for oy in 0..out_size {
                let iy0 = 2 * oy as isize - 1;
                let d_row = &d_out_oc[oy * out_size..(oy + 1) * out_size];
                for ky in 0..3 {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= in_size as isize {
                        continue;
                    }
                    let in_row = &in_ic[iy as usize * in_size..(iy as usize + 1) * in_size];
                    for ox in 0..out_size {
                        let g = d_row[ox];
                        if g == 0.0 {
                            continue;
                        }
                        let ix0 = 2 * ox as isize - 1;
                        for kx in 0..3 {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= in_size as isize {
                                continue;
                            }
                            d_w_k[ky * 3 + kx] += g * in_row[ix as usize];
                            if need_d_in {
                                d_in[ic * in_plane + iy as usize * in_size + ix as usize] +=
                                    g * w_k[ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    (d_w, d_b, d_in)
}

/// Per-sample cached activations.
pub struct SampleTape {
    /// Post-activation tensors: input, then each stage output.
    activations: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    feature: Vec<f64>,
}

/// Batch of sample tapes from [`TinyConvNet::forward_cached`].
pub struct BatchTape {
    tapes: Vec<SampleTape>,
}

/// Gradient tensors matching [`TinyConvNet::params`] order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &TinyConvNet) -> Self {
        Gradients {
            tensors: net.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::canonical_landmarks;
    use ndarray::Array3;
    use rand::Rng;

    fn random_image(seed: i64) -> FaceImage {
        let mut rng = make_rng(seed, "backbone-test-image");
        let pixels = Array3::from_shape_fn((3, IMAGE_SIZE, IMAGE_SIZE), |_| {
            rng.gen::<f64>() * 2.0 - 1.0
        });
        FaceImage::new(pixels, canonical_landmarks(), format!("img{seed}"), None).unwrap()
    }

    #[test]
    fn forward_is_deterministic() {
        let net = TinyConvNet::new(16, [2, 4, 4, 8], 3);
        let imgs = vec![random_image(1), random_image(2)];
        let a = net.embed_batch(&imgs).unwrap();
        let b = net.embed_batch(&imgs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_and_serial_paths_bit_identical() {
        let net = TinyConvNet::new(16, [2, 4, 4, 8], 3);
        let imgs: Vec<FaceImage> = (0..8).map(random_image).collect();
        let par = net.embed_batch(&imgs).unwrap();
        let ser = net.embed_batch_serial(&imgs).unwrap();
        assert_eq!(par, ser);
    }

    #[test]
    fn checksum_tracks_parameters() {
        let net = TinyConvNet::new(16, [2, 4, 4, 8], 3);
        let before = net.checksum();
        assert_eq!(before, net.checksum());
        let mut changed = net.clone();
        changed.params_mut()[0][0] += 1e-9;
        assert_ne!(before, changed.checksum());
    }

    #[test]
    fn backward_matches_finite_differences_on_scalar_objective() {
        // objective: sum(weights_g * features) for a random fixed weights_g
        let net = TinyConvNet::new(6, [2, 2, 2, 4], 5);
        let imgs = vec![random_image(10), random_image(11)];
        let mut rng = make_rng(12, "objective");
        let g = Array2::from_shape_fn((2, 6), |_| rng.gen::<f64>() * 2.0 - 1.0);

        let (_, tape) = net.forward_cached(&imgs).unwrap();
        let grads = net.backward(&tape, &g).unwrap();

        let objective = |n: &TinyConvNet| {
            let f = n.embed_batch(&imgs).unwrap();
            (&f * &g).sum()
        };
        let h = 1e-5;
        // probe a few entries of each tensor
        for (t_idx, tensor) in net.params().iter().enumerate() {
            let probes = [0, tensor.len() / 2, tensor.len() - 1];
            for &p in probes.iter() {
                let mut np = net.clone();
                np.params_mut()[t_idx][p] += h;
                let mut nm = net.clone();
                nm.params_mut()[t_idx][p] -= h;
                let num = (objective(&np) - objective(&nm)) / (2.0 * h);
                let ana = grads.tensors[t_idx][p];
                assert!(
                    (num - ana).abs() <= 1e-4 * num.abs().max(ana.abs()).max(1e-6),
                    "tensor {t_idx} entry {p}: analytic {ana} vs numeric {num}"
                );
            }
        }
    }
}
