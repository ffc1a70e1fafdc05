//! Two-layer convolution block producing the high-order clique message.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ScoreMap, Tensor2D};

/// Stride-1, zero-padded ("same") 2-D convolution over planar data.
///
/// Weights are stored `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    #[inline]
    fn w(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        let k = self.kernel;
        self.weight[((co * self.in_channels + ci) * k + ky) * k + kx]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// `input` holds `in_channels` planes of `h × w`.
    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let n = h * w;
        let r = (self.kernel / 2) as isize;
        let mut out = vec![0.0; self.out_channels * n];
        for co in 0..self.out_channels {
            let o = &mut out[co * n..(co + 1) * n];
            o.fill(self.bias[co]);
            for ci in 0..self.in_channels {
                let src = &input[ci * n..(ci + 1) * n];
                for ky in 0..self.kernel {
                    let dy = ky as isize - r;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..self.kernel {
                        let wv = self.w(co, ci, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        let dx = kx as isize - r;
                        let (x0, x1) = valid_range(w, dx);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let orow = &mut o[y * w + x0..y * w + x1];
                            let sx0 = (x0 as isize + dx) as usize;
                            let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (a, &b) in orow.iter_mut().zip(srow) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns `(dL/dinput, dL/dweight, dL/dbias)`. The input gradient is
    /// skipped when `need_input` is false.
    pub fn backward(
        &self,
        input: &[f64],
        grad_out: &[f64],
        h: usize,
        w: usize,
        need_input: bool,
    ) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let n = h * w;
        let k = self.kernel;
        let r = (k / 2) as isize;
        let mut gw = vec![0.0; self.weight.len()];
        let gb: Vec<f64> = (0..self.out_channels)
            .map(|co| grad_out[co * n..(co + 1) * n].iter().sum())
            .collect();
        let mut gin = need_input.then(|| vec![0.0; self.in_channels * n]);
        for co in 0..self.out_channels {
            let go = &grad_out[co * n..(co + 1) * n];
            for ci in 0..self.in_channels {
                let src = &input[ci * n..(ci + 1) * n];
                for ky in 0..k {
                    let dy = ky as isize - r;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let (x0, x1) = valid_range(w, dx);
                        let sx0 = (x0 as isize + dx) as usize;
                        let len = x1 - x0;
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let grow = &go[y * w + x0..y * w + x1];
                            let srow = &src[sy * w + sx0..sy * w + sx0 + len];
                            acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gw[((co * self.in_channels + ci) * k + ky) * k + kx] = acc;

                        if let Some(gin) = gin.as_mut() {
                            let wv = self.w(co, ci, ky, kx);
                            if wv == 0.0 {
                                continue;
                            }
                            let gi = &mut gin[ci * n..(ci + 1) * n];
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let grow = &go[y * w + x0..y * w + x1];
                                let dst = &mut gi[sy * w + sx0..sy * w + sx0 + len];
                                for (d, &g) in dst.iter_mut().zip(grow) {
                                    *d += wv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
        (gin, gw, gb)
    }
}

// Output rows/cols `y` for which `y + d` stays inside `[0, n)`.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo.min(n), hi.max(lo.min(n)))
}

/// `U[p̂] = conv2(relu(conv1(p̂)))`: maps an L-channel probability map to an
/// L-channel message map. Depends on the probability map only.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextMessageNet {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

/// Gradients matching the fields of [`ContextMessageNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    pub conv1_weight: Vec<f64>,
    pub conv1_bias: Vec<f64>,
    pub conv2_weight: Vec<f64>,
    pub conv2_bias: Vec<f64>,
}

/// Activations kept from [`ContextMessageNet::forward_cached`].
#[derive(Clone, Debug)]
pub struct NetCache {
    height: usize,
    width: usize,
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl ContextMessageNet {
    pub fn zeros(labels: usize, channels: usize, k1: usize, k2: usize) -> Result<Self> {
        for k in [k1, k2] {
            if k % 2 == 0 {
                return Err(Error::invalid(format!("kernel size {k} must be odd")));
            }
        }
        if labels == 0 || channels == 0 {
            return Err(Error::invalid("labels and channels must be >= 1"));
        }
        Ok(Self {
            conv1: Conv2d::zeros(labels, channels, k1),
            conv2: Conv2d::zeros(channels, labels, k2),
        })
    }

    /// First layer uniform in `±1/sqrt(fan_in)`, everything else zero, so the
    /// initial message is exactly zero.
    pub fn init(labels: usize, channels: usize, k1: usize, k2: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(labels, channels, k1, k2)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / ((labels * k1 * k1) as f64).sqrt();
        for v in &mut net.conv1.weight {
            *v = rng.random_range(-bound..bound);
        }
        Ok(net)
    }

    pub fn labels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn channels(&self) -> usize {
        self.conv1.out_channels
    }

    /// Half-width of the receptive field of one output pixel.
    pub fn receptive_radius(&self) -> usize {
        self.conv1.kernel / 2 + self.conv2.kernel / 2
    }

    pub fn is_zero(&self) -> bool {
        [&self.conv2.weight, &self.conv2.bias]
            .iter()
            .all(|v| v.iter().all(|&x| x == 0.0))
    }

    fn check_input(&self, p: &ScoreMap) -> Result<()> {
        if p.channels() != self.labels() {
            return Err(Error::shape(
                format!("{} channels", self.labels()),
                format!("{} channels", p.channels()),
            ));
        }
        if p.is_empty() {
            return Err(Error::EmptyTensor);
        }
        Ok(())
    }

    pub fn forward(&self, p_hat: &ScoreMap) -> Result<ScoreMap> {
        Ok(self.forward_cached(p_hat)?.0)
    }

    pub fn forward_cached(&self, p_hat: &ScoreMap) -> Result<(ScoreMap, NetCache)> {
        self.check_input(p_hat)?;
        let (h, w) = (p_hat.height(), p_hat.width());
        let input: Vec<f64> = p_hat.planes().concat();
        let pre = self.conv1.forward(&input, h, w);
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let out = self.conv2.forward(&hidden, h, w);
        let planes: Vec<Vec<f64>> = out.chunks_exact(h * w).map(<[f64]>::to_vec).collect();
        Ok((
            Tensor2D::from_planes(h, w, &planes),
            NetCache {
                height: h,
                width: w,
                input,
                pre,
                hidden,
            },
        ))
    }

    /// Backpropagates `dL/dU`. Returns `dL/dp̂` (when requested) and the
    /// parameter gradients.
    pub fn backward(
        &self,
        cache: &NetCache,
        grad_out: &ScoreMap,
        need_input: bool,
    ) -> (Option<ScoreMap>, NetGrads) {
        let (h, w) = (cache.height, cache.width);
        let go: Vec<f64> = grad_out.planes().concat();
        let (ghidden, gw2, gb2) = self.conv2.backward(&cache.hidden, &go, h, w, true);
        let mut gpre = ghidden.expect("requested");
        for (g, &p) in gpre.iter_mut().zip(&cache.pre) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        let (gin, gw1, gb1) = self.conv1.backward(&cache.input, &gpre, h, w, need_input);
        let gin = gin.map(|g| {
            let planes: Vec<Vec<f64>> = g.chunks_exact(h * w).map(<[f64]>::to_vec).collect();
            Tensor2D::from_planes(h, w, &planes)
        });
        (
            gin,
            NetGrads {
                conv1_weight: gw1,
                conv1_bias: gb1,
                conv2_weight: gw2,
                conv2_bias: gb2,
            },
        )
    }
}
