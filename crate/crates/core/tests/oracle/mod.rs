//! Independent single-discriminator CycleGAN used as a reference: naive
//! loops over a scalar reverse-mode tape, its own padding arithmetic and a
//! textbook Adam. Shares nothing with the library except the parameter
//! tensor layout, which is needed to start both from identical weights.
#![allow(dead_code)]

use mdcyclegan::models::{DiscriminatorConfig, GeneratorConfig, LayerSpec, ModelBundle};
use ndarray::Array4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct V(usize);

#[derive(Default)]
pub struct Tape {
    vals: Vec<f64>,
    edges: Vec<Vec<(usize, f64)>>,
}

impl Tape {
    pub fn var(&mut self, v: f64) -> V {
        self.push(v, Vec::new())
    }

    fn push(&mut self, v: f64, e: Vec<(usize, f64)>) -> V {
        self.vals.push(v);
        self.edges.push(e);
        V(self.vals.len() - 1)
    }

    pub fn val(&self, v: V) -> f64 {
        self.vals[v.0]
    }

    /// `bias + Σ aᵢ·bᵢ`
    pub fn bilinear(&mut self, bias: Option<V>, pairs: &[(V, V)]) -> V {
        let mut value = bias.map_or(0.0, |b| self.val(b));
        let mut e = Vec::with_capacity(2 * pairs.len() + 1);
        if let Some(b) = bias {
            e.push((b.0, 1.0));
        }
        for &(a, b) in pairs {
            let (va, vb) = (self.val(a), self.val(b));
            value += va * vb;
            e.push((a.0, vb));
            e.push((b.0, va));
        }
        self.push(value, e)
    }

    pub fn add(&mut self, a: V, b: V) -> V {
        let v = self.val(a) + self.val(b);
        self.push(v, vec![(a.0, 1.0), (b.0, 1.0)])
    }

    pub fn scale(&mut self, a: V, k: f64) -> V {
        let v = self.val(a) * k;
        self.push(v, vec![(a.0, k)])
    }

    pub fn sum(&mut self, xs: &[V]) -> V {
        let v = xs.iter().map(|&x| self.val(x)).sum();
        self.push(v, xs.iter().map(|x| (x.0, 1.0)).collect())
    }

    pub fn mean(&mut self, xs: &[V]) -> V {
        let s = self.sum(xs);
        self.scale(s, 1.0 / xs.len() as f64)
    }

    pub fn relu(&mut self, a: V, slope: f64) -> V {
        let x = self.val(a);
        if x > 0.0 {
            self.push(x, vec![(a.0, 1.0)])
        } else {
            self.push(x * slope, vec![(a.0, slope)])
        }
    }

    pub fn abs_diff(&mut self, a: V, b: f64) -> V {
        let d = self.val(a) - b;
        let g = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.push(d.abs(), vec![(a.0, g)])
    }

    /// log(1 + e^{s·z})
    pub fn softplus(&mut self, z: V, s: f64) -> V {
        let u = s * self.val(z);
        let v = if u > 30.0 { u + (-u).exp() } else { u.exp().ln_1p() };
        let sig = 1.0 / (1.0 + (-u).exp());
        self.push(v, vec![(z.0, s * sig)])
    }

    /// ½(z - t)²
    pub fn half_square(&mut self, z: V, t: f64) -> V {
        let d = self.val(z) - t;
        self.push(0.5 * d * d, vec![(z.0, d)])
    }

    pub fn grad(&self, out: V) -> Vec<f64> {
        let mut g = vec![0.0; self.vals.len()];
        g[out.0] = 1.0;
        for i in (0..=out.0).rev() {
            if g[i] == 0.0 {
                continue;
            }
            for &(p, w) in &self.edges[i] {
                g[p] += g[i] * w;
            }
        }
        g
    }
}

/// Feature map: `[channel][freq][time]` of tape variables.
pub type Map = Vec<Vec<Vec<V>>>;

fn out_len(n: usize, s: usize) -> usize {
    (n + s - 1) / s
}

/// Leading zero padding of a "same" convolution.
fn lead_pad(n: usize, k: usize, s: usize) -> isize {
    let out = out_len(n, s);
    let need = (out - 1) * s + k;
    if need > n {
        ((need - n) / 2) as isize
    } else {
        0
    }
}

pub struct Tensor {
    pub dims: Vec<usize>,
    pub vars: Vec<V>,
}

impl Tensor {
    fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> V {
        let [_, n1, n2, n3] = [self.dims[0], self.dims[1], self.dims[2], self.dims[3]];
        self.vars[((a * n1 + b) * n2 + c) * n3 + d]
    }
}

fn conv(t: &mut Tape, x: &Map, w: &Tensor, b: &Tensor, l: &LayerSpec) -> Map {
    let (cin, h, wd) = (x.len(), x[0].len(), x[0][0].len());
    let (kh, kw, sh, sw) = (l.filter_freq, l.filter_time, l.stride_freq, l.stride_time);
    let (ph, pw) = (lead_pad(h, kh, sh), lead_pad(wd, kw, sw));
    (0..l.channels)
        .map(|o| {
            (0..out_len(h, sh))
                .map(|i| {
                    (0..out_len(wd, sw))
                        .map(|j| {
                            let mut pairs = Vec::new();
                            for c in 0..cin {
                                for a in 0..kh {
                                    for bb in 0..kw {
                                        let r = (i * sh + a) as isize - ph;
                                        let q = (j * sw + bb) as isize - pw;
                                        if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < wd {
                                            pairs.push((w.at4(o, c, a, bb), x[c][r as usize][q as usize]));
                                        }
                                    }
                                }
                            }
                            t.bilinear(Some(b.vars[o]), &pairs)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Adjoint-geometry transposed convolution onto an `h × wd` grid; weight
/// is `[in][out][kh][kw]`.
fn deconv(t: &mut Tape, x: &Map, w: &Tensor, b: &Tensor, l: &LayerSpec, cout: usize, h: usize, wd: usize) -> Map {
    let (kh, kw, sh, sw) = (l.filter_freq, l.filter_time, l.stride_freq, l.stride_time);
    let (ph, pw) = (lead_pad(h, kh, sh), lead_pad(wd, kw, sw));
    assert_eq!((x[0].len(), x[0][0].len()), (out_len(h, sh), out_len(wd, sw)));
    let mut acc: Vec<Vec<Vec<Vec<(V, V)>>>> = vec![vec![vec![Vec::new(); wd]; h]; cout];
    for (c, plane) in x.iter().enumerate() {
        for (i, row) in plane.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                for a in 0..kh {
                    for bb in 0..kw {
                        let r = (i * sh + a) as isize - ph;
                        let q = (j * sw + bb) as isize - pw;
                        if r < 0 || q < 0 || r as usize >= h || q as usize >= wd {
                            continue;
                        }
                        for o in 0..cout {
                            acc[o][r as usize][q as usize].push((w.at4(c, o, a, bb), v));
                        }
                    }
                }
            }
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(o, plane)| plane.into_iter().map(|row| row.into_iter().map(|p| t.bilinear(Some(b.vars[o]), &p)).collect()).collect())
        .collect()
}

fn act(t: &mut Tape, m: Map, slope: f64) -> Map {
    m.into_iter()
        .map(|p| p.into_iter().map(|r| r.into_iter().map(|v| t.relu(v, slope)).collect()).collect())
        .collect()
}

fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let mut i = i;
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

pub struct OracleGenerator {
    pub cfg: GeneratorConfig,
    pub params: Vec<Vec<f64>>,
    pub dims: Vec<Vec<usize>>,
}

pub struct OracleDiscriminator {
    pub cfg: DiscriminatorConfig,
    pub params: Vec<Vec<f64>>,
    pub dims: Vec<Vec<usize>>,
}

fn on_tape(t: &mut Tape, params: &[Vec<f64>], dims: &[Vec<usize>]) -> Vec<Tensor> {
    params
        .iter()
        .zip(dims)
        .map(|(p, d)| Tensor {
            dims: d.clone(),
            vars: p.iter().map(|&v| t.var(v)).collect(),
        })
        .collect()
}

impl OracleGenerator {
    /// `x` is one sample `[freq][time]`.
    pub fn forward(&self, t: &mut Tape, ps: &[Tensor], x: &[Vec<V>]) -> Vec<Vec<V>> {
        let layers = &self.cfg.encoder_layers;
        let depth = layers.len();
        let ff: usize = layers.iter().map(|l| l.stride_freq).product();
        let (bins, frames) = (x.len(), x[0].len());
        let padded = (bins + ff - 1) / ff * ff;
        let lo = (padded - bins) / 2;
        let input: Map = vec![(0..padded).map(|p| x[mirror(p as isize - lo as isize, bins)].clone()).collect()];
        let mut sizes = vec![(padded, frames)];
        let mut enc: Vec<Map> = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            let src = if i == 0 { &input } else { &enc[i - 1] };
            let h = conv(t, src, &ps[2 * i], &ps[2 * i + 1], l);
            let h = act(t, h, 0.0);
            sizes.push((h[0].len(), h[0][0].len()));
            enc.push(h);
        }
        let mut up: Map = Vec::new();
        for i in (0..depth).rev() {
            let inp: Map = if i == depth - 1 {
                enc[i].clone()
            } else if self.cfg.skip_connections {
                up.iter().chain(&enc[i]).cloned().collect()
            } else {
                up.clone()
            };
            let cout = if i == 0 { 1 } else { layers[i - 1].channels };
            let (h, w) = sizes[i];
            let k = 2 * depth + 2 * i;
            let out = deconv(t, &inp, &ps[k], &ps[k + 1], &layers[i], cout, h, w);
            up = if i > 0 { act(t, out, 0.0) } else { out };
        }
        up.swap_remove(0)[lo..lo + bins].to_vec()
    }
}

impl OracleDiscriminator {
    pub fn forward(&self, t: &mut Tape, ps: &[Tensor], x: &[Vec<V>]) -> V {
        let mut h: Map = vec![x.to_vec()];
        for (i, l) in self.cfg.conv_layers.iter().enumerate() {
            let c = conv(t, &h, &ps[2 * i], &ps[2 * i + 1], l);
            h = act(t, c, self.cfg.leaky_slope);
        }
        let flat: Vec<V> = h.into_iter().flatten().flatten().collect();
        let n = ps.len();
        let pairs: Vec<(V, V)> = flat.iter().zip(&ps[n - 2].vars).map(|(&a, &w)| (w, a)).collect();
        assert_eq!(pairs.len(), ps[n - 2].vars.len());
        t.bilinear(Some(ps[n - 1].vars[0]), &pairs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Loss {
    Bce,
    Ls,
}

pub fn real_term(t: &mut Tape, z: V, l: Loss) -> V {
    match l {
        Loss::Bce => t.softplus(z, -1.0),
        Loss::Ls => t.half_square(z, 1.0),
    }
}

pub fn fake_term(t: &mut Tape, z: V, l: Loss) -> V {
    match l {
        Loss::Bce => t.softplus(z, 1.0),
        Loss::Ls => t.half_square(z, 0.0),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleReport {
    pub d_x: f64,
    pub d_y: f64,
    pub g_xy: f64,
    pub g_yx: f64,
    pub cycle: f64,
    pub total_g: f64,
}

pub struct Adam {
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Vec<f64>]) -> Self {
        Adam {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        let (b1, b2, eps) = (0.5, 0.999, 1e-8);
        self.t += 1;
        for i in 0..params.len() {
            for j in 0..params[i].len() {
                let g = grads[i][j];
                self.m[i][j] = b1 * self.m[i][j] + (1.0 - b1) * g;
                self.v[i][j] = b2 * self.v[i][j] + (1.0 - b2) * g * g;
                let mh = self.m[i][j] / (1.0 - b1.powi(self.t));
                let vh = self.v[i][j] / (1.0 - b2.powi(self.t));
                params[i][j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// One-D CycleGAN: two generators and one full-spectrum discriminator per
/// domain.
pub struct OneD {
    pub g_xy: OracleGenerator,
    pub g_yx: OracleGenerator,
    pub d_x: OracleDiscriminator,
    pub d_y: OracleDiscriminator,
    pub lambda: f64,
    pub loss: Loss,
    pub lr: f64,
    adam_g: Adam,
    adam_d: Adam,
}

fn sample(t: &mut Tape, b: &Array4<f64>, n: usize) -> Vec<Vec<V>> {
    let (_, _, f, tt) = b.dim();
    (0..f).map(|i| (0..tt).map(|j| t.var(b[[n, 0, i, j]])).collect()).collect()
}

fn values(t: &Tape, m: &[Vec<V>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(|&v| t.val(v)).collect()).collect()
}

fn consts(t: &mut Tape, m: &[Vec<f64>]) -> Vec<Vec<V>> {
    m.iter().map(|r| r.iter().map(|&v| t.var(v)).collect()).collect()
}

fn grads_of(t: &Tape, g: &[f64], ps: &[Tensor]) -> Vec<Vec<f64>> {
    let _ = t;
    ps.iter().map(|p| p.vars.iter().map(|v| g[v.0]).collect()).collect()
}

impl OneD {
    /// Copies the weights of a one-band, single-generator bundle.
    pub fn from_bundle(b: &ModelBundle<f64>, lambda: f64, loss: Loss, lr: f64) -> Self {
        assert_eq!(b.gen_xy.len(), 1);
        assert_eq!(b.disc_x.len(), 1);
        let gen = |g: &mdcyclegan::models::Generator<f64>| OracleGenerator {
            cfg: g.config.clone(),
            params: g.params.iter().map(|p| p.data.clone()).collect(),
            dims: g.params.iter().map(|p| p.dims.clone()).collect(),
        };
        let disc = |d: &mdcyclegan::models::Discriminator<f64>| OracleDiscriminator {
            cfg: d.config.clone(),
            params: d.params.iter().map(|p| p.data.clone()).collect(),
            dims: d.params.iter().map(|p| p.dims.clone()).collect(),
        };
        let (g_xy, g_yx, d_x, d_y) = (gen(&b.gen_xy[0]), gen(&b.gen_yx[0]), disc(&b.disc_x[0]), disc(&b.disc_y[0]));
        let gp: Vec<Vec<f64>> = g_xy.params.iter().chain(&g_yx.params).cloned().collect();
        let dp: Vec<Vec<f64>> = d_x.params.iter().chain(&d_y.params).cloned().collect();
        OneD {
            adam_g: Adam::new(&gp),
            adam_d: Adam::new(&dp),
            g_xy,
            g_yx,
            d_x,
            d_y,
            lambda,
            loss,
            lr,
        }
    }

    fn translate(&self, g: &OracleGenerator, b: &Array4<f64>) -> Vec<Vec<Vec<f64>>> {
        (0..b.dim().0)
            .map(|n| {
                let mut t = Tape::default();
                let ps = on_tape(&mut t, &g.params, &g.dims);
                let x = sample(&mut t, b, n);
                let y = g.forward(&mut t, &ps, &x);
                values(&t, &y)
            })
            .collect()
    }

    pub fn translate_xy(&self, b: &Array4<f64>) -> Vec<Vec<Vec<f64>>> {
        self.translate(&self.g_xy, b)
    }

    /// Discriminator losses on fixed fakes, with gradients for
    /// `[d_x params.., d_y params..]`.
    fn disc_pass(&self, x: &Array4<f64>, y: &Array4<f64>, fx: &[Vec<Vec<f64>>], fy: &[Vec<Vec<f64>>]) -> (f64, f64, Vec<Vec<f64>>) {
        let mut t = Tape::default();
        let px = on_tape(&mut t, &self.d_x.params, &self.d_x.dims);
        let py = on_tape(&mut t, &self.d_y.params, &self.d_y.dims);
        let n = x.dim().0;
        let side = |t: &mut Tape, d: &OracleDiscriminator, ps: &[Tensor], real: &Array4<f64>, fake: &[Vec<Vec<f64>>]| {
            let mut r = Vec::new();
            let mut f = Vec::new();
            for i in 0..n {
                let s = sample(t, real, i);
                let z = d.forward(t, ps, &s);
                r.push(real_term(t, z, self.loss));
            }
            for fk in fake {
                let s = consts(t, fk);
                let z = d.forward(t, ps, &s);
                f.push(fake_term(t, z, self.loss));
            }
            let a = t.mean(&r);
            let b = t.mean(&f);
            t.add(a, b)
        };
        let lx = side(&mut t, &self.d_x, &px, x, fx);
        let ly = side(&mut t, &self.d_y, &py, y, fy);
        let total = t.add(lx, ly);
        let g = t.grad(total);
        let mut grads = grads_of(&t, &g, &px);
        grads.extend(grads_of(&t, &g, &py));
        (t.val(lx), t.val(ly), grads)
    }

    /// Generator objective with gradients for `[g_xy params.., g_yx params..]`.
    fn gen_pass(&self, x: &Array4<f64>, y: &Array4<f64>) -> (f64, f64, f64, f64, Vec<Vec<f64>>) {
        let mut t = Tape::default();
        let pxy = on_tape(&mut t, &self.g_xy.params, &self.g_xy.dims);
        let pyx = on_tape(&mut t, &self.g_yx.params, &self.g_yx.dims);
        let pdx = on_tape(&mut t, &self.d_x.params, &self.d_x.dims);
        let pdy = on_tape(&mut t, &self.d_y.params, &self.d_y.dims);
        let n = x.dim().0;
        let (mut adv_xy, mut adv_yx, mut cyc_x, mut cyc_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let xs = sample(&mut t, x, i);
            let ys = sample(&mut t, y, i);
            let fy = self.g_xy.forward(&mut t, &pxy, &xs);
            let fx = self.g_yx.forward(&mut t, &pyx, &ys);
            let z = self.d_y.forward(&mut t, &pdy, &fy);
            adv_xy.push(real_term(&mut t, z, self.loss));
            let z = self.d_x.forward(&mut t, &pdx, &fx);
            adv_yx.push(real_term(&mut t, z, self.loss));
            let rx = self.g_yx.forward(&mut t, &pyx, &fy);
            let ry = self.g_xy.forward(&mut t, &pxy, &fx);
            for (r, row) in rx.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    cyc_x.push(t.abs_diff(v, x[[i, 0, r, c]]));
                }
            }
            for (r, row) in ry.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    cyc_y.push(t.abs_diff(v, y[[i, 0, r, c]]));
                }
            }
        }
        let a = t.mean(&adv_xy);
        let b = t.mean(&adv_yx);
        let cx = t.mean(&cyc_x);
        let cy = t.mean(&cyc_y);
        let cyc = t.add(cx, cy);
        let wc = t.scale(cyc, self.lambda);
        let ab = t.add(a, b);
        let total = t.add(ab, wc);
        let g = t.grad(total);
        let mut grads = grads_of(&t, &g, &pxy);
        grads.extend(grads_of(&t, &g, &pyx));
        (t.val(a), t.val(b), t.val(cyc), t.val(total), grads)
    }

    /// Objective values at the current weights, no update.
    pub fn objective(&self, x: &Array4<f64>, y: &Array4<f64>) -> OracleReport {
        let fy = self.translate(&self.g_xy, x);
        let fx = self.translate(&self.g_yx, y);
        let (d_x, d_y, _) = self.disc_pass(x, y, &fx, &fy);
        let (g_xy, g_yx, cycle, total_g, _) = self.gen_pass(x, y);
        OracleReport {
            d_x,
            d_y,
            g_xy,
            g_yx,
            cycle,
            total_g,
        }
    }

    /// One discriminator update then one generator update.
    pub fn step(&mut self, x: &Array4<f64>, y: &Array4<f64>) -> OracleReport {
        let fy = self.translate(&self.g_xy, x);
        let fx = self.translate(&self.g_yx, y);
        let (d_x, d_y, dg) = self.disc_pass(x, y, &fx, &fy);
        let mut dp: Vec<Vec<f64>> = self.d_x.params.iter().chain(&self.d_y.params).cloned().collect();
        self.adam_d.update(&mut dp, &dg, self.lr);
        let k = self.d_x.params.len();
        self.d_y.params = dp.split_off(k);
        self.d_x.params = dp;

        let (g_xy, g_yx, cycle, total_g, gg) = self.gen_pass(x, y);
        let mut gp: Vec<Vec<f64>> = self.g_xy.params.iter().chain(&self.g_yx.params).cloned().collect();
        self.adam_g.update(&mut gp, &gg, self.lr);
        let k = self.g_xy.params.len();
        self.g_yx.params = gp.split_off(k);
        self.g_xy.params = gp;
        OracleReport {
            d_x,
            d_y,
            g_xy,
            g_yx,
            cycle,
            total_g,
        }
    }

    /// Single-discriminator adversarial mean on `batch` with `d_x` or `d_y`.
    pub fn adversarial(&self, batch: &Array4<f64>, domain_y: bool, real: bool) -> f64 {
        let d = if domain_y { &self.d_y } else { &self.d_x };
        let mut t = Tape::default();
        let ps = on_tape(&mut t, &d.params, &d.dims);
        let terms: Vec<V> = (0..batch.dim().0)
            .map(|i| {
                let s = sample(&mut t, batch, i);
                let z = d.forward(&mut t, &ps, &s);
                if real {
                    real_term(&mut t, z, self.loss)
                } else {
                    fake_term(&mut t, z, self.loss)
                }
            })
            .collect();
        let m = t.mean(&terms);
        t.val(m)
    }
}
