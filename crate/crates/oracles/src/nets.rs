//! Hand-written forward passes. Matrices are `[out][in]`.

pub type Matrix = Vec<Vec<f64>>;

fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Tanh hidden layers, linear output; `noise[l]` added before hidden activation `l`.
pub fn mlp(layers: &[(Matrix, Vec<f64>)], x: &[f64], noise: Option<&[Vec<f64>]>) -> Vec<f64> {
    let mut a = x.to_vec();
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = affine(w, b, &a);
        if l + 1 == layers.len() {
            return z;
        }
        if let Some(n) = noise {
            for (zi, ni) in z.iter_mut().zip(&n[l]) {
                *zi += ni;
            }
        }
        a = z.iter().map(|v| v.tanh()).collect();
    }
    a
}

pub struct GruParams {
    pub w_ir: Matrix,
    pub w_iz: Matrix,
    pub w_in: Matrix,
    pub w_hr: Matrix,
    pub w_hz: Matrix,
    pub w_hn: Matrix,
    pub b_r: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_in: Vec<f64>,
    pub b_hn: Vec<f64>,
}

pub fn gru(p: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let zero = vec![0.0; h.len()];
    let xr = affine(&p.w_ir, &p.b_r, x);
    let hr = affine(&p.w_hr, &zero, h);
    let xz = affine(&p.w_iz, &p.b_z, x);
    let hz = affine(&p.w_hz, &zero, h);
    let xn = affine(&p.w_in, &p.b_in, x);
    let hn = affine(&p.w_hn, &p.b_hn, h);
    (0..h.len())
        .map(|k| {
            let r = sig(xr[k] + hr[k]);
            let z = sig(xz[k] + hz[k]);
            let n = (xn[k] + r * hn[k]).tanh();
            (1.0 - z) * n + z * h[k]
        })
        .collect()
}

/// Gates in the order input, forget, cell, output.
pub struct LstmParams {
    pub wx: [Matrix; 4],
    pub wh: [Matrix; 4],
    pub b: [Vec<f64>; 4],
}

pub fn lstm(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let zero = vec![0.0; h.len()];
    let pre: Vec<Vec<f64>> = (0..4)
        .map(|g| {
            let a = affine(&p.wx[g], &p.b[g], x);
            let b = affine(&p.wh[g], &zero, h);
            a.iter().zip(&b).map(|(u, v)| u + v).collect()
        })
        .collect();
    let mut hn = Vec::with_capacity(h.len());
    let mut cn = Vec::with_capacity(h.len());
    for k in 0..h.len() {
        let i = sig(pre[0][k]);
        let f = sig(pre[1][k]);
        let g = pre[2][k].tanh();
        let o = sig(pre[3][k]);
        let cc = f * c[k] + i * g;
        cn.push(cc);
        hn.push(o * cc.tanh());
    }
    (hn, cn)
}
