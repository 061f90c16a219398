use drrp_core::cts::{sample, CtsParams, CtsTable, FftGrid};
use nalgebra::DMatrix;

fn nll(p: &CtsParams, xs: &[f64], lo: f64, hi: f64) -> f64 {
    let grid = FftGrid::auto_covering(p, Some((lo, hi))).unwrap();
    let table = CtsTable::build(p, &grid).unwrap();
    -xs.iter().map(|x| table.pdf_at(*x).max(1e-300).ln()).sum::<f64>()
}

fn main() {
    let truth = CtsParams::new(1.2, 0.5, 0.5, 3.0, 2.0, 0.0).unwrap();
    let n = 1_000_000usize;
    let xs = sample(&truth, n, 2024).unwrap();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let base = [1.2, 0.5, 0.5, 3.0, 2.0, 0.0];
    let h = [0.02, 0.01, 0.01, 0.05, 0.04, 0.002];
    let to_params = |v: &[f64]| CtsParams { alpha: v[0], c_plus: v[1], c_minus: v[2], lambda_plus: v[3], lambda_minus: v[4], m: v[5] };
    let f = |v: &[f64]| nll(&to_params(v), &xs, lo, hi);
    let f0 = f(&base);
    let mut hess = DMatrix::zeros(6, 6);
    for i in 0..6 {
        for j in i..6 {
            let hij = if i == j {
                let mut vp = base; vp[i] += h[i];
                let mut vm = base; vm[i] -= h[i];
                (f(&vp) + f(&vm) - 2.0 * f0) / (h[i] * h[i])
            } else {
                let mut vpp = base; vpp[i] += h[i]; vpp[j] += h[j];
                let mut vpm = base; vpm[i] += h[i]; vpm[j] -= h[j];
                let mut vmp = base; vmp[i] -= h[i]; vmp[j] += h[j];
                let mut vmm = base; vmm[i] -= h[i]; vmm[j] -= h[j];
                (f(&vpp) - f(&vpm) - f(&vmp) + f(&vmm)) / (4.0 * h[i] * h[j])
            };
            hess[(i, j)] = hij; hess[(j, i)] = hij;
        }
    }
    let info6 = hess / n as f64;
    // Constrained family C+ = C-: embedding Jacobian (5 -> 6)
    let mut jac = DMatrix::zeros(6, 5);
    jac[(0, 0)] = 1.0; // alpha
    jac[(1, 1)] = 1.0; // C+ = C
    jac[(2, 1)] = 1.0; // C- = C
    jac[(3, 2)] = 1.0; // l+
    jac[(4, 3)] = 1.0; // l-
    jac[(5, 4)] = 1.0; // m
    let info5 = jac.transpose() * &info6 * &jac;
    let names5 = ["alpha", "C", "l+", "l-", "m"];
    let truth5 = [1.2, 0.5, 3.0, 2.0, 0.0];
    if let Some(inv5) = info5.try_inverse() {
        println!("CR SEs at n=1e5 within C+=C- sub-family:");
        for i in 0..5 {
            let se = (inv5[(i, i)] / 1.0e5).sqrt();
            let rel = if truth5[i] != 0.0 { format!("{:.1}% rel", 100.0*se/truth5[i]) } else { format!("abs") };
            println!("  SE({}) = {:.4} ({})", names5[i], se, rel);
        }
    }
}
