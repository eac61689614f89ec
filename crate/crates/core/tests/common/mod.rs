//! Reference computations written independently of the library, for use as
//! test oracles.

#![allow(dead_code)]

use hybridflow::netmodel::BusKind;
use hybridflow::Network;
use num_complex::Complex64;

/// Y built by a plain loop over branches.
pub fn admittance_by_branches(net: &Network) -> Vec<Vec<Complex64>> {
    let n = net.n_bus();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for l in net.lines() {
        let g = Complex64::new(1.0, 0.0) / Complex64::new(l.r, l.x);
        let half = Complex64::new(0.0, l.shunt_susceptance / 2.0);
        let (i, j) = (l.from_bus, l.to_bus);
        y[i][i] += g + half;
        y[j][j] += g + half;
        y[i][j] -= g;
        y[j][i] -= g;
    }
    y
}

/// Largest |S_spec - S_calc| over PQ buses, both components, with S_calc
/// computed from the branch-loop Y.
pub fn max_mismatch(net: &Network, p: &[f64], q: &[f64], v: &[f64], a: &[f64]) -> f64 {
    let y = admittance_by_branches(net);
    let vc: Vec<Complex64> = v.iter().zip(a).map(|(&m, &t)| Complex64::from_polar(m, t)).collect();
    let mut worst = 0.0f64;
    for (i, bus) in net.buses().iter().enumerate() {
        if bus.kind == BusKind::Slack {
            continue;
        }
        let current: Complex64 = (0..vc.len()).map(|j| y[i][j] * vc[j]).sum();
        let s_calc = vc[i] * current.conj();
        let s_spec = match bus.load_attachment {
            Some(k) => Complex64::new(-p[k], -q[k]),
            None => Complex64::new(0.0, 0.0),
        };
        let d = s_spec - s_calc;
        worst = worst.max(d.re.abs()).max(d.im.abs());
    }
    worst
}

/// Solves the square system `m x = b` by Gaussian elimination with partial
/// pivoting. Panics if the matrix is singular to working precision.
pub fn gauss_solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        assert!(m[piv][col].abs() > 1e-300, "singular system");
        m.swap(col, piv);
        b.swap(col, piv);
        let (top, rest) = m.split_at_mut(col + 1);
        let pivot = &top[col];
        for (r, row) in rest.iter_mut().enumerate() {
            let f = row[col] / pivot[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            b[col + 1 + r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    x
}

/// Least-squares coefficients of `y` on the columns of `x` from the normal
/// equations `X^T X b = X^T y`.
pub fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = x[0].len();
    let xtx: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| x.iter().map(|r| r[i] * r[j]).sum()).collect())
        .collect();
    let xty: Vec<f64> = (0..d).map(|i| x.iter().zip(y).map(|(r, t)| r[i] * t).sum()).collect();
    gauss_solve(xtx, xty)
}

/// Minimum-norm solution of an underdetermined, full-row-rank system:
/// `b = X^T (X X^T)^{-1} y`.
pub fn min_norm_underdetermined(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let w = gauss_solve(gram, y.to_vec());
    let d = x[0].len();
    (0..d).map(|k| (0..n).map(|i| x[i][k] * w[i]).sum()).collect()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Share of points whose cluster's majority label matches their own label.
pub fn purity(assignments: &[usize], labels: &[usize]) -> f64 {
    use std::collections::HashMap;
    let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&c, &l) in assignments.iter().zip(labels) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = table.values().map(|m| *m.values().max().unwrap()).sum();
    majority as f64 / labels.len() as f64
}

/// Counts recomputed from the text of a records CSV.
#[derive(Debug, Default)]
pub struct RecordsRecount {
    pub total: usize,
    pub model: usize,
    pub solver: usize,
    pub errors: Vec<f64>,
}

pub fn recount_records(text: &str) -> RecordsRecount {
    let mut rc = RecordsRecount::default();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        rc.total += 1;
        match cols[1] {
            "model" => rc.model += 1,
            "solver" => rc.solver += 1,
            other => panic!("unexpected decision {other}"),
        }
        rc.errors.push(if cols[3].is_empty() { 0.0 } else { cols[3].parse().unwrap() });
    }
    rc
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Prints the one-line verdict for an acceptance criterion. Written to the
/// stderr handle directly so the line shows even when test output is captured.
pub fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    use std::io::Write;
    let line = format!("[{}] criterion {id} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}
