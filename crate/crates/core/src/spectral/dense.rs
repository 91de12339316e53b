//! Dense symmetric eigensolver: Householder tridiagonalization followed by
//! implicit QL with Wilkinson shifts.
//!
//! Eigenvectors are stored as rows so that both phases stream through
//! contiguous memory on a row-major buffer.

use super::SpectralError;

/// Full eigendecomposition of the symmetric row-major `n × n` matrix `a`.
/// Returns eigenvalues in ascending order and the matching unit
/// eigenvectors as rows of a row-major buffer.
pub fn eigh(n: usize, a: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>), SpectralError> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut v = a;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e, true);
    ql_implicit(n, &mut d, &mut e, Some(&mut v))?;
    Ok((d, v))
}

/// Eigenvalues only, ascending. Roughly three times cheaper than [`eigh`].
pub fn eigvalsh(n: usize, a: Vec<f64>) -> Result<Vec<f64>, SpectralError> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut v = a;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e, false);
    ql_implicit(n, &mut d, &mut e, None)?;
    Ok(d)
}

// `vt[i * n + j]` plays the role of `V[j][i]` in the textbook column form.
fn tridiagonalize(n: usize, vt: &mut [f64], d: &mut [f64], e: &mut [f64], vectors: bool) {
    let at = |i: usize, j: usize| j * n + i;
    for j in 0..n {
        d[j] = vt[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = vt[at(i - 1, j)];
                vt[at(i, j)] = 0.0;
                vt[at(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for x in e[..i].iter_mut() {
                *x = 0.0;
            }
            for j in 0..i {
                f = d[j];
                vt[at(j, i)] = f;
                g = e[j] + vt[at(j, j)] * f;
                // column j below the diagonal is row j of `vt`
                let col = &vt[j * n + j + 1..j * n + i];
                for (off, &vkj) in col.iter().enumerate() {
                    let k = j + 1 + off;
                    g += vkj * d[k];
                    e[k] += vkj * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                let col = &mut vt[j * n + j..j * n + i];
                for (off, vkj) in col.iter_mut().enumerate() {
                    let k = j + off;
                    *vkj -= f * e[k] + g * d[k];
                }
                d[j] = vt[at(i - 1, j)];
                vt[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    if !vectors {
        for j in 0..n {
            d[j] = vt[at(j, j)];
        }
        e[0] = 0.0;
        return;
    }

    for i in 0..n - 1 {
        vt[at(n - 1, i)] = vt[at(i, i)];
        vt[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = vt[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += vt[at(k, i + 1)] * vt[at(k, j)];
                }
                for k in 0..=i {
                    vt[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            vt[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = vt[at(n - 1, j)];
        vt[at(n - 1, j)] = 0.0;
    }
    vt[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn ql_implicit(n: usize, d: &mut [f64], e: &mut [f64], mut vt: Option<&mut [f64]>) -> Result<(), SpectralError> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(SpectralError::DenseNotConverged { index: l });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for x in d[l + 2..n].iter_mut() {
                    *x -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(vt) = vt.as_deref_mut() {
                        let (lo, hi) = vt.split_at_mut((i + 1) * n);
                        let vi = &mut lo[i * n..];
                        let vi1 = &mut hi[..n];
                        for (x, y) in vi.iter_mut().zip(vi1.iter_mut()) {
                            let hk = *y;
                            *y = s * *x + c * hk;
                            *x = c * *x - s * hk;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // selection sort keeps the pairing with the eigenvector rows simple
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for (j, &dj) in d.iter().enumerate().skip(i + 1) {
            if dj < p {
                k = j;
                p = dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            if let Some(vt) = vt.as_deref_mut() {
                for j in 0..n {
                    vt.swap(i * n + j, k * n + j);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let a = vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let (w, v) = eigh(3, a.clone()).unwrap();
        assert_eq!(w, vec![1.0, 2.0, 3.0]);
        assert!((v[1].abs() - 1.0).abs() < 1e-15);
        assert_eq!(eigvalsh(3, a).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_by_two() {
        let (w, v) = eigh(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] - 3.0).abs() < 1e-14);
        assert!((v[0] + v[1]).abs() < 1e-14);
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        let n = 7;
        let a: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                ((i * j + i + j) % 5) as f64 - 1.5 + if i == j { i as f64 } else { 0.0 }
            })
            .collect();
        let (w, v) = eigh(n, a.clone()).unwrap();
        for i in 0..n {
            for j in 0..n {
                let rec: f64 = (0..n).map(|k| w[k] * v[k * n + i] * v[k * n + j]).sum();
                assert!((rec - a[i * n + j]).abs() < 1e-12, "({i},{j})");
                let gram: f64 = (0..n).map(|k| v[i * n + k] * v[j * n + k]).sum();
                assert!((gram - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let vals = eigvalsh(n, a).unwrap();
        for (x, y) in vals.iter().zip(&w) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
