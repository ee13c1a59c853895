//! Nelder-Mead simplex minimization.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Stop once every vertex lies within this distance of the best one.
    pub diameter_tol: f64,
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            diameter_tol: 1e-8,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Minimizes `f` from `start`, with initial vertices `start + steps[i] e_i`.
///
/// Uses the dimension-adaptive coefficients of Gao and Han, which behave
/// better than the classic ones beyond a handful of dimensions.
pub fn minimize<F>(mut f: F, start: &[f64], steps: &[f64], opts: SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    assert_eq!(steps.len(), n, "one step per dimension");
    let eval = |f: &mut F, x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        return SimplexResult {
            x: Vec::new(),
            value: eval(&mut f, start),
            iterations: 0,
            converged: true,
        };
    }

    let nf = n as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
    let rho = 0.75 - 1.0 / (2.0 * nf);
    let sigma = 1.0 - 1.0 / nf;

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), eval(&mut f, start)));
    for i in 0..n {
        let mut x = start.to_vec();
        x[i] += steps[i];
        let v = eval(&mut f, &x);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let along = |centroid: &[f64], worst: &[f64], coeff: f64, out: &mut Vec<f64>| {
        for ((o, c), w) in out.iter_mut().zip(centroid).zip(worst) {
            *o = c + coeff * (c - w);
        }
    };

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| distance(x, &simplex[0].0))
            .fold(0.0, f64::max);
        if diameter < opts.diameter_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / nf;
            }
        }
        let worst = simplex[n].0.clone();
        let (best_v, second_worst_v, worst_v) = (simplex[0].1, simplex[n - 1].1, simplex[n].1);

        along(&centroid, &worst, alpha, &mut trial);
        let reflected = trial.clone();
        let fr = eval(&mut f, &reflected);

        if fr < best_v {
            along(&centroid, &worst, alpha * gamma, &mut trial);
            let fe = eval(&mut f, &trial);
            simplex[n] = if fe < fr { (trial.clone(), fe) } else { (reflected, fr) };
            continue;
        }
        if fr < second_worst_v {
            simplex[n] = (reflected, fr);
            continue;
        }
        // contraction, outside or inside
        let (coeff, bound) = if fr < worst_v {
            (alpha * rho, fr)
        } else {
            (-rho, worst_v)
        };
        along(&centroid, &worst, coeff, &mut trial);
        let fc = eval(&mut f, &trial);
        if fc < bound || (fc <= bound && coeff < 0.0) {
            simplex[n] = (trial.clone(), fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best) {
                *xi = bi + sigma * (*xi - bi);
            }
            *v = eval(&mut f, x);
        }
    }

    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let r = minimize(
            |x| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &[0.5, 0.5],
            SimplexOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-7 && (r.x[1] + 1.0).abs() < 1e-7, "{:?}", r.x);
    }

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.1, 0.1],
            SimplexOptions {
                diameter_tol: 1e-10,
                max_iterations: 5000,
            },
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn six_dimensional_quadratic() {
        let target = [0.5, -0.3, 0.1, 0.8, -0.6, 2.0];
        let r = minimize(
            |x| {
                x.iter()
                    .zip(&target)
                    .enumerate()
                    .map(|(i, (a, b))| (i as f64 + 1.0) * (a - b).powi(2))
                    .sum()
            },
            &[0.1; 6],
            &[0.1; 6],
            SimplexOptions::default(),
        );
        assert!(r.converged, "iterations {}", r.iterations);
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let r = minimize(
            |x| x[0].abs().sqrt(),
            &[5.0],
            &[1.0],
            SimplexOptions {
                diameter_tol: 1e-30,
                max_iterations: 10,
            },
        );
        assert!(!r.converged);
        assert_eq!(r.iterations, 10);
    }

    #[test]
    fn zero_dimensional() {
        let r = minimize(|_| 4.0, &[], &[], SimplexOptions::default());
        assert!(r.converged);
        assert_eq!(r.value, 4.0);
    }
}
