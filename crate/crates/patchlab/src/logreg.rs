//! Shared logistic-regression trainer used by the linear detector family
//! and the projection-detection classifier.

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy plus L2 penalty.
pub fn loss(
    xs: &[Vec<f64>],
    ys: &[bool],
    w: &[f64],
    b: f64,
    l2_weight: f64,
) -> f64 {
    let n = xs.len() as f64;
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = dot(w, x) + b;
        // numerically stable: log(1+exp(-|z|)) + max(z,0) - z*y
        let t = if y { 1.0 } else { 0.0 };
        total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
    }
    total / n + l2_weight * w.iter().map(|v| v * v).sum::<f64>()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub struct FitResult {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss_history: Vec<f64>,
}

/// Full-batch gradient descent on the cross-entropy. With `monotone` set,
/// a step that would increase the loss is retried at half the size, so the
/// recorded history never increases.
pub fn fit(
    xs: &[Vec<f64>],
    ys: &[bool],
    epochs: usize,
    lr: f64,
    l2_weight: f64,
    monotone: bool,
) -> FitResult {
    assert!(!xs.is_empty());
    let dim = xs[0].len();
    let n = xs.len() as f64;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut history = Vec::with_capacity(epochs + 1);
    let mut current = loss(xs, ys, &w, b, l2_weight);
    history.push(current);
    for _ in 0..epochs {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let p = sigmoid(dot(&w, x) + b);
            let err = p - if y { 1.0 } else { 0.0 };
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
        }
        for (g, wi) in gw.iter_mut().zip(&w) {
            *g = *g / n + 2.0 * l2_weight * wi;
        }
        gb /= n;

        let mut step = lr;
        loop {
            let wt: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - step * g).collect();
            let bt = b - step * gb;
            let lt = loss(xs, ys, &wt, bt, l2_weight);
            if !monotone || lt <= current || step < 1e-12 {
                w = wt;
                b = bt;
                current = if monotone { lt.min(current) } else { lt };
                break;
            }
            step *= 0.5;
        }
        history.push(current);
    }
    FitResult {
        weights: w,
        bias: b,
        loss_history: history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_two_points_reach_full_accuracy() {
        let xs = vec![vec![0.0], vec![1.0]];
        let ys = vec![false, true];
        let fitres = fit(&xs, &ys, 500, 1.0, 0.0, true);
        assert!(sigmoid(dot(&fitres.weights, &xs[0]) + fitres.bias) < 0.5);
        assert!(sigmoid(dot(&fitres.weights, &xs[1]) + fitres.bias) > 0.5);
    }

    #[test]
    fn monotone_history_never_increases() {
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64) / 19.0, ((i * 7) % 5) as f64 / 4.0])
            .collect();
        let ys: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let fitres = fit(&xs, &ys, 200, 2.0, 0.01, true);
        for pair in fitres.loss_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }
}
