//! Central finite-difference gradient checking.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Worst elementwise disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so entries with a
/// vanishing true derivative are judged on absolute error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Checks `d/d inputs` of `sum(f(inputs) * probe)` where `probe` is a fixed
/// random tensor, so every output element carries a distinct weight.
pub fn check<F>(inputs: &[Tensor], h: f64, rng: &mut ChaCha8Rng, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let scalar = |g: &mut Graph, vars: &[Var], probe: Option<&Tensor>| -> Result<Var> {
        let out = f(g, vars)?;
        match probe {
            Some(p) => {
                let pv = g.constant(p.clone());
                let shaped = g.reshape(out, p.shape())?;
                let prod = g.mul(shaped, pv)?;
                Ok(g.sum(prod))
            }
            None => Ok(out),
        }
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let probe = (g.value(out).numel() > 1).then(|| {
        let n = g.value(out).numel();
        Tensor::new(vec![n], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
    });
    let loss = scalar(&mut g, &vars, probe.as_ref())?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let l = scalar(&mut g, &vars, probe.as_ref())?;
        Ok(g.value(l).data()[0])
    };

    let mut report = GradReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i][j];
            report.max_rel_err = report.max_rel_err.max(rel_err(a, numeric));
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

/// Like [`random_tensor`] but every entry satisfies `|x| >= margin`, for ops
/// with a kink at zero.
pub fn random_away_from_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(margin..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

/// One finite-difference result per (op, random shape) pair.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub shape: Vec<usize>,
    pub report: GradReport,
}

/// Runs the finite-difference oracle over every differentiable op of
/// [`Graph`], `trials` random shapes each.
pub fn check_all_ops(seed: u64, trials: usize, h: f64) -> Result<Vec<OpCheck>> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..trials {
        let m = rng.gen_range(1..5);
        let k = rng.gen_range(1..5);
        let n = rng.gen_range(2..6);
        let mut push = |op: &'static str, shape: Vec<usize>, report: GradReport| {
            out.push(OpCheck { op, shape, report });
        };

        let a = random_tensor(&[m, k], &mut rng);
        let b = random_tensor(&[k, n], &mut rng);
        push("matmul", vec![m, k, n], check(&[a, b], h, &mut rng, |g, v| g.matmul(v[0], v[1]))?);

        let x = random_tensor(&[m, n], &mut rng);
        let y = random_tensor(&[m, n], &mut rng);
        push("add", vec![m, n], check(&[x.clone(), y.clone()], h, &mut rng, |g, v| g.add(v[0], v[1]))?);
        push("sub", vec![m, n], check(&[x.clone(), y.clone()], h, &mut rng, |g, v| g.sub(v[0], v[1]))?);
        push("mul", vec![m, n], check(&[x.clone(), y.clone()], h, &mut rng, |g, v| g.mul(v[0], v[1]))?);
        push("scale", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| Ok(g.scale(v[0], -1.7)))?);

        let row = random_tensor(&[n], &mut rng);
        push("add_row", vec![m, n], check(&[x.clone(), row.clone()], h, &mut rng, |g, v| g.add_row(v[0], v[1]))?);
        push("mul_row", vec![m, n], check(&[x.clone(), row], h, &mut rng, |g, v| g.mul_row(v[0], v[1]))?);

        let mask = random_tensor(&[m, n], &mut rng);
        push("add_const", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| g.add_const(v[0], &mask))?);
        push("transpose", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| g.transpose(v[0]))?);
        push("reshape", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| g.reshape(v[0], &[n, m]))?);
        push("sum", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| Ok(g.sum(v[0])))?);
        push("mean", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| Ok(g.mean(v[0])))?);
        push("mean_rows", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| g.mean_rows(v[0]))?);
        push(
            "softmax_lastdim",
            vec![m, n],
            check(std::slice::from_ref(&x), h, &mut rng, |g, v| g.softmax_lastdim(v[0]))?,
        );
        push("layer_norm", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| g.layer_norm(v[0], 1e-5))?);
        push("gelu", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| Ok(g.gelu(v[0])))?);
        let xr = random_away_from_zero(&[m, n], 0.05, &mut rng);
        push("relu", vec![m, n], check(&[xr], h, &mut rng, |g, v| Ok(g.relu(v[0])))?);

        let vocab = rng.gen_range(2..7);
        let table = random_tensor(&[vocab, n], &mut rng);
        let ids: Vec<usize> = (0..m + 1).map(|_| rng.gen_range(0..vocab)).collect();
        push("embedding_lookup", vec![vocab, n], check(&[table], h, &mut rng, |g, v| g.embedding_lookup(v[0], &ids))?);

        let c = rng.gen_range(1..3);
        let o = rng.gen_range(1..4);
        let hw = rng.gen_range(3..7);
        let stride = rng.gen_range(1..3);
        let img = random_tensor(&[c, hw, hw + 1], &mut rng);
        let w = random_tensor(&[o, c, 3, 3], &mut rng);
        let bias = random_tensor(&[o], &mut rng);
        push(
            "conv2d_stride",
            vec![c, hw, hw + 1, o, stride],
            check(&[img, w, bias], h, &mut rng, |g, v| g.conv2d_stride(v[0], v[1], v[2], stride, 1))?,
        );

        let z = random_tensor(&[m + 1, n], &mut rng);
        push("concat_rows", vec![m, n], check(&[x.clone(), z], h, &mut rng, |g, v| g.concat(&[v[0], v[1]], 0))?);
        let z = random_tensor(&[m, k], &mut rng);
        push("concat_cols", vec![m, n], check(&[x.clone(), z], h, &mut rng, |g, v| g.concat(&[v[0], v[1]], 1))?);
        let (s, e) = (rng.gen_range(0..n - 1), n);
        push("slice_cols", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| g.slice(v[0], 1, s, e))?);
        push("slice_rows", vec![m, n], check(std::slice::from_ref(&x), h, &mut rng, |g, v| g.slice(v[0], 0, 0, 1))?);

        let targets: Vec<Option<usize>> = (0..m).map(|i| (i % 3 != 2).then(|| rng.gen_range(0..n))).collect();
        let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..2.0)).collect();
        let gamma = [0.0, 0.5, 2.0][rng.gen_range(0..3)];
        let logits = random_tensor(&[m, n], &mut rng);
        push(
            "focal_loss",
            vec![m, n],
            check(&[logits], h, &mut rng, |g, v| g.focal_loss_rows(v[0], &targets, &weights, gamma))?,
        );
    }
    Ok(out)
}
