//! Central finite-difference checks of the hand-written backward passes.
//!
//! The scalar under test is `L = sum_i r_i y_i` for a fixed random `r` over
//! the graph output. A coordinate whose `+-h` perturbation flips the sign of
//! any ReLU input is skipped: the difference quotient straddles a kink there
//! and says nothing about the analytic gradient.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arch::{ArchSpec, Network};
use crate::graph::{Graph, NodeId, Op, Shape, Tape};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Denominator floor of the relative error, so that gradients near zero
    /// are compared in absolute terms.
    pub floor: f64,
    /// Coordinates sampled per parameter block and from the input; `None`
    /// checks every coordinate.
    pub coords_per_block: Option<usize>,
}

impl GradCheckConfig {
    pub fn single() -> Self {
        Self {
            h: 1e-3,
            floor: 1e-2,
            coords_per_block: None,
        }
    }

    pub fn double() -> Self {
        Self {
            h: 1e-5,
            floor: 1e-3,
            coords_per_block: None,
        }
    }

    pub fn sampled(self, n: usize) -> Self {
        Self {
            coords_per_block: Some(n),
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    /// Parameter block name, or `"input"`.
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.blocks.iter().map(|b| b.skipped).sum()
    }

    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn objective<T: Real>(tape: &Tape<T>, r: &[T]) -> f64 {
    tape.output().iter().zip(r).map(|(&y, &w)| (y * w).to_f64().unwrap()).sum()
}

fn relu_signs<T: Real>(graph: &Graph, tape: &Tape<T>) -> Vec<bool> {
    let mut out = Vec::new();
    for node in &graph.nodes {
        if let Op::Relu(src) = node.op {
            out.extend(tape.acts[src].iter().map(|&v| v > T::zero()));
        }
    }
    out
}

fn pick(rng: &mut ChaCha8Rng, len: usize, n: Option<usize>) -> Vec<usize> {
    match n {
        Some(n) if n < len => {
            let mut v = sample(rng, len, n).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Compare analytic parameter and input gradients computed in precision `A`
/// against central differences of the same graph evaluated in precision `N`
/// at the same point (converted from `A`).
pub fn check_graph<A: Real, N: Real>(graph: &Graph, params: &[A], input: &[A], cfg: &GradCheckConfig, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_len = graph.shape(graph.output()).len();
    let r64: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r: Vec<A> = r64.iter().map(|&v| A::lit(v)).collect();
    let rn: Vec<N> = r64.iter().map(|&v| N::lit(v)).collect();

    let tape = graph.forward(params, input).with_input_grad();
    let mut grad_params = vec![A::zero(); params.len()];
    let node_grads = graph.backward(params, &tape, &r, &mut grad_params);
    let grad_input = if node_grads[0].is_empty() {
        vec![A::zero(); input.len()]
    } else {
        node_grads[0].clone()
    };

    let convert = |v: &[A]| -> Vec<N> { v.iter().map(|x| N::lit(x.to_f64().unwrap())).collect() };
    let (params_n, input_n) = (convert(params), convert(input));
    let h = N::lit(cfg.h);
    let mut targets: Vec<(String, bool, Vec<usize>)> = graph
        .params
        .iter()
        .map(|b| {
            let idx = pick(&mut rng, b.len, cfg.coords_per_block);
            (b.name.clone(), false, idx.into_iter().map(|i| b.offset + i).collect())
        })
        .collect();
    targets.push(("input".into(), true, pick(&mut rng, input.len(), cfg.coords_per_block)));

    let blocks = targets
        .into_iter()
        .map(|(name, on_input, coords)| {
            let results: Vec<Option<f64>> = coords
                .par_iter()
                .map(|&i| {
                    let eval = |delta: N| {
                        let (mut p, mut x) = (params_n.clone(), input_n.clone());
                        if on_input {
                            x[i] += delta;
                        } else {
                            p[i] += delta;
                        }
                        let t = graph.forward(&p, &x);
                        (objective(&t, &rn), relu_signs(graph, &t))
                    };
                    let (lp, sp) = eval(h);
                    let (lm, sm) = eval(-h);
                    if sp != sm {
                        return None;
                    }
                    // divide by the step actually represented in N
                    let base = if on_input { input_n[i] } else { params_n[i] };
                    let step = ((base + h) - (base - h)).to_f64().unwrap();
                    let numeric = (lp - lm) / step;
                    let analytic = if on_input { grad_input[i] } else { grad_params[i] }.to_f64().unwrap();
                    Some(rel_err(analytic, numeric, cfg.floor))
                })
                .collect();
            let checked: Vec<f64> = results.iter().flatten().copied().collect();
            BlockError {
                name,
                max_rel_err: checked.iter().copied().fold(0.0, f64::max),
                checked: checked.len(),
                skipped: results.len() - checked.len(),
            }
        })
        .collect();
    GradCheckReport { blocks }
}

/// One tiny graph per layer type, on `8 x 8` inputs.
pub fn layer_graphs() -> Vec<(&'static str, Graph)> {
    let input = Shape::new(2, 8, 8);
    let mut out = Vec::new();
    let mut one = |name, build: &dyn Fn(&mut Graph, NodeId)| {
        let mut g = Graph::new();
        let x = g.input(input);
        build(&mut g, x);
        out.push((name, g));
    };
    one("conv3", &|g, x| {
        g.conv("c", x, 3, 3, 1);
    });
    one("conv3_stride2", &|g, x| {
        g.conv("c", x, 3, 3, 2);
    });
    one("conv1", &|g, x| {
        g.conv("c", x, 4, 1, 1);
    });
    one("relu", &|g, x| {
        g.relu(x);
    });
    one("avg_pool2", &|g, x| {
        g.avg_pool2(x);
    });
    one("global_avg_pool", &|g, x| {
        g.global_avg_pool(x);
    });
    one("linear", &|g, x| {
        g.linear("fc", x, 3);
    });
    one("sigmoid", &|g, x| {
        g.sigmoid(x);
    });
    one("concat", &|g, x| {
        let y = g.conv("c", x, 2, 3, 1);
        g.concat(x, y);
    });
    one("add", &|g, x| {
        let y = g.conv("c", x, 2, 3, 1);
        g.add(x, y);
    });
    one("scale_channels", &|g, x| {
        let p = g.global_avg_pool(x);
        let z = g.linear("fc", p, 2);
        let s = g.sigmoid(z);
        g.scale_channels(x, s);
    });
    out
}

/// Random parameters and input for a layer graph: weights and biases
/// `U[-1, 1]`, input `U[-1, 1]`.
pub fn random_point<T: Real>(graph: &Graph, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = (0..graph.param_len).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
    let input = (0..graph.input_shape().len()).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
    (params, input)
}

/// Check a whole mini network at its seeded initialisation, with biases
/// jittered off zero and a `U[0, 1]` image.
pub fn check_network<T: Real, N: Real>(spec: &ArchSpec, classes: usize, rows: usize, cols: usize, seed: u64, cfg: &GradCheckConfig) -> crate::Result<GradCheckReport> {
    let net = Network::build(spec, classes, rows, cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut params: Vec<T> = net.init_params(seed).into_iter().map(|p| T::lit(p as f64)).collect();
    for b in net.graph.params.iter().filter(|b| b.fan_in == 0) {
        for p in &mut params[b.offset..b.offset + b.len] {
            *p = T::lit(rng.random_range(-0.1..0.1));
        }
    }
    let input: Vec<T> = (0..rows * cols).map(|_| T::lit(rng.random_range(0.0..1.0))).collect();
    Ok(check_graph::<T, N>(&net.graph, &params, &input, cfg, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 1.0, 1e-3), 0.0);
        assert!((rel_err(2.0, 1.0, 1e-3) - 0.5).abs() < 1e-15);
        assert!((rel_err(1e-6, 0.0, 1e-3) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn linear_layer_is_exact_in_double() {
        let mut g = Graph::new();
        let x = g.input(Shape::new(1, 2, 2));
        g.linear("fc", x, 3);
        let params: Vec<f64> = (0..g.param_len).map(|i| i as f64 * 0.1 - 0.4).collect();
        let input = vec![0.3, -0.2, 0.7, 0.1];
        let report = check_graph::<f64, f64>(&g, &params, &input, &GradCheckConfig::double(), 0);
        assert!(report.max_rel_err() < 1e-8, "{report:?}");
        assert_eq!(report.checked(), params.len() + input.len());
        assert_eq!(report.skipped(), 0);
    }
}
